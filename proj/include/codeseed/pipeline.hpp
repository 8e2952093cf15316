#pragma once

// End-to-end flows: corpus -> vocabulary -> windows -> fitted models, for
// both the pre-training and the transfer fine-tuning stage.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "codeseed/bundle.hpp"
#include "codeseed/common.hpp"
#include "codeseed/corpus.hpp"
#include "codeseed/models.hpp"
#include "codeseed/training.hpp"
#include "codeseed/vocab.hpp"

namespace codeseed {

// One training window per target position of each stream, contexts
// left-padded to the model's context size.
inline std::vector<ContextWindow> build_base_windows(const std::vector<TokenSequence>& streams,
                                                     const Vocabulary& vocab, int context) {
    std::vector<ContextWindow> windows;
    for (const TokenSequence& seq : streams) {
        const std::vector<std::int32_t> ids = vocab.encode(seq.tokens);
        if (ids.size() < 2) continue;
        for (ContextWindow& w : windowize(ids, context, Vocabulary::kPadId))
            windows.push_back(std::move(w));
    }
    return windows;
}

// Same positions, encoded once per branch vocabulary and once for targets.
inline std::vector<TransferWindow> build_transfer_windows(
    const std::vector<TokenSequence>& streams, const Vocabulary& rnn_vocab,
    const Vocabulary& gru_vocab, const Vocabulary& target_vocab, int context) {
    std::vector<TransferWindow> windows;
    for (const TokenSequence& seq : streams) {
        if (seq.tokens.size() < 2) continue;
        const std::vector<std::int32_t> rnn_ids = rnn_vocab.encode(seq.tokens);
        const std::vector<std::int32_t> gru_ids = gru_vocab.encode(seq.tokens);
        const std::vector<std::int32_t> target_ids = target_vocab.encode(seq.tokens);
        const std::vector<ContextWindow> rnn_w = windowize(rnn_ids, context, Vocabulary::kPadId);
        const std::vector<ContextWindow> gru_w = windowize(gru_ids, context, Vocabulary::kPadId);
        for (std::size_t i = 0; i < rnn_w.size(); ++i) {
            TransferWindow w;
            w.rnn_ctx = rnn_w[i].context;
            w.gru_ctx = gru_w[i].context;
            w.target = target_ids[i + 1];
            windows.push_back(std::move(w));
        }
    }
    return windows;
}

// The last `context` tokens of a lexed snippet, left-padded; the suggestion
// input path.
inline std::vector<std::int32_t> make_context_ids(const std::vector<std::string>& tokens,
                                                  const Vocabulary& vocab, int context) {
    std::vector<std::int32_t> ids(static_cast<std::size_t>(context), Vocabulary::kPadId);
    const std::size_t n = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(context));
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& tok = tokens[tokens.size() - n + i];
        ids[static_cast<std::size_t>(context) - n + i] = vocab.id_of(tok);
    }
    return ids;
}

struct PretrainOptions {
    TrainConfig train;
    BaseLMConfig arch;  // vocab_size is filled in from the corpus
    int min_count = 3;
    NormalizeMode mode = NormalizeMode::Full;
    double val_fraction = 0.1;
};

struct PretrainResult {
    BaseLM model;
    Vocabulary vocab;
    TrainHistory history;
    Manifest manifest;
};

// Deterministic window-level holdout for the pre-training validation set.
template <class W>
void holdout_split(std::vector<W>& windows, std::uint64_t seed, double fraction,
                   std::vector<W>& train, std::vector<W>& valid) {
    std::vector<std::size_t> order(windows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    shuffle(order, rng);
    std::size_t n_valid = static_cast<std::size_t>(static_cast<double>(windows.size()) * fraction);
    if (windows.size() >= 2) {
        if (n_valid < 1) n_valid = 1;
        if (n_valid >= windows.size()) n_valid = windows.size() - 1;
    } else {
        n_valid = 0;
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < n_valid)
            valid.push_back(windows[order[i]]);
        else
            train.push_back(windows[order[i]]);
    }
    if (valid.empty()) valid = train;  // single-window corpus: validate on it
}

inline PretrainResult pretrain(const std::filesystem::path& corpus_dir, Unit unit,
                               PretrainOptions opt) {
    const std::vector<TokenSequence> corpus = load_corpus(corpus_dir, opt.mode);
    Vocabulary vocab = Vocabulary::build(corpus, opt.min_count);

    opt.arch.unit = unit;
    opt.arch.vocab_size = vocab.size();
    opt.arch.dropout_rate = opt.train.dropout_rate;

    std::vector<ContextWindow> windows = build_base_windows(corpus, vocab, opt.arch.context);
    if (windows.empty()) throw Error(msg("corpus under ", corpus_dir.string(),
                                         " yields no training windows"));

    std::vector<ContextWindow> train, valid;
    holdout_split(windows, opt.train.seed, opt.val_fraction, train, valid);

    PretrainResult result{BaseLM(opt.arch, opt.train.seed), std::move(vocab), {}, {}};
    result.history = fit(result.model, train, valid, opt.train);

    result.manifest["min_count"] = std::to_string(opt.min_count);
    result.manifest["normalize_mode"] = normalize_mode_name(opt.mode);
    result.manifest["train_windows"] = std::to_string(train.size());
    result.manifest["valid_windows"] = std::to_string(valid.size());
    return result;
}

struct FinetuneOptions {
    TrainConfig train;
    int min_count = 2;
    int folds = 10;
    int granule = 1;
    int attn_dim = 0;  // 0: concatenated hidden width
};

struct FinetuneResult {
    TransferModel model;
    TrainHistory history;
    Manifest manifest;
    FoldAssignment folds;
};

// Training streams of the fold protocol: fold 0 is the test fold, fold 1 the
// validation fold, everything else trains.
inline std::vector<TokenSequence> training_streams(const std::vector<TokenSequence>& corpus,
                                                   const FoldAssignment& fa) {
    std::vector<TokenSequence> out;
    for (int fold = 2; fold < fa.fold_count; ++fold)
        for (TokenSequence& s : fold_streams(corpus, fa, fold)) out.push_back(std::move(s));
    return out;
}

inline FinetuneResult finetune(const std::filesystem::path& rnn_bundle_dir,
                               const std::filesystem::path& gru_bundle_dir,
                               const std::filesystem::path& project_dir, FinetuneOptions opt) {
    BaseBundle rnn = load_base_bundle(rnn_bundle_dir);
    BaseBundle gru = load_base_bundle(gru_bundle_dir);

    const std::string rnn_mode = manifest_get(rnn.manifest, "normalize_mode", rnn_bundle_dir.string());
    const std::string gru_mode = manifest_get(gru.manifest, "normalize_mode", gru_bundle_dir.string());
    if (rnn_mode != gru_mode)
        throw Error(msg("branch bundles disagree on normalize_mode (", rnn_mode, " vs ", gru_mode, ")"));
    const NormalizeMode mode = normalize_mode_from_name(rnn_mode);

    const std::vector<TokenSequence> corpus = load_corpus(project_dir, mode);
    Vocabulary target_vocab = Vocabulary::build(corpus, opt.min_count);

    FoldAssignment fa = split_folds(corpus, opt.folds, opt.train.seed, opt.granule);
    const std::vector<TokenSequence> train_streams = training_streams(corpus, fa);
    const std::vector<TokenSequence> valid_streams = fold_streams(corpus, fa, 1);

    const int context = rnn.model.config().context;
    std::vector<TransferWindow> train_w =
        build_transfer_windows(train_streams, rnn.vocab, gru.vocab, target_vocab, context);
    std::vector<TransferWindow> valid_w =
        build_transfer_windows(valid_streams, rnn.vocab, gru.vocab, target_vocab, context);
    if (train_w.empty()) throw Error("fine-tuning folds yield no training windows");
    if (valid_w.empty()) throw Error("validation fold yields no windows");

    FinetuneResult result{
        build_transfer(rnn.model, rnn.vocab, gru.model, gru.vocab, target_vocab,
                       opt.train.dropout_rate, opt.attn_dim, opt.train.seed),
        {}, {}, std::move(fa)};
    result.history = fit(result.model, train_w, valid_w, opt.train);

    result.manifest["min_count"] = std::to_string(opt.min_count);
    result.manifest["normalize_mode"] = rnn_mode;
    result.manifest["folds"] = std::to_string(opt.folds);
    result.manifest["granule"] = std::to_string(opt.granule);
    result.manifest["train_windows"] = std::to_string(train_w.size());
    result.manifest["valid_windows"] = std::to_string(valid_w.size());
    return result;
}

}  // namespace codeseed
