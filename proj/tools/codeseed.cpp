// codeseed: train, transfer, and query next-token suggestion models for Java
// source. Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "codeseed/bundle.hpp"
#include "codeseed/corpus.hpp"
#include "codeseed/eval.hpp"
#include "codeseed/pipeline.hpp"

namespace fs = std::filesystem;
using namespace codeseed;

namespace {

struct TrainFlags {
    double lr = 0.001;
    int batch = 64;
    double dropout = 0.5;
    int patience = 3;
    int max_epochs = 50;
    std::uint64_t seed = 0;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--lr", f.lr, "Adam learn rate")->capture_default_str();
    cmd->add_option("--batch", f.batch, "mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--dropout", f.dropout, "dropout rate")->check(CLI::Range(0.0, 0.999))->capture_default_str();
    cmd->add_option("--patience", f.patience, "early-stop patience in epochs")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--max-epochs", f.max_epochs, "epoch cap")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_option("--seed", f.seed, "RNG seed")->capture_default_str();
}

TrainConfig to_train_config(const TrainFlags& f) {
    TrainConfig cfg;
    cfg.lr = f.lr;
    cfg.batch_size = f.batch;
    cfg.dropout_rate = f.dropout;
    cfg.patience = f.patience;
    cfg.max_epochs = f.max_epochs;
    cfg.seed = f.seed;
    return cfg;
}

void require_dir(const std::string& path, const char* what) {
    if (!fs::is_directory(path)) throw UsageError(msg(what, " not found: ", path));
}

int run_pretrain(const std::string& corpus_dir, const std::string& unit_str,
                 const std::string& out, int min_count, int context, int embed, int hidden,
                 const std::string& mode_str, const TrainFlags& flags) {
    require_dir(corpus_dir, "corpus directory");
    PretrainOptions opt;
    opt.train = to_train_config(flags);
    opt.min_count = min_count;
    opt.mode = normalize_mode_from_name(mode_str);
    opt.arch.context = context;
    opt.arch.embed_dim = embed;
    opt.arch.hidden_dim = hidden;

    PretrainResult result = pretrain(corpus_dir, unit_from_name(unit_str), opt);
    save_base_bundle(out, result.model, result.vocab, result.manifest);
    write_text_file(fs::path(out) / "history.txt", result.history.serialize());

    std::printf("unit=%s vocab=%d windows=%s epochs=%d best_epoch=%d val_loss=%.6f\n",
                unit_str.c_str(), result.vocab.size(),
                result.manifest.at("train_windows").c_str(), result.history.stopped_epoch,
                result.history.best_epoch, result.history.best_val_loss);
    std::printf("bundle written to %s\n", out.c_str());
    return 0;
}

int run_transfer(const std::string& rnn_dir, const std::string& gru_dir,
                 const std::string& project_dir, const std::string& out, int min_count, int folds,
                 int granule, int attn_dim, const TrainFlags& flags) {
    require_dir(rnn_dir, "rnn bundle");
    require_dir(gru_dir, "gru bundle");
    require_dir(project_dir, "project directory");

    FinetuneOptions opt;
    opt.train = to_train_config(flags);
    opt.min_count = min_count;
    opt.folds = folds;
    opt.granule = granule;
    opt.attn_dim = attn_dim;

    FinetuneResult result = finetune(rnn_dir, gru_dir, project_dir, opt);
    save_transfer_bundle(out, result.model, result.manifest);
    write_text_file(fs::path(out) / "history.txt", result.history.serialize());

    std::size_t frozen = 0, trainable = 0;
    for (const Parameter* p : result.model.parameters())
        (p->trainable ? trainable : frozen) += p->size();
    std::printf("parameters=%zu (frozen=%zu, fine-tuned=%zu)\n", frozen + trainable, frozen,
                trainable);
    std::printf("rnn_branch_hash=%s gru_branch_hash=%s\n",
                hash_hex(branch_hash(result.model.rnn_branch(), "rnn_branch")).c_str(),
                hash_hex(branch_hash(result.model.gru_branch(), "gru_branch")).c_str());
    std::printf("epochs=%d best_epoch=%d val_loss=%.6f frozen_grad_norm_max=%.9f\n",
                result.history.stopped_epoch, result.history.best_epoch,
                result.history.best_val_loss, result.history.frozen_grad_norm_max);
    std::printf("bundle written to %s\n", out.c_str());
    return 0;
}

std::vector<std::string> lex_context(const std::string& text, NormalizeMode mode) {
    SourceFile snippet{"<context>", text};
    const TokenSequence seq = lex(snippet.path, normalize_source(snippet, mode));
    return seq.tokens;
}

int run_suggest(const std::string& model_dir, const std::string& context_text, int k) {
    require_dir(model_dir, "model bundle");
    const Manifest manifest = read_bundle_manifest(model_dir);
    const NormalizeMode mode =
        normalize_mode_from_name(manifest_get(manifest, "normalize_mode", model_dir));
    const std::string kind = manifest_get(manifest, "model_kind", model_dir);

    const std::vector<std::string> tokens = lex_context(context_text, mode);
    if (tokens.empty()) throw UsageError("context is empty after normalization");

    std::vector<ScoredToken> ranked;
    const Vocabulary* out_vocab = nullptr;
    Vocabulary base_vocab;

    if (kind == "base") {
        BaseBundle b = load_base_bundle(model_dir);
        base_vocab = b.vocab;
        out_vocab = &base_vocab;
        const auto ctx = make_context_ids(tokens, b.vocab, b.model.config().context);
        ranked = b.model.predict_topk(ctx, k);
    } else if (kind == "transfer") {
        TransferBundle b = load_transfer_bundle(model_dir);
        out_vocab = &b.model.target_vocab();
        TransferWindow w;
        w.rnn_ctx = make_context_ids(tokens, b.model.rnn_branch().vocab, b.model.context());
        w.gru_ctx = make_context_ids(tokens, b.model.gru_branch().vocab, b.model.context());
        const TransferInference fast(b.model);
        ranked = fast.predict_topk(w, k);
    } else {
        throw Error(msg(model_dir, ": unknown model_kind '", kind, "'"));
    }

    for (std::size_t i = 0; i < ranked.size(); ++i)
        std::printf("%zu %s %.6f\n", i + 1, out_vocab->token_of(ranked[i].id).c_str(),
                    ranked[i].prob);
    return 0;
}

int run_eval(const std::string& model_dir, const std::string& project_dir, int folds, int granule,
             std::uint64_t seed, const std::string& out_path, const std::string& record_log_path) {
    require_dir(model_dir, "model bundle");
    require_dir(project_dir, "project directory");
    const Manifest manifest = read_bundle_manifest(model_dir);
    const NormalizeMode mode =
        normalize_mode_from_name(manifest_get(manifest, "normalize_mode", model_dir));
    const std::string kind = manifest_get(manifest, "model_kind", model_dir);

    const std::vector<TokenSequence> corpus = load_corpus(project_dir, mode);
    const FoldAssignment fa = split_folds(corpus, folds, seed, granule);
    const std::vector<TokenSequence> test_streams = fold_streams(corpus, fa, 0);

    MetricReport report;
    std::vector<PredictionRecord> log;
    if (kind == "base") {
        BaseBundle b = load_base_bundle(model_dir);
        const auto windows = build_base_windows(test_streams, b.vocab, b.model.config().context);
        report = evaluate_model(b.model, windows, 10, &log);
    } else if (kind == "transfer") {
        TransferBundle b = load_transfer_bundle(model_dir);
        const auto windows =
            build_transfer_windows(test_streams, b.model.rnn_branch().vocab,
                                   b.model.gru_branch().vocab, b.model.target_vocab(),
                                   b.model.context());
        report = evaluate_model(b.model, windows, 10, &log);
    } else {
        throw Error(msg(model_dir, ": unknown model_kind '", kind, "'"));
    }

    write_text_file(out_path, report.serialize());
    if (!record_log_path.empty()) write_text_file(record_log_path, serialize_record_log(log));
    std::fputs(report.serialize().c_str(), stdout);
    std::printf("report written to %s\n", out_path.c_str());
    return 0;
}

std::vector<std::vector<double>> parse_groups_file(const std::string& path) {
    if (!fs::is_regular_file(path)) throw UsageError(msg("groups file not found: ", path));
    const std::string text = read_text_file(path);
    std::vector<std::vector<double>> groups;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> group;
        std::size_t start = 0;
        while (start <= line.size()) {
            std::size_t comma = line.find(',', start);
            if (comma == std::string::npos) comma = line.size();
            const std::string cell = line.substr(start, comma - start);
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                while (used < cell.size() &&
                       (cell[used] == ' ' || cell[used] == '\t' || cell[used] == '\r'))
                    ++used;
                if (used != cell.size()) throw std::invalid_argument(cell);
                group.push_back(v);
            } catch (const std::exception&) {
                throw UsageError(msg(path, ": malformed number '", cell, "'"));
            }
            start = comma + 1;
        }
        groups.push_back(std::move(group));
    }
    if (groups.size() < 2) throw UsageError(msg(path, ": need at least two groups (lines)"));
    for (const auto& g : groups)
        if (g.size() < 2) throw UsageError(msg(path, ": every group needs at least two values"));
    return groups;
}

int run_anova(const std::string& groups_path, double alpha) {
    const AnovaResult r = anova_oneway(parse_groups_file(groups_path), alpha);
    std::printf("source SS df MS F P-value F-crit\n");
    std::printf("between %.6f %d %.6f %.6f %.6e %.6f\n", r.ss_between, r.df_between, r.ms_between,
                r.f, r.p_value, r.f_crit);
    std::printf("within %.6f %d %.6f\n", r.ss_within, r.df_within, r.ms_within);
    std::printf("total %.6f %d\n", r.ss_total, r.df_between + r.df_within);
    std::printf("reject_null=%s (alpha=%g)\n", r.reject_null() ? "yes" : "no", r.alpha);
    return 0;
}

int run_normalize(const std::string& corpus_dir, const std::string& out_dir,
                  const std::string& mode_str) {
    require_dir(corpus_dir, "corpus directory");
    const NormalizeMode mode = normalize_mode_from_name(mode_str);
    const auto files = find_corpus_files(corpus_dir, ".java");
    if (files.empty()) throw UsageError(msg("no .java files under ", corpus_dir));
    std::size_t written = 0;
    for (const fs::path& p : files) {
        SourceFile file{p.string(), read_text_file(p)};
        const TokenSequence seq = lex(file.path, normalize_source(file, mode));
        fs::path rel = fs::relative(p, corpus_dir);
        rel.replace_extension(".toks");
        const fs::path out = fs::path(out_dir) / rel;
        fs::create_directories(out.parent_path());
        write_text_file(out, format_token_stream(seq));
        ++written;
    }
    std::printf("normalized %zu files into %s\n", written, out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"code token suggestion models: pre-training, transfer, evaluation"};
    app.require_subcommand(1);

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "train a base language model on a corpus");
    std::string pre_corpus, pre_unit, pre_out, pre_mode = "normalized";
    int pre_min_count = 3, pre_context = 20, pre_embed = 300, pre_hidden = 300;
    TrainFlags pre_flags;
    pre->add_option("--corpus", pre_corpus, "directory of .java/.toks files")->required();
    pre->add_option("--unit", pre_unit, "recurrent unit")->required()->check(CLI::IsMember({"rnn", "gru"}));
    pre->add_option("--out", pre_out, "output bundle directory")->required();
    pre->add_option("--min-count", pre_min_count, "vocabulary frequency threshold")->check(CLI::PositiveNumber)->capture_default_str();
    pre->add_option("--context", pre_context, "context window size")->check(CLI::PositiveNumber)->capture_default_str();
    pre->add_option("--embed", pre_embed, "embedding size")->check(CLI::PositiveNumber)->capture_default_str();
    pre->add_option("--hidden", pre_hidden, "hidden units")->check(CLI::PositiveNumber)->capture_default_str();
    pre->add_option("--mode", pre_mode, "preprocessing mode")->check(CLI::IsMember({"normalized", "comments-only"}))->capture_default_str();
    add_train_flags(pre, pre_flags);

    // transfer
    auto* tr = app.add_subcommand("transfer", "fine-tune an attention model on frozen branches");
    std::string tr_rnn, tr_gru, tr_project, tr_out;
    int tr_min_count = 2, tr_folds = 10, tr_granule = 1, tr_attn = 0;
    TrainFlags tr_flags;
    tr->add_option("--rnn", tr_rnn, "pre-trained rnn bundle")->required();
    tr->add_option("--gru", tr_gru, "pre-trained gru bundle")->required();
    tr->add_option("--project", tr_project, "downstream project directory")->required();
    tr->add_option("--out", tr_out, "output bundle directory")->required();
    tr->add_option("--min-count", tr_min_count, "downstream vocabulary threshold")->check(CLI::PositiveNumber)->capture_default_str();
    tr->add_option("--folds", tr_folds, "fold count (0=test, 1=validation)")->check(CLI::Range(3, 1000))->capture_default_str();
    tr->add_option("--granule", tr_granule, "lines per fold assignment unit")->check(CLI::PositiveNumber)->capture_default_str();
    tr->add_option("--attn", tr_attn, "attention inner size (0 = concat width)")->capture_default_str();
    add_train_flags(tr, tr_flags);

    // suggest
    auto* sg = app.add_subcommand("suggest", "rank next-token suggestions for a code context");
    std::string sg_model, sg_context;
    int sg_k = 10;
    sg->add_option("--model", sg_model, "model bundle directory")->required();
    sg->add_option("--context", sg_context, "code text preceding the cursor")->required();
    sg->add_option("--k", sg_k, "suggestions to print")->check(CLI::PositiveNumber)->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a model on a project's test fold");
    std::string ev_model, ev_project, ev_out = "eval_report.txt", ev_log;
    int ev_folds = 10, ev_granule = 1;
    std::uint64_t ev_seed = 0;
    ev->add_option("--model", ev_model, "model bundle directory")->required();
    ev->add_option("--project", ev_project, "project directory")->required();
    ev->add_option("--folds", ev_folds, "fold count")->check(CLI::Range(3, 1000))->capture_default_str();
    ev->add_option("--granule", ev_granule, "lines per fold assignment unit")->check(CLI::PositiveNumber)->capture_default_str();
    ev->add_option("--seed", ev_seed, "fold shuffle seed")->capture_default_str();
    ev->add_option("--out", ev_out, "report file path")->capture_default_str();
    ev->add_option("--record-log", ev_log, "optional per-record log path");

    // anova
    auto* an = app.add_subcommand("anova", "one-way ANOVA over groups of measurements");
    std::string an_groups;
    double an_alpha = 0.05;
    an->add_option("--groups", an_groups, "file with one comma-separated group per line")->required();
    an->add_option("--alpha", an_alpha, "significance level")->check(CLI::Range(1e-9, 0.5))->capture_default_str();

    // normalize
    auto* nm = app.add_subcommand("normalize", "persist normalized token streams (.toks)");
    std::string nm_corpus, nm_out, nm_mode = "normalized";
    nm->add_option("--corpus", nm_corpus, "directory of .java files")->required();
    nm->add_option("--out", nm_out, "output directory")->required();
    nm->add_option("--mode", nm_mode, "preprocessing mode")->check(CLI::IsMember({"normalized", "comments-only"}))->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pre->parsed())
            return run_pretrain(pre_corpus, pre_unit, pre_out, pre_min_count, pre_context,
                                pre_embed, pre_hidden, pre_mode, pre_flags);
        if (tr->parsed())
            return run_transfer(tr_rnn, tr_gru, tr_project, tr_out, tr_min_count, tr_folds,
                                tr_granule, tr_attn, tr_flags);
        if (sg->parsed()) return run_suggest(sg_model, sg_context, sg_k);
        if (ev->parsed())
            return run_eval(ev_model, ev_project, ev_folds, ev_granule, ev_seed, ev_out, ev_log);
        if (an->parsed()) return run_anova(an_groups, an_alpha);
        if (nm->parsed()) return run_normalize(nm_corpus, nm_out, nm_mode);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
