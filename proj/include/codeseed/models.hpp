#pragma once

// Model assembly: the recurrent base language models, the frozen-branch
// transfer model with attention pooling, top-k ranking, and a
// storage-precision inference path for low-latency suggestion.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "codeseed/common.hpp"
#include "codeseed/corpus.hpp"
#include "codeseed/matrix.hpp"
#include "codeseed/neural.hpp"
#include "codeseed/vocab.hpp"

namespace codeseed {

enum class Unit { Rnn, Gru };

inline std::string unit_name(Unit u) { return u == Unit::Rnn ? "rnn" : "gru"; }
inline Unit unit_from_name(const std::string& s) {
    if (s == "rnn") return Unit::Rnn;
    if (s == "gru") return Unit::Gru;
    throw Error(msg("unknown unit '", s, "'"));
}

struct BaseLMConfig {
    Unit unit = Unit::Gru;
    int embed_dim = 300;
    int hidden_dim = 300;
    int context = 20;
    double dropout_rate = 0.5;
    std::int32_t vocab_size = 0;
};

// ---- ranking ----

struct ScoredToken {
    std::int32_t id = 0;
    double prob = 0.0;
};

// Top-k by probability, ties broken by ascending id; pad and unk never
// appear. Asking for more than the eligible count returns all of them.
inline std::vector<ScoredToken> rank_topk(const Vector& probs, int k) {
    if (k < 1) throw Error(msg("rank_topk: k must be >= 1, got ", k));
    const std::int32_t V = static_cast<std::int32_t>(probs.size());
    std::vector<std::int32_t> ids;
    ids.reserve(static_cast<std::size_t>(std::max(0, V - 2)));
    for (std::int32_t id = 2; id < V; ++id) ids.push_back(id);
    const int take = std::min<std::size_t>(static_cast<std::size_t>(k), ids.size());
    auto better = [&probs](std::int32_t a, std::int32_t b) {
        const double pa = probs[static_cast<std::size_t>(a)];
        const double pb = probs[static_cast<std::size_t>(b)];
        if (pa != pb) return pa > pb;
        return a < b;
    };
    std::partial_sort(ids.begin(), ids.begin() + take, ids.end(), better);
    std::vector<ScoredToken> out;
    out.reserve(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i)
        out.push_back({ids[static_cast<std::size_t>(i)], probs[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])]});
    return out;
}

// ---- base language model ----

class BaseLM {
public:
    using Window = ContextWindow;

    BaseLM() = default;

    BaseLM(const BaseLMConfig& cfg, std::uint64_t init_seed) : cfg_(cfg), init_seed_(init_seed) {
        if (cfg.vocab_size < 2) throw Error("base model needs a vocabulary of at least pad+unk");
        embedding_ = Parameter("embedding", cfg.vocab_size, cfg.embed_dim);
        if (cfg.unit == Unit::Gru) {
            gru_ = GruParams("gru", cfg.embed_dim, cfg.hidden_dim);
        } else {
            rnn_w_ = Parameter("rnn.W", cfg.embed_dim, cfg.hidden_dim);
            rnn_u_ = Parameter("rnn.U", cfg.hidden_dim, cfg.hidden_dim);
        }
        out_w_ = Parameter("out_W", cfg.hidden_dim, cfg.vocab_size);
        out_b_ = Parameter("out_b", 1, cfg.vocab_size);

        Rng rng(init_seed);
        for (Parameter* p : parameters())
            if (p != &out_b_) init_uniform(*p, rng);
    }

    const BaseLMConfig& config() const { return cfg_; }
    std::uint64_t init_seed() const { return init_seed_; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps{&embedding_};
        if (cfg_.unit == Unit::Gru)
            for (Parameter* p : gru_.all()) ps.push_back(p);
        else {
            ps.push_back(&rnn_w_);
            ps.push_back(&rnn_u_);
        }
        ps.push_back(&out_w_);
        ps.push_back(&out_b_);
        return ps;
    }
    std::vector<const Parameter*> parameters() const {
        auto ps = const_cast<BaseLM*>(this)->parameters();
        return {ps.begin(), ps.end()};
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const Parameter* p : parameters()) n += p->size();
        return n;
    }

    // Vanilla RNNs get their gradients clipped; the gated unit does not need it.
    double grad_clip_norm() const { return cfg_.unit == Unit::Rnn ? 5.0 : 0.0; }

    Parameter& embedding() { return embedding_; }
    const Parameter& embedding() const { return embedding_; }
    GruParams& gru() { return gru_; }
    const GruParams& gru() const { return gru_; }
    Parameter& rnn_w() { return rnn_w_; }
    Parameter& rnn_u() { return rnn_u_; }
    const Parameter& rnn_w() const { return rnn_w_; }
    const Parameter& rnn_u() const { return rnn_u_; }
    Parameter& out_w() { return out_w_; }
    Parameter& out_b() { return out_b_; }

    // Hidden-state sequence for the context, h_0 = 0. Rows are h_1..h_T.
    Matrix hidden_sequence(const std::vector<std::int32_t>& ctx,
                           std::vector<GruCache>* caches = nullptr) const {
        if (ctx.empty()) throw Error("empty context");
        return hidden_sequence_from(embed_forward(embedding_, ctx), caches);
    }

    // Full forward: embed, recur, dropout on the final hidden state, dense
    // softmax. Deterministic given (params, window, rng state, training).
    Vector forward(const std::vector<std::int32_t>& ctx, bool training, Rng* rng) const {
        Trace trace;
        return run_forward(ctx, training, rng, trace);
    }

    Vector predict(const std::vector<std::int32_t>& ctx) const { return forward(ctx, false, nullptr); }

    Vector predict_window(const Window& w) const { return predict(w.context); }

    std::vector<ScoredToken> predict_topk(const std::vector<std::int32_t>& ctx, int k) const {
        return rank_topk(predict(ctx), k);
    }

    double loss(const Window& w) const { return cross_entropy(predict(w.context), w.target); }

    // Forward + backward for one window; adds into parameter grads and
    // returns the window loss.
    double accumulate_gradients(const Window& w, Rng& rng) {
        Trace trace;
        const Vector probs = run_forward(w.context, true, &rng, trace);
        const double loss_value = cross_entropy(probs, w.target);

        const int T = static_cast<int>(w.context.size());
        const int hidden = cfg_.hidden_dim;

        Vector d_dropped(static_cast<std::size_t>(hidden), 0.0);
        dense_softmax_ce_backward(probs, w.target, trace.dropped.data(), out_w_, out_b_,
                                  d_dropped.data());

        Vector dh(static_cast<std::size_t>(hidden), 0.0);
        dropout_backward(d_dropped.data(), trace.mask, dh.data());

        Matrix dX(T, cfg_.embed_dim);
        const Vector h0(static_cast<std::size_t>(hidden), 0.0);
        for (int t = T - 1; t >= 0; --t) {
            Vector dh_prev(static_cast<std::size_t>(hidden), 0.0);
            const double* h_prev = t == 0 ? h0.data() : trace.H.row(t - 1);
            if (cfg_.unit == Unit::Gru) {
                gru_cell_backward(dh.data(), trace.X.row(t), h_prev,
                                  trace.caches[static_cast<std::size_t>(t)], gru_, dX.row(t),
                                  dh_prev.data());
            } else {
                rnn_cell_backward(dh.data(), trace.X.row(t), h_prev, trace.H.row(t), rnn_w_,
                                  rnn_u_, dX.row(t), dh_prev.data());
            }
            dh = std::move(dh_prev);
        }
        embed_backward(embedding_, w.context, dX);
        return loss_value;
    }

private:
    struct Trace {
        Matrix X;
        Matrix H;
        std::vector<GruCache> caches;
        Vector mask;
        Vector dropped;
    };

    Vector run_forward(const std::vector<std::int32_t>& ctx, bool training, Rng* rng,
                       Trace& trace) const {
        if (ctx.empty()) throw Error("empty context");
        trace.X = embed_forward(embedding_, ctx);
        trace.H = hidden_sequence_from(trace.X, training ? &trace.caches : nullptr);
        const double* final_h = trace.H.row(trace.H.rows - 1);

        trace.dropped.assign(static_cast<std::size_t>(cfg_.hidden_dim), 0.0);
        if (training && cfg_.dropout_rate > 0.0) {
            if (!rng) throw Error("training forward needs an RNG for dropout");
            dropout_forward(final_h, static_cast<std::size_t>(cfg_.hidden_dim), cfg_.dropout_rate,
                            true, *rng, trace.mask, trace.dropped.data());
        } else {
            trace.mask.assign(static_cast<std::size_t>(cfg_.hidden_dim), 1.0);
            std::copy(final_h, final_h + cfg_.hidden_dim, trace.dropped.begin());
        }
        return dense_softmax_forward(trace.dropped.data(), out_w_.value, out_b_.value,
                                     worker_count());
    }

    Matrix hidden_sequence_from(const Matrix& X, std::vector<GruCache>* caches) const {
        const int T = X.rows;
        Matrix H(T, cfg_.hidden_dim);
        Vector h(static_cast<std::size_t>(cfg_.hidden_dim), 0.0);
        if (caches) caches->assign(static_cast<std::size_t>(T), GruCache{});
        for (int t = 0; t < T; ++t) {
            Vector next(static_cast<std::size_t>(cfg_.hidden_dim));
            if (cfg_.unit == Unit::Gru) {
                GruCache local;
                GruCache& cache = caches ? (*caches)[static_cast<std::size_t>(t)] : local;
                gru_cell_forward(X.row(t), h.data(), gru_, cache, next.data());
            } else {
                rnn_cell_forward(X.row(t), h.data(), rnn_w_.value, rnn_u_.value, next.data());
            }
            std::copy(next.begin(), next.end(), H.row(t));
            h = std::move(next);
        }
        return H;
    }

    BaseLMConfig cfg_;
    std::uint64_t init_seed_ = 0;
    Parameter embedding_;
    GruParams gru_;
    Parameter rnn_w_, rnn_u_;
    Parameter out_w_, out_b_;
};

// ---- transfer model ----

// One window, encoded once per branch vocabulary plus once for the target
// vocabulary.
struct TransferWindow {
    std::vector<std::int32_t> rnn_ctx;
    std::vector<std::int32_t> gru_ctx;
    std::int32_t target = 0;
};

// A pre-trained recurrent stack without its output head; every parameter is
// frozen. Keeps its own pre-training vocabulary for re-encoding input.
struct FrozenBranch {
    Unit unit = Unit::Gru;
    int embed_dim = 0;
    int hidden_dim = 0;
    int context = 20;
    Vocabulary vocab;
    Parameter embedding;
    GruParams gru;
    Parameter rnn_w, rnn_u;

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps{&embedding};
        if (unit == Unit::Gru)
            for (Parameter* p : gru.all()) ps.push_back(p);
        else {
            ps.push_back(&rnn_w);
            ps.push_back(&rnn_u);
        }
        return ps;
    }
    std::vector<const Parameter*> parameters() const {
        auto ps = const_cast<FrozenBranch*>(this)->parameters();
        return {ps.begin(), ps.end()};
    }

    Matrix hidden_sequence(const std::vector<std::int32_t>& ctx) const {
        const int T = static_cast<int>(ctx.size());
        if (T < 1) throw Error("empty branch context");
        const Matrix X = embed_forward(embedding, ctx);
        Matrix H(T, hidden_dim);
        Vector h(static_cast<std::size_t>(hidden_dim), 0.0);
        GruCache cache;
        for (int t = 0; t < T; ++t) {
            Vector next(static_cast<std::size_t>(hidden_dim));
            if (unit == Unit::Gru)
                gru_cell_forward(X.row(t), h.data(), gru, cache, next.data());
            else
                rnn_cell_forward(X.row(t), h.data(), rnn_w.value, rnn_u.value, next.data());
            std::copy(next.begin(), next.end(), H.row(t));
            h = std::move(next);
        }
        return H;
    }
};

class TransferModel {
public:
    using Window = TransferWindow;

    TransferModel() = default;

    const FrozenBranch& rnn_branch() const { return rnn_branch_; }
    const FrozenBranch& gru_branch() const { return gru_branch_; }
    FrozenBranch& rnn_branch() { return rnn_branch_; }
    FrozenBranch& gru_branch() { return gru_branch_; }
    AttentionParams& attention() { return attn_; }
    const AttentionParams& attention() const { return attn_; }
    Parameter& out_w() { return out_w_; }
    Parameter& out_b() { return out_b_; }
    const Parameter& out_w() const { return out_w_; }
    const Parameter& out_b() const { return out_b_; }
    const Vocabulary& target_vocab() const { return target_vocab_; }
    double dropout_rate() const { return dropout_rate_; }
    int context() const { return rnn_branch_.context; }
    int concat_dim() const { return rnn_branch_.hidden_dim + gru_branch_.hidden_dim; }
    std::uint64_t init_seed() const { return init_seed_; }

    std::vector<Parameter*> parameters() {
        std::vector<Parameter*> ps;
        for (Parameter* p : rnn_branch_.parameters()) ps.push_back(p);
        for (Parameter* p : gru_branch_.parameters()) ps.push_back(p);
        ps.push_back(&attn_.W_a);
        ps.push_back(&attn_.v_a);
        ps.push_back(&out_w_);
        ps.push_back(&out_b_);
        return ps;
    }
    std::vector<const Parameter*> parameters() const {
        auto ps = const_cast<TransferModel*>(this)->parameters();
        return {ps.begin(), ps.end()};
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const Parameter* p : parameters()) n += p->size();
        return n;
    }

    double grad_clip_norm() const { return 0.0; }

    // Concatenated per-timestep branch states, T x (hidden_rnn + hidden_gru).
    Matrix concat_states(const Window& w) const {
        const Matrix Hr = rnn_branch_.hidden_sequence(w.rnn_ctx);
        const Matrix Hg = gru_branch_.hidden_sequence(w.gru_ctx);
        if (Hr.rows != Hg.rows) throw Error("branch context lengths differ");
        Matrix M(Hr.rows, Hr.cols + Hg.cols);
        for (int t = 0; t < Hr.rows; ++t) {
            std::copy(Hr.row(t), Hr.row(t) + Hr.cols, M.row(t));
            std::copy(Hg.row(t), Hg.row(t) + Hg.cols, M.row(t) + Hr.cols);
        }
        return M;
    }

    Vector forward(const Window& w, bool training, Rng* rng) const {
        Trace trace;
        return run_forward(w, training, rng, trace);
    }

    Vector predict_window(const Window& w) const { return forward(w, false, nullptr); }

    std::vector<ScoredToken> predict_topk(const Window& w, int k) const {
        return rank_topk(predict_window(w), k);
    }

    double loss(const Window& w) const { return cross_entropy(predict_window(w), w.target); }

    // Gradients flow only into the attention parameters and the output head;
    // the frozen branches are not traversed backward at all.
    double accumulate_gradients(const Window& w, Rng& rng) {
        Trace trace;
        const Vector probs = run_forward(w, true, &rng, trace);
        const double loss_value = cross_entropy(probs, w.target);

        Vector dcontext(static_cast<std::size_t>(concat_dim()), 0.0);
        dense_softmax_ce_backward(probs, w.target, trace.context.data(), out_w_, out_b_,
                                  dcontext.data());
        attention_backward(dcontext, trace.dropped_states, trace.attn, attn_, nullptr);
        return loss_value;
    }

    friend TransferModel build_transfer(const BaseLM& rnn, const Vocabulary& rnn_vocab,
                                        const BaseLM& gru, const Vocabulary& gru_vocab,
                                        const Vocabulary& target_vocab, double dropout_rate,
                                        int attn_dim, std::uint64_t init_seed);

    // Assembly from already-built pieces (deserialization path). Enforces the
    // frozen/trainable split.
    static TransferModel assemble(FrozenBranch rnn, FrozenBranch gru, AttentionParams attn,
                                  Parameter out_w, Parameter out_b, Vocabulary target_vocab,
                                  double dropout_rate, std::uint64_t init_seed) {
        if (rnn.unit != Unit::Rnn || gru.unit != Unit::Gru)
            throw Error("assemble: branch units out of order");
        if (rnn.context != gru.context) throw Error("assemble: context size mismatch");
        TransferModel tm;
        tm.rnn_branch_ = std::move(rnn);
        tm.gru_branch_ = std::move(gru);
        tm.attn_ = std::move(attn);
        tm.out_w_ = std::move(out_w);
        tm.out_b_ = std::move(out_b);
        tm.target_vocab_ = std::move(target_vocab);
        tm.dropout_rate_ = dropout_rate;
        tm.init_seed_ = init_seed;
        for (Parameter* p : tm.rnn_branch_.parameters()) p->trainable = false;
        for (Parameter* p : tm.gru_branch_.parameters()) p->trainable = false;
        tm.attn_.W_a.trainable = tm.attn_.v_a.trainable = true;
        tm.out_w_.trainable = tm.out_b_.trainable = true;
        return tm;
    }

private:
    struct Trace {
        Matrix dropped_states;  // T x concat, after inverted dropout
        Vector drop_mask;
        AttentionCache attn;
        Vector context;
    };

    Vector run_forward(const Window& w, bool training, Rng* rng, Trace& trace) const {
        Matrix M = concat_states(w);
        trace.dropped_states = Matrix(M.rows, M.cols);
        if (training && dropout_rate_ > 0.0) {
            if (!rng) throw Error("training forward needs an RNG for dropout");
            dropout_forward(M.data.data(), M.data.size(), dropout_rate_, true, *rng,
                            trace.drop_mask, trace.dropped_states.data.data());
        } else {
            trace.drop_mask.assign(M.data.size(), 1.0);
            trace.dropped_states.data = M.data;
        }
        attention_forward(trace.dropped_states, attn_, trace.attn, trace.context);
        return dense_softmax_forward(trace.context.data(), out_w_.value, out_b_.value,
                                     worker_count());
    }

    FrozenBranch rnn_branch_;
    FrozenBranch gru_branch_;
    AttentionParams attn_;
    Parameter out_w_, out_b_;
    Vocabulary target_vocab_;
    double dropout_rate_ = 0.5;
    std::uint64_t init_seed_ = 0;
};

namespace modeldetail {

inline FrozenBranch freeze_branch(const BaseLM& src, const Vocabulary& vocab,
                                  const std::string& prefix) {
    FrozenBranch b;
    b.unit = src.config().unit;
    b.embed_dim = src.config().embed_dim;
    b.hidden_dim = src.config().hidden_dim;
    b.context = src.config().context;
    b.vocab = vocab;
    b.embedding = src.embedding();
    b.embedding.name = prefix + ".embedding";
    if (b.unit == Unit::Gru) {
        b.gru = src.gru();
        for (Parameter* p : b.gru.all()) p->name = prefix + "." + p->name;
    } else {
        b.rnn_w = src.rnn_w();
        b.rnn_w.name = prefix + "." + b.rnn_w.name;
        b.rnn_u = src.rnn_u();
        b.rnn_u.name = prefix + "." + b.rnn_u.name;
    }
    for (Parameter* p : b.parameters()) {
        p->trainable = false;
        p->zero_grad();
    }
    return b;
}

}  // namespace modeldetail

// Copies the branch stacks, freezes every copied parameter, and freshly
// initializes the attention learner plus an output head sized to the
// downstream vocabulary.
inline TransferModel build_transfer(const BaseLM& rnn, const Vocabulary& rnn_vocab,
                                    const BaseLM& gru, const Vocabulary& gru_vocab,
                                    const Vocabulary& target_vocab, double dropout_rate,
                                    int attn_dim = 0, std::uint64_t init_seed = 0) {
    if (rnn.config().unit != Unit::Rnn) throw Error("build_transfer: first branch must be rnn");
    if (gru.config().unit != Unit::Gru) throw Error("build_transfer: second branch must be gru");
    if (rnn.config().context != gru.config().context)
        throw Error(msg("build_transfer: context size mismatch (", rnn.config().context, " vs ",
                        gru.config().context, ")"));
    if (rnn.config().embed_dim != gru.config().embed_dim)
        throw Error(msg("build_transfer: embedding size mismatch (", rnn.config().embed_dim,
                        " vs ", gru.config().embed_dim, ")"));

    TransferModel tm;
    tm.rnn_branch_ = modeldetail::freeze_branch(rnn, rnn_vocab, "rnn_branch");
    tm.gru_branch_ = modeldetail::freeze_branch(gru, gru_vocab, "gru_branch");
    tm.target_vocab_ = target_vocab;
    tm.dropout_rate_ = dropout_rate;
    tm.init_seed_ = init_seed;

    const int concat = tm.concat_dim();
    if (attn_dim <= 0) attn_dim = concat;
    tm.attn_ = AttentionParams("attention", concat, attn_dim);
    tm.out_w_ = Parameter("out_W", concat, target_vocab.size());
    tm.out_b_ = Parameter("out_b", 1, target_vocab.size());

    Rng rng(init_seed);
    init_uniform(tm.attn_.W_a, rng);
    init_uniform(tm.attn_.v_a, rng);
    init_uniform(tm.out_w_, rng);
    return tm;
}

// ---- storage-precision inference ----

// Inference mirror in the serialized (binary32) precision. The suggestion
// path streams hundreds of megabytes of weights per call at full vocabulary
// size, so the working set is halved and the two branches and the output
// columns run on workers. Accumulation stays deterministic: every chunk owns
// a disjoint output range.
class TransferInference {
public:
    explicit TransferInference(const TransferModel& m) : model_(&m) {
        mirror_branch(m.rnn_branch(), rnn_);
        mirror_branch(m.gru_branch(), gru_);
        wa_ = to_f32(m.attention().W_a.value);
        va_ = to_f32(m.attention().v_a.value);
        attn_dim_ = m.attention().attn_dim();
        head_w_ = to_f32(m.out_w().value);
        head_b_ = to_f32(m.out_b().value);
        vocab_size_ = m.out_w().value.cols;
        concat_ = m.concat_dim();
    }

    Vector probs(const TransferWindow& w) const {
        const int T = static_cast<int>(w.rnn_ctx.size());
        std::vector<float> M(static_cast<std::size_t>(T) * static_cast<std::size_t>(concat_));

        const BranchPlan* plans[2] = {&rnn_, &gru_};
        const std::vector<std::int32_t>* ctxs[2] = {&w.rnn_ctx, &w.gru_ctx};
        const int offsets[2] = {0, rnn_.hidden};
        parallel_chunks(2, std::min(worker_count(), 2), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t b = lo; b < hi; ++b)
                run_branch(*plans[b], *ctxs[b], M.data() + offsets[b], concat_);
        });

        // attention in branch order: scores, softmax, pooled context
        Vector scores(static_cast<std::size_t>(T));
        std::vector<float> pre(static_cast<std::size_t>(attn_dim_));
        for (int t = 0; t < T; ++t) {
            const float* h = M.data() + static_cast<std::size_t>(t) * concat_;
            std::fill(pre.begin(), pre.end(), 0.0f);
            for (int i = 0; i < concat_; ++i) {
                const float hi = h[i];
                const float* row = wa_.data() + static_cast<std::size_t>(i) * attn_dim_;
                for (int a = 0; a < attn_dim_; ++a) pre[static_cast<std::size_t>(a)] += hi * row[a];
            }
            double s = 0.0;
            for (int a = 0; a < attn_dim_; ++a)
                s += std::tanh(static_cast<double>(pre[static_cast<std::size_t>(a)])) *
                     static_cast<double>(va_[static_cast<std::size_t>(a)]);
            scores[static_cast<std::size_t>(t)] = s;
        }
        softmax_inplace(scores);

        std::vector<float> context(static_cast<std::size_t>(concat_), 0.0f);
        for (int t = 0; t < T; ++t) {
            const float wgt = static_cast<float>(scores[static_cast<std::size_t>(t)]);
            const float* h = M.data() + static_cast<std::size_t>(t) * concat_;
            for (int c = 0; c < concat_; ++c) context[static_cast<std::size_t>(c)] += wgt * h[c];
        }

        // output head: column chunks across workers, rows unrolled four at a
        // time so the logits buffer is streamed once per four weight rows
        std::vector<float> logits(static_cast<std::size_t>(vocab_size_));
        const std::size_t vs = static_cast<std::size_t>(vocab_size_);
        parallel_chunks(vs, worker_count(), [&](std::size_t lo, std::size_t hi) {
            for (std::size_t o = lo; o < hi; ++o) logits[o] = head_b_[o];
            int i = 0;
            for (; i + 4 <= concat_; i += 4) {
                const float x0 = context[static_cast<std::size_t>(i)];
                const float x1 = context[static_cast<std::size_t>(i) + 1];
                const float x2 = context[static_cast<std::size_t>(i) + 2];
                const float x3 = context[static_cast<std::size_t>(i) + 3];
                const float* r0 = head_w_.data() + static_cast<std::size_t>(i) * vs;
                const float* r1 = r0 + vs;
                const float* r2 = r1 + vs;
                const float* r3 = r2 + vs;
                for (std::size_t o = lo; o < hi; ++o)
                    logits[o] += x0 * r0[o] + x1 * r1[o] + x2 * r2[o] + x3 * r3[o];
            }
            for (; i < concat_; ++i) {
                const float xi = context[static_cast<std::size_t>(i)];
                const float* row = head_w_.data() + static_cast<std::size_t>(i) * vs;
                for (std::size_t o = lo; o < hi; ++o) logits[o] += xi * row[o];
            }
        });

        Vector out(logits.begin(), logits.end());
        softmax_inplace(out);
        return out;
    }

    std::vector<ScoredToken> predict_topk(const TransferWindow& w, int k) const {
        return rank_topk(probs(w), k);
    }

private:
    struct BranchPlan {
        Unit unit = Unit::Gru;
        int embed = 0, hidden = 0;
        std::vector<float> E, Wz, Uz, Wr, Ur, W, U;
    };

    static std::vector<float> to_f32(const Matrix& m) {
        return std::vector<float>(m.data.begin(), m.data.end());
    }

    static void mirror_branch(const FrozenBranch& b, BranchPlan& plan) {
        plan.unit = b.unit;
        plan.embed = b.embed_dim;
        plan.hidden = b.hidden_dim;
        plan.E = to_f32(b.embedding.value);
        if (b.unit == Unit::Gru) {
            plan.Wz = to_f32(b.gru.W_z.value);
            plan.Uz = to_f32(b.gru.U_z.value);
            plan.Wr = to_f32(b.gru.W_r.value);
            plan.Ur = to_f32(b.gru.U_r.value);
            plan.W = to_f32(b.gru.W.value);
            plan.U = to_f32(b.gru.U.value);
        } else {
            plan.W = to_f32(b.rnn_w.value);
            plan.U = to_f32(b.rnn_u.value);
        }
    }

    // Writes h_t into out + t*stride.
    static void run_branch(const BranchPlan& p, const std::vector<std::int32_t>& ctx, float* out,
                           int stride) {
        const int h = p.hidden;
        const std::size_t hs = static_cast<std::size_t>(h);
        std::vector<float> hprev(hs, 0.0f), az(hs), ar(hs), ac(hs), u(hs);
        auto add_tv = [h](const std::vector<float>& W, int rows, const float* v,
                          std::vector<float>& acc) {
            for (int i = 0; i < rows; ++i) {
                const float vi = v[i];
                const float* row = W.data() + static_cast<std::size_t>(i) * h;
                for (int o = 0; o < h; ++o) acc[static_cast<std::size_t>(o)] += vi * row[o];
            }
        };
        std::vector<float> x_f(static_cast<std::size_t>(p.embed));
        for (std::size_t t = 0; t < ctx.size(); ++t) {
            const float* x = p.E.data() + static_cast<std::size_t>(ctx[t]) * p.embed;
            std::copy(x, x + p.embed, x_f.begin());
            float* ht = out + t * static_cast<std::size_t>(stride);
            if (p.unit == Unit::Gru) {
                std::fill(az.begin(), az.end(), 0.0f);
                std::fill(ar.begin(), ar.end(), 0.0f);
                std::fill(ac.begin(), ac.end(), 0.0f);
                std::fill(u.begin(), u.end(), 0.0f);
                add_tv(p.Wz, p.embed, x_f.data(), az);
                add_tv(p.Uz, h, hprev.data(), az);
                add_tv(p.Wr, p.embed, x_f.data(), ar);
                add_tv(p.Ur, h, hprev.data(), ar);
                add_tv(p.W, p.embed, x_f.data(), ac);
                add_tv(p.U, h, hprev.data(), u);
                for (int o = 0; o < h; ++o) {
                    const std::size_t i = static_cast<std::size_t>(o);
                    const float z = 1.0f / (1.0f + std::exp(-az[i]));
                    const float r = 1.0f / (1.0f + std::exp(-ar[i]));
                    const float c = std::tanh(ac[i] + r * u[i]);
                    ht[o] = (1.0f - z) * hprev[i] + z * c;
                }
            } else {
                std::fill(ac.begin(), ac.end(), 0.0f);
                add_tv(p.W, p.embed, x_f.data(), ac);
                add_tv(p.U, h, hprev.data(), ac);
                for (int o = 0; o < h; ++o) ht[o] = std::tanh(ac[static_cast<std::size_t>(o)]);
            }
            std::copy(ht, ht + h, hprev.begin());
        }
    }

    const TransferModel* model_;
    BranchPlan rnn_, gru_;
    std::vector<float> wa_, va_, head_w_, head_b_;
    int attn_dim_ = 0, vocab_size_ = 0, concat_ = 0;
};

}  // namespace codeseed
