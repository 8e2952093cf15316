#pragma once

// The numeric core: named parameters, forward/backward rules for the five
// layer types (embedding, RNN cell, GRU cell, attention pooling, dense
// softmax with cross-entropy), inverted dropout, Adam, and a central
// finite-difference gradient checker.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "codeseed/common.hpp"
#include "codeseed/matrix.hpp"

namespace codeseed {

struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, int rows, int cols, bool train = true)
        : name(std::move(n)), value(rows, cols), grad(rows, cols), trainable(train) {}

    void zero_grad() { grad.zero(); }
    std::size_t size() const { return value.size(); }
};

// Glorot-style uniform init in +-sqrt(6 / (fan_in + fan_out)).
inline void init_uniform(Parameter& p, Rng& rng) {
    const double limit = std::sqrt(6.0 / (p.value.rows + p.value.cols));
    for (double& v : p.value.data) v = rng.uniform(-limit, limit);
}

// ---- embedding ----

// Rows of E.value selected by id; output is (ids.size() x embed).
inline Matrix embed_forward(const Parameter& E, const std::vector<std::int32_t>& ids) {
    Matrix out(static_cast<int>(ids.size()), E.value.cols);
    for (std::size_t t = 0; t < ids.size(); ++t) {
        if (ids[t] < 0 || ids[t] >= E.value.rows)
            throw Error(msg("embedding id ", ids[t], " out of range ", E.value.rows));
        const double* src = E.value.row(ids[t]);
        std::copy(src, src + E.value.cols, out.row(static_cast<int>(t)));
    }
    return out;
}

// Accumulates the output gradient back into the looked-up rows. Frozen
// embeddings keep their grad pinned at zero.
inline void embed_backward(Parameter& E, const std::vector<std::int32_t>& ids, const Matrix& dOut) {
    if (!E.trainable) return;
    for (std::size_t t = 0; t < ids.size(); ++t) {
        double* dst = E.grad.row(ids[t]);
        const double* src = dOut.row(static_cast<int>(t));
        for (int c = 0; c < E.value.cols; ++c) dst[c] += src[c];
    }
}

// ---- vanilla RNN cell ----

// h = tanh(W^T x + U^T h_prev); no bias terms in the recurrent path.
inline void rnn_cell_forward(const double* x, const double* h_prev, const Matrix& W,
                             const Matrix& U, double* h_out) {
    const int hidden = W.cols;
    std::vector<double> acc(static_cast<std::size_t>(hidden), 0.0);
    for (int i = 0; i < W.rows; ++i) {
        const double xi = x[i];
        const double* row = W.row(i);
        for (int o = 0; o < hidden; ++o) acc[static_cast<std::size_t>(o)] += xi * row[o];
    }
    for (int i = 0; i < U.rows; ++i) {
        const double hi = h_prev[i];
        const double* row = U.row(i);
        for (int o = 0; o < hidden; ++o) acc[static_cast<std::size_t>(o)] += hi * row[o];
    }
    for (int o = 0; o < hidden; ++o) h_out[o] = std::tanh(acc[static_cast<std::size_t>(o)]);
}

inline void accumulate_if_trainable(Parameter& p, const double* x, const double* dy) {
    if (p.trainable) add_outer(p.grad, x, dy);
}

// dh is the loss gradient at h. Adds parameter gradients and writes the
// gradients flowing to x and h_prev (either may be null to skip).
inline void rnn_cell_backward(const double* dh, const double* x, const double* h_prev,
                              const double* h, Parameter& W, Parameter& U, double* dx,
                              double* dh_prev) {
    const int hidden = W.value.cols;
    std::vector<double> da(static_cast<std::size_t>(hidden));
    for (int o = 0; o < hidden; ++o) da[static_cast<std::size_t>(o)] = dh[o] * (1.0 - h[o] * h[o]);
    accumulate_if_trainable(W, x, da.data());
    accumulate_if_trainable(U, h_prev, da.data());
    if (dx)
        for (int i = 0; i < W.value.rows; ++i) dx[i] += dot(W.value.row(i), da.data(), hidden);
    if (dh_prev)
        for (int i = 0; i < U.value.rows; ++i) dh_prev[i] += dot(U.value.row(i), da.data(), hidden);
}

// ---- GRU cell ----

struct GruParams {
    Parameter W_z, U_z, W_r, U_r, W, U;

    GruParams() = default;
    GruParams(const std::string& prefix, int embed, int hidden, bool trainable = true)
        : W_z(prefix + ".W_z", embed, hidden, trainable),
          U_z(prefix + ".U_z", hidden, hidden, trainable),
          W_r(prefix + ".W_r", embed, hidden, trainable),
          U_r(prefix + ".U_r", hidden, hidden, trainable),
          W(prefix + ".W", embed, hidden, trainable),
          U(prefix + ".U", hidden, hidden, trainable) {}

    std::vector<Parameter*> all() { return {&W_z, &U_z, &W_r, &U_r, &W, &U}; }
    std::vector<const Parameter*> all() const { return {&W_z, &U_z, &W_r, &U_r, &W, &U}; }
    int hidden() const { return W.value.cols; }
    int embed() const { return W.value.rows; }
};

// Per-step values kept for the backward pass.
struct GruCache {
    Vector z, r, cand, u;  // gates, candidate, and u = U^T h_prev
};

// z = sigmoid(W_z^T x + U_z^T h_prev)
// r = sigmoid(W_r^T x + U_r^T h_prev)
// c = tanh(W^T x + r . (U^T h_prev))
// h = (1 - z) . h_prev + z . c
inline void gru_cell_forward(const double* x, const double* h_prev, const GruParams& p,
                             GruCache& cache, double* h_out) {
    const int hidden = p.hidden();
    const std::size_t hs = static_cast<std::size_t>(hidden);
    cache.z.assign(hs, 0.0);
    cache.r.assign(hs, 0.0);
    cache.cand.assign(hs, 0.0);
    cache.u.assign(hs, 0.0);

    Vector az(hs, 0.0), ar(hs, 0.0), ac(hs, 0.0);
    auto add_tv = [](const Matrix& W, const double* v, Vector& acc) {
        for (int i = 0; i < W.rows; ++i) {
            const double vi = v[i];
            const double* row = W.row(i);
            for (int o = 0; o < W.cols; ++o) acc[static_cast<std::size_t>(o)] += vi * row[o];
        }
    };
    add_tv(p.W_z.value, x, az);
    add_tv(p.U_z.value, h_prev, az);
    add_tv(p.W_r.value, x, ar);
    add_tv(p.U_r.value, h_prev, ar);
    add_tv(p.W.value, x, ac);
    add_tv(p.U.value, h_prev, cache.u);

    for (int o = 0; o < hidden; ++o) {
        const std::size_t i = static_cast<std::size_t>(o);
        cache.z[i] = sigmoid(az[i]);
        cache.r[i] = sigmoid(ar[i]);
        cache.cand[i] = std::tanh(ac[i] + cache.r[i] * cache.u[i]);
        h_out[o] = (1.0 - cache.z[i]) * h_prev[o] + cache.z[i] * cache.cand[i];
    }
}

inline void gru_cell_backward(const double* dh, const double* x, const double* h_prev,
                              const GruCache& cache, GruParams& p, double* dx, double* dh_prev) {
    const int hidden = p.hidden();
    const std::size_t hs = static_cast<std::size_t>(hidden);
    Vector daz(hs), dar(hs), dac(hs), du(hs);
    for (int o = 0; o < hidden; ++o) {
        const std::size_t i = static_cast<std::size_t>(o);
        const double z = cache.z[i], r = cache.r[i], c = cache.cand[i], u = cache.u[i];
        const double dz = dh[o] * (c - h_prev[o]);
        const double dc = dh[o] * z;
        const double d_ac = dc * (1.0 - c * c);
        const double dr = d_ac * u;
        dac[i] = d_ac;
        du[i] = d_ac * r;
        daz[i] = dz * z * (1.0 - z);
        dar[i] = dr * r * (1.0 - r);
    }

    accumulate_if_trainable(p.W_z, x, daz.data());
    accumulate_if_trainable(p.U_z, h_prev, daz.data());
    accumulate_if_trainable(p.W_r, x, dar.data());
    accumulate_if_trainable(p.U_r, h_prev, dar.data());
    accumulate_if_trainable(p.W, x, dac.data());
    accumulate_if_trainable(p.U, h_prev, du.data());

    if (dx) {
        for (int i = 0; i < p.W.value.rows; ++i) {
            dx[i] += dot(p.W_z.value.row(i), daz.data(), hidden);
            dx[i] += dot(p.W_r.value.row(i), dar.data(), hidden);
            dx[i] += dot(p.W.value.row(i), dac.data(), hidden);
        }
    }
    if (dh_prev) {
        for (int o = 0; o < hidden; ++o)
            dh_prev[o] += dh[o] * (1.0 - cache.z[static_cast<std::size_t>(o)]);
        for (int i = 0; i < hidden; ++i) {
            dh_prev[i] += dot(p.U_z.value.row(i), daz.data(), hidden);
            dh_prev[i] += dot(p.U_r.value.row(i), dar.data(), hidden);
            dh_prev[i] += dot(p.U.value.row(i), du.data(), hidden);
        }
    }
}

// ---- attention pooling ----

struct AttentionParams {
    Parameter W_a;  // hidden_in x attn
    Parameter v_a;  // attn x 1

    AttentionParams() = default;
    AttentionParams(const std::string& prefix, int hidden_in, int attn)
        : W_a(prefix + ".W_a", hidden_in, attn), v_a(prefix + ".v_a", attn, 1) {}

    int attn_dim() const { return W_a.value.cols; }
};

struct AttentionCache {
    Matrix pre;      // T x attn, tanh(W_a^T H_i)
    Vector weights;  // softmax over scores
};

// Content-only scorer: score_i = v_a . tanh(W_a^T H_i); weights = softmax;
// context = sum_i weights_i H_i.
inline void attention_forward(const Matrix& H, const AttentionParams& p, AttentionCache& cache,
                              Vector& context) {
    const int T = H.rows;
    if (T < 1) throw Error("attention over empty state sequence");
    const int attn = p.attn_dim();
    cache.pre = Matrix(T, attn);
    cache.weights.assign(static_cast<std::size_t>(T), 0.0);

    Vector scores(static_cast<std::size_t>(T));
    Vector tmp(static_cast<std::size_t>(attn));
    for (int t = 0; t < T; ++t) {
        mul_vec_t(p.W_a.value, H.row(t), tmp.data());
        double s = 0.0;
        for (int a = 0; a < attn; ++a) {
            const double th = std::tanh(tmp[static_cast<std::size_t>(a)]);
            cache.pre.at(t, a) = th;
            s += th * p.v_a.value.data[static_cast<std::size_t>(a)];
        }
        scores[static_cast<std::size_t>(t)] = s;
    }
    softmax_inplace(scores);
    cache.weights = scores;

    context.assign(static_cast<std::size_t>(H.cols), 0.0);
    for (int t = 0; t < T; ++t) {
        const double w = cache.weights[static_cast<std::size_t>(t)];
        const double* row = H.row(t);
        for (int c = 0; c < H.cols; ++c) context[static_cast<std::size_t>(c)] += w * row[c];
    }
}

// dH may be null when the states feed from frozen layers.
inline void attention_backward(const Vector& dcontext, const Matrix& H, const AttentionCache& cache,
                               AttentionParams& p, Matrix* dH) {
    const int T = H.rows;
    const int attn = p.attn_dim();

    Vector dweights(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
        dweights[static_cast<std::size_t>(t)] = dot(dcontext.data(), H.row(t), H.cols);
    if (dH) {
        for (int t = 0; t < T; ++t) {
            const double w = cache.weights[static_cast<std::size_t>(t)];
            double* row = dH->row(t);
            for (int c = 0; c < H.cols; ++c) row[c] += w * dcontext[static_cast<std::size_t>(c)];
        }
    }

    // softmax backward: ds_i = w_i (dw_i - sum_j w_j dw_j)
    double mix = 0.0;
    for (int t = 0; t < T; ++t)
        mix += cache.weights[static_cast<std::size_t>(t)] * dweights[static_cast<std::size_t>(t)];
    Vector dscores(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t)
        dscores[static_cast<std::size_t>(t)] =
            cache.weights[static_cast<std::size_t>(t)] * (dweights[static_cast<std::size_t>(t)] - mix);

    Vector dpre(static_cast<std::size_t>(attn));
    for (int t = 0; t < T; ++t) {
        const double ds = dscores[static_cast<std::size_t>(t)];
        for (int a = 0; a < attn; ++a) {
            const double th = cache.pre.at(t, a);
            if (p.v_a.trainable) p.v_a.grad.data[static_cast<std::size_t>(a)] += ds * th;
            dpre[static_cast<std::size_t>(a)] = ds * p.v_a.value.data[static_cast<std::size_t>(a)] * (1.0 - th * th);
        }
        accumulate_if_trainable(p.W_a, H.row(t), dpre.data());
        if (dH)
            for (int i = 0; i < p.W_a.value.rows; ++i)
                dH->row(t)[i] += dot(p.W_a.value.row(i), dpre.data(), attn);
    }
}

// ---- dense + softmax + cross entropy ----

// p = softmax(W^T x + b). Column chunks may run on workers; each writes a
// disjoint range, so the result is identical for any worker count.
inline Vector dense_softmax_forward(const double* x, const Matrix& W, const Matrix& b,
                                    int workers = 1) {
    Vector logits(static_cast<std::size_t>(W.cols));
    const std::size_t cols = static_cast<std::size_t>(W.cols);
    const bool threaded = workers > 1 && W.size() >= (1u << 20);
    parallel_chunks(cols, threaded ? workers : 1, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t o = lo; o < hi; ++o) logits[o] = b.data[o];
        for (int i = 0; i < W.rows; ++i) {
            const double xi = x[i];
            const double* row = W.row(i);
            for (std::size_t o = lo; o < hi; ++o) logits[o] += xi * row[o];
        }
    });
    softmax_inplace(logits);
    return logits;
}

// loss = -ln p[target]; degenerate zero probabilities are floored at 1e-12.
inline double cross_entropy(const Vector& probs, std::int32_t target) {
    if (target < 0 || static_cast<std::size_t>(target) >= probs.size())
        throw Error(msg("cross_entropy target ", target, " out of range ", probs.size()));
    double sum = 0.0;
    for (double p : probs) sum += p;
    if (std::abs(sum - 1.0) > 1e-6)
        throw Error(msg("cross_entropy input does not sum to 1 (sum=", sum, ")"));
    const double p = std::max(probs[static_cast<std::size_t>(target)], 1e-12);
    return -std::log(p);
}

// Combined softmax+CE backward: dlogits = p - onehot(target). Accumulates
// into W/b grads and writes dx (may be null).
inline void dense_softmax_ce_backward(const Vector& probs, std::int32_t target, const double* x,
                                      Parameter& W, Parameter& b, double* dx) {
    Vector dlogits = probs;
    dlogits[static_cast<std::size_t>(target)] -= 1.0;
    if (b.trainable)
        for (std::size_t o = 0; o < dlogits.size(); ++o) b.grad.data[o] += dlogits[o];
    accumulate_if_trainable(W, x, dlogits.data());
    if (dx)
        for (int i = 0; i < W.value.rows; ++i)
            dx[i] += dot(W.value.row(i), dlogits.data(), W.value.cols);
}

// ---- dropout ----

// Inverted dropout: the mask holds 0 or 1/(1-rate), so inference is a pure
// identity. The mask doubles as the backward multiplier.
inline void dropout_forward(const double* x, std::size_t n, double rate, bool training, Rng& rng,
                            Vector& mask, double* out) {
    if (rate < 0.0 || rate >= 1.0) throw Error(msg("dropout rate must be in [0,1), got ", rate));
    mask.assign(n, 1.0);
    if (!training || rate == 0.0) {
        std::copy(x, x + n, out);
        return;
    }
    const double scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < n; ++i) {
        mask[i] = rng.bernoulli(rate) ? 0.0 : scale;
        out[i] = x[i] * mask[i];
    }
}

inline void dropout_backward(const double* dy, const Vector& mask, double* dx) {
    for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += dy[i] * mask[i];
}

// ---- Adam ----

struct AdamState {
    Matrix m, v;
    std::int64_t t = 0;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(const Parameter& p, double learn_rate)
        : m(p.value.rows, p.value.cols), v(p.value.rows, p.value.cols), lr(learn_rate) {}
};

// Standard Adam with bias correction. Refuses frozen parameters.
inline void adam_step(Parameter& p, AdamState& s) {
    if (!p.trainable) throw Error(msg("adam_step on frozen parameter '", p.name, "'"));
    if (!s.m.same_shape(p.value))
        throw Error(msg("adam state shape mismatch for '", p.name, "'"));
    s.t += 1;
    const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
        const double g = p.grad.data[i];
        s.m.data[i] = s.beta1 * s.m.data[i] + (1.0 - s.beta1) * g;
        s.v.data[i] = s.beta2 * s.v.data[i] + (1.0 - s.beta2) * g * g;
        const double mhat = s.m.data[i] / bc1;
        const double vhat = s.v.data[i] / bc2;
        p.value.data[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}

// ---- gradient checking ----

// Central finite differences against an analytic gradient. f() evaluates the
// scalar loss with theta's current contents. Returns the max over
// coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(Parameter& theta, const Matrix& analytic, double eps,
                         const std::function<double()>& f) {
    if (!analytic.same_shape(theta.value)) throw Error("grad_check: analytic grad shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.value.data.size(); ++i) {
        const double saved = theta.value.data[i];
        theta.value.data[i] = saved + eps;
        const double f_plus = f();
        theta.value.data[i] = saved - eps;
        const double f_minus = f();
        theta.value.data[i] = saved;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
            throw Error(msg("grad_check: non-finite loss at parameter '", theta.name, "'"));
        const double numeric = (f_plus - f_minus) / (2.0 * eps);
        const double a = analytic.data[i];
        const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace codeseed
