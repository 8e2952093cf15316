#include "doctest.h"

#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "codeseed/models.hpp"
#include "codeseed/vocab.hpp"

using namespace codeseed;

namespace {

BaseLMConfig tiny_config(Unit unit, std::int32_t vocab, int context = 4) {
    BaseLMConfig cfg;
    cfg.unit = unit;
    cfg.embed_dim = 5;
    cfg.hidden_dim = 6;
    cfg.context = context;
    cfg.dropout_rate = 0.0;
    cfg.vocab_size = vocab;
    return cfg;
}

Vocabulary vocab_of_size(std::int32_t v) {
    TokenSequence seq;
    seq.origin = "v";
    seq.line_starts = {0};
    for (std::int32_t i = 0; i < v - 2; ++i) seq.tokens.push_back("tok" + std::to_string(i));
    return Vocabulary::build({seq}, 1);
}

void zero_params(std::vector<Parameter*> ps) {
    for (Parameter* p : ps) p->value.zero();
}

double l1_distance(const Vector& a, const Vector& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
    return d;
}

TransferModel tiny_transfer(std::int32_t branch_vocab, std::int32_t target_vocab_size,
                            double dropout = 0.0, std::uint64_t seed = 3) {
    const BaseLM rnn(tiny_config(Unit::Rnn, branch_vocab), 1);
    const BaseLM gru(tiny_config(Unit::Gru, branch_vocab), 2);
    return build_transfer(rnn, vocab_of_size(branch_vocab), gru, vocab_of_size(branch_vocab),
                          vocab_of_size(target_vocab_size), dropout, 0, seed);
}

}  // namespace

TEST_CASE("rank_topk orders by probability then id and hides reserved ids") {
    SUBCASE("argmax") {
        const auto top = rank_topk({0.1, 0.2, 0.7}, 1);
        REQUIRE(top.size() == 1);
        CHECK(top[0].id == 2);
        CHECK(top[0].prob == doctest::Approx(0.7));
    }
    SUBCASE("uniform ties break by ascending id") {
        const auto top = rank_topk(Vector(6, 1.0 / 6), 3);
        REQUIRE(top.size() == 3);
        CHECK(top[0].id == 2);
        CHECK(top[1].id == 3);
        CHECK(top[2].id == 4);
    }
    SUBCASE("pad and unk never appear even when they dominate") {
        const auto top = rank_topk({0.5, 0.4, 0.06, 0.04}, 10);
        REQUIRE(top.size() == 2);
        CHECK(top[0].id == 2);
        CHECK(top[1].id == 3);
    }
    SUBCASE("k beyond the eligible count returns all eligible tokens") {
        const auto top = rank_topk(Vector(5, 0.2), 50);
        CHECK(top.size() == 3);
    }
    SUBCASE("descending order") {
        const auto top = rank_topk({0.0, 0.0, 0.15, 0.3, 0.05, 0.5}, 4);
        for (std::size_t i = 1; i < top.size(); ++i) CHECK(top[i - 1].prob >= top[i].prob);
    }
}

TEST_CASE("base forward is a distribution; zero parameters give uniform") {
    for (Unit unit : {Unit::Gru, Unit::Rnn}) {
        BaseLM m(tiny_config(unit, 9), 42);
        const std::vector<std::int32_t> ctx{0, 0, 3, 5};

        Vector p = m.predict(ctx);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

        zero_params(m.parameters());
        p = m.predict(ctx);
        for (double v : p) CHECK(v == doctest::Approx(1.0 / 9).epsilon(1e-12));
    }
}

TEST_CASE("overfitting a single window makes its target the argmax") {
    BaseLM m(tiny_config(Unit::Gru, 8), 7);
    ContextWindow w;
    w.context = {0, 2, 3, 4};
    w.target = 6;

    std::vector<AdamState> opt;
    for (Parameter* p : m.parameters()) opt.emplace_back(*p, 0.01);
    Rng rng(5);
    for (int step = 0; step < 500; ++step) {
        auto params = m.parameters();
        for (Parameter* p : params) p->zero_grad();
        m.accumulate_gradients(w, rng);
        for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i], opt[i]);
    }
    const auto top = m.predict_topk(w.context, 1);
    REQUIRE(top.size() == 1);
    CHECK(top[0].id == 6);
}

TEST_CASE("base model full-loss gradients match central differences") {
    for (Unit unit : {Unit::Gru, Unit::Rnn}) {
        CAPTURE(unit == Unit::Gru ? "gru" : "rnn");
        BaseLM m(tiny_config(unit, 7, 3), 11);
        ContextWindow w;
        w.context = {0, 4, 2};
        w.target = 5;

        Rng rng(1);
        for (Parameter* p : m.parameters()) p->zero_grad();
        m.accumulate_gradients(w, rng);  // dropout off in tiny_config

        auto loss = [&] { return m.loss(w); };
        for (Parameter* p : m.parameters()) {
            CAPTURE(p->name);
            CHECK(grad_check(*p, p->grad, 1e-5, loss) < 1e-6);
        }
    }
}

TEST_CASE("build_transfer freezes exactly the branch parameters") {
    TransferModel tm = tiny_transfer(9, 12);

    std::set<std::string> trainable;
    std::size_t frozen = 0;
    for (const Parameter* p : tm.parameters()) {
        if (p->trainable)
            trainable.insert(p->name);
        else
            ++frozen;
    }
    CHECK(trainable == std::set<std::string>{"attention.W_a", "attention.v_a", "out_W", "out_b"});
    CHECK(frozen == 10);  // rnn branch: embedding + W + U; gru branch: embedding + 6 gate mats

    // frozen means the branch bytes never change under fine-tuning steps
    const Matrix before = tm.rnn_branch().embedding.value;
    TransferWindow w;
    w.rnn_ctx = {0, 3, 4, 2};
    w.gru_ctx = {0, 3, 4, 2};
    w.target = 7;
    Rng rng(2);
    std::vector<Parameter*> train_params;
    for (Parameter* p : tm.parameters())
        if (p->trainable) train_params.push_back(p);
    std::vector<AdamState> opt;
    for (Parameter* p : train_params) opt.emplace_back(*p, 0.01);
    for (int step = 0; step < 20; ++step) {
        for (Parameter* p : train_params) p->zero_grad();
        tm.accumulate_gradients(w, rng);
        for (std::size_t i = 0; i < train_params.size(); ++i) adam_step(*train_params[i], opt[i]);
    }
    CHECK(std::memcmp(before.data.data(), tm.rnn_branch().embedding.value.data.data(),
                      before.data.size() * sizeof(double)) == 0);

    // gradient norms on frozen parameters are exactly zero
    for (const Parameter* p : tm.parameters()) {
        if (!p->trainable)
            for (double g : p->grad.data) CHECK(g == 0.0);
    }
}

TEST_CASE("build_transfer validates unit order and dimensions") {
    const BaseLM rnn(tiny_config(Unit::Rnn, 6), 1);
    const BaseLM gru(tiny_config(Unit::Gru, 6), 2);
    const Vocabulary v = vocab_of_size(6);
    CHECK_THROWS_AS(build_transfer(gru, v, gru, v, v, 0.0, 0, 1), Error);

    BaseLMConfig other = tiny_config(Unit::Gru, 6, 9);  // different context
    const BaseLM gru_mismatch(other, 2);
    CHECK_THROWS_AS(build_transfer(rnn, v, gru_mismatch, v, v, 0.0, 0, 1), Error);

    BaseLMConfig wide = tiny_config(Unit::Gru, 6);
    wide.embed_dim = 11;
    const BaseLM gru_wide(wide, 2);
    CHECK_THROWS_AS(build_transfer(rnn, v, gru_wide, v, v, 0.0, 0, 1), Error);
}

TEST_CASE("parameter counts follow the architecture arithmetic") {
    BaseLM gru(tiny_config(Unit::Gru, 9), 1);  // e=5 h=6 V=9
    // embedding V*e + gates 3*(e*h + h*h) + head h*V + V
    CHECK(gru.param_count() == 9 * 5 + 3 * (5 * 6 + 6 * 6) + 6 * 9 + 9);

    BaseLM rnn(tiny_config(Unit::Rnn, 9), 1);
    CHECK(rnn.param_count() == 9 * 5 + (5 * 6 + 6 * 6) + 6 * 9 + 9);

    TransferModel tm = tiny_transfer(9, 12);
    const std::size_t branches = (9 * 5 + 5 * 6 + 6 * 6) + (9 * 5 + 3 * (5 * 6 + 6 * 6));
    const std::size_t concat = 12;  // 6 + 6
    const std::size_t head_and_attn = concat * concat + concat + concat * 12 + 12;
    CHECK(tm.param_count() == branches + head_and_attn);
}

TEST_CASE("transfer forward contracts") {
    TransferModel tm = tiny_transfer(9, 12);
    TransferWindow w;
    w.rnn_ctx = {0, 3, 4, 2};
    w.gru_ctx = {0, 3, 4, 2};
    w.target = 7;

    SUBCASE("distribution sums to one") {
        const Vector p = tm.forward(w, false, nullptr);
        double sum = 0.0;
        for (double v : p) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(p.size() == 12);
    }

    SUBCASE("zero head gives uniform over the target vocabulary") {
        tm.out_w().value.zero();
        tm.out_b().value.zero();
        tm.attention().W_a.value.zero();
        tm.attention().v_a.value.zero();
        const Vector p = tm.forward(w, false, nullptr);
        for (double v : p) CHECK(v == doctest::Approx(1.0 / 12).epsilon(1e-12));
    }

    SUBCASE("permuting context positions changes the distribution") {
        const Vector p1 = tm.forward(w, false, nullptr);
        TransferWindow swapped = w;
        std::swap(swapped.rnn_ctx[1], swapped.rnn_ctx[3]);
        std::swap(swapped.gru_ctx[1], swapped.gru_ctx[3]);
        const Vector p2 = tm.forward(swapped, false, nullptr);
        CHECK(l1_distance(p1, p2) > 1e-9);
    }

    SUBCASE("adding a constant to out_b leaves the ranking unchanged") {
        const auto before = tm.predict_topk(w, 5);
        for (double& v : tm.out_b().value.data) v += 3.75;
        const auto after = tm.predict_topk(w, 5);
        REQUIRE(before.size() == after.size());
        for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i].id == after[i].id);
    }
}

TEST_CASE("transfer model trainable-side gradients match central differences") {
    TransferModel tm = tiny_transfer(8, 10, 0.0, 17);
    TransferWindow w;
    w.rnn_ctx = {0, 2, 5};
    w.gru_ctx = {0, 2, 5};
    w.target = 4;

    Rng rng(3);
    for (Parameter* p : tm.parameters()) p->zero_grad();
    tm.accumulate_gradients(w, rng);

    auto loss = [&] { return tm.loss(w); };
    for (Parameter* p : tm.parameters()) {
        if (!p->trainable) continue;
        CAPTURE(p->name);
        CHECK(grad_check(*p, p->grad, 1e-5, loss) < 1e-6);
    }
}

TEST_CASE("storage-precision inference tracks the reference forward") {
    TransferModel tm = tiny_transfer(15, 40, 0.0, 23);
    const TransferInference fast(tm);
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        TransferWindow w;
        for (int t = 0; t < 6; ++t) {
            w.rnn_ctx.push_back(static_cast<std::int32_t>(rng.next_below(15)));
            w.gru_ctx.push_back(static_cast<std::int32_t>(rng.next_below(15)));
        }
        w.target = 2;
        const Vector exact = tm.predict_window(w);
        const Vector approx = fast.probs(w);
        REQUIRE(exact.size() == approx.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < approx.size(); ++i) {
            CHECK(approx[i] == doctest::Approx(exact[i]).epsilon(1e-3));
            sum += approx[i];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(fast.predict_topk(w, 1)[0].id == tm.predict_topk(w, 1)[0].id);
    }
}
