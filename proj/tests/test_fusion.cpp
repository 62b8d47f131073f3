#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evmf/fusion.hpp"
#include "evmf/rng.hpp"
#include "oracles.hpp"

using namespace evmf;

static Tensor rand_tensor(Shape s, Rng& rng, bool rg = false) {
    std::vector<double> v(static_cast<size_t>(shape_numel(s)));
    for (double& x : v) x = rng.uniform(-1, 1);
    return Tensor::from(std::move(s), std::move(v), rg);
}

static std::vector<GradCheckInput> all_params(ParamRegistry& reg) {
    std::vector<GradCheckInput> out;
    for (auto& p : reg.items()) out.push_back({p.name, p.tensor});
    return out;
}

// ------------------------------------------------------------ cross modal

TEST_CASE("cross modal with a single path has weight exactly 1") {
    Rng rng(1);
    ParamRegistry reg;
    CrossModalParams p = CrossModalParams::make(reg, rng, "cma", 6, 2);
    PathVectors v;
    v.ids = {PathId::dense};
    v.vectors = {rand_tensor({6}, rng)};
    ContextualMatrix out = cross_modal_encode(v, p);
    REQUIRE(out.w_cma.size() == 1);
    CHECK(out.w_cma[0] == 1.0);
    CHECK(out.v_contextual.shape() == Shape{1, 6});
}

TEST_CASE("cross modal with zero attention weights reduces to layer norm") {
    Rng rng(2);
    ParamRegistry reg;
    CrossModalParams p = CrossModalParams::make(reg, rng, "cma", 4, 2);
    for (Tensor* w : {&p.mha.wq, &p.mha.wk, &p.mha.wv, &p.mha.wo})
        std::fill(w->values().begin(), w->values().end(), 0.0);
    Tensor v_in = rand_tensor({3, 4}, rng);
    ContextualMatrix out = cross_modal_encode(v_in, p);
    Tensor want = layer_norm(v_in, p.ln_gamma, p.ln_beta);
    for (size_t i = 0; i < want.values().size(); ++i)
        CHECK(out.v_contextual.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
    // uniform attention over identical zero value-projections
    for (double w : out.w_cma) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("cross modal weights are row stochastic and match the mha surface") {
    Rng rng(3);
    ParamRegistry reg;
    CrossModalParams p = CrossModalParams::make(reg, rng, "cma", 8, 4);
    for (int it = 0; it < 100; ++it) {
        PathVectors v;
        v.ids = {PathId::dense, PathId::unet, PathId::trad};
        for (int i = 0; i < 3; ++i) v.vectors.push_back(rand_tensor({8}, rng));
        ContextualMatrix out = cross_modal_encode(v, p);
        MhaOut direct = mha(stack_rows(v.vectors), stack_rows(v.vectors),
                            stack_rows(v.vectors), p.mha);
        for (int r = 0; r < 3; ++r) {
            double sum = 0;
            for (int c = 0; c < 3; ++c) {
                const double w = out.w_cma[static_cast<size_t>(r) * 3 + c];
                CHECK(w > 0.0);
                CHECK(w == direct.weights[static_cast<size_t>(r) * 3 + c]);
                sum += w;
            }
            CHECK(std::fabs(sum - 1.0) < 1e-9);
        }
    }
}

// -------------------------------------------------------------------- naf

static NafParams tiny_naf(ParamRegistry& reg, Rng& rng, int d_in, int d_out,
                          int k = 2, int nprim = 2, int d_state = 4, int d_ctrl = 3) {
    NafConfig cfg;
    cfg.iterations = k;
    cfg.n_primitives = nprim;
    cfg.d_state = d_state;
    cfg.d_ctrl = d_ctrl;
    cfg.hidden = d_state;
    return NafParams::make(reg, rng, "naf", d_in, d_out, cfg);
}

TEST_CASE("naf_init starts the controller at zero and flattens row-major") {
    Rng rng(4);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 6, 5);
    Tensor v = rand_tensor({2, 3}, rng);
    FusionState st = naf_init(v, p);
    for (double h : st.h_ctrl.values()) CHECK(h == 0.0);
    CHECK(st.alpha_trace.empty());

    // zero weights leave only the bias
    std::fill(p.linear_in.w.values().begin(), p.linear_in.w.values().end(), 0.0);
    std::fill(p.linear_in.b.values().begin(), p.linear_in.b.values().end(), 0.25);
    FusionState st2 = naf_init(v, p);
    for (double s : st2.s_fused.values()) CHECK(s == 0.25);

    // flatten order: rows concatenated
    auto& w = p.linear_in.w.values();
    std::fill(w.begin(), w.end(), 0.0);
    std::fill(p.linear_in.b.values().begin(), p.linear_in.b.values().end(), 0.0);
    w[2] = 1.0;  // first state coordinate reads v_cat[2] = V[0][2]
    FusionState st3 = naf_init(v, p);
    CHECK(st3.s_fused.values()[0] == doctest::Approx(v.values()[2]).epsilon(1e-12));
    w[2] = 0.0;
    w[6 /*second row reads v_cat[0+... ]*/] = 0.0;
}

TEST_CASE("naf_precompute_primitives shapes and zero-weight bias propagation") {
    Rng rng(5);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 6, 5, 2, 3);
    Tensor v = rand_tensor({2, 3}, rng);
    auto prims = naf_precompute_primitives(v, p);
    REQUIRE(prims.size() == 3);
    for (const auto& t : prims) CHECK(t.shape() == Shape{4});

    auto& prim0 = p.bank.prims[0];
    std::fill(prim0.fc1.w.values().begin(), prim0.fc1.w.values().end(), 0.0);
    std::fill(prim0.fc1.b.values().begin(), prim0.fc1.b.values().end(), 0.0);
    std::fill(prim0.fc2.w.values().begin(), prim0.fc2.w.values().end(), 0.0);
    std::fill(prim0.fc2.b.values().begin(), prim0.fc2.b.values().end(), -0.5);
    prims = naf_precompute_primitives(v, p);
    for (double x : prims[0].values()) CHECK(x == -0.5);
}

TEST_CASE("naf_precompute matches a hand two-layer oracle") {
    Rng rng(6);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 4, 3, 1, 1, 3, 2);
    Tensor v = rand_tensor({4}, rng);
    const auto prims = naf_precompute_primitives(v, p);
    const auto& prim = p.bank.prims[0];
    // hidden = relu(W1 v + b1); out = W2 hidden + b2
    std::vector<double> hidden(3, 0.0);
    for (int i = 0; i < 3; ++i) {
        double acc = prim.fc1.b.values()[static_cast<size_t>(i)];
        for (int j = 0; j < 4; ++j)
            acc += prim.fc1.w.values()[static_cast<size_t>(i) * 4 + j] * v.values()[static_cast<size_t>(j)];
        hidden[static_cast<size_t>(i)] = std::max(0.0, acc);
    }
    for (int i = 0; i < 3; ++i) {
        double acc = prim.fc2.b.values()[static_cast<size_t>(i)];
        for (int j = 0; j < 3; ++j)
            acc += prim.fc2.w.values()[static_cast<size_t>(i) * 3 + j] * hidden[static_cast<size_t>(j)];
        CHECK(prims[0].values()[static_cast<size_t>(i)] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("naf_step with a single primitive gives alpha exactly 1") {
    Rng rng(7);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 6, 5, 2, 1);
    Tensor v = rand_tensor({2, 3}, rng);
    FusionState st = naf_init(v, p);
    auto prims = naf_precompute_primitives(v, p);
    naf_step(st, prims, p);
    REQUIRE(st.alpha_trace.size() == 1);
    CHECK(st.alpha_trace[0][0] == 1.0);

    // s' = layer_norm(s + p1)
    FusionState st0 = naf_init(v, p);
    Tensor want = layer_norm(add(st0.s_fused, prims[0]), p.ln_gamma, p.ln_beta);
    for (size_t i = 0; i < want.values().size(); ++i)
        CHECK(st.s_fused.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
}

TEST_CASE("naf_step with zero primitives leaves layer_norm of the state") {
    Rng rng(8);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 6, 5, 1, 2);
    for (auto& prim : p.bank.prims) {
        std::fill(prim.fc1.w.values().begin(), prim.fc1.w.values().end(), 0.0);
        std::fill(prim.fc1.b.values().begin(), prim.fc1.b.values().end(), 0.0);
        std::fill(prim.fc2.w.values().begin(), prim.fc2.w.values().end(), 0.0);
        std::fill(prim.fc2.b.values().begin(), prim.fc2.b.values().end(), 0.0);
    }
    Tensor v = rand_tensor({2, 3}, rng);
    FusionState st = naf_init(v, p);
    Tensor want = layer_norm(st.s_fused, p.ln_gamma, p.ln_beta);
    auto prims = naf_precompute_primitives(v, p);
    naf_step(st, prims, p);
    for (size_t i = 0; i < want.values().size(); ++i)
        CHECK(st.s_fused.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
}

TEST_CASE("naf_step matches a scalar-arithmetic oracle at d_state=2") {
    Rng rng(9);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 4, 3, 1, 2, 2, 2);
    Tensor v = rand_tensor({4}, rng);
    FusionState st = naf_init(v, p);
    const auto prims = naf_precompute_primitives(v, p);
    const auto s0 = st.s_fused.values();
    const auto h0 = st.h_ctrl.values();
    naf_step(st, prims, p);

    // oracle: GRU -> mixing softmax -> weighted primitive sum -> layer norm
    const auto h1 = oracle::gru_step(s0, h0, p.gru.wz.values(), p.gru.bz.values(),
                                     p.gru.wr.values(), p.gru.br.values(),
                                     p.gru.wh.values(), p.gru.bh.values());
    std::vector<double> logits(2, 0.0);
    for (int i = 0; i < 2; ++i) {
        double acc = p.mix.b.values()[static_cast<size_t>(i)];
        for (int j = 0; j < 2; ++j)
            acc += p.mix.w.values()[static_cast<size_t>(i) * 2 + j] * h1[static_cast<size_t>(j)];
        logits[static_cast<size_t>(i)] = acc;
    }
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    const double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    CHECK(st.alpha_trace[0][0] == doctest::Approx(a0).epsilon(1e-12));
    CHECK(st.alpha_trace[0][1] == doctest::Approx(a1).epsilon(1e-12));
    std::vector<double> pre(2);
    for (int i = 0; i < 2; ++i)
        pre[static_cast<size_t>(i)] = s0[static_cast<size_t>(i)] +
                                      a0 * prims[0].values()[static_cast<size_t>(i)] +
                                      a1 * prims[1].values()[static_cast<size_t>(i)];
    const double mu = 0.5 * (pre[0] + pre[1]);
    double var = 0.5 * ((pre[0] - mu) * (pre[0] - mu) + (pre[1] - mu) * (pre[1] - mu));
    for (int i = 0; i < 2; ++i) {
        const double xh = (pre[static_cast<size_t>(i)] - mu) / std::sqrt(var + 1e-5);
        const double want = p.ln_gamma.values()[static_cast<size_t>(i)] * xh +
                            p.ln_beta.values()[static_cast<size_t>(i)];
        CHECK(st.s_fused.values()[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-9));
    }
    for (const auto& h : st.h_ctrl.values())
        CHECK(std::isfinite(h));
    for (int i = 0; i < 2; ++i)
        CHECK(st.h_ctrl.values()[static_cast<size_t>(i)] == doctest::Approx(h1[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("naf_fuse with zero iterations is just the two projections") {
    Rng rng(10);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 6, 5, 0);
    Tensor v = rand_tensor({2, 3}, rng);
    NafOut out = naf_fuse(v, p);
    CHECK(out.alpha_trace.empty());
    Tensor want = p.linear_out(p.linear_in(flatten(v)));
    for (size_t i = 0; i < want.values().size(); ++i)
        CHECK(out.v_naf.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-12));
}

TEST_CASE("naf trace length equals the iteration count") {
    Rng rng(11);
    for (int k : {1, 2, 4}) {
        ParamRegistry reg;
        NafParams p = tiny_naf(reg, rng, 6, 5, k);
        Tensor v = rand_tensor({2, 3}, rng);
        NafOut out = naf_fuse(v, p);
        CHECK(static_cast<int>(out.alpha_trace.size()) == k);
        for (const auto& row : out.alpha_trace) {
            double sum = 0;
            for (double a : row) {
                CHECK(a > 0.0);
                sum += a;
            }
            CHECK(std::fabs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("naf_fuse equals the composed stage operations") {
    Rng rng(12);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 8, 6, 2, 3, 4, 3);
    Tensor v = rand_tensor({2, 4}, rng);
    NafOut fused = naf_fuse(v, p);

    FusionState st = naf_init(v, p);
    auto prims = naf_precompute_primitives(v, p);
    naf_step(st, prims, p);
    naf_step(st, prims, p);
    Tensor manual = p.linear_out(st.s_fused);
    for (size_t i = 0; i < manual.values().size(); ++i)
        CHECK(std::fabs(fused.v_naf.values()[i] - manual.values()[i]) < 1e-10);
}

TEST_CASE("naf_fuse is deterministic") {
    Rng rng(13);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 6, 5, 3);
    Tensor v = rand_tensor({2, 3}, rng);
    NafOut a = naf_fuse(v, p);
    NafOut b = naf_fuse(v, p);
    CHECK(a.v_naf.values() == b.v_naf.values());
    CHECK(a.alpha_trace == b.alpha_trace);
}

TEST_CASE("permuting the primitive bank with the mixing rows is a no-op") {
    Rng rng(14);
    ParamRegistry reg;
    NafParams p = tiny_naf(reg, rng, 6, 5, 3, 3);
    Tensor v = rand_tensor({2, 3}, rng);
    NafOut base = naf_fuse(v, p);

    // swap primitives 0 and 2 together with rows 0 and 2 of the mixing layer
    std::swap(p.bank.prims[0], p.bank.prims[2]);
    auto& mw = p.mix.w.values();
    auto& mb = p.mix.b.values();
    const int dc = p.cfg.d_ctrl;
    for (int j = 0; j < dc; ++j) std::swap(mw[static_cast<size_t>(0) * dc + j], mw[static_cast<size_t>(2) * dc + j]);
    std::swap(mb[0], mb[2]);

    NafOut permuted = naf_fuse(v, p);
    CHECK(permuted.v_naf.values() == base.v_naf.values());  // bit-for-bit
}

TEST_CASE("gradient check through cross modal encode plus naf_fuse") {
    Rng rng(15);
    ParamRegistry reg;
    CrossModalParams cma = CrossModalParams::make(reg, rng, "cma", 4, 2);
    NafConfig cfg;
    cfg.iterations = 3;
    cfg.n_primitives = 2;
    cfg.d_state = 8;
    cfg.d_ctrl = 3;
    cfg.hidden = 4;
    NafParams naf = NafParams::make(reg, rng, "naf", 12, 4, cfg);
    Tensor v_in = rand_tensor({3, 4}, rng, true);
    auto f = [&]() {
        ContextualMatrix ctx = cross_modal_encode(v_in, cma);
        NafOut out = naf_fuse(ctx.v_contextual, naf);
        return sum_all(mul(out.v_naf, out.v_naf));
    };
    auto params = all_params(reg);
    params.push_back({"v_in", v_in});
    CHECK(grad_check(f, params, 1e-5) < 1e-4);
}
