#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "evmf/rng.hpp"
#include "evmf/vim.hpp"
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

// ---------------------------------------------------------------- patchify

TEST_CASE("patchify grid arithmetic") {
    Rng rng(1);
    Tensor fmap = rand_tensor({1, 3, 4, 4}, rng);
    TokenGrid grid;
    Tensor raw = patchify_raw(fmap, 2, grid);
    CHECK(grid.rows == 2);
    CHECK(grid.cols == 2);
    CHECK(raw.shape() == Shape{4, 12});

    Tensor raw1 = patchify_raw(fmap, 1, grid);
    CHECK(grid.rows == 4);
    CHECK(grid.cols == 4);
    CHECK(raw1.shape() == Shape{16, 3});
}

TEST_CASE("patchify gathers raw patch contents channel-first") {
    Rng rng(2);
    Tensor fmap = rand_tensor({1, 2, 4, 4}, rng);
    TokenGrid grid;
    Tensor raw = patchify_raw(fmap, 2, grid);
    const auto& x = fmap.values();
    // token (gy,gx), slot c*4 + py*2 + px
    for (int gy = 0; gy < 2; ++gy)
        for (int gx = 0; gx < 2; ++gx)
            for (int c = 0; c < 2; ++c)
                for (int py = 0; py < 2; ++py)
                    for (int px = 0; px < 2; ++px) {
                        const double want =
                            x[(static_cast<size_t>(c) * 4 + gy * 2 + py) * 4 + gx * 2 + px];
                        const double got =
                            raw.values()[(static_cast<size_t>(gy) * 2 + gx) * 8 +
                                         (c * 4 + py * 2 + px)];
                        CHECK(got == want);
                    }
}

TEST_CASE("patchify divisibility violation raises") {
    Rng rng(3);
    Tensor fmap = rand_tensor({1, 1, 5, 4}, rng);
    TokenGrid grid;
    CHECK_THROWS_AS(patchify_raw(fmap, 2, grid), std::invalid_argument);
}

// ------------------------------------------------------------ selective scan

TEST_CASE("selective scan single token closed form") {
    Rng rng(4);
    ParamRegistry reg;
    SsmParams p = SsmParams::make(reg, rng, "ssm", 3, 2);
    Tensor x = rand_tensor({1, 3}, rng);
    ScanResult res = selective_scan(x, p, ScanDir::forward);

    for (int c = 0; c < 3; ++c) {
        // delta = softplus(W_dt x + b)
        double pre = p.delta_bias.values()[static_cast<size_t>(c)];
        for (int j = 0; j < 3; ++j)
            pre += p.w_delta.values()[static_cast<size_t>(c) * 3 + j] * x.values()[static_cast<size_t>(j)];
        const double dk = std::log1p(std::exp(pre));
        CHECK(res.deltas.values[static_cast<size_t>(c)] == doctest::Approx(dk).epsilon(1e-9));
        double y = 1.0 * x.values()[static_cast<size_t>(c)];  // D initialized to ones
        for (int si = 0; si < 2; ++si) {
            double b = 0, cc = 0;
            for (int j = 0; j < 3; ++j) {
                b += p.w_b.values()[static_cast<size_t>(si) * 3 + j] * x.values()[static_cast<size_t>(j)];
                cc += p.w_c.values()[static_cast<size_t>(si) * 3 + j] * x.values()[static_cast<size_t>(j)];
            }
            y += cc * (dk * b * x.values()[static_cast<size_t>(c)]);  // h0 = 0
        }
        CHECK(res.y.values()[static_cast<size_t>(c)] == doctest::Approx(y).epsilon(1e-9));
    }
}

TEST_CASE("selective scan with gate driven to zero reduces to the skip path") {
    Rng rng(5);
    ParamRegistry reg;
    SsmParams p = SsmParams::make(reg, rng, "ssm", 2, 2);
    std::fill(p.delta_bias.values().begin(), p.delta_bias.values().end(), -60.0);
    std::fill(p.w_delta.values().begin(), p.w_delta.values().end(), 0.0);
    Tensor x = rand_tensor({6, 2}, rng);
    ScanResult res = selective_scan(x, p, ScanDir::forward);
    for (size_t i = 0; i < res.y.values().size(); ++i)
        CHECK(res.y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
    for (double dv : res.deltas.values) CHECK(dv > 0.0);
}

TEST_CASE("scan_core matches unrolled recurrence oracle over many random cases") {
    Rng rng(6);
    for (int it = 0; it < 200; ++it) {
        const int N = 1 + static_cast<int>(rng.next_below(32));
        const int d = 1 + static_cast<int>(rng.next_below(8));
        const int s = 1 + static_cast<int>(rng.next_below(8));
        Tensor u = rand_tensor({N, d}, rng);
        std::vector<double> dl(static_cast<size_t>(N) * d);
        for (double& v : dl) v = rng.uniform(0.01, 1.5);
        Tensor delta = Tensor::from({N, d}, dl);
        std::vector<double> av(static_cast<size_t>(d) * s);
        for (double& v : av) v = -rng.uniform(0.05, 3.0);  // strictly negative
        Tensor A = Tensor::from({d, s}, av);
        Tensor B = rand_tensor({N, s}, rng);
        Tensor C = rand_tensor({N, s}, rng);
        Tensor D = rand_tensor({d}, rng);
        const bool fwd = it % 2 == 0;
        Tensor y = scan_core(u, delta, A, B, C, D, fwd ? ScanDir::forward : ScanDir::backward);
        const auto ref = oracle::scan(u.values(), delta.values(), A.values(), B.values(),
                                      C.values(), D.values(), N, d, s, fwd);
        for (size_t i = 0; i < ref.size(); ++i)
            CHECK(std::fabs(y.values()[i] - ref[i]) < 1e-10);
    }
}

TEST_CASE("backward scan equals reverse-forward-reverse exactly") {
    Rng rng(7);
    ParamRegistry reg;
    SsmParams p = SsmParams::make(reg, rng, "ssm", 4, 3);
    for (int it = 0; it < 20; ++it) {
        const int N = 2 + static_cast<int>(rng.next_below(15));
        Tensor x = rand_tensor({N, 4}, rng);
        ScanResult bwd = selective_scan(x, p, ScanDir::backward);

        std::vector<double> rev(static_cast<size_t>(N) * 4);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < 4; ++j)
                rev[static_cast<size_t>(i) * 4 + j] = x.values()[static_cast<size_t>(N - 1 - i) * 4 + j];
        ScanResult fwd = selective_scan(Tensor::from({N, 4}, rev), p, ScanDir::forward);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < 4; ++j)
                CHECK(bwd.y.values()[static_cast<size_t>(i) * 4 + j] ==
                      fwd.y.values()[static_cast<size_t>(N - 1 - i) * 4 + j]);
    }
}

TEST_CASE("scan state stays bounded over 10k steps") {
    Rng rng(8);
    const int N = 10000, d = 2, s = 2;
    Tensor u = rand_tensor({N, d}, rng);
    std::vector<double> dl(static_cast<size_t>(N) * d);
    for (double& v : dl) v = rng.uniform(0.01, 2.0);
    Tensor delta = Tensor::from({N, d}, dl);
    Tensor A = Tensor::from({d, s}, {-0.5, -1.0, -2.0, -0.1});
    Tensor B = rand_tensor({N, s}, rng);
    Tensor C = rand_tensor({N, s}, rng);
    Tensor D = Tensor::from({d}, {1.0, 1.0});
    Tensor y = scan_core(u, delta, A, B, C, D, ScanDir::forward);
    for (double v : y.values()) {
        CHECK(std::isfinite(v));
        CHECK(std::fabs(v) < 1e6);
    }
}

TEST_CASE("scan_core gradient check") {
    Rng rng(9);
    Tensor u = rand_tensor({5, 2}, rng, true);
    std::vector<double> dl(10);
    for (double& v : dl) v = rng.uniform(0.05, 1.0);
    Tensor delta = Tensor::from({5, 2}, dl, true);
    Tensor A = Tensor::from({2, 3}, {-0.3, -1.2, -0.7, -2.0, -0.15, -0.9}, true);
    Tensor B = rand_tensor({5, 3}, rng, true);
    Tensor C = rand_tensor({5, 3}, rng, true);
    Tensor D = rand_tensor({2}, rng, true);
    for (ScanDir dir : {ScanDir::forward, ScanDir::backward}) {
        auto f = [&]() {
            Tensor y = scan_core(u, delta, A, B, C, D, dir);
            return sum_all(mul(y, y));
        };
        CHECK(grad_check(f, {{"u", u}, {"delta", delta}, {"A", A}, {"B", B}, {"C", C}, {"D", D}},
                         1e-5) < 1e-4);
    }
}

// ---------------------------------------------------------------- mamba block

TEST_CASE("mamba block with zero weights is the identity") {
    Rng rng(10);
    ParamRegistry reg;
    MambaBlockParams p = MambaBlockParams::make(reg, rng, "blk", 4, 4, 2, ScanDir::forward);
    for (auto& item : reg.items())
        std::fill(item.tensor.values().begin(), item.tensor.values().end(), 0.0);
    Tensor x = rand_tensor({6, 4}, rng);
    MambaBlockOut out = mamba_block(x, p);
    CHECK(out.y.values() == x.values());
}

TEST_CASE("mamba block preserves shape") {
    Rng rng(11);
    ParamRegistry reg;
    MambaBlockParams p = MambaBlockParams::make(reg, rng, "blk", 5, 3, 2, ScanDir::backward);
    for (int n : {1, 2, 9, 17}) {
        Tensor x = rand_tensor({n, 5}, rng);
        CHECK(mamba_block(x, p).y.shape() == Shape{n, 5});
    }
}

TEST_CASE("mamba block matches composed oracle at d_inner=2") {
    Rng rng(12);
    ParamRegistry reg;
    MambaBlockParams p = MambaBlockParams::make(reg, rng, "blk", 2, 2, 2, ScanDir::forward);
    const int N = 4;
    Tensor x = rand_tensor({N, 2}, rng);

    // compose by hand: in_proj, split, causal conv width 3, silu, scan, gate, out_proj, residual
    auto lin = [](const std::vector<double>& xin, int rows, int in, const std::vector<double>& w,
                  const std::vector<double>& b, int out) {
        std::vector<double> y(static_cast<size_t>(rows) * out, 0.0);
        for (int i = 0; i < rows; ++i)
            for (int o = 0; o < out; ++o) {
                double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
                for (int j = 0; j < in; ++j)
                    acc += w[static_cast<size_t>(o) * in + j] * xin[static_cast<size_t>(i) * in + j];
                y[static_cast<size_t>(i) * out + o] = acc;
            }
        return y;
    };
    auto silu_v = [](std::vector<double> v) {
        for (double& x : v) x = x / (1.0 + std::exp(-x));
        return v;
    };
    const auto proj = lin(x.values(), N, 2, p.in_proj.w.values(), p.in_proj.b.values(), 4);
    std::vector<double> main_s(static_cast<size_t>(N) * 2), gate_s(static_cast<size_t>(N) * 2);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < 2; ++j) {
            main_s[static_cast<size_t>(i) * 2 + j] = proj[static_cast<size_t>(i) * 4 + j];
            gate_s[static_cast<size_t>(i) * 2 + j] = proj[static_cast<size_t>(i) * 4 + 2 + j];
        }
    std::vector<double> conv(static_cast<size_t>(N) * 2, 0.0);
    for (int t = 0; t < N; ++t)
        for (int c = 0; c < 2; ++c) {
            double acc = p.conv_b.values()[static_cast<size_t>(c)];
            for (int j = 0; j < 3; ++j) {
                const int src = std::max(0, t - (2 - j));  // edge replication
                acc += p.conv_w.values()[static_cast<size_t>(c) * 3 + j] *
                       main_s[static_cast<size_t>(src) * 2 + c];
            }
            conv[static_cast<size_t>(t) * 2 + c] = acc;
        }
    const auto scan_in = silu_v(conv);
    // scan parameters from the module
    std::vector<double> delta(static_cast<size_t>(N) * 2);
    {
        const auto pre = lin(scan_in, N, 2, p.ssm.w_delta.values(), p.ssm.delta_bias.values(), 2);
        for (size_t i = 0; i < pre.size(); ++i) delta[i] = std::log1p(std::exp(pre[i]));
    }
    std::vector<double> A(4);
    for (int i = 0; i < 4; ++i) A[static_cast<size_t>(i)] = -std::exp(p.ssm.a_log.values()[static_cast<size_t>(i)]);
    const auto Bs = lin(scan_in, N, 2, p.ssm.w_b.values(), {}, 2);
    const auto Cs = lin(scan_in, N, 2, p.ssm.w_c.values(), {}, 2);
    const auto scanned = oracle::scan(scan_in, delta, A, Bs, Cs, p.ssm.skip_d.values(), N, 2, 2, true);
    std::vector<double> gated(static_cast<size_t>(N) * 2);
    const auto sg = silu_v(gate_s);
    for (size_t i = 0; i < gated.size(); ++i) gated[i] = scanned[i] * sg[i];
    const auto projected = lin(gated, N, 2, p.out_proj.w.values(), p.out_proj.b.values(), 2);

    MambaBlockOut out = mamba_block(x, p);
    for (size_t i = 0; i < projected.size(); ++i)
        CHECK(std::fabs(out.y.values()[i] - (projected[i] + x.values()[i])) < 1e-10);
}

TEST_CASE("mamba block gradient check at tiny dims") {
    Rng rng(13);
    ParamRegistry reg;
    MambaBlockParams p = MambaBlockParams::make(reg, rng, "blk", 3, 2, 2, ScanDir::forward);
    Tensor x = rand_tensor({4, 3}, rng, true);
    auto f = [&]() {
        MambaBlockOut out = mamba_block(x, p);
        return sum_all(mul(out.y, out.y));
    };
    auto params = all_params(reg);
    params.push_back({"x", x});
    CHECK(grad_check(f, params, 1e-5) < 1e-4);
}

// ----------------------------------------------------------------- vim path

TEST_CASE("vim forward output and delta map shapes") {
    Rng rng(14);
    ParamRegistry reg;
    VimConfig cfg;
    cfg.patch = 2;
    cfg.d_model = 4;
    cfg.d_inner = 4;
    cfg.d_state = 2;
    cfg.layers = 2;
    cfg.d_out = 6;
    VimParams p = VimParams::make(reg, rng, "vim", 3, cfg);
    Tensor fmap = rand_tensor({1, 3, 8, 6}, rng);
    VimOut out = vim_forward(fmap, p);
    CHECK(out.grid.rows == 4);
    CHECK(out.grid.cols == 3);
    CHECK(out.map.shape() == Shape{1, 6, 4, 3});
    CHECK(out.delta_fwd.size() == 12);
    CHECK(out.delta_bwd.size() == 12);
    for (double v : out.delta_fwd) CHECK(v > 0.0);
    for (double v : out.delta_bwd) CHECK(v > 0.0);
}

TEST_CASE("vim delta map is constant for spatially constant input") {
    Rng rng(15);
    ParamRegistry reg;
    VimConfig cfg;
    cfg.patch = 1;
    cfg.d_model = 3;
    cfg.d_inner = 3;
    cfg.d_state = 2;
    cfg.layers = 1;
    cfg.d_out = 4;
    VimParams p = VimParams::make(reg, rng, "vim", 2, cfg);
    std::vector<double> flat(2 * 4 * 4);
    for (int c = 0; c < 2; ++c)
        std::fill(flat.begin() + c * 16, flat.begin() + (c + 1) * 16, c == 0 ? 0.3 : -0.8);
    Tensor fmap = Tensor::from({1, 2, 4, 4}, flat);
    VimOut out = vim_forward(fmap, p);
    // deltas depend only on the (identical) token contents: every token agrees.
    // Checked against the scan input symmetry rather than a single frozen value.
    for (size_t i = 1; i < out.delta_fwd.size(); ++i)
        CHECK(out.delta_fwd[i] == doctest::Approx(out.delta_fwd[0]).epsilon(1e-12));
    for (size_t i = 1; i < out.delta_bwd.size(); ++i)
        CHECK(out.delta_bwd[i] == doctest::Approx(out.delta_bwd[0]).epsilon(1e-12));
}

TEST_CASE("vim map reshape keeps token order (identity projections)") {
    Rng rng(16);
    ParamRegistry reg;
    VimConfig cfg;
    cfg.patch = 1;
    cfg.d_model = 2;
    cfg.d_inner = 2;
    cfg.d_state = 2;
    cfg.layers = 1;
    cfg.d_out = 2;
    VimParams p = VimParams::make(reg, rng, "vim", 2, cfg);
    // zero every block parameter: each bidirectional unit reduces to identity
    for (auto& item : reg.items())
        if (item.name.find(".layer0.") != std::string::npos)
            std::fill(item.tensor.values().begin(), item.tensor.values().end(), 0.0);
    // identity patch and output projections
    auto set_identity = [](Tensor t) {
        auto& v = t.values();
        std::fill(v.begin(), v.end(), 0.0);
        v[0] = 1.0;
        v[3] = 1.0;
    };
    set_identity(p.patch_proj.w);
    std::fill(p.patch_proj.b.values().begin(), p.patch_proj.b.values().end(), 0.0);
    set_identity(p.out_proj.w);
    std::fill(p.out_proj.b.values().begin(), p.out_proj.b.values().end(), 0.0);

    Tensor fmap = rand_tensor({1, 2, 2, 3}, rng);
    VimOut out = vim_forward(fmap, p);
    CHECK(out.map.shape() == fmap.shape());
    for (size_t i = 0; i < fmap.values().size(); ++i)
        CHECK(out.map.values()[i] == doctest::Approx(fmap.values()[i]).epsilon(1e-12));
}

TEST_CASE("vim gradient check at tiny dims") {
    Rng rng(17);
    ParamRegistry reg;
    VimConfig cfg;
    cfg.patch = 2;
    cfg.d_model = 2;
    cfg.d_inner = 2;
    cfg.d_state = 2;
    cfg.layers = 1;
    cfg.d_out = 3;
    VimParams p = VimParams::make(reg, rng, "vim", 1, cfg);
    Tensor fmap = rand_tensor({1, 1, 4, 4}, rng, true);
    auto f = [&]() {
        VimOut out = vim_forward(fmap, p);
        return sum_all(mul(out.map, out.map));
    };
    auto params = all_params(reg);
    params.push_back({"fmap", fmap});
    CHECK(grad_check(f, params, 1e-5) < 1e-4);
}
