#include "evmf/vim.hpp"

#include <cmath>
#include <stdexcept>

namespace evmf {

SsmParams SsmParams::make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_inner, int d_state) {
    SsmParams p;
    p.d_inner = d_inner;
    p.d_state = d_state;
    // A ~ -(1..d_state) per channel, the usual stable ramp
    std::vector<double> a_log(static_cast<size_t>(d_inner) * d_state);
    for (int c = 0; c < d_inner; ++c)
        for (int s = 0; s < d_state; ++s)
            a_log[static_cast<size_t>(c) * d_state + s] = std::log(static_cast<double>(s + 1));
    p.a_log = reg.add(name + ".a_log", {d_inner, d_state}, Init::custom_data, rng, 0, 0,
                      std::move(a_log));
    p.w_delta = reg.add(name + ".w_delta", {d_inner, d_inner}, Init::uniform_fan_in, rng,
                        d_inner);
    // bias chosen so softplus lands in (0.05, 0.5) at zero input
    std::vector<double> dbias(static_cast<size_t>(d_inner));
    for (int c = 0; c < d_inner; ++c) {
        const double target = rng.uniform(0.05, 0.5);
        dbias[static_cast<size_t>(c)] = std::log(std::expm1(target));
    }
    p.delta_bias = reg.add(name + ".delta_bias", {d_inner}, Init::custom_data, rng, 0, 0,
                           std::move(dbias));
    p.w_b = reg.add(name + ".w_b", {d_state, d_inner}, Init::uniform_fan_in, rng, d_inner);
    p.w_c = reg.add(name + ".w_c", {d_state, d_inner}, Init::uniform_fan_in, rng, d_inner);
    p.skip_d = reg.add(name + ".skip_d", {d_inner}, Init::ones, rng);
    return p;
}

ScanResult selective_scan(const Tensor& x, const SsmParams& p, ScanDir dir) {
    if (x.rank() != 2 || x.dim(1) != p.d_inner)
        throw std::invalid_argument("selective_scan: expected [N," +
                                    std::to_string(p.d_inner) + "], got " +
                                    shape_str(x.shape()));
    Tensor delta = softplus(linear(x, p.w_delta, p.delta_bias));
    Tensor a = neg(exp_t(p.a_log));
    Tensor bseq = linear(x, p.w_b);
    Tensor cseq = linear(x, p.w_c);
    ScanResult res;
    res.y = scan_core(x, delta, a, bseq, cseq, p.skip_d, dir);
    res.deltas.values = delta.values();
    res.deltas.n = x.dim(0);
    res.deltas.d_inner = p.d_inner;
    res.deltas.direction = dir;
    return res;
}

MambaBlockParams MambaBlockParams::make(ParamRegistry& reg, Rng& rng,
                                        const std::string& name, int d, int d_inner,
                                        int d_state, ScanDir dir) {
    MambaBlockParams p;
    p.d = d;
    p.d_inner = d_inner;
    p.dir = dir;
    p.in_proj = LinearLayer::make(reg, rng, name + ".in_proj", d, 2 * d_inner);
    p.conv_w = reg.add(name + ".conv.w", {d_inner, 3}, Init::uniform_fan_in, rng, 3);
    p.conv_b = reg.add(name + ".conv.b", {d_inner}, Init::zeros, rng);
    p.ssm = SsmParams::make(reg, rng, name + ".ssm", d_inner, d_state);
    p.out_proj = LinearLayer::make(reg, rng, name + ".out_proj", d_inner, d);
    return p;
}

MambaBlockOut mamba_block(const Tensor& x, const MambaBlockParams& p) {
    if (x.rank() != 2 || x.dim(1) != p.d)
        throw std::invalid_argument("mamba_block: expected [N," + std::to_string(p.d) +
                                    "], got " + shape_str(x.shape()));
    Tensor proj = p.in_proj(x);  // [N, 2*d_inner]
    Tensor main = slice(proj, 1, 0, p.d_inner);
    Tensor gate = slice(proj, 1, p.d_inner, p.d_inner);
    Tensor conv = silu(causal_dwconv1d(main, p.conv_w, p.conv_b, p.dir));
    ScanResult scan = selective_scan(conv, p.ssm, p.dir);
    Tensor gated = mul(scan.y, silu(gate));
    MambaBlockOut out;
    out.y = add(x, p.out_proj(gated));
    out.deltas = std::move(scan.deltas);
    return out;
}

VimParams VimParams::make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int in_channels, const VimConfig& cfg) {
    VimParams p;
    p.cfg = cfg;
    p.in_channels = in_channels;
    const int patch_dim = in_channels * cfg.patch * cfg.patch;
    p.patch_proj = LinearLayer::make(reg, rng, name + ".patch_proj", patch_dim, cfg.d_model);
    for (int l = 0; l < cfg.layers; ++l) {
        p.fwd_blocks.push_back(MambaBlockParams::make(
            reg, rng, name + ".layer" + std::to_string(l) + ".fwd", cfg.d_model,
            cfg.d_inner, cfg.d_state, ScanDir::forward));
        p.bwd_blocks.push_back(MambaBlockParams::make(
            reg, rng, name + ".layer" + std::to_string(l) + ".bwd", cfg.d_model,
            cfg.d_inner, cfg.d_state, ScanDir::backward));
    }
    p.out_proj = LinearLayer::make(reg, rng, name + ".out_proj", cfg.d_model, cfg.d_out);
    return p;
}

Tensor patchify_raw(const Tensor& fmap, int patch, TokenGrid& grid) {
    if (fmap.rank() != 4 || fmap.dim(0) != 1)
        throw std::invalid_argument("patchify expects [1,C,H,W]");
    grid.rows = fmap.dim(2) / patch;
    grid.cols = fmap.dim(3) / patch;
    Tensor chw = reshape(fmap, {fmap.dim(1), fmap.dim(2), fmap.dim(3)});
    return extract_patches(chw, patch);
}

static std::vector<double> channel_mean_map(const DeltaRecord& rec) {
    std::vector<double> map(static_cast<size_t>(rec.n), 0.0);
    for (int t = 0; t < rec.n; ++t) {
        double acc = 0;
        for (int c = 0; c < rec.d_inner; ++c)
            acc += rec.values[static_cast<size_t>(t) * rec.d_inner + c];
        map[static_cast<size_t>(t)] = acc / rec.d_inner;
    }
    return map;
}

VimOut vim_forward(const Tensor& fmap, const VimParams& p) {
    VimOut out;
    Tensor tokens = patchify_raw(fmap, p.cfg.patch, out.grid);
    Tensor x = p.patch_proj(tokens);  // [Np, d_model]
    DeltaRecord last_fwd, last_bwd;
    for (size_t l = 0; l < p.fwd_blocks.size(); ++l) {
        MambaBlockOut f = mamba_block(x, p.fwd_blocks[l]);
        MambaBlockOut b = mamba_block(x, p.bwd_blocks[l]);
        x = scale(add(f.y, b.y), 0.5);
        if (l + 1 == p.fwd_blocks.size()) {
            last_fwd = std::move(f.deltas);
            last_bwd = std::move(b.deltas);
        }
    }
    Tensor projected = p.out_proj(x);  // [Np, d_out]
    // tokens are row-major over the grid, so [Np, d_out] -> [d_out, H', W']
    // needs a transpose before reshaping to channel-major
    Tensor t = transpose2d(projected);
    out.map = reshape(t, {1, p.cfg.d_out, out.grid.rows, out.grid.cols});
    out.delta_fwd = channel_mean_map(last_fwd);
    out.delta_bwd = channel_mean_map(last_bwd);
    return out;
}

}  // namespace evmf
