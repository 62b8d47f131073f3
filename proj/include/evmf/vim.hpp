#pragma once

#include <vector>

#include "evmf/nn.hpp"

namespace evmf {

// Selective state-space parameters for one scan block. A is diagonal per
// channel, parameterized as -exp(A_log) so it stays strictly negative and the
// discretized gate |exp(delta*A)| stays below 1.
struct SsmParams {
    int d_inner = 0, d_state = 0;
    Tensor a_log;      // [d_inner, d_state]
    Tensor w_delta;    // [d_inner, d_inner]
    Tensor delta_bias; // [d_inner]
    Tensor w_b;        // [d_state, d_inner]
    Tensor w_c;        // [d_state, d_inner]
    Tensor skip_d;     // [d_inner] learned skip
    static SsmParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_inner, int d_state);
};

struct TokenGrid {
    int rows = 0, cols = 0;
};

struct DeltaRecord {
    std::vector<double> values;  // [N, d_inner], strictly positive
    int n = 0, d_inner = 0;
    ScanDir direction = ScanDir::forward;
};

struct ScanResult {
    Tensor y;  // [N, d_inner]
    DeltaRecord deltas;
};

// delta = softplus(x @ w_delta^T + delta_bias); B/C are input projections;
// the recurrence itself runs in scan_core. Deltas are recorded per token for
// the XAI maps.
ScanResult selective_scan(const Tensor& x, const SsmParams& p, ScanDir dir);

// One directional block: in-projection to 2*d_inner split into (main, gate),
// causal depthwise conv + SiLU + selective scan on main, gated by SiLU(gate),
// out-projection back to d, residual add.
struct MambaBlockParams {
    int d = 0, d_inner = 0;
    ScanDir dir = ScanDir::forward;
    LinearLayer in_proj;   // d -> 2*d_inner
    Tensor conv_w;         // [d_inner, 3]
    Tensor conv_b;         // [d_inner]
    SsmParams ssm;
    LinearLayer out_proj;  // d_inner -> d
    static MambaBlockParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                                 int d, int d_inner, int d_state, ScanDir dir);
};

struct MambaBlockOut {
    Tensor y;  // [N, d]
    DeltaRecord deltas;
};

MambaBlockOut mamba_block(const Tensor& x, const MambaBlockParams& p);

// Full path refinement: patchify -> stacked bidirectional units (forward and
// backward blocks, outputs averaged) -> projection to the fusion width ->
// reshape back to a feature map. Delta maps come from the last layer, one per
// direction, averaged over channels.
struct VimConfig {
    int patch = 1;
    int d_model = 16;   // token width after patch projection
    int d_inner = 16;
    int d_state = 8;
    int layers = 2;
    int d_out = 64;     // fusion width of the output map
};

struct VimParams {
    VimConfig cfg;
    int in_channels = 0;
    LinearLayer patch_proj;  // C*patch^2 -> d_model
    std::vector<MambaBlockParams> fwd_blocks, bwd_blocks;
    LinearLayer out_proj;    // d_model -> d_out
    static VimParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int in_channels, const VimConfig& cfg);
};

struct VimOut {
    Tensor map;  // [1, d_out, H', W']
    TokenGrid grid;
    std::vector<double> delta_fwd, delta_bwd;  // [H'*W'] channel-mean maps
};

// fmap must be [1,C,H,W] with H,W divisible by cfg.patch.
VimOut vim_forward(const Tensor& fmap, const VimParams& p);

// Tokenization helper, exposed for tests: [1,C,H,W] -> [Np, C*p*p] raw
// patches plus grid extents (before the linear projection).
Tensor patchify_raw(const Tensor& fmap, int patch, TokenGrid& grid);

}  // namespace evmf
