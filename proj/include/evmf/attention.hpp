#pragma once

#include <vector>

#include "evmf/nn.hpp"

namespace evmf {

// ------------------------------------------------------- spatial attention
// Channel-wise mean/max maps -> k x k conv -> sigmoid gate over the map.
struct SpatialAttnParams {
    Tensor kernel;  // [1,2,k,k]
    Tensor bias;    // [1]
    int k = 7;
    static SpatialAttnParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                                  int kernel_size = 7);
};

struct SpatialAttnOut {
    Tensor map;       // [1,1,H,W] gate in (0,1)
    Tensor attended;  // [1,C,H,W]
    Tensor pooled;    // [C] spatial mean of attended
};

SpatialAttnOut spatial_attention(const Tensor& fmap, const SpatialAttnParams& p);

// ------------------------------------------------------ multi-head attention
struct MhaParams {
    int heads = 1;
    int d_model = 0;
    Tensor wq, wk, wv, wo;  // [d,d], no biases
    static MhaParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_model, int heads);
};

struct MhaOut {
    Tensor out;                   // [Nq,d]
    std::vector<double> weights;  // [Nq*Nk] head-averaged attention, for XAI
    int nq = 0, nk = 0;
};

MhaOut mha(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& p);

// ------------------------------------------------------ squeeze & excitation
struct SeParams {
    Tensor w1;  // [d/r, d]
    Tensor w2;  // [d, d/r]
    int d = 0, r = 0;
    static SeParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                         int d, int reduction);
};

struct SeOut {
    Tensor out;    // [d] gated features
    Tensor gates;  // [d] sigmoid scores, kept for XAI
};

SeOut se_recalibrate(const Tensor& f, const SeParams& p);

}  // namespace evmf
