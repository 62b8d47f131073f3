#pragma once

#include <string>
#include <vector>

#include "evmf/attention.hpp"
#include "evmf/nn.hpp"

namespace evmf {

enum class PathId { dense, unet, trad };

std::string path_name(PathId p);

// Ordered per-path vectors, fixed order (dense, unet, trad) filtered by the
// enabled paths.
struct PathVectors {
    std::vector<PathId> ids;
    std::vector<Tensor> vectors;  // each [d_model_fusion]
    int n_paths() const { return static_cast<int>(vectors.size()); }
};

struct ContextualMatrix {
    Tensor v_contextual;          // [N_paths, d]
    std::vector<double> w_cma;    // [N_paths * N_paths], row-stochastic
    int n_paths = 0;
};

// Stage A: self-attention across the stacked path vectors, residual add,
// row-wise layer norm. Attention weights are kept for XAI.
struct CrossModalParams {
    MhaParams mha;
    Tensor ln_gamma, ln_beta;
    static CrossModalParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                                 int d_model, int heads);
};

ContextualMatrix cross_modal_encode(const PathVectors& v_in, const CrossModalParams& p);
ContextualMatrix cross_modal_encode(const Tensor& v_in, const CrossModalParams& p);

// Stage B: controller-driven iterative refinement over a bank of primitive
// MLPs, all reading the same flattened contextual features.
struct NafConfig {
    int iterations = 4;    // K
    int n_primitives = 4;
    int d_state = 64;
    int d_ctrl = 32;
    int hidden = 64;       // primitive hidden width
};

struct PrimitiveBank {
    struct Primitive {
        LinearLayer fc1, fc2;  // in -> hidden -> d_state, ReLU inside
    };
    std::vector<Primitive> prims;
};

struct NafParams {
    NafConfig cfg;
    int d_in = 0;   // N_paths * d_model_fusion
    int d_out = 0;  // d_model_fusion
    LinearLayer linear_in;   // d_in -> d_state
    PrimitiveBank bank;
    GruParams gru;           // input d_state, hidden d_ctrl
    LinearLayer mix;         // d_ctrl -> n_primitives
    Tensor ln_gamma, ln_beta;
    LinearLayer linear_out;  // d_state -> d_out
    static NafParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_in, int d_out, const NafConfig& cfg);
};

struct FusionState {
    Tensor s_fused;  // [d_state]
    Tensor h_ctrl;   // [d_ctrl]
    std::vector<std::vector<double>> alpha_trace;  // one softmax row per step
};

FusionState naf_init(const Tensor& v_contextual, const NafParams& p);
std::vector<Tensor> naf_precompute_primitives(const Tensor& v_contextual,
                                              const NafParams& p);
void naf_step(FusionState& state, const std::vector<Tensor>& primitives,
              const NafParams& p);

struct NafOut {
    Tensor v_naf;  // [d_out]
    std::vector<std::vector<double>> alpha_trace;
};

NafOut naf_fuse(const Tensor& v_contextual, const NafParams& p);

}  // namespace evmf
