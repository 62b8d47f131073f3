#include "evmf/fusion.hpp"

#include <stdexcept>

namespace evmf {

std::string path_name(PathId p) {
    switch (p) {
        case PathId::dense: return "dense";
        case PathId::unet: return "unet";
        case PathId::trad: return "trad";
    }
    return "?";
}

CrossModalParams CrossModalParams::make(ParamRegistry& reg, Rng& rng,
                                        const std::string& name, int d_model, int heads) {
    CrossModalParams p;
    p.mha = MhaParams::make(reg, rng, name + ".mha", d_model, heads);
    p.ln_gamma = reg.add(name + ".ln.gamma", {d_model}, Init::ones, rng);
    p.ln_beta = reg.add(name + ".ln.beta", {d_model}, Init::zeros, rng);
    return p;
}

ContextualMatrix cross_modal_encode(const Tensor& v_in, const CrossModalParams& p) {
    if (v_in.rank() != 2)
        throw std::invalid_argument("cross_modal_encode expects [N_paths, d]");
    MhaOut attended = mha(v_in, v_in, v_in, p.mha);
    ContextualMatrix out;
    out.n_paths = v_in.dim(0);
    out.w_cma = attended.weights;
    out.v_contextual = layer_norm(add(v_in, attended.out), p.ln_gamma, p.ln_beta);
    return out;
}

ContextualMatrix cross_modal_encode(const PathVectors& v_in, const CrossModalParams& p) {
    if (v_in.vectors.empty())
        throw std::invalid_argument("cross_modal_encode: at least one path required");
    return cross_modal_encode(stack_rows(v_in.vectors), p);
}

NafParams NafParams::make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_in, int d_out, const NafConfig& cfg) {
    if (cfg.iterations < 0) throw std::invalid_argument("naf: iterations must be >= 0");
    if (cfg.n_primitives < 1) throw std::invalid_argument("naf: need at least one primitive");
    NafParams p;
    p.cfg = cfg;
    p.d_in = d_in;
    p.d_out = d_out;
    p.linear_in = LinearLayer::make(reg, rng, name + ".linear_in", d_in, cfg.d_state);
    for (int j = 0; j < cfg.n_primitives; ++j) {
        PrimitiveBank::Primitive prim;
        const std::string pn = name + ".primitive" + std::to_string(j);
        prim.fc1 = LinearLayer::make(reg, rng, pn + ".fc1", d_in, cfg.hidden);
        prim.fc2 = LinearLayer::make(reg, rng, pn + ".fc2", cfg.hidden, cfg.d_state);
        p.bank.prims.push_back(prim);
    }
    p.gru = GruParams::make(reg, rng, name + ".gru", cfg.d_state, cfg.d_ctrl);
    p.mix = LinearLayer::make(reg, rng, name + ".mix", cfg.d_ctrl, cfg.n_primitives);
    p.ln_gamma = reg.add(name + ".ln.gamma", {cfg.d_state}, Init::ones, rng);
    p.ln_beta = reg.add(name + ".ln.beta", {cfg.d_state}, Init::zeros, rng);
    p.linear_out = LinearLayer::make(reg, rng, name + ".linear_out", cfg.d_state, d_out);
    return p;
}

static Tensor flatten_contextual(const Tensor& v_contextual, const NafParams& p) {
    Tensor v_cat = v_contextual.rank() == 1 ? v_contextual : flatten(v_contextual);
    if (v_cat.dim(0) != p.d_in)
        throw std::invalid_argument("naf: flattened input length " +
                                    std::to_string(v_cat.dim(0)) + " != expected " +
                                    std::to_string(p.d_in));
    return v_cat;
}

FusionState naf_init(const Tensor& v_contextual, const NafParams& p) {
    FusionState st;
    st.s_fused = p.linear_in(flatten_contextual(v_contextual, p));
    st.h_ctrl = Tensor::zeros({p.cfg.d_ctrl});
    return st;
}

std::vector<Tensor> naf_precompute_primitives(const Tensor& v_contextual,
                                              const NafParams& p) {
    Tensor v_cat = flatten_contextual(v_contextual, p);
    std::vector<Tensor> out;
    out.reserve(p.bank.prims.size());
    for (const auto& prim : p.bank.prims)
        out.push_back(prim.fc2(relu(prim.fc1(v_cat))));
    return out;
}

void naf_step(FusionState& state, const std::vector<Tensor>& primitives,
              const NafParams& p) {
    if (primitives.empty()) throw std::invalid_argument("naf_step: empty primitive set");
    state.h_ctrl = gru_cell(state.s_fused, state.h_ctrl, p.gru);
    Tensor alpha = softmax(p.mix(state.h_ctrl), 0);
    Tensor s_mix = mul(slice(alpha, 0, 0, 1), primitives[0]);
    for (size_t j = 1; j < primitives.size(); ++j)
        s_mix = add(s_mix, mul(slice(alpha, 0, static_cast<int>(j), 1), primitives[j]));
    state.s_fused = layer_norm(add(state.s_fused, s_mix), p.ln_gamma, p.ln_beta);
    state.alpha_trace.push_back(alpha.values());
}

NafOut naf_fuse(const Tensor& v_contextual, const NafParams& p) {
    FusionState st = naf_init(v_contextual, p);
    const std::vector<Tensor> prims = naf_precompute_primitives(v_contextual, p);
    for (int k = 0; k < p.cfg.iterations; ++k) naf_step(st, prims, p);
    NafOut out;
    out.v_naf = p.linear_out(st.s_fused);
    out.alpha_trace = std::move(st.alpha_trace);
    return out;
}

}  // namespace evmf
