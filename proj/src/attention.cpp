#include "evmf/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace evmf {

SpatialAttnParams SpatialAttnParams::make(ParamRegistry& reg, Rng& rng,
                                          const std::string& name, int kernel_size) {
    if (kernel_size % 2 == 0)
        throw std::invalid_argument("spatial attention kernel must be odd");
    SpatialAttnParams p;
    p.k = kernel_size;
    p.kernel = reg.add(name + ".conv.w", {1, 2, kernel_size, kernel_size},
                       Init::uniform_fan_in, rng, 2 * kernel_size * kernel_size);
    p.bias = reg.add(name + ".conv.b", {1}, Init::zeros, rng);
    return p;
}

SpatialAttnOut spatial_attention(const Tensor& fmap, const SpatialAttnParams& p) {
    if (fmap.rank() != 4)
        throw std::invalid_argument("spatial_attention expects [B,C,H,W]");
    Tensor pooled = channel_mean_max(fmap);  // [B,2,H,W]
    Tensor gate = sigmoid(conv2d(pooled, p.kernel, p.bias, 1, (p.k - 1) / 2));
    SpatialAttnOut out;
    out.map = gate;
    out.attended = mul_channel_broadcast(fmap, gate);
    Tensor gap = global_avg_pool(out.attended);  // [B,C]
    out.pooled = fmap.dim(0) == 1 ? flatten(gap) : gap;
    return out;
}

MhaParams MhaParams::make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_model, int heads) {
    if (heads < 1 || d_model % heads != 0)
        throw std::invalid_argument("mha: heads must divide model dim (" +
                                    std::to_string(d_model) + "/" + std::to_string(heads) + ")");
    MhaParams p;
    p.heads = heads;
    p.d_model = d_model;
    p.wq = reg.add(name + ".wq", {d_model, d_model}, Init::uniform_fan_in, rng, d_model);
    p.wk = reg.add(name + ".wk", {d_model, d_model}, Init::uniform_fan_in, rng, d_model);
    p.wv = reg.add(name + ".wv", {d_model, d_model}, Init::uniform_fan_in, rng, d_model);
    p.wo = reg.add(name + ".wo", {d_model, d_model}, Init::uniform_fan_in, rng, d_model);
    return p;
}

MhaOut mha(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& p) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw std::invalid_argument("mha expects rank-2 token matrices");
    if (q.dim(1) != p.d_model || k.dim(1) != p.d_model || v.dim(1) != p.d_model)
        throw std::invalid_argument("mha: token width " + std::to_string(q.dim(1)) +
                                    " does not match model dim " + std::to_string(p.d_model));
    if (k.dim(0) != v.dim(0))
        throw std::invalid_argument("mha: key/value counts differ");
    const int nq = q.dim(0), nk = k.dim(0);
    const int dh = p.d_model / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor Q = linear(q, p.wq);
    Tensor K = linear(k, p.wk);
    Tensor V = linear(v, p.wv);

    MhaOut res;
    res.nq = nq;
    res.nk = nk;
    res.weights.assign(static_cast<size_t>(nq) * nk, 0.0);
    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        Tensor Qh = slice(Q, 1, h * dh, dh);
        Tensor Kh = slice(K, 1, h * dh, dh);
        Tensor Vh = slice(V, 1, h * dh, dh);
        Tensor scores = scale(matmul(Qh, transpose2d(Kh)), inv_sqrt);
        Tensor attn = softmax(scores, 1);  // rows sum to 1
        const auto& av = attn.values();
        for (size_t i = 0; i < av.size(); ++i) res.weights[i] += av[i] / p.heads;
        head_outs.push_back(matmul(attn, Vh));
    }
    Tensor merged = p.heads == 1 ? head_outs[0] : concat(head_outs, 1);
    res.out = linear(merged, p.wo);
    return res;
}

SeParams SeParams::make(ParamRegistry& reg, Rng& rng, const std::string& name,
                        int d, int reduction) {
    if (reduction < 1 || d % reduction != 0)
        throw std::invalid_argument("se: reduction must divide feature dim (" +
                                    std::to_string(d) + "/" + std::to_string(reduction) + ")");
    SeParams p;
    p.d = d;
    p.r = reduction;
    const int hidden = d / reduction;
    p.w1 = reg.add(name + ".w1", {hidden, d}, Init::uniform_fan_in, rng, d);
    p.w2 = reg.add(name + ".w2", {d, hidden}, Init::uniform_fan_in, rng, hidden);
    return p;
}

SeOut se_recalibrate(const Tensor& f, const SeParams& p) {
    if (f.rank() != 1 || f.dim(0) != p.d)
        throw std::invalid_argument("se_recalibrate: feature dim mismatch, got " +
                                    shape_str(f.shape()) + " want [" + std::to_string(p.d) + "]");
    SeOut out;
    out.gates = sigmoid(linear(relu(linear(f, p.w1)), p.w2));
    out.out = mul(out.gates, f);
    return out;
}

}  // namespace evmf
