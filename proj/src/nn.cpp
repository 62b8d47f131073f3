#include "evmf/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace evmf {

Tensor ParamRegistry::add(const std::string& name, Shape shape, Init init, Rng& rng,
                          int fan_in, double constant, std::vector<double> data) {
    if (index_.count(name))
        throw std::invalid_argument("parameter name not unique: " + name);
    const int64_t n = shape_numel(shape);
    std::vector<double> v(static_cast<size_t>(n), 0.0);
    switch (init) {
        case Init::zeros:
            break;
        case Init::ones:
            std::fill(v.begin(), v.end(), 1.0);
            break;
        case Init::custom_constant:
            std::fill(v.begin(), v.end(), constant);
            break;
        case Init::uniform_fan_in: {
            if (fan_in <= 0) throw std::invalid_argument("uniform_fan_in needs fan_in > 0");
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (double& x : v) x = rng.uniform(-bound, bound);
            break;
        }
        case Init::custom_data:
            if (static_cast<int64_t>(data.size()) != n)
                throw std::invalid_argument("custom_data length mismatch for " + name);
            v = std::move(data);
            break;
    }
    Tensor t = Tensor::from(std::move(shape), std::move(v), true);
    index_[name] = items_.size();
    items_.push_back(Parameter{name, t, init});
    return t;
}

Parameter& ParamRegistry::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("no such parameter: " + name);
    return items_[it->second];
}

int64_t ParamRegistry::total_elements() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.tensor.numel();
    return n;
}

void ParamRegistry::zero_grad_all() {
    for (auto& p : items_) p.tensor.zero_grad();
}

void ParamRegistry::copy_values_from(const ParamRegistry& other) {
    if (other.items_.size() != items_.size())
        throw std::invalid_argument("registry layout mismatch in copy_values_from");
    for (size_t i = 0; i < items_.size(); ++i) {
        if (other.items_[i].name != items_[i].name ||
            other.items_[i].tensor.shape() != items_[i].tensor.shape())
            throw std::invalid_argument("registry layout mismatch at " + items_[i].name);
        items_[i].tensor.values() = other.items_[i].tensor.values();
    }
}

LinearLayer LinearLayer::make(ParamRegistry& reg, Rng& rng, const std::string& name,
                              int in_dim, int out_dim, bool bias) {
    LinearLayer l;
    l.w = reg.add(name + ".w", {out_dim, in_dim}, Init::uniform_fan_in, rng, in_dim);
    if (bias) l.b = reg.add(name + ".b", {out_dim}, Init::zeros, rng);
    return l;
}

GruParams GruParams::make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_in, int d_h) {
    GruParams p;
    p.d_in = d_in;
    p.d_h = d_h;
    const int fan = d_in + d_h;
    p.wz = reg.add(name + ".wz", {d_h, fan}, Init::uniform_fan_in, rng, fan);
    p.bz = reg.add(name + ".bz", {d_h}, Init::zeros, rng);
    p.wr = reg.add(name + ".wr", {d_h, fan}, Init::uniform_fan_in, rng, fan);
    p.br = reg.add(name + ".br", {d_h}, Init::zeros, rng);
    p.wh = reg.add(name + ".wh", {d_h, fan}, Init::uniform_fan_in, rng, fan);
    p.bh = reg.add(name + ".bh", {d_h}, Init::zeros, rng);
    return p;
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p) {
    if (x.rank() != 1 || h.rank() != 1 || x.dim(0) != p.d_in || h.dim(0) != p.d_h)
        throw std::invalid_argument("gru_cell: dimension mismatch, x " +
                                    shape_str(x.shape()) + " h " + shape_str(h.shape()));
    Tensor xh = concat({x, h}, 0);
    Tensor z = sigmoid(linear(xh, p.wz, p.bz));
    Tensor r = sigmoid(linear(xh, p.wr, p.br));
    Tensor xrh = concat({x, mul(r, h)}, 0);
    Tensor htilde = tanh_t(linear(xrh, p.wh, p.bh));
    Tensor keep = mul(sub(Tensor::full({p.d_h}, 1.0), z), h);
    return add(keep, mul(z, htilde));
}

}  // namespace evmf
