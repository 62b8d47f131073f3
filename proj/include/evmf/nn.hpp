#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "evmf/rng.hpp"
#include "evmf/tensor.hpp"

namespace evmf {

enum class Init { uniform_fan_in, zeros, ones, custom_constant, custom_data };

struct Parameter {
    std::string name;
    Tensor tensor;
    Init init = Init::zeros;
};

// Ordered parameter store. Registration order is the checkpoint order and the
// optimizer traversal order, so it must be deterministic for a given config.
class ParamRegistry {
public:
    Tensor add(const std::string& name, Shape shape, Init init, Rng& rng,
               int fan_in = 0, double constant = 0.0,
               std::vector<double> data = {});

    bool has(const std::string& name) const { return index_.count(name) > 0; }
    Parameter& at(const std::string& name);
    const std::vector<Parameter>& items() const { return items_; }
    std::vector<Parameter>& items() { return items_; }
    size_t size() const { return items_.size(); }
    int64_t total_elements() const;

    void zero_grad_all();
    // copies values (not grads) from another registry with identical layout
    void copy_values_from(const ParamRegistry& other);

private:
    std::vector<Parameter> items_;
    std::unordered_map<std::string, size_t> index_;
};

struct LinearLayer {
    Tensor w, b;  // b undefined when bias-free
    Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
    static LinearLayer make(ParamRegistry& reg, Rng& rng, const std::string& name,
                            int in_dim, int out_dim, bool bias = true);
};

// Gated recurrent unit parameters over [x;h] concatenations:
//   z = sigmoid(Wz [x;h] + bz)
//   r = sigmoid(Wr [x;h] + br)
//   htilde = tanh(Wh [x; r.h] + bh)
//   h' = (1-z).h + z.htilde
struct GruParams {
    Tensor wz, bz, wr, br, wh, bh;
    int d_in = 0, d_h = 0;
    static GruParams make(ParamRegistry& reg, Rng& rng, const std::string& name,
                          int d_in, int d_h);
};

Tensor gru_cell(const Tensor& x, const Tensor& h, const GruParams& p);

}  // namespace evmf
