#include "evmf/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace evmf {

Context& Context::get() {
    static Context ctx;
    return ctx;
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

std::vector<double>& ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
}

static void round_f32(std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
}

static std::shared_ptr<Node> make_leaf(Shape s, std::vector<double> data, bool rg) {
    if (shape_numel(s) != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(s));
    auto n = std::make_shared<Node>();
    n->shape = std::move(s);
    if (Context::get().precision == Precision::f32) round_f32(data);
    n->val = std::move(data);
    n->requires_grad = rg;
    return n;
}

Tensor Tensor::zeros(Shape s, bool rg) {
    std::vector<double> d(static_cast<size_t>(shape_numel(s)), 0.0);
    return Tensor(make_leaf(std::move(s), std::move(d), rg));
}

Tensor Tensor::full(Shape s, double v, bool rg) {
    std::vector<double> d(static_cast<size_t>(shape_numel(s)), v);
    return Tensor(make_leaf(std::move(s), std::move(d), rg));
}

Tensor Tensor::from(Shape s, std::vector<double> data, bool rg) {
    return Tensor(make_leaf(std::move(s), std::move(data), rg));
}

Tensor Tensor::scalar(double v, bool rg) {
    return Tensor(make_leaf(Shape{}, {v}, rg));
}

double Tensor::item() const {
    if (numel() != 1)
        throw std::invalid_argument("item() requires a 1-element tensor, got " +
                                    shape_str(shape()));
    return n_->val[0];
}

Tensor& Tensor::set_requires_grad(bool rg) {
    n_->requires_grad = rg;
    return *this;
}

void Tensor::zero_grad() const {
    n_->grad.clear();
}

Tensor op_result(Shape shape, std::vector<double> val,
                 std::vector<Tensor> parents,
                 std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    if (Context::get().precision == Precision::f32) round_f32(val);
    n->val = std::move(val);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backprop = std::move(backprop);
    }
    return Tensor(n);
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward() requires a scalar loss");
    Node* root = loss.node();
    if (!root->requires_grad) return;

    // iterative post-order DFS; reversed it yields consumers before producers
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    struct Frame { Node* n; size_t next; };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    visited.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            topo.push_back(f.n);
            stack.pop_back();
        }
    }

    ensure_grad(*root)[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<GradCheckInput>& inputs, double step) {
    if (step <= 0) throw std::invalid_argument("grad_check step must be > 0");

    for (const auto& in : inputs) in.tensor.zero_grad();
    Tensor loss = f();
    if (!std::isfinite(loss.item()))
        throw std::runtime_error("grad_check: non-finite loss at base point");
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) {
        Node* n = in.tensor.node();
        analytic.push_back(n->grad.empty() ? std::vector<double>(n->val.size(), 0.0)
                                           : n->grad);
    }

    double worst = 0.0;
    for (size_t pi = 0; pi < inputs.size(); ++pi) {
        Node* n = inputs[pi].tensor.node();
        for (size_t i = 0; i < n->val.size(); ++i) {
            const double saved = n->val[i];
            n->val[i] = saved + step;
            const double f_plus = f().item();
            n->val[i] = saved - step;
            const double f_minus = f().item();
            n->val[i] = saved;
            if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
                throw std::runtime_error("grad_check: non-finite evaluation at " +
                                         inputs[pi].name + "[" + std::to_string(i) + "]");
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double a = analytic[pi][i];
            const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
            const double rel = std::fabs(a - numeric) / denom;
            if (rel > worst) worst = rel;
        }
    }
    return worst;
}

}  // namespace evmf
