#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace evmf {

// ----------------------------------------------------------------------
// Execution context. Verification suites run in f64; f32 is selectable
// for training. In f32 mode every op output (and optimizer state) is
// rounded through single precision; storage stays 8-byte.
// ----------------------------------------------------------------------
enum class Precision { f64, f32 };

struct Context {
    Precision precision = Precision::f64;
    static Context& get();
};

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads grad, accumulates into parents
};

std::vector<double>& ensure_grad(Node& n);

// Value handle over a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape s, bool requires_grad = false);
    static Tensor full(Shape s, double v, bool requires_grad = false);
    static Tensor from(Shape s, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(n_->val.size()); }

    std::vector<double>& values() { return n_->val; }
    const std::vector<double>& values() const { return n_->val; }
    std::vector<double>& grads() { return ensure_grad(*n_); }
    bool has_grad() const { return !n_->grad.empty(); }

    double item() const;  // scalar only
    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool rg);
    void zero_grad() const;  // handle semantics: clears the shared node's grad

    Node* node() const { return n_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

// Reverse-mode sweep from a scalar loss. Gradients of leaves accumulate:
// repeated calls without zero_grad() add up.
void backward(const Tensor& loss);

// Shared helper for building op nodes; rounds values in f32 mode and prunes
// graph edges when no parent needs gradients.
Tensor op_result(Shape shape, std::vector<double> val,
                 std::vector<Tensor> parents,
                 std::function<void(Node&)> backprop);

// ----------------------------------------------------------------------
// Operations. Broadcasting is limited to what the model needs: same shape,
// scalar (1-element) operands, and trailing-suffix operands (e.g. a [d]
// bias against [N,d]).
// ----------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

enum class Act { sigmoid, relu, silu, tanh, softplus, exp };
Tensor activation(const Tensor& x, Act kind);
inline Tensor sigmoid(const Tensor& x) { return activation(x, Act::sigmoid); }
inline Tensor relu(const Tensor& x) { return activation(x, Act::relu); }
inline Tensor silu(const Tensor& x) { return activation(x, Act::silu); }
inline Tensor tanh_t(const Tensor& x) { return activation(x, Act::tanh); }
inline Tensor softplus(const Tensor& x) { return activation(x, Act::softplus); }
inline Tensor exp_t(const Tensor& x) { return activation(x, Act::exp); }

Tensor matmul(const Tensor& a, const Tensor& b);
// y = x @ w^T (+ b). x is [in] or [N,in]; w is [out,in]; b is [out] or empty.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = Tensor());

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias,
              int stride, int padding);
Tensor avg_pool2d(const Tensor& x, int size);
Tensor max_pool2d(const Tensor& x, int size);
Tensor upsample_nearest2d(const Tensor& x, int factor);
Tensor global_avg_pool(const Tensor& x);                       // [B,C,H,W] -> [B,C]
Tensor channel_mean_max(const Tensor& x);                      // [B,C,H,W] -> [B,2,H,W]
Tensor mul_channel_broadcast(const Tensor& x, const Tensor& m);  // x*[B,1,H,W]

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor reshape(const Tensor& x, Shape s);
Tensor flatten(const Tensor& x);
Tensor transpose2d(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor stack_rows(const std::vector<Tensor>& rows);  // n x [d] -> [n,d]
Tensor mean_rows(const Tensor& x);                   // [n,d] -> [d]

// Patch gather for token sequences: [C,H,W] -> [Np, C*p*p], row-major patch
// order, channel-first layout inside a patch.
Tensor extract_patches(const Tensor& x, int patch);

enum class ScanDir { forward, backward };

// Depthwise 1-d conv over the token axis; the window only covers
// already-scanned tokens for the given direction, with edge replication at
// the sequence boundary. x [N,d], w [d,K].
Tensor causal_dwconv1d(const Tensor& x, const Tensor& w, const Tensor& b,
                       ScanDir dir);

// Core state-space recurrence. Per channel c, token k (reversed for the
// backward direction):
//   abar = exp(delta[k,c] * A[c,:])
//   h    = abar (.) h_prev + delta[k,c] * Bseq[k,:] * u[k,c]
//   y[k,c] = dot(Cseq[k,:], h) + D[c] * u[k,c]
// A must be strictly negative for a stable gate. Backward is hand-rolled BPTT.
Tensor scan_core(const Tensor& u, const Tensor& delta, const Tensor& A,
                 const Tensor& Bseq, const Tensor& Cseq, const Tensor& D,
                 ScanDir dir);

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ----------------------------------------------------------------------
// Central-difference gradient checking. f must be a pure function of the
// given tensors. Relative error per coordinate is |a-n| / max(1,|a|,|n|);
// the worst coordinate is returned. Throws on non-finite evaluations,
// naming the offending coordinate.
// ----------------------------------------------------------------------
struct GradCheckInput {
    std::string name;
    Tensor tensor;
};

double grad_check(const std::function<Tensor()>& f,
                  const std::vector<GradCheckInput>& inputs, double step);

}  // namespace evmf
