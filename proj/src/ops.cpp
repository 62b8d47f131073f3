#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evmf/tensor.hpp"

namespace evmf {

namespace {

int64_t prod(const Shape& s, size_t lo, size_t hi) {
    int64_t p = 1;
    for (size_t i = lo; i < hi; ++i) p *= s[i];
    return p;
}

int div_ceil(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
int div_floor(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) +
                                " and " + shape_str(b));
}

// broadcast classes the engine supports
enum class Bc { same, b_scalar, a_scalar, b_suffix, a_suffix };

Bc classify(const std::string& op, const Shape& sa, const Shape& sb) {
    if (sa == sb) return Bc::same;
    const int64_t na = shape_numel(sa), nb = shape_numel(sb);
    if (nb == 1) return Bc::b_scalar;
    if (na == 1) return Bc::a_scalar;
    auto suffix = [](const Shape& big, const Shape& small) {
        if (small.size() > big.size()) return false;
        return std::equal(small.rbegin(), small.rend(), big.rbegin());
    };
    if (suffix(sa, sb)) return Bc::b_suffix;
    if (suffix(sb, sa)) return Bc::a_suffix;
    shape_error(op, sa, sb);
}

}  // namespace

// ---------------------------------------------------------------- binary ops

static Tensor binary_op(const std::string& name, const Tensor& a, const Tensor& b,
                        double (*fwd)(double, double),
                        void (*bwd)(double ga, double gb, double av, double bv,
                                    double dy, double& da, double& db)) {
    const Bc bc = classify(name, a.shape(), b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    Shape out_shape = (bc == Bc::a_scalar || bc == Bc::a_suffix) ? b.shape() : a.shape();
    const int64_t n = shape_numel(out_shape);
    const int64_t an = a.numel(), bn = b.numel();
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double x = av[static_cast<size_t>(an == n ? i : i % an)];
        const double y = bv[static_cast<size_t>(bn == n ? i : i % bn)];
        out[static_cast<size_t>(i)] = fwd(x, y);
    }
    return op_result(std::move(out_shape), std::move(out), {a, b},
                     [n, an, bn, bwd](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const bool ga = pa.requires_grad, gb = pb.requires_grad;
        double* da = ga ? ensure_grad(pa).data() : nullptr;
        double* db = gb ? ensure_grad(pb).data() : nullptr;
        for (int64_t i = 0; i < n; ++i) {
            const size_t ia = static_cast<size_t>(an == n ? i : i % an);
            const size_t ib = static_cast<size_t>(bn == n ? i : i % bn);
            double dda = 0, ddb = 0;
            bwd(ga ? 1 : 0, gb ? 1 : 0, pa.val[ia], pb.val[ib],
                self.grad[static_cast<size_t>(i)], dda, ddb);
            if (ga) da[ia] += dda;
            if (gb) db[ib] += ddb;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b,
        [](double x, double y) { return x + y; },
        [](double, double, double, double, double dy, double& da, double& db) {
            da = dy; db = dy;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b,
        [](double x, double y) { return x - y; },
        [](double, double, double, double, double dy, double& da, double& db) {
            da = dy; db = -dy;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b,
        [](double x, double y) { return x * y; },
        [](double, double, double x, double y, double dy, double& da, double& db) {
            da = dy * y; db = dy * x;
        });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.values());
    for (double& v : out) v *= c;
    return op_result(a.shape(), std::move(out), {a}, [c](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
    });
}

Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a.values());
    for (double& v : out) v += c;
    return op_result(a.shape(), std::move(out), {a}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

// --------------------------------------------------------------- activations

static double sigmoid_s(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

static double softplus_s(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

Tensor activation(const Tensor& x, Act kind) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) {
        const double v = xv[i];
        switch (kind) {
            case Act::sigmoid: out[i] = sigmoid_s(v); break;
            case Act::relu: out[i] = v > 0 ? v : 0.0; break;
            case Act::silu: out[i] = v * sigmoid_s(v); break;
            case Act::tanh: out[i] = std::tanh(v); break;
            case Act::softplus: out[i] = softplus_s(v); break;
            case Act::exp: out[i] = std::exp(v); break;
        }
    }
    return op_result(x.shape(), std::move(out), {x}, [kind](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) {
            const double v = p.val[i];
            const double y = self.val[i];
            double d = 0;
            switch (kind) {
                case Act::sigmoid: d = y * (1.0 - y); break;
                case Act::relu: d = v > 0 ? 1.0 : 0.0; break;  // relu'(0) = 0
                case Act::silu: {
                    const double s = sigmoid_s(v);
                    d = s + v * s * (1.0 - s);
                    break;
                }
                case Act::tanh: d = 1.0 - y * y; break;
                case Act::softplus: d = sigmoid_s(v); break;
                case Act::exp: d = y; break;
            }
            g[i] += d * self.grad[i];
        }
    });
}

// ------------------------------------------------------------ linear algebra

// c[m,n] += a[m,k] @ b[k,n]
static void gemm_acc(const double* a, const double* b, double* c,
                     int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            if (av == 0.0) continue;
            const double* bk = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
}

// c[m,n] += a[m,k] @ b[n,k]^T
static void gemm_nt_acc(const double* a, const double* b, double* c,
                        int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<size_t>(j) * k;
            double acc = 0;
            for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
            ci[j] += acc;
        }
    }
}

// c[m,n] += a[k,m]^T @ b[k,n]
static void gemm_tn_acc(const double* a, const double* b, double* c,
                        int m, int k, int n) {
    for (int kk = 0; kk < k; ++kk) {
        const double* ak = a + static_cast<size_t>(kk) * m;
        const double* bk = b + static_cast<size_t>(kk) * n;
        for (int i = 0; i < m; ++i) {
            const double av = ak[i];
            if (av == 0.0) continue;
            double* ci = c + static_cast<size_t>(i) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
        }
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul expects rank-2 tensors, got " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw std::invalid_argument("matmul: inner extents differ, " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return op_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)  // da = dy @ b^T
            gemm_nt_acc(self.grad.data(), pb.val.data(), ensure_grad(pa).data(), m, n, k);
        if (pb.requires_grad)  // db = a^T @ dy
            gemm_tn_acc(pa.val.data(), self.grad.data(), ensure_grad(pb).data(), k, m, n);
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.rank() != 2) throw std::invalid_argument("linear: weight must be rank 2");
    const int out_dim = w.dim(0), in_dim = w.dim(1);
    const bool vec = x.rank() == 1;
    if ((vec && x.dim(0) != in_dim) || (!vec && (x.rank() != 2 || x.dim(1) != in_dim)))
        throw std::invalid_argument("linear: input " + shape_str(x.shape()) +
                                    " does not match weight " + shape_str(w.shape()));
    if (b.defined() && (b.rank() != 1 || b.dim(0) != out_dim))
        throw std::invalid_argument("linear: bias shape mismatch");
    const int rows = vec ? 1 : x.dim(0);
    std::vector<double> out(static_cast<size_t>(rows) * out_dim, 0.0);
    if (b.defined()) {
        for (int i = 0; i < rows; ++i)
            std::copy(b.values().begin(), b.values().end(),
                      out.begin() + static_cast<size_t>(i) * out_dim);
    }
    gemm_nt_acc(x.values().data(), w.values().data(), out.data(), rows, in_dim, out_dim);
    Shape os = vec ? Shape{out_dim} : Shape{rows, out_dim};
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b}
                                              : std::vector<Tensor>{x, w};
    return op_result(std::move(os), std::move(out), std::move(parents),
                     [rows, in_dim, out_dim](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        if (px.requires_grad)  // dx = dy @ w
            gemm_acc(self.grad.data(), pw.val.data(), ensure_grad(px).data(),
                     rows, out_dim, in_dim);
        if (pw.requires_grad)  // dw = dy^T @ x
            gemm_tn_acc(self.grad.data(), px.val.data(), ensure_grad(pw).data(),
                        out_dim, rows, in_dim);
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto& db = ensure_grad(*self.parents[2]);
            for (int i = 0; i < rows; ++i)
                for (int o = 0; o < out_dim; ++o)
                    db[static_cast<size_t>(o)] +=
                        self.grad[static_cast<size_t>(i) * out_dim + o];
        }
    });
}

// ------------------------------------------------------------------- conv2d

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias,
              int stride, int padding) {
    if (x.rank() != 4 || k.rank() != 4)
        throw std::invalid_argument("conv2d expects [B,C,H,W] input and [O,C,kh,kw] kernel");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int O = k.dim(0), kc = k.dim(1), kh = k.dim(2), kw = k.dim(3);
    if (kc != C)
        throw std::invalid_argument("conv2d: kernel channels " + std::to_string(kc) +
                                    " != input channels " + std::to_string(C));
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw std::invalid_argument("conv2d: kernel " + std::to_string(kh) + "x" +
                                    std::to_string(kw) + " larger than padded input " +
                                    std::to_string(H + 2 * padding) + "x" +
                                    std::to_string(W + 2 * padding));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != O))
        throw std::invalid_argument("conv2d: bias must be [O]");
    const int Ho = (H + 2 * padding - kh) / stride + 1;
    const int Wo = (W + 2 * padding - kw) / stride + 1;

    std::vector<double> out(static_cast<size_t>(B) * O * Ho * Wo, 0.0);
    const double* xv = x.values().data();
    const double* kv = k.values().data();
    auto xi = [&](int b, int c, int i, int j) {
        return ((static_cast<size_t>(b) * C + c) * H + i) * W + j;
    };
    auto oi = [&](int b, int o, int i, int j) {
        return ((static_cast<size_t>(b) * O + o) * Ho + i) * Wo + j;
    };
    if (bias.defined()) {
        const double* bv = bias.values().data();
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o)
                std::fill_n(out.begin() + static_cast<int64_t>(oi(b, o, 0, 0)),
                            static_cast<size_t>(Ho) * Wo, bv[o]);
    }
    // weight-stationary loops; the inner ow sweep is contiguous for stride 1
    for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o)
            for (int c = 0; c < C; ++c)
                for (int r = 0; r < kh; ++r) {
                    const int oh_lo = std::max(0, div_ceil(padding - r, stride));
                    const int oh_hi = std::min(Ho - 1, div_floor(H - 1 + padding - r, stride));
                    for (int s = 0; s < kw; ++s) {
                        const double wv = kv[((static_cast<size_t>(o) * C + c) * kh + r) * kw + s];
                        if (wv == 0.0) continue;
                        const int ow_lo = std::max(0, div_ceil(padding - s, stride));
                        const int ow_hi = std::min(Wo - 1, div_floor(W - 1 + padding - s, stride));
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const int ih = oh * stride - padding + r;
                            const double* xr = xv + xi(b, c, ih, 0);
                            double* orow = out.data() + oi(b, o, oh, 0);
                            for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                orow[ow] += wv * xr[ow * stride - padding + s];
                        }
                    }
                }

    std::vector<Tensor> parents = bias.defined() ? std::vector<Tensor>{x, k, bias}
                                                 : std::vector<Tensor>{x, k};
    return op_result({B, O, Ho, Wo}, std::move(out), std::move(parents),
                     [B, C, H, W, O, kh, kw, Ho, Wo, stride, padding](Node& self) {
        Node& px = *self.parents[0];
        Node& pk = *self.parents[1];
        const double* gy = self.grad.data();
        double* gx = px.requires_grad ? ensure_grad(px).data() : nullptr;
        double* gk = pk.requires_grad ? ensure_grad(pk).data() : nullptr;
        const double* xv = px.val.data();
        const double* kv = pk.val.data();
        auto xoff = [C, H, W](int b, int c, int i) {
            return ((static_cast<size_t>(b) * C + c) * H + i) * static_cast<size_t>(W);
        };
        auto ooff = [O, Ho, Wo](int b, int o, int i) {
            return ((static_cast<size_t>(b) * O + o) * Ho + i) * static_cast<size_t>(Wo);
        };
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < O; ++o)
                for (int c = 0; c < C; ++c)
                    for (int r = 0; r < kh; ++r) {
                        const int oh_lo = std::max(0, div_ceil(padding - r, stride));
                        const int oh_hi = std::min(Ho - 1, div_floor(H - 1 + padding - r, stride));
                        for (int s = 0; s < kw; ++s) {
                            const size_t widx = ((static_cast<size_t>(o) * C + c) * kh + r) * kw + s;
                            const double wv = kv[widx];
                            const int ow_lo = std::max(0, div_ceil(padding - s, stride));
                            const int ow_hi = std::min(Wo - 1, div_floor(W - 1 + padding - s, stride));
                            double wacc = 0.0;
                            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                const int ih = oh * stride - padding + r;
                                const double* gyr = gy + ooff(b, o, oh);
                                const double* xr = xv + xoff(b, c, ih);
                                double* gxr = gx ? gx + xoff(b, c, ih) : nullptr;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                    const int iw = ow * stride - padding + s;
                                    const double g = gyr[ow];
                                    if (gk) wacc += g * xr[iw];
                                    if (gxr) gxr[iw] += g * wv;
                                }
                            }
                            if (gk) gk[widx] += wacc;
                        }
                    }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto& gb = ensure_grad(*self.parents[2]);
            for (int b = 0; b < B; ++b)
                for (int o = 0; o < O; ++o) {
                    double acc = 0;
                    const double* gyr = gy + ooff(b, o, 0);
                    for (int i = 0; i < Ho * Wo; ++i) acc += gyr[i];
                    gb[static_cast<size_t>(o)] += acc;
                }
        }
    });
}

// ------------------------------------------------------------------ pooling

Tensor avg_pool2d(const Tensor& x, int size) {
    if (x.rank() != 4) throw std::invalid_argument("avg_pool2d expects [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % size != 0 || W % size != 0)
        throw std::invalid_argument("avg_pool2d: extents not divisible by window");
    const int Ho = H / size, Wo = W / size;
    std::vector<double> out(static_cast<size_t>(B) * C * Ho * Wo, 0.0);
    const double* xv = x.values().data();
    const double inv = 1.0 / (size * size);
    for (int bc = 0; bc < B * C; ++bc)
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                double acc = 0;
                for (int r = 0; r < size; ++r)
                    for (int s = 0; s < size; ++s)
                        acc += xv[(static_cast<size_t>(bc) * H + oh * size + r) * W +
                                  ow * size + s];
                out[(static_cast<size_t>(bc) * Ho + oh) * Wo + ow] = acc * inv;
            }
    return op_result({B, C, Ho, Wo}, std::move(out), {x},
                     [B, C, H, W, Ho, Wo, size, inv](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int bc = 0; bc < B * C; ++bc)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    const double gv =
                        self.grad[(static_cast<size_t>(bc) * Ho + oh) * Wo + ow] * inv;
                    for (int r = 0; r < size; ++r)
                        for (int s = 0; s < size; ++s)
                            g[(static_cast<size_t>(bc) * H + oh * size + r) * W +
                              ow * size + s] += gv;
                }
    });
}

Tensor max_pool2d(const Tensor& x, int size) {
    if (x.rank() != 4) throw std::invalid_argument("max_pool2d expects [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % size != 0 || W % size != 0)
        throw std::invalid_argument("max_pool2d: extents not divisible by window");
    const int Ho = H / size, Wo = W / size;
    const int64_t n_out = static_cast<int64_t>(B) * C * Ho * Wo;
    std::vector<double> out(static_cast<size_t>(n_out));
    std::vector<int64_t> arg(static_cast<size_t>(n_out));
    const double* xv = x.values().data();
    for (int bc = 0; bc < B * C; ++bc)
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow) {
                double best = -1e300;
                int64_t best_i = -1;
                for (int r = 0; r < size; ++r)
                    for (int s = 0; s < size; ++s) {
                        const int64_t idx = (static_cast<int64_t>(bc) * H + oh * size + r) * W +
                                            ow * size + s;
                        if (xv[static_cast<size_t>(idx)] > best) {  // first max wins ties
                            best = xv[static_cast<size_t>(idx)];
                            best_i = idx;
                        }
                    }
                const size_t o = (static_cast<size_t>(bc) * Ho + oh) * Wo + ow;
                out[o] = best;
                arg[o] = best_i;
            }
    return op_result({B, C, Ho, Wo}, std::move(out), {x},
                     [arg = std::move(arg)](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (size_t o = 0; o < arg.size(); ++o)
            g[static_cast<size_t>(arg[o])] += self.grad[o];
    });
}

Tensor upsample_nearest2d(const Tensor& x, int factor) {
    if (x.rank() != 4) throw std::invalid_argument("upsample_nearest2d expects [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Ho = H * factor, Wo = W * factor;
    std::vector<double> out(static_cast<size_t>(B) * C * Ho * Wo);
    const double* xv = x.values().data();
    for (int bc = 0; bc < B * C; ++bc)
        for (int oh = 0; oh < Ho; ++oh)
            for (int ow = 0; ow < Wo; ++ow)
                out[(static_cast<size_t>(bc) * Ho + oh) * Wo + ow] =
                    xv[(static_cast<size_t>(bc) * H + oh / factor) * W + ow / factor];
    return op_result({B, C, Ho, Wo}, std::move(out), {x},
                     [B, C, H, W, Ho, Wo, factor](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int bc = 0; bc < B * C; ++bc)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow)
                    g[(static_cast<size_t>(bc) * H + oh / factor) * W + ow / factor] +=
                        self.grad[(static_cast<size_t>(bc) * Ho + oh) * Wo + ow];
    });
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("global_avg_pool expects [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(static_cast<size_t>(B) * C);
    const double* xv = x.values().data();
    const double inv = 1.0 / HW;
    for (int bc = 0; bc < B * C; ++bc) {
        double acc = 0;
        for (int i = 0; i < HW; ++i) acc += xv[static_cast<size_t>(bc) * HW + i];
        out[static_cast<size_t>(bc)] = acc * inv;
    }
    return op_result({B, C}, std::move(out), {x}, [B, C, HW, inv](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int bc = 0; bc < B * C; ++bc) {
            const double gv = self.grad[static_cast<size_t>(bc)] * inv;
            for (int i = 0; i < HW; ++i) g[static_cast<size_t>(bc) * HW + i] += gv;
        }
    });
}

Tensor channel_mean_max(const Tensor& x) {
    if (x.rank() != 4) throw std::invalid_argument("channel_mean_max expects [B,C,H,W]");
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int HW = H * W;
    std::vector<double> out(static_cast<size_t>(B) * 2 * HW);
    std::vector<int> argc(static_cast<size_t>(B) * HW);
    const double* xv = x.values().data();
    for (int b = 0; b < B; ++b)
        for (int i = 0; i < HW; ++i) {
            double acc = 0, best = -1e300;
            int best_c = 0;
            for (int c = 0; c < C; ++c) {
                const double v = xv[(static_cast<size_t>(b) * C + c) * HW + i];
                acc += v;
                if (v > best) { best = v; best_c = c; }
            }
            out[(static_cast<size_t>(b) * 2 + 0) * HW + i] = acc / C;
            out[(static_cast<size_t>(b) * 2 + 1) * HW + i] = best;
            argc[static_cast<size_t>(b) * HW + i] = best_c;
        }
    return op_result({B, 2, H, W}, std::move(out), {x},
                     [B, C, HW, argc = std::move(argc)](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int b = 0; b < B; ++b)
            for (int i = 0; i < HW; ++i) {
                const double gm = self.grad[(static_cast<size_t>(b) * 2 + 0) * HW + i] / C;
                for (int c = 0; c < C; ++c)
                    g[(static_cast<size_t>(b) * C + c) * HW + i] += gm;
                g[(static_cast<size_t>(b) * C + argc[static_cast<size_t>(b) * HW + i]) * HW + i] +=
                    self.grad[(static_cast<size_t>(b) * 2 + 1) * HW + i];
            }
    });
}

Tensor mul_channel_broadcast(const Tensor& x, const Tensor& m) {
    if (x.rank() != 4 || m.rank() != 4 || m.dim(1) != 1 || m.dim(0) != x.dim(0) ||
        m.dim(2) != x.dim(2) || m.dim(3) != x.dim(3))
        throw std::invalid_argument("mul_channel_broadcast: expected x [B,C,H,W], m [B,1,H,W]");
    const int B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    const double* mv = m.values().data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int i = 0; i < HW; ++i)
                out[(static_cast<size_t>(b) * C + c) * HW + i] =
                    xv[(static_cast<size_t>(b) * C + c) * HW + i] *
                    mv[static_cast<size_t>(b) * HW + i];
    return op_result(x.shape(), std::move(out), {x, m}, [B, C, HW](Node& self) {
        Node& px = *self.parents[0];
        Node& pm = *self.parents[1];
        double* gx = px.requires_grad ? ensure_grad(px).data() : nullptr;
        double* gm = pm.requires_grad ? ensure_grad(pm).data() : nullptr;
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < HW; ++i) {
                    const size_t xi = (static_cast<size_t>(b) * C + c) * HW + i;
                    const size_t mi = static_cast<size_t>(b) * HW + i;
                    const double g = self.grad[xi];
                    if (gx) gx[xi] += g * pm.val[mi];
                    if (gm) gm[mi] += g * px.val[xi];
                }
    });
}

// ------------------------------------------------------- softmax / layernorm

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("softmax: axis out of range");
    const auto& s = x.shape();
    const int64_t outer = prod(s, 0, static_cast<size_t>(axis));
    const int64_t n = s[static_cast<size_t>(axis)];
    const int64_t inner = prod(s, static_cast<size_t>(axis) + 1, s.size());
    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            double mx = -1e300;
            for (int64_t j = 0; j < n; ++j)
                mx = std::max(mx, xv[static_cast<size_t>(base + j * inner)]);
            double sum = 0;
            for (int64_t j = 0; j < n; ++j) {
                const double e = std::exp(xv[static_cast<size_t>(base + j * inner)] - mx);
                out[static_cast<size_t>(base + j * inner)] = e;
                sum += e;
            }
            for (int64_t j = 0; j < n; ++j)
                out[static_cast<size_t>(base + j * inner)] /= sum;
        }
    return op_result(x.shape(), std::move(out), {x}, [outer, n, inner](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * n * inner + in;
                double dot = 0;
                for (int64_t j = 0; j < n; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * inner);
                    dot += self.grad[idx] * self.val[idx];
                }
                for (int64_t j = 0; j < n; ++j) {
                    const size_t idx = static_cast<size_t>(base + j * inner);
                    g[idx] += self.val[idx] * (self.grad[idx] - dot);
                }
            }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps < 0) throw std::invalid_argument("layer_norm: eps must be >= 0");
    const auto& s = x.shape();
    if (s.empty()) throw std::invalid_argument("layer_norm: rank must be >= 1");
    const int d = s.back();
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        throw std::invalid_argument("layer_norm: gamma/beta must match last axis " +
                                    std::to_string(d));
    const int64_t rows = shape_numel(s) / d;
    std::vector<double> out(x.values().size());
    std::vector<double> xhat(x.values().size());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    const double* xv = x.values().data();
    const double* gv = gamma.values().data();
    const double* bv = beta.values().data();
    for (int64_t rix = 0; rix < rows; ++rix) {
        const double* xr = xv + rix * d;
        double mu = 0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= d;
        double var = 0;  // biased: divide by d
        for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(rix)] = inv;
        for (int j = 0; j < d; ++j) {
            const double xh = (xr[j] - mu) * inv;
            xhat[static_cast<size_t>(rix * d + j)] = xh;
            out[static_cast<size_t>(rix * d + j)] = gv[j] * xh + bv[j];
        }
    }
    return op_result(x.shape(), std::move(out), {x, gamma, beta},
                     [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        double* gx = px.requires_grad ? ensure_grad(px).data() : nullptr;
        double* gg = pg.requires_grad ? ensure_grad(pg).data() : nullptr;
        double* gb = pb.requires_grad ? ensure_grad(pb).data() : nullptr;
        const double* gamma = pg.val.data();
        for (int64_t rix = 0; rix < rows; ++rix) {
            const double* dy = self.grad.data() + rix * d;
            const double* xh = xhat.data() + rix * d;
            if (gg || gb)
                for (int j = 0; j < d; ++j) {
                    if (gg) gg[j] += dy[j] * xh[j];
                    if (gb) gb[j] += dy[j];
                }
            if (gx) {
                double m1 = 0, m2 = 0;  // mean(dxhat), mean(dxhat*xhat)
                for (int j = 0; j < d; ++j) {
                    const double dxh = dy[j] * gamma[j];
                    m1 += dxh;
                    m2 += dxh * xh[j];
                }
                m1 /= d;
                m2 /= d;
                const double inv = inv_std[static_cast<size_t>(rix)];
                for (int j = 0; j < d; ++j) {
                    const double dxh = dy[j] * gamma[j];
                    gx[rix * d + j] += inv * (dxh - m1 - xh[j] * m2);
                }
            }
        }
    });
}

// --------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
    double acc = 0;
    for (double v : x.values()) acc += v;
    return op_result(Shape{}, {acc}, {x}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (double& gv : g) gv += self.grad[0];
    });
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    double acc = 0;
    for (double v : x.values()) acc += v;
    return op_result(Shape{}, {acc * inv}, {x}, [inv](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (double& gv : g) gv += self.grad[0] * inv;
    });
}

// -------------------------------------------------------------- shape moves

Tensor reshape(const Tensor& x, Shape s) {
    if (shape_numel(s) != x.numel())
        throw std::invalid_argument("reshape: element count mismatch, " +
                                    shape_str(x.shape()) + " -> " + shape_str(s));
    std::vector<double> out(x.values());
    return op_result(std::move(s), std::move(out), {x}, [](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor flatten(const Tensor& x) {
    return reshape(x, Shape{static_cast<int>(x.numel())});
}

Tensor transpose2d(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("transpose2d expects rank 2");
    const int m = x.dim(0), n = x.dim(1);
    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(j) * m + i] = xv[static_cast<size_t>(i) * n + j];
    return op_result({n, m}, std::move(out), {x}, [m, n](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                g[static_cast<size_t>(i) * n + j] += self.grad[static_cast<size_t>(j) * m + i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    const int r = parts[0].rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("concat: axis out of range");
    Shape os = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw std::invalid_argument("concat: rank mismatch");
        for (int i = 0; i < r; ++i)
            if (i != axis && p.dim(i) != os[static_cast<size_t>(i)])
                shape_error("concat", os, p.shape());
        total += p.dim(axis);
    }
    os[static_cast<size_t>(axis)] = total;
    const int64_t outer = prod(os, 0, static_cast<size_t>(axis));
    const int64_t inner = prod(os, static_cast<size_t>(axis) + 1, os.size());
    std::vector<double> out(static_cast<size_t>(shape_numel(os)));
    std::vector<int64_t> chunk(parts.size());
    int64_t off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        chunk[pi] = static_cast<int64_t>(parts[pi].dim(axis)) * inner;
        const double* pv = parts[pi].values().data();
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(pv + o * chunk[pi], chunk[pi],
                        out.begin() + o * total * inner + off);
        off += chunk[pi];
    }
    return op_result(std::move(os), std::move(out), parts,
                     [outer, inner, total, chunk = std::move(chunk)](Node& self) {
        int64_t off = 0;
        for (size_t pi = 0; pi < self.parents.size(); ++pi) {
            Node& p = *self.parents[pi];
            if (p.requires_grad) {
                auto& g = ensure_grad(p);
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t i = 0; i < chunk[pi]; ++i)
                        g[static_cast<size_t>(o * chunk[pi] + i)] +=
                            self.grad[static_cast<size_t>(o * total * inner + off + i)];
            }
            off += chunk[pi];
        }
    });
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw std::invalid_argument("slice: axis out of range");
    if (start < 0 || len < 0 || start + len > x.dim(axis))
        throw std::invalid_argument("slice: range out of bounds");
    Shape os = x.shape();
    os[static_cast<size_t>(axis)] = len;
    const int64_t outer = prod(os, 0, static_cast<size_t>(axis));
    const int64_t inner = prod(os, static_cast<size_t>(axis) + 1, os.size());
    const int64_t src_n = x.dim(axis);
    std::vector<double> out(static_cast<size_t>(outer * len * inner));
    const double* xv = x.values().data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(xv + (o * src_n + start) * inner, len * inner,
                    out.begin() + o * len * inner);
    return op_result(std::move(os), std::move(out), {x},
                     [outer, inner, src_n, start, len](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < len * inner; ++i)
                g[static_cast<size_t>((o * src_n + start) * inner + i)] +=
                    self.grad[static_cast<size_t>(o * len * inner + i)];
    });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
    const int d = rows[0].dim(0);
    for (const auto& r : rows)
        if (r.rank() != 1 || r.dim(0) != d)
            throw std::invalid_argument("stack_rows: rows must all be [d]");
    const int n = static_cast<int>(rows.size());
    std::vector<double> out(static_cast<size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        std::copy(rows[static_cast<size_t>(i)].values().begin(),
                  rows[static_cast<size_t>(i)].values().end(),
                  out.begin() + static_cast<size_t>(i) * d);
    return op_result({n, d}, std::move(out), rows, [d](Node& self) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (!p.requires_grad) continue;
            auto& g = ensure_grad(p);
            for (int j = 0; j < d; ++j) g[static_cast<size_t>(j)] += self.grad[i * d + j];
        }
    });
}

Tensor mean_rows(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("mean_rows expects [n,d]");
    const int n = x.dim(0), d = x.dim(1);
    std::vector<double> out(static_cast<size_t>(d), 0.0);
    const double* xv = x.values().data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] += xv[static_cast<size_t>(i) * d + j];
    const double inv = 1.0 / n;
    for (double& v : out) v *= inv;
    return op_result({d}, std::move(out), {x}, [n, d, inv](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j)
                g[static_cast<size_t>(i) * d + j] += self.grad[static_cast<size_t>(j)] * inv;
    });
}

// ------------------------------------------------------------------ patches

Tensor extract_patches(const Tensor& x, int patch) {
    if (x.rank() != 3) throw std::invalid_argument("extract_patches expects [C,H,W]");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    if (patch < 1 || H % patch != 0 || W % patch != 0)
        throw std::invalid_argument("extract_patches: extents " + std::to_string(H) + "x" +
                                    std::to_string(W) + " not divisible by patch " +
                                    std::to_string(patch));
    const int gh = H / patch, gw = W / patch;
    const int np = gh * gw, pd = C * patch * patch;
    std::vector<double> out(static_cast<size_t>(np) * pd);
    const double* xv = x.values().data();
    for (int gy = 0; gy < gh; ++gy)
        for (int gx = 0; gx < gw; ++gx) {
            double* row = out.data() + (static_cast<size_t>(gy) * gw + gx) * pd;
            for (int c = 0; c < C; ++c)
                for (int py = 0; py < patch; ++py)
                    for (int px = 0; px < patch; ++px)
                        row[(c * patch + py) * patch + px] =
                            xv[(static_cast<size_t>(c) * H + gy * patch + py) * W +
                               gx * patch + px];
        }
    return op_result({np, pd}, std::move(out), {x}, [C, H, W, patch, gh, gw, pd](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        for (int gy = 0; gy < gh; ++gy)
            for (int gx = 0; gx < gw; ++gx) {
                const double* row = self.grad.data() + (static_cast<size_t>(gy) * gw + gx) * pd;
                for (int c = 0; c < C; ++c)
                    for (int py = 0; py < patch; ++py)
                        for (int px = 0; px < patch; ++px)
                            g[(static_cast<size_t>(c) * H + gy * patch + py) * W +
                              gx * patch + px] += row[(c * patch + py) * patch + px];
            }
    });
}

// ------------------------------------------------------------ sequence conv

Tensor causal_dwconv1d(const Tensor& x, const Tensor& w, const Tensor& b, ScanDir dir) {
    if (x.rank() != 2 || w.rank() != 2)
        throw std::invalid_argument("causal_dwconv1d expects x [N,d], w [d,K]");
    const int N = x.dim(0), d = x.dim(1), K = w.dim(1);
    if (w.dim(0) != d || (b.defined() && (b.rank() != 1 || b.dim(0) != d)))
        throw std::invalid_argument("causal_dwconv1d: parameter shape mismatch");
    std::vector<double> out(static_cast<size_t>(N) * d, 0.0);
    const double* xv = x.values().data();
    const double* wv = w.values().data();
    const int sgn = dir == ScanDir::forward ? 1 : -1;
    // edge-replication padding: a spatially constant sequence stays constant
    // through the conv, so boundary tokens carry no padding artifact
    auto clampi = [N](int i) { return std::min(std::max(i, 0), N - 1); };
    for (int t = 0; t < N; ++t)
        for (int c = 0; c < d; ++c) {
            double acc = b.defined() ? b.values()[static_cast<size_t>(c)] : 0.0;
            for (int j = 0; j < K; ++j) {
                // tap K-1 sits on the current token, earlier taps reach back
                // into already-scanned tokens for the given direction
                const int src = clampi(t - sgn * (K - 1 - j));
                acc += wv[static_cast<size_t>(c) * K + j] *
                       xv[static_cast<size_t>(src) * d + c];
            }
            out[static_cast<size_t>(t) * d + c] = acc;
        }
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b}
                                              : std::vector<Tensor>{x, w};
    return op_result({N, d}, std::move(out), std::move(parents), [N, d, K, sgn](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        double* gx = px.requires_grad ? ensure_grad(px).data() : nullptr;
        double* gw = pw.requires_grad ? ensure_grad(pw).data() : nullptr;
        double* gb = self.parents.size() > 2 && self.parents[2]->requires_grad
                         ? ensure_grad(*self.parents[2]).data()
                         : nullptr;
        const double* xv = px.val.data();
        const double* wv = pw.val.data();
        auto clampi = [N](int i) { return std::min(std::max(i, 0), N - 1); };
        for (int t = 0; t < N; ++t)
            for (int c = 0; c < d; ++c) {
                const double g = self.grad[static_cast<size_t>(t) * d + c];
                if (gb) gb[c] += g;
                for (int j = 0; j < K; ++j) {
                    const int src = clampi(t - sgn * (K - 1 - j));
                    if (gw) gw[static_cast<size_t>(c) * K + j] +=
                        g * xv[static_cast<size_t>(src) * d + c];
                    if (gx) gx[static_cast<size_t>(src) * d + c] +=
                        g * wv[static_cast<size_t>(c) * K + j];
                }
            }
    });
}

// ---------------------------------------------------------------- scan core

Tensor scan_core(const Tensor& u, const Tensor& delta, const Tensor& A,
                 const Tensor& Bseq, const Tensor& Cseq, const Tensor& D,
                 ScanDir dir) {
    if (u.rank() != 2 || delta.rank() != 2 || A.rank() != 2 || Bseq.rank() != 2 ||
        Cseq.rank() != 2 || D.rank() != 1)
        throw std::invalid_argument("scan_core: bad ranks");
    const int N = u.dim(0), d = u.dim(1), s = A.dim(1);
    if (delta.dim(0) != N || delta.dim(1) != d || A.dim(0) != d || Bseq.dim(0) != N ||
        Bseq.dim(1) != s || Cseq.dim(0) != N || Cseq.dim(1) != s || D.dim(0) != d)
        throw std::invalid_argument("scan_core: shape mismatch");

    const double* uv = u.values().data();
    const double* dv = delta.values().data();
    const double* av = A.values().data();
    const double* bv = Bseq.values().data();
    const double* cv = Cseq.values().data();
    const double* Dv = D.values().data();

    std::vector<double> out(static_cast<size_t>(N) * d, 0.0);
    // h_hist[j] = full state after processing the j-th token in scan order
    std::vector<double> h_hist(static_cast<size_t>(N) * d * s, 0.0);
    std::vector<double> h(static_cast<size_t>(d) * s, 0.0);
    const bool fwd = dir == ScanDir::forward;
    for (int j = 0; j < N; ++j) {
        const int k = fwd ? j : N - 1 - j;
        for (int c = 0; c < d; ++c) {
            const double dk = dv[static_cast<size_t>(k) * d + c];
            const double uk = uv[static_cast<size_t>(k) * d + c];
            double* hc = h.data() + static_cast<size_t>(c) * s;
            const double* ac = av + static_cast<size_t>(c) * s;
            const double* bk = bv + static_cast<size_t>(k) * s;
            const double* ck = cv + static_cast<size_t>(k) * s;
            double y = Dv[c] * uk;
            for (int si = 0; si < s; ++si) {
                const double abar = std::exp(dk * ac[si]);
                hc[si] = abar * hc[si] + dk * bk[si] * uk;
                y += ck[si] * hc[si];
            }
            out[static_cast<size_t>(k) * d + c] = y;
        }
        std::copy(h.begin(), h.end(), h_hist.begin() + static_cast<size_t>(j) * d * s);
    }

    return op_result({N, d}, std::move(out), {u, delta, A, Bseq, Cseq, D},
                     [N, d, s, fwd, h_hist = std::move(h_hist)](Node& self) {
        Node& pu = *self.parents[0];
        Node& pd = *self.parents[1];
        Node& pa = *self.parents[2];
        Node& pb = *self.parents[3];
        Node& pc = *self.parents[4];
        Node& pD = *self.parents[5];
        double* gu = pu.requires_grad ? ensure_grad(pu).data() : nullptr;
        double* gd = pd.requires_grad ? ensure_grad(pd).data() : nullptr;
        double* ga = pa.requires_grad ? ensure_grad(pa).data() : nullptr;
        double* gb = pb.requires_grad ? ensure_grad(pb).data() : nullptr;
        double* gc = pc.requires_grad ? ensure_grad(pc).data() : nullptr;
        double* gD = pD.requires_grad ? ensure_grad(pD).data() : nullptr;
        const double* uv = pu.val.data();
        const double* dv = pd.val.data();
        const double* av = pa.val.data();
        const double* bv = pb.val.data();
        const double* cv = pc.val.data();
        const double* Dv = pD.val.data();
        const double* gy = self.grad.data();

        std::vector<double> dh(static_cast<size_t>(d) * s, 0.0);
        std::vector<double> zeros(static_cast<size_t>(d) * s, 0.0);
        for (int j = N - 1; j >= 0; --j) {
            const int k = fwd ? j : N - 1 - j;
            const double* h_now = h_hist.data() + static_cast<size_t>(j) * d * s;
            const double* h_prev =
                j > 0 ? h_hist.data() + static_cast<size_t>(j - 1) * d * s : zeros.data();
            for (int c = 0; c < d; ++c) {
                const double dyk = gy[static_cast<size_t>(k) * d + c];
                const double dk = dv[static_cast<size_t>(k) * d + c];
                const double uk = uv[static_cast<size_t>(k) * d + c];
                const double* ac = av + static_cast<size_t>(c) * s;
                const double* bk = bv + static_cast<size_t>(k) * s;
                const double* ck = cv + static_cast<size_t>(k) * s;
                double* dhc = dh.data() + static_cast<size_t>(c) * s;
                const double* hnc = h_now + static_cast<size_t>(c) * s;
                const double* hpc = h_prev + static_cast<size_t>(c) * s;

                if (dyk != 0.0) {
                    if (gu) gu[static_cast<size_t>(k) * d + c] += dyk * Dv[c];
                    if (gD) gD[c] += dyk * uk;
                }
                double d_delta = 0.0, d_u = 0.0;
                for (int si = 0; si < s; ++si) {
                    double dh_cs = dhc[si] + dyk * ck[si];
                    if (gc) gc[static_cast<size_t>(k) * s + si] += dyk * hnc[si];
                    const double abar = std::exp(dk * ac[si]);
                    const double dab = dh_cs * hpc[si];
                    d_delta += dab * abar * ac[si] + dh_cs * bk[si] * uk;
                    if (ga) ga[static_cast<size_t>(c) * s + si] += dab * abar * dk;
                    if (gb) gb[static_cast<size_t>(k) * s + si] += dh_cs * dk * uk;
                    d_u += dh_cs * dk * bk[si];
                    dhc[si] = dh_cs * abar;  // grad wrt previous state
                }
                if (gd) gd[static_cast<size_t>(k) * d + c] += d_delta;
                if (gu) gu[static_cast<size_t>(k) * d + c] += d_u;
            }
        }
    });
}

// ------------------------------------------------------------ cross entropy

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw std::invalid_argument("cross_entropy expects [B,K] logits");
    const int B = logits.dim(0), K = logits.dim(1);
    if (static_cast<int>(labels.size()) != B)
        throw std::invalid_argument("cross_entropy: label count mismatch");
    for (int lab : labels)
        if (lab < 0 || lab >= K)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(lab) +
                                        " out of range [0," + std::to_string(K) + ")");
    const double* xv = logits.values().data();
    std::vector<double> lse(static_cast<size_t>(B));
    double loss = 0;
    for (int b = 0; b < B; ++b) {
        const double* row = xv + static_cast<size_t>(b) * K;
        double mx = row[0];
        for (int j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        double sum = 0;
        for (int j = 0; j < K; ++j) sum += std::exp(row[j] - mx);
        lse[static_cast<size_t>(b)] = mx + std::log(sum);
        loss += lse[static_cast<size_t>(b)] - row[labels[static_cast<size_t>(b)]];
    }
    loss /= B;
    return op_result(Shape{}, {loss}, {logits},
                     [B, K, labels, lse = std::move(lse)](Node& self) {
        Node& p = *self.parents[0];
        auto& g = ensure_grad(p);
        const double scale = self.grad[0] / B;
        for (int b = 0; b < B; ++b) {
            const double* row = p.val.data() + static_cast<size_t>(b) * K;
            for (int j = 0; j < K; ++j) {
                const double soft = std::exp(row[j] - lse[static_cast<size_t>(b)]);
                const double onehot = j == labels[static_cast<size_t>(b)] ? 1.0 : 0.0;
                g[static_cast<size_t>(b) * K + j] += (soft - onehot) * scale;
            }
        }
    });
}

}  // namespace evmf
