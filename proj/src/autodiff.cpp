#include "fedmode/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "fedmode/error.hpp"

namespace fedmode::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::ShapeMismatch, what);
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw Error(ErrorCode::NumericalError, std::string("non-finite output in ") + op);
}

void softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in + r * cols;
        double* y = out + r * cols;
        const double mx = *std::max_element(x, x + cols);
        double sum = 0.0;
        for (std::size_t k = 0; k < cols; ++k) {
            y[k] = std::exp(x[k] - mx);
            sum += y[k];
        }
        for (std::size_t k = 0; k < cols; ++k) y[k] /= sum;
    }
}

}  // namespace

Var Graph::push(Tensor value, bool requires_grad, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
}

bool Graph::any_grad(std::initializer_list<Var> vs) const {
    return std::any_of(vs.begin(), vs.end(), [this](Var v) { return nodes_[v.id].requires_grad; });
}

Var Graph::constant(Tensor value) { return push(std::move(value), false); }
Var Graph::leaf(Tensor value) { return push(std::move(value), true); }

void Graph::backward(Var target) {
    require(value(target).size() == 1, "backward target must be a scalar");
    for (auto& n : nodes_) {
        if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
    }
    if (!nodes_[target.id].requires_grad) return;
    nodes_[target.id].grad[0] = 1.0;
    for (std::size_t i = target.id + 1; i-- > 0;) {
        auto& n = nodes_[i];
        if (n.requires_grad && n.backward) n.backward();
    }
}

Var Graph::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    require(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0),
            "matmul " + shape_string(A.shape()) + " * " + shape_string(B.shape()));
    const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor C({m, n});
    MapMat(C.ptr(), m, n).noalias() = CMapMat(A.ptr(), m, k) * CMapMat(B.ptr(), k, n);
    Var out{nodes_.size()};
    return push(std::move(C), any_grad({a, b}), [this, a, b, out, m, k, n] {
        CMapMat dC(grad_ptr(out), m, n);
        if (requires_grad(a)) MapMat(grad_ptr(a), m, k).noalias() += dC * CMapMat(value(b).ptr(), k, n).transpose();
        if (requires_grad(b)) MapMat(grad_ptr(b), k, n).noalias() += CMapMat(value(a).ptr(), m, k).transpose() * dC;
    });
}

Var Graph::add_bias(Var a, Var bias) {
    const Tensor& A = value(a);
    const Tensor& b = value(bias);
    require(A.rank() == 2 && b.size() == A.dim(1),
            "add_bias " + shape_string(A.shape()) + " + " + shape_string(b.shape()));
    const std::size_t m = A.dim(0), n = A.dim(1);
    Tensor C = A;
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) C[r * n + c] += b[c];
    Var out{nodes_.size()};
    return push(std::move(C), any_grad({a, bias}), [this, a, bias, out, m, n] {
        const double* g = grad_ptr(out);
        if (requires_grad(a)) {
            double* ga = grad_ptr(a);
            for (std::size_t i = 0; i < m * n; ++i) ga[i] += g[i];
        }
        if (requires_grad(bias)) {
            double* gb = grad_ptr(bias);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        }
    });
}

Var Graph::add(Var a, Var b) {
    require(value(a).shape() == value(b).shape(),
            "add " + shape_string(value(a).shape()) + " + " + shape_string(value(b).shape()));
    Tensor C = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    const std::size_t n = C.size();
    Var out{nodes_.size()};
    return push(std::move(C), any_grad({a, b}), [this, a, b, out, n] {
        const double* g = grad_ptr(out);
        if (requires_grad(a)) {
            double* ga = grad_ptr(a);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (requires_grad(b)) {
            double* gb = grad_ptr(b);
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    require(value(a).shape() == value(b).shape(),
            "sub " + shape_string(value(a).shape()) + " - " + shape_string(value(b).shape()));
    Tensor C = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
    const std::size_t n = C.size();
    Var out{nodes_.size()};
    return push(std::move(C), any_grad({a, b}), [this, a, b, out, n] {
        const double* g = grad_ptr(out);
        if (requires_grad(a)) {
            double* ga = grad_ptr(a);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (requires_grad(b)) {
            double* gb = grad_ptr(b);
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    require(value(a).shape() == value(b).shape(),
            "mul " + shape_string(value(a).shape()) + " * " + shape_string(value(b).shape()));
    Tensor C = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
    const std::size_t n = C.size();
    Var out{nodes_.size()};
    return push(std::move(C), any_grad({a, b}), [this, a, b, out, n] {
        const double* g = grad_ptr(out);
        if (requires_grad(a)) {
            double* ga = grad_ptr(a);
            const Tensor& B = value(b);
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * B[i];
        }
        if (requires_grad(b)) {
            double* gb = grad_ptr(b);
            const Tensor& A = value(a);
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * A[i];
        }
    });
}

Var Graph::sigmoid(Var a) {
    Tensor Y = value(a);
    for (auto& y : Y.data()) y = 1.0 / (1.0 + std::exp(-y));
    const std::size_t n = Y.size();
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({a}), [this, a, out, n] {
        const double* g = grad_ptr(out);
        const Tensor& Y = value(out);
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * Y[i] * (1.0 - Y[i]);
    });
}

Var Graph::tanh(Var a) {
    Tensor Y = value(a);
    for (auto& y : Y.data()) y = std::tanh(y);
    const std::size_t n = Y.size();
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({a}), [this, a, out, n] {
        const double* g = grad_ptr(out);
        const Tensor& Y = value(out);
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * (1.0 - Y[i] * Y[i]);
    });
}

Var Graph::relu(Var a) {
    Tensor Y = value(a);
    for (auto& y : Y.data()) y = y > 0.0 ? y : 0.0;
    const std::size_t n = Y.size();
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({a}), [this, a, out, n] {
        const double* g = grad_ptr(out);
        const Tensor& X = value(a);
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < n; ++i)
            if (X[i] > 0.0) ga[i] += g[i];
    });
}

Var Graph::reshape(Var a, Shape shape) {
    require(shape_size(shape) == value(a).size(),
            "reshape " + shape_string(value(a).shape()) + " -> " + shape_string(shape));
    Tensor Y(std::move(shape), std::vector<double>(value(a).data().begin(), value(a).data().end()));
    const std::size_t n = Y.size();
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({a}), [this, a, out, n] {
        const double* g = grad_ptr(out);
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    });
}

Var Graph::time_step(Var x, std::size_t t) {
    const Tensor& X = value(x);
    require(X.rank() == 3 && t < X.dim(2), "time_step " + std::to_string(t) + " of " + shape_string(X.shape()));
    const std::size_t B = X.dim(0), C = X.dim(1), L = X.dim(2);
    Tensor Y({B, C});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) Y[b * C + c] = X[(b * C + c) * L + t];
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({x}), [this, x, out, t, B, C, L] {
        const double* g = grad_ptr(out);
        double* gx = grad_ptr(x);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) gx[(b * C + c) * L + t] += g[b * C + c];
    });
}

Var Graph::conv1d(Var x, Var kernels, Var bias, std::size_t stride) {
    if (stride < 1) throw Error(ErrorCode::InvalidStride, "stride must be >= 1");
    const Tensor& X = value(x);
    const Tensor& K = value(kernels);
    const Tensor& bv = value(bias);
    require(X.rank() == 3 && K.rank() == 3 && K.dim(1) == X.dim(1) && bv.size() == K.dim(0) && K.dim(2) <= X.dim(2),
            "conv1d " + shape_string(X.shape()) + " with kernels " + shape_string(K.shape()));
    const std::size_t B = X.dim(0), C = X.dim(1), L = X.dim(2);
    const std::size_t F = K.dim(0), kw = K.dim(2);
    const std::size_t Lo = (L - kw) / stride + 1;
    Tensor Y({B, F, Lo});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t f = 0; f < F; ++f) {
            double* y = Y.ptr() + (b * F + f) * Lo;
            for (std::size_t o = 0; o < Lo; ++o) y[o] = bv[f];
            for (std::size_t c = 0; c < C; ++c) {
                const double* xr = X.ptr() + (b * C + c) * L;
                const double* kr = K.ptr() + (f * C + c) * kw;
                for (std::size_t o = 0; o < Lo; ++o) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < kw; ++j) acc += kr[j] * xr[o * stride + j];
                    y[o] += acc;
                }
            }
        }
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({x, kernels, bias}),
                [this, x, kernels, bias, out, B, C, L, F, kw, Lo, stride] {
                    const double* g = grad_ptr(out);
                    const Tensor& X = value(x);
                    const Tensor& K = value(kernels);
                    const bool gx_on = requires_grad(x), gk_on = requires_grad(kernels), gb_on = requires_grad(bias);
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t f = 0; f < F; ++f) {
                            const double* gy = g + (b * F + f) * Lo;
                            if (gb_on) {
                                double* gb = grad_ptr(bias);
                                for (std::size_t o = 0; o < Lo; ++o) gb[f] += gy[o];
                            }
                            for (std::size_t c = 0; c < C; ++c) {
                                const std::size_t xoff = (b * C + c) * L;
                                const std::size_t koff = (f * C + c) * kw;
                                for (std::size_t o = 0; o < Lo; ++o) {
                                    for (std::size_t j = 0; j < kw; ++j) {
                                        if (gk_on) grad_ptr(kernels)[koff + j] += gy[o] * X[xoff + o * stride + j];
                                        if (gx_on) grad_ptr(x)[xoff + o * stride + j] += gy[o] * K[koff + j];
                                    }
                                }
                            }
                        }
                });
}

Var Graph::dropout(Var a, double rate, std::mt19937_64& rng) {
    if (rate <= 0.0) return a;
    if (rate >= 1.0) throw Error(ErrorCode::InvalidValue, "dropout rate must be < 1");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double keep = 1.0 - rate;
    std::vector<double> mask(value(a).size());
    for (auto& m : mask) m = unit(rng) < keep ? 1.0 / keep : 0.0;
    Tensor Y = value(a);
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= mask[i];
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({a}), [this, a, out, mask = std::move(mask)] {
        const double* g = grad_ptr(out);
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < mask.size(); ++i) ga[i] += g[i] * mask[i];
    });
}

Var Graph::softmax(Var logits) {
    const Tensor& Z = value(logits);
    require(Z.rank() == 2, "softmax expects [batch x K], got " + shape_string(Z.shape()));
    const std::size_t B = Z.dim(0), K = Z.dim(1);
    Tensor P({B, K});
    softmax_rows(Z.ptr(), P.ptr(), B, K);
    require_finite(P, "softmax");
    Var out{nodes_.size()};
    return push(std::move(P), any_grad({logits}), [this, logits, out, B, K] {
        const double* g = grad_ptr(out);
        const Tensor& P = value(out);
        double* gz = grad_ptr(logits);
        for (std::size_t r = 0; r < B; ++r) {
            double dot = 0.0;
            for (std::size_t k = 0; k < K; ++k) dot += g[r * K + k] * P[r * K + k];
            for (std::size_t k = 0; k < K; ++k) gz[r * K + k] += P[r * K + k] * (g[r * K + k] - dot);
        }
    });
}

Var Graph::softmax_cross_entropy(Var logits, const Tensor& one_hot) {
    const Tensor& Z = value(logits);
    require(Z.rank() == 2 && one_hot.shape() == Z.shape(),
            "cross entropy logits " + shape_string(Z.shape()) + " vs labels " + shape_string(one_hot.shape()));
    const std::size_t B = Z.dim(0), K = Z.dim(1);
    Tensor P({B, K});
    softmax_rows(Z.ptr(), P.ptr(), B, K);
    require_finite(P, "softmax_cross_entropy");
    Tensor loss({1}, cross_entropy_loss(P, one_hot));
    Var out{nodes_.size()};
    return push(std::move(loss), any_grad({logits}), [this, logits, out, P = std::move(P), Y = one_hot, B, K] {
        const double g = grad_ptr(out)[0] / static_cast<double>(B);
        double* gz = grad_ptr(logits);
        for (std::size_t i = 0; i < B * K; ++i) gz[i] += g * (P[i] - Y[i]);
    });
}

Var Graph::scale_grad(Var a, double scale) {
    Tensor Y = value(a);
    const std::size_t n = Y.size();
    Var out{nodes_.size()};
    return push(std::move(Y), any_grad({a}), [this, a, out, n, scale] {
        const double* g = grad_ptr(out);
        double* ga = grad_ptr(a);
        for (std::size_t i = 0; i < n; ++i) ga[i] += scale * g[i];
    });
}

Tensor softmax(const Tensor& logits) {
    require(logits.rank() == 2, "softmax expects [batch x K], got " + shape_string(logits.shape()));
    Tensor P(logits.shape());
    softmax_rows(logits.ptr(), P.ptr(), logits.dim(0), logits.dim(1));
    require_finite(P, "softmax");
    return P;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
}

double cross_entropy_loss(const Tensor& probs, const Tensor& one_hot) {
    require(probs.rank() == 2 && probs.shape() == one_hot.shape(),
            "cross entropy probs " + shape_string(probs.shape()) + " vs labels " + shape_string(one_hot.shape()));
    const std::size_t B = probs.dim(0), K = probs.dim(1);
    if (B == 0) throw Error(ErrorCode::Empty, "cross entropy over an empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < B; ++r)
        for (std::size_t k = 0; k < K; ++k) {
            const double y = one_hot[r * K + k];
            if (y != 0.0) total -= y * std::log(std::max(probs[r * K + k], kProbFloor));
        }
    const double loss = total / static_cast<double>(B);
    if (!std::isfinite(loss)) throw Error(ErrorCode::NumericalError, "non-finite cross entropy");
    return loss;
}

}  // namespace fedmode::nn
