#pragma once

// Tape-based reverse-mode differentiation over Tensor values. A Graph is
// built fresh for every forward pass; nodes are recorded in evaluation order
// and backward() replays them in reverse.

#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "fedmode/tensor.hpp"

namespace fedmode::nn {

struct Var {
    std::size_t id = 0;
};

class Graph {
public:
    /// Input that never receives a gradient.
    Var constant(Tensor value);
    /// Differentiable leaf (parameters, or inputs under a gradient check).
    Var leaf(Tensor value);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    /// Gradient of the last backward() target w.r.t. `v`; empty if `v` does
    /// not require a gradient.
    const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Seeds d(target)/d(target) = 1 for a scalar target and back-propagates.
    void backward(Var target);

    // a[m x k] * b[k x n]
    Var matmul(Var a, Var b);
    // a[m x n] + bias[n] broadcast over rows
    Var add_bias(Var a, Var bias);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var relu(Var a);
    Var reshape(Var a, Shape shape);
    /// x[batch x C x L] -> column t as [batch x C].
    Var time_step(Var x, std::size_t t);
    /// Valid cross-correlation: x[batch x C x L], kernels[F x C x k], bias[F].
    Var conv1d(Var x, Var kernels, Var bias, std::size_t stride);
    /// Inverted dropout; identity when rate == 0.
    Var dropout(Var a, double rate, std::mt19937_64& rng);
    /// Row-wise softmax.
    Var softmax(Var logits);
    /// Mean categorical cross-entropy of softmax(logits) against one-hot
    /// targets; returns a 1-element tensor.
    Var softmax_cross_entropy(Var logits, const Tensor& one_hot);
    /// Identity forward; backward multiplies the incoming gradient by `scale`.
    Var scale_grad(Var a, double scale);

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool requires_grad = false;
        std::function<void()> backward;
    };

    Var push(Tensor value, bool requires_grad, std::function<void()> backward = {});
    bool any_grad(std::initializer_list<Var> vs) const;
    double* grad_ptr(Var v) { return nodes_[v.id].grad.data(); }

    std::vector<Node> nodes_;
};

/// Stand-alone row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);
Tensor relu(const Tensor& x);

/// Mean over the batch of -log(max(p_true, 1e-12)).
double cross_entropy_loss(const Tensor& probs, const Tensor& one_hot);

inline constexpr double kProbFloor = 1e-12;

}  // namespace fedmode::nn
