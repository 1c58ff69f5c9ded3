#pragma once

// Reverse-mode differentiation over Tensor values.
//
// A Var is a shared handle to a graph node. Operations on Vars compute
// their value eagerly and, while gradient recording is enabled, remember
// their inputs together with a closure that pushes the output gradient
// back to them. backward() walks the graph in reverse topological order.

#include "msmbd/tensor.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace msmbd {

struct Node {
    Tensor value;
    Tensor grad; // empty until a gradient reaches the node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    static Var leaf(Tensor value) { return Var(std::move(value), true); }

    const Tensor& value() const { return node_->value; }
    /// Direct write access for optimizers and finite-difference probes.
    Tensor& mutable_value() { return node_->value; }
    /// Accumulated gradient; zero-filled when nothing has flowed yet.
    Tensor grad() const;
    void zero_grad() { node_->grad = Tensor(); }

    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool valid() const { return static_cast<bool>(node_); }
    const std::shared_ptr<Node>& node() const { return node_; }

    static Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

private:
    std::shared_ptr<Node> node_;
};

/// Seeds d(root)/d(root) = 1 and accumulates gradients into every node
/// that requires them. `root` must hold exactly one element.
void backward(const Var& root);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// Differentiable operations. Rank-1 operands of matmul are treated as a
// single row and the result keeps rank 1.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& m);
Var add(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_row_bias(const Var& m, const Var& bias);
/// x * W^T + b for x of shape [in] or [n x in] and W of shape [out x in].
Var linear(const Var& x, const Var& weight, const Var* bias);
Var gelu(const Var& x);
Var sigmoid(const Var& x);
Var softmax_rows(const Var& m, const Mask* mask = nullptr);
/// Normalizes each row to zero mean / unit variance, then gamma * x + beta.
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var reshape(const Var& x, Shape shape);
/// Columns [start, start + count) of a matrix.
Var slice_cols(const Var& m, std::size_t start, std::size_t count);
/// Joins matrices with equal row counts side by side.
Var concat_cols(const std::vector<Var>& parts);
/// Stacks rank-1 tensors of equal length into a matrix.
Var stack_rows(const std::vector<Var>& rows);
/// Concatenates rank-1 tensors end to end.
Var concat(const std::vector<Var>& parts);
/// Column means of a matrix, rank-1 result.
Var mean_rows(const Var& m);
/// Row means of a matrix, rank-1 result (one value per row).
Var mean_cols(const Var& m);
Var sum(const Var& x);
/// x / sum(x); the caller guarantees a nonzero sum.
Var divide_by_sum(const Var& x);
/// Copies x with entries where keep[i] is false replaced by exactly +0.
Var mask_entries(const Var& x, const std::vector<bool>& keep);

/// Numerically stable binary cross-entropy on a logit (rank-1, length 1).
Var bce_with_logits(const Var& logit, double label);

} // namespace msmbd
