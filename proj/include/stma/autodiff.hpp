#pragma once

#include "stma/tensor.hpp"

#include <cstddef>
#include <vector>

namespace stma {

class Tape;

// Handle to a tensor recorded on a tape. Cheap to copy; valid for the
// lifetime of the owning tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
};

// Reverse-mode tape over the tensor kernels. One tape per evaluation,
// single-threaded. Recording order is replay order, reversed.
class Tape {
public:
    Var leaf(Tensor t);
    Var constant(double v) { return leaf(Tensor::scalar(v)); }

    const Tensor& value(Var v) const;

    // Accumulates d(loss)/d(node) for every node on the tape.
    // loss must be a single-element tensor recorded on this tape.
    void backward(Var loss);

    // Gradient of the last backward() call. Zero tensor for nodes the loss
    // does not depend on.
    const Tensor& grad(Var v) const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    friend Var ad_add(Var, Var);
    friend Var ad_sub(Var, Var);
    friend Var ad_mul(Var, Var);
    friend Var ad_scale(Var, double);
    friend Var ad_matmul(Var, Var);
    friend Var ad_attend(Var, Var);
    friend Var ad_transpose(Var);
    friend Var ad_softmax_rows(Var);
    friend Var ad_layernorm(Var, Var, Var, double);
    friend Var ad_relu(Var);
    friend Var ad_log(Var);
    friend Var ad_reciprocal(Var);
    friend Var ad_concat_rows(const std::vector<Var>&);
    friend Var ad_slice_rows(Var, std::size_t, std::size_t);
    friend Var ad_concat_cols(const std::vector<Var>&);
    friend Var ad_slice_cols(Var, std::size_t, std::size_t);
    friend Var ad_sum(Var);
    friend Var ad_mean(Var);
    friend Var ad_select_flat(Var, std::vector<std::size_t>);

    enum class Op {
        Leaf,
        Add,
        Sub,
        Mul,
        Scale,
        Matmul,
        Attend,
        Transpose,
        SoftmaxRows,
        Layernorm,
        Relu,
        Log,
        Reciprocal,
        ConcatRows,
        SliceRows,
        ConcatCols,
        SliceCols,
        Sum,
        Mean,
        SelectFlat,
    };

    struct Node {
        Op op = Op::Leaf;
        std::vector<std::size_t> inputs;
        Tensor value;
        double scalar = 0.0;               // Scale factor / layernorm eps
        std::size_t lo = 0, hi = 0;        // slice bounds
        std::vector<std::size_t> indices;  // SelectFlat gather indices
    };

    std::size_t push(Node n);
    const Node& node(Var v) const;
    Tensor& grad_slot(std::size_t id);
    void backprop_node(std::size_t id);

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

Var ad_add(Var a, Var b);
Var ad_sub(Var a, Var b);
Var ad_mul(Var a, Var b);
Var ad_scale(Var a, double c);
Var ad_matmul(Var a, Var b);
// Attention apply with order-canonical forward sums; gradients as matmul.
Var ad_attend(Var alpha, Var values);
Var ad_transpose(Var a);
Var ad_softmax_rows(Var a);
Var ad_layernorm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var ad_relu(Var a);
Var ad_log(Var a);
Var ad_reciprocal(Var a);
Var ad_concat_rows(const std::vector<Var>& parts);
Var ad_slice_rows(Var a, std::size_t r0, std::size_t r1);
Var ad_concat_cols(const std::vector<Var>& parts);
Var ad_slice_cols(Var a, std::size_t c0, std::size_t c1);
Var ad_sum(Var a);
Var ad_mean(Var a);
Var ad_select_flat(Var a, std::vector<std::size_t> indices);

}  // namespace stma
