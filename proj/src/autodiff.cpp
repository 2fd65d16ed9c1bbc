#include "stma/autodiff.hpp"

#include <cmath>

namespace stma {

namespace {

void require_same_tape(Var a, Var b, const char* what) {
    if (a.tape == nullptr || a.tape != b.tape)
        throw ContractError(std::string(what) + ": operands recorded on different tapes");
}

}  // namespace

Var Tape::leaf(Tensor t) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(t);
    return Var{this, push(std::move(n))};
}

std::size_t Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != this) throw ContractError("value does not belong to this tape");
    if (v.id >= nodes_.size()) throw ContractError("unknown tape node id " + std::to_string(v.id));
    return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor& Tape::grad_slot(std::size_t id) {
    if (grads_[id].empty()) grads_[id] = Tensor::zeros(nodes_[id].value.shape());
    return grads_[id];
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (grads_.size() != nodes_.size())
        throw ContractError("grad() called before backward()");
    if (grads_[v.id].empty()) {
        // Loss independent of this node; materialize zeros lazily.
        const_cast<Tape*>(this)->grads_[v.id] = Tensor::zeros(n.value.shape());
    }
    return grads_[v.id];
}

void Tape::backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.value.size() != 1)
        throw ContractError("backward() loss must be scalar, got " + shape_str(ln.value.shape()));
    grads_.assign(nodes_.size(), Tensor());
    grad_slot(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        if (!grads_[i].empty()) backprop_node(i);
    }
}

void Tape::backprop_node(std::size_t id) {
    const Node& n = nodes_[id];
    const Tensor& g = grads_[id];
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
    auto acc = [&](std::size_t k) -> Tensor& { return grad_slot(n.inputs[k]); };

    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::Add: {
            Tensor& ga = acc(0);
            Tensor& gb = acc(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
            break;
        }
        case Op::Sub: {
            Tensor& ga = acc(0);
            Tensor& gb = acc(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i];
                gb[i] -= g[i];
            }
            break;
        }
        case Op::Mul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            Tensor& ga = acc(0);
            Tensor& gb = acc(1);
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] += g[i] * b[i];
                gb[i] += g[i] * a[i];
            }
            break;
        }
        case Op::Scale: {
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.scalar;
            break;
        }
        case Op::Matmul:
        case Op::Attend: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            Tensor da = matmul(g, transpose(b));
            Tensor db = matmul(transpose(a), g);
            Tensor& ga = acc(0);
            Tensor& gb = acc(1);
            for (std::size_t i = 0; i < da.size(); ++i) ga[i] += da[i];
            for (std::size_t i = 0; i < db.size(); ++i) gb[i] += db[i];
            break;
        }
        case Op::Transpose: {
            Tensor gt = transpose(g);
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < gt.size(); ++i) ga[i] += gt[i];
            break;
        }
        case Op::SoftmaxRows: {
            const Tensor& y = n.value;
            const std::size_t m = y.rows(), c = y.cols();
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < m; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    ga[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
            }
            break;
        }
        case Op::Layernorm: {
            const Tensor& x = in(0);
            const Tensor& gamma = in(1);
            const std::size_t c = x.shape().back();
            const std::size_t tokens = x.size() / c;
            Tensor& gx = acc(0);
            Tensor& ggamma = acc(1);
            Tensor& gbeta = acc(2);
            for (std::size_t t = 0; t < tokens; ++t) {
                const double* xr = x.data().data() + t * c;
                const double* gr = g.data().data() + t * c;
                double mean = 0.0;
                for (std::size_t j = 0; j < c; ++j) mean += xr[j];
                mean /= static_cast<double>(c);
                double var = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    double d = xr[j] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(c);
                const double inv = 1.0 / std::sqrt(var + n.scalar);
                double gg_mean = 0.0, gx_hat_mean = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double xhat = (xr[j] - mean) * inv;
                    const double gg = gr[j] * gamma[j];
                    gg_mean += gg;
                    gx_hat_mean += gg * xhat;
                    ggamma[j] += gr[j] * xhat;
                    gbeta[j] += gr[j];
                }
                gg_mean /= static_cast<double>(c);
                gx_hat_mean /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double xhat = (xr[j] - mean) * inv;
                    gx[t * c + j] += inv * (gr[j] * gamma[j] - gg_mean - xhat * gx_hat_mean);
                }
            }
            break;
        }
        case Op::Relu: {
            const Tensor& x = in(0);
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (x[i] > 0.0) ga[i] += g[i];
            break;
        }
        case Op::Log: {
            const Tensor& x = in(0);
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
            break;
        }
        case Op::Reciprocal: {
            const Tensor& y = n.value;
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= g[i] * y[i] * y[i];
            break;
        }
        case Op::ConcatRows: {
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Tensor& gk = acc(k);
                for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[off + i];
                off += gk.size();
            }
            break;
        }
        case Op::SliceRows: {
            const std::size_t c = in(0).cols();
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < g.size(); ++i) ga[n.lo * c + i] += g[i];
            break;
        }
        case Op::ConcatCols: {
            const std::size_t rows = n.value.rows();
            const std::size_t cols = n.value.cols();
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Tensor& gk = acc(k);
                const std::size_t pc = in(k).cols();
                for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < pc; ++j) gk[i * pc + j] += g[i * cols + off + j];
                off += pc;
            }
            break;
        }
        case Op::SliceCols: {
            const std::size_t cols = in(0).cols();
            const std::size_t w = n.hi - n.lo;
            const std::size_t rows = n.value.rows();
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < w; ++j) ga[i * cols + n.lo + j] += g[i * w + j];
            break;
        }
        case Op::Sum: {
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
            break;
        }
        case Op::Mean: {
            Tensor& ga = acc(0);
            const double s = g[0] / static_cast<double>(ga.size());
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
            break;
        }
        case Op::SelectFlat: {
            Tensor& ga = acc(0);
            for (std::size_t i = 0; i < n.indices.size(); ++i) ga[n.indices[i]] += g[i];
            break;
        }
    }
}

#define STMA_BINARY(name, opkind, kernel)                        \
    Var name(Var a, Var b) {                                     \
        require_same_tape(a, b, #name);                          \
        Tape::Node n;                                            \
        n.op = Tape::Op::opkind;                                 \
        n.inputs = {a.id, b.id};                                 \
        n.value = kernel(a.tape->value(a), b.tape->value(b));    \
        return Var{a.tape, a.tape->push(std::move(n))};          \
    }

STMA_BINARY(ad_add, Add, add)
STMA_BINARY(ad_sub, Sub, sub)
STMA_BINARY(ad_mul, Mul, mul)
STMA_BINARY(ad_matmul, Matmul, matmul)
STMA_BINARY(ad_attend, Attend, attend)

#undef STMA_BINARY

Var ad_scale(Var a, double c) {
    Tape::Node n;
    n.op = Tape::Op::Scale;
    n.inputs = {a.id};
    n.scalar = c;
    n.value = scale(a.tape->value(a), c);
    return Var{a.tape, a.tape->push(std::move(n))};
}

#define STMA_UNARY(name, opkind, kernel)            \
    Var name(Var a) {                               \
        Tape::Node n;                               \
        n.op = Tape::Op::opkind;                    \
        n.inputs = {a.id};                          \
        n.value = kernel(a.tape->value(a));         \
        return Var{a.tape, a.tape->push(std::move(n))}; \
    }

STMA_UNARY(ad_transpose, Transpose, transpose)
STMA_UNARY(ad_softmax_rows, SoftmaxRows, softmax_rows)
STMA_UNARY(ad_relu, Relu, relu)
STMA_UNARY(ad_log, Log, log_elem)
STMA_UNARY(ad_reciprocal, Reciprocal, reciprocal)
STMA_UNARY(ad_sum, Sum, sum_all)
STMA_UNARY(ad_mean, Mean, mean_all)

#undef STMA_UNARY

Var ad_layernorm(Var x, Var gamma, Var beta, double eps) {
    require_same_tape(x, gamma, "ad_layernorm");
    require_same_tape(x, beta, "ad_layernorm");
    Tape::Node n;
    n.op = Tape::Op::Layernorm;
    n.inputs = {x.id, gamma.id, beta.id};
    n.scalar = eps;
    n.value = layernorm(x.tape->value(x), x.tape->value(gamma), x.tape->value(beta), eps);
    return Var{x.tape, x.tape->push(std::move(n))};
}

Var ad_concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("ad_concat_rows of zero vars");
    Tape* tape = parts.front().tape;
    std::vector<Tensor> tensors;
    Tape::Node n;
    n.op = Tape::Op::ConcatRows;
    for (Var p : parts) {
        require_same_tape(parts.front(), p, "ad_concat_rows");
        n.inputs.push_back(p.id);
        tensors.push_back(tape->value(p));
    }
    n.value = concat_rows(tensors);
    return Var{tape, tape->push(std::move(n))};
}

Var ad_concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("ad_concat_cols of zero vars");
    Tape* tape = parts.front().tape;
    std::vector<Tensor> tensors;
    Tape::Node n;
    n.op = Tape::Op::ConcatCols;
    for (Var p : parts) {
        require_same_tape(parts.front(), p, "ad_concat_cols");
        n.inputs.push_back(p.id);
        tensors.push_back(tape->value(p));
    }
    n.value = concat_cols(tensors);
    return Var{tape, tape->push(std::move(n))};
}

Var ad_slice_rows(Var a, std::size_t r0, std::size_t r1) {
    Tape::Node n;
    n.op = Tape::Op::SliceRows;
    n.inputs = {a.id};
    n.lo = r0;
    n.hi = r1;
    n.value = slice_rows(a.tape->value(a), r0, r1);
    return Var{a.tape, a.tape->push(std::move(n))};
}

Var ad_slice_cols(Var a, std::size_t c0, std::size_t c1) {
    Tape::Node n;
    n.op = Tape::Op::SliceCols;
    n.inputs = {a.id};
    n.lo = c0;
    n.hi = c1;
    n.value = slice_cols(a.tape->value(a), c0, c1);
    return Var{a.tape, a.tape->push(std::move(n))};
}

Var ad_select_flat(Var a, std::vector<std::size_t> indices) {
    Tape::Node n;
    n.op = Tape::Op::SelectFlat;
    n.inputs = {a.id};
    n.value = select_flat(a.tape->value(a), indices);
    n.indices = std::move(indices);
    return Var{a.tape, a.tape->push(std::move(n))};
}

}  // namespace stma
