#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stma {

// Shape/contract violations carry a message naming the offending shapes.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Violations of an operation's stated precondition (wrong state, bad mode, ...).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Dense row-major tensor of 64-bit floats. Immutable by convention once built:
// kernels return fresh tensors, summation order is fixed, results are bit
// reproducible across runs.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-D accessors; rows()/cols() require rank 2.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// --- kernels -----------------------------------------------------------
// All deterministic: fixed loop order, no reassociation.

// Order-canonical reduction: accumulates after sorting, so the result is a
// function of the value multiset alone. Reductions whose term order follows
// target order use this, which is what makes target relabeling bit-exact.
double canonical_sum(std::vector<double>& terms);
double canonical_product(std::vector<double>& terms);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Row-stochastic softmax with per-row max subtraction; the denominator is a
// canonical sum.
Tensor softmax_rows(const Tensor& x);
// out[i][c] = sum_j alpha[i][j] * values[j][c], canonical per element.
// This is the attention-apply step, kept order-insensitive in j.
Tensor attend(const Tensor& alpha, const Tensor& values);
// Normalizes over the last dimension (length must equal gamma/beta length).
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor log_elem(const Tensor& a);
Tensor reciprocal(const Tensor& a);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor select_flat(const Tensor& a, const std::vector<std::size_t>& indices);

// --- binary file format -------------------------------------------------
// "STMA" magic, u8 version=1, u8 rank, rank x u64-LE dims, doubles LE row-major.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace stma
