#include "stma/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace stma {

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    s += "]";
    return s;
}

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
        n *= d;
    }
    return n;
}

void require_2d(const Tensor& t, const char* what) {
    if (t.rank() != 2)
        throw DimensionError(std::string(what) + " requires a rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(what) + " shape mismatch: " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size())
        throw DimensionError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged matrix initializer");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const {
    require_2d(*this, "rows()");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_2d(*this, "cols()");
    return shape_[1];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    require_2d(*this, "at()");
    return data_[i * shape_[1] + j];
}

double Tensor::at(std::size_t i, std::size_t j) const {
    require_2d(*this, "at()");
    return data_[i * shape_[1] + j];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            out[i * n + j] = acc;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return out;
}

double canonical_sum(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double acc = 0.0;
    for (double t : terms) acc += t;
    return acc;
}

double canonical_product(std::vector<double>& terms) {
    std::sort(terms.begin(), terms.end());
    double acc = 1.0;
    for (double t : terms) acc *= t;
    return acc;
}

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    Tensor out({m, n});
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[i * n + j]);
        for (std::size_t j = 0; j < n; ++j) {
            double e = std::exp(x[i * n + j] - mx);
            out[i * n + j] = e;
            terms[j] = e;
        }
        const double sum = canonical_sum(terms);
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= sum;
    }
    return out;
}

Tensor attend(const Tensor& alpha, const Tensor& values) {
    require_2d(alpha, "attend");
    require_2d(values, "attend");
    if (alpha.cols() != values.rows())
        throw DimensionError("attend inner dimensions disagree: " + shape_str(alpha.shape()) +
                             " x " + shape_str(values.shape()));
    const std::size_t q = alpha.rows(), k = alpha.cols(), d = values.cols();
    Tensor out({q, d});
    std::vector<double> terms(k);
    for (std::size_t i = 0; i < q; ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t j = 0; j < k; ++j) terms[j] = alpha[i * k + j] * values[j * d + c];
            out[i * d + c] = canonical_sum(terms);
        }
    }
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 1) throw DimensionError("layernorm requires rank >= 1");
    const std::size_t c = x.shape().back();
    if (gamma.size() != c || beta.size() != c)
        throw DimensionError("layernorm channel mismatch: x " + shape_str(x.shape()) +
                             ", gamma " + shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
    const std::size_t tokens = x.size() / c;
    Tensor out(x.shape());
    for (std::size_t t = 0; t < tokens; ++t) {
        const double* row = x.data().data() + t * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += row[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j)
            out[t * c + j] = (row[j] - mean) * inv * gamma[j] + beta[j];
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * c;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return out;
}

Tensor log_elem(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::log(a[i]);
    return out;
}

Tensor reciprocal(const Tensor& a) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = 1.0 / a[i];
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows of zero tensors");
    std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != cols)
            throw DimensionError("concat_rows column mismatch: " + shape_str(p.shape()) +
                                 " vs expected cols " + std::to_string(cols));
        rows += p.rows();
    }
    Tensor out({rows, cols});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
        off += p.size();
    }
    return out;
}

Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    require_2d(a, "slice_rows");
    if (r0 > r1 || r1 > a.rows())
        throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) +
                             ") out of range for " + shape_str(a.shape()));
    const std::size_t n = a.cols();
    Tensor out({r1 - r0, n});
    std::copy(a.data().begin() + r0 * n, a.data().begin() + r1 * n, out.data().begin());
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols of zero tensors");
    std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != rows)
            throw DimensionError("concat_cols row mismatch: " + shape_str(p.shape()) +
                                 " vs expected rows " + std::to_string(rows));
        cols += p.cols();
    }
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t off = 0;
        for (const Tensor& p : parts) {
            const std::size_t pc = p.cols();
            std::copy(p.data().begin() + i * pc, p.data().begin() + (i + 1) * pc,
                      out.data().begin() + i * cols + off);
            off += pc;
        }
    }
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    require_2d(a, "slice_cols");
    if (c0 > c1 || c1 > a.cols())
        throw DimensionError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") out of range for " + shape_str(a.shape()));
    const std::size_t m = a.rows(), n = a.cols();
    Tensor out({m, c1 - c0});
    for (std::size_t i = 0; i < m; ++i)
        std::copy(a.data().begin() + i * n + c0, a.data().begin() + i * n + c1,
                  out.data().begin() + i * (c1 - c0));
    return out;
}

Tensor sum_all(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return Tensor::scalar(acc);
}

Tensor mean_all(const Tensor& a) {
    if (a.size() == 0) throw ContractError("mean_all of empty tensor");
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    return Tensor::scalar(acc / static_cast<double>(a.size()));
}

Tensor select_flat(const Tensor& a, const std::vector<std::size_t>& indices) {
    Tensor out({indices.size()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= a.size())
            throw DimensionError("select_flat index " + std::to_string(indices[i]) +
                                 " out of range for " + shape_str(a.shape()));
        out[i] = a[indices[i]];
    }
    return out;
}

namespace {

void put_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write("STMA", 4);
    os.put(static_cast<char>(1));  // version
    os.put(static_cast<char>(t.rank()));
    for (std::size_t d : t.shape()) put_u64_le(os, d);
    for (double v : t.data()) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64_le(os, bits);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "STMA", 4) != 0)
        throw std::runtime_error("bad tensor magic in " + path);
    int version = is.get();
    if (version != 1) throw std::runtime_error("unsupported tensor version in " + path);
    int rank = is.get();
    if (rank < 0) throw std::runtime_error("truncated tensor header in " + path);
    std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = static_cast<std::size_t>(get_u64_le(is));
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    std::vector<double> data(n);
    for (auto& v : data) {
        std::uint64_t bits = get_u64_le(is);
        std::memcpy(&v, &bits, 8);
    }
    if (!is) throw std::runtime_error("truncated tensor payload in " + path);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace stma
