#include "stma/oracles.hpp"

#include "stma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stma::oracle {

Tensor matmul_reference(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (k != b.rows()) throw DimensionError("matmul_reference inner dimensions disagree");
    Tensor out({m, n});
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += a[i * k + p] * b[p * n + j];
    return out;
}

Tensor mha_self_attention_reference(const Tensor& x, const StmlBlockWeights& w) {
    const std::size_t rows = x.rows();
    const std::size_t channels = x.cols();
    const std::size_t heads = w.heads;
    const std::size_t d = channels / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    Tensor q = matmul_reference(x, w.wq);
    Tensor k = matmul_reference(x, w.wk);
    Tensor v = matmul_reference(x, w.wv);
    Tensor concat({rows, channels});
    std::vector<double> logits(rows);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t c0 = h * d;
        for (std::size_t i = 0; i < rows; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < rows; ++j) {
                double dot = 0.0;
                for (std::size_t t = 0; t < d; ++t)
                    dot += q[i * channels + c0 + t] * k[j * channels + c0 + t];
                logits[j] = dot * scale;
                mx = std::max(mx, logits[j]);
            }
            double denom = 0.0;
            for (std::size_t j = 0; j < rows; ++j) denom += std::exp(logits[j] - mx);
            for (std::size_t t = 0; t < d; ++t) {
                double acc = 0.0;
                for (std::size_t j = 0; j < rows; ++j)
                    acc += std::exp(logits[j] - mx) / denom * v[j * channels + c0 + t];
                concat[i * channels + c0 + t] = acc;
            }
        }
    }
    return matmul_reference(concat, w.wo);
}

Tensor conv2d_reference(const Tensor& input, const Conv2d& conv) {
    const std::size_t cin = input.shape()[0];
    const std::size_t h = input.shape()[1];
    const std::size_t w = input.shape()[2];
    const std::size_t cout = conv.weight.shape()[0];
    const std::size_t k = conv.weight.shape()[2];
    const std::size_t oh = (h + 2 * conv.pad - k) / conv.stride + 1;
    const std::size_t ow = (w + 2 * conv.pad - k) / conv.stride + 1;

    Tensor out({cout, oh, ow});
    for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t i = 0; i < oh * ow; ++i) out[oc * oh * ow + i] = conv.bias[oc];

    for (std::size_t ic = 0; ic < cin; ++ic) {
        for (std::size_t iy = 0; iy < h; ++iy) {
            for (std::size_t ix = 0; ix < w; ++ix) {
                const double val = input[(ic * h + iy) * w + ix];
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const std::ptrdiff_t num_y =
                        static_cast<std::ptrdiff_t>(iy + conv.pad) - static_cast<std::ptrdiff_t>(ky);
                    if (num_y < 0 || num_y % static_cast<std::ptrdiff_t>(conv.stride) != 0) continue;
                    const std::size_t oy = static_cast<std::size_t>(num_y) / conv.stride;
                    if (oy >= oh) continue;
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::ptrdiff_t num_x = static_cast<std::ptrdiff_t>(ix + conv.pad) -
                                                     static_cast<std::ptrdiff_t>(kx);
                        if (num_x < 0 || num_x % static_cast<std::ptrdiff_t>(conv.stride) != 0)
                            continue;
                        const std::size_t ox = static_cast<std::size_t>(num_x) / conv.stride;
                        if (ox >= ow) continue;
                        for (std::size_t oc = 0; oc < cout; ++oc)
                            out[(oc * oh + oy) * ow + ox] +=
                                val * conv.weight[((oc * cin + ic) * k + ky) * k + kx];
                    }
                }
            }
        }
    }
    return out;
}

Tensor affinity_reference(const FeatureMap& test, const TemporalMemory& mem, AffinityKind kind) {
    const std::size_t nq = test.token_count();
    const std::size_t channels = test.channels();
    const std::size_t per_entry = mem.token_count();
    const std::size_t total = mem.size() * per_entry;
    const double scale = 1.0 / std::sqrt(static_cast<double>(channels));

    Tensor out({nq, total});
    std::vector<double> logits(total);
    for (std::size_t i = 0; i < nq; ++i) {
        std::size_t col = 0;
        for (const auto& e : mem.entries()) {
            for (std::size_t j = 0; j < per_entry; ++j, ++col) {
                double sim = 0.0;
                for (std::size_t c = 0; c < channels; ++c) {
                    const double a = test.tokens[i * channels + c];
                    const double b = e.key[j * channels + c];
                    if (kind == AffinityKind::Dot) sim += a * b;
                    else sim -= (a - b) * (a - b);
                }
                logits[col] = sim * scale;
            }
        }
        const double mx = *std::max_element(logits.begin(), logits.end());
        double denom = 0.0;
        for (double l : logits) denom += std::exp(l - mx);
        for (std::size_t j = 0; j < total; ++j) out[i * total + j] = std::exp(logits[j] - mx) / denom;
    }
    return out;
}

Tensor maxpool_reference(const TemporalMemory& mem) {
    const std::size_t n = mem.target_count();
    const std::size_t tokens = mem.token_count();
    const std::size_t cv = mem.value_channels();
    // Flatten each target's values into one (T*N) x Cv block, then scan.
    Tensor out({n, cv});
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> flat;
        flat.reserve(mem.size() * tokens * cv);
        for (const auto& e : mem.entries())
            flat.insert(flat.end(), e.values.data().begin() + j * tokens * cv,
                        e.values.data().begin() + (j + 1) * tokens * cv);
        for (std::size_t c = 0; c < cv; ++c) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < mem.size() * tokens; ++r) mx = std::max(mx, flat[r * cv + c]);
            out[j * cv + c] = mx;
        }
    }
    return out;
}

double boundary_f_reference(const TargetMasks& pred, const TargetMasks& gt, int target,
                            double tolerance) {
    if (tolerance <= 0.0) tolerance = default_boundary_tolerance(gt.height, gt.width);
    const auto pb = boundary_map(pred, target);
    const auto gb = boundary_map(gt, target);
    std::vector<std::pair<long, long>> ppix, gpix;
    for (std::size_t y = 0; y < gt.height; ++y)
        for (std::size_t x = 0; x < gt.width; ++x) {
            if (pb[y * gt.width + x]) ppix.emplace_back(y, x);
            if (gb[y * gt.width + x]) gpix.emplace_back(y, x);
        }
    if (ppix.empty() && gpix.empty()) return 1.0;
    if (ppix.empty() || gpix.empty()) return 0.0;

    const double tol2 = tolerance * tolerance;
    auto matched = [&](const auto& from, const auto& to) {
        std::size_t count = 0;
        for (const auto& [fy, fx] : from) {
            bool hit = false;
            for (const auto& [ty, tx] : to) {
                const double d2 = static_cast<double>((fy - ty) * (fy - ty) + (fx - tx) * (fx - tx));
                if (d2 <= tol2) {
                    hit = true;
                    break;
                }
            }
            count += hit;
        }
        return count;
    };
    const double precision =
        static_cast<double>(matched(ppix, gpix)) / static_cast<double>(ppix.size());
    const double recall = static_cast<double>(matched(gpix, ppix)) / static_cast<double>(gpix.size());
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

std::optional<std::size_t> LfuSimulator::insert(std::size_t frame) {
    double baseline = 0.0;
    if (!entries_.empty()) {
        for (const auto& [f, u] : entries_) baseline += u;
        baseline /= static_cast<double>(entries_.size());
    }
    if (!pinned_) pinned_ = frame;
    entries_.emplace_back(frame, baseline);
    if (entries_.size() <= capacity_) return std::nullopt;

    auto evictable = [&](const std::pair<std::size_t, double>& e) {
        return !(pin_first_ && pinned_ && e.first == *pinned_);
    };
    auto victim = entries_.end();
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
        if (!evictable(*it)) continue;
        if (victim == entries_.end() || it->second < victim->second ||
            (it->second == victim->second && it->first < victim->first))
            victim = it;
    }
    if (victim == entries_.end()) throw ContractError("lfu simulator: all entries pinned");
    const std::size_t evicted = victim->first;
    entries_.erase(victim);
    return evicted;
}

void LfuSimulator::touch(std::size_t position, double amount) {
    entries_.at(position).second += amount;
}

std::vector<double> central_difference(const LossFn& f, std::vector<Tensor> leaves,
                                       const std::vector<std::pair<std::size_t, std::size_t>>& coords,
                                       double step) {
    std::vector<double> grads;
    grads.reserve(coords.size());
    for (const auto& [leaf, elem] : coords) {
        const double orig = leaves[leaf][elem];
        leaves[leaf][elem] = orig + step;
        const double hi = f(leaves);
        leaves[leaf][elem] = orig - step;
        const double lo = f(leaves);
        leaves[leaf][elem] = orig;
        grads.push_back((hi - lo) / (2.0 * step));
    }
    return grads;
}

double relative_error(double a, double b, double floor) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

}  // namespace stma::oracle
