#include "stma/idassoc.hpp"

#include <cmath>

namespace stma {

AffinityKind affinity_kind_from_string(const std::string& s) {
    if (s == "dot") return AffinityKind::Dot;
    if (s == "l2") return AffinityKind::L2;
    throw ContractError("unknown affinity kind: " + s);
}

AffinityResult affinity(const FeatureMap& test, const TemporalMemory& mem, AffinityKind kind) {
    if (mem.size() == 0) throw ContractError("affinity over empty temporal memory");
    const std::size_t n_query = test.token_count();
    const std::size_t channels = test.channels();
    const std::size_t per_entry = mem.token_count();
    if (per_entry != n_query || mem.entries().front().key.cols() != channels)
        throw DimensionError("affinity shape mismatch: test " + shape_str(test.tokens.shape()) +
                             " vs memory key " + shape_str(mem.entries().front().key.shape()));

    const std::size_t total = mem.size() * per_entry;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(channels));
    Tensor logits({n_query, total});
    std::size_t col = 0;
    for (const auto& e : mem.entries()) {
        for (std::size_t i = 0; i < n_query; ++i) {
            for (std::size_t j = 0; j < per_entry; ++j) {
                double v = 0.0;
                if (kind == AffinityKind::Dot) {
                    for (std::size_t c = 0; c < channels; ++c)
                        v += test.tokens[i * channels + c] * e.key[j * channels + c];
                } else {
                    for (std::size_t c = 0; c < channels; ++c) {
                        const double dlt = test.tokens[i * channels + c] - e.key[j * channels + c];
                        v -= dlt * dlt;
                    }
                }
                logits[i * total + col + j] = v * inv_sqrt_c;
            }
        }
        col += per_entry;
    }
    AffinityResult res;
    res.affinity.weights = softmax_rows(logits);
    res.usage.increments.assign(mem.size(), 0.0);
    for (std::size_t e = 0; e < mem.size(); ++e) {
        double mass = 0.0;
        for (std::size_t i = 0; i < n_query; ++i)
            for (std::size_t j = 0; j < per_entry; ++j)
                mass += res.affinity.weights[i * total + e * per_entry + j];
        res.usage.increments[e] = mass;
    }
    return res;
}

ReadoutFeatures readout(const AffinityMatrix& aff, const TemporalMemory& mem, std::size_t grid_h,
                        std::size_t grid_w) {
    if (mem.size() == 0) throw ContractError("readout over empty temporal memory");
    const std::size_t n = mem.target_count();
    const std::size_t per_entry = mem.token_count();
    const std::size_t cv = mem.value_channels();
    const std::size_t total = mem.size() * per_entry;
    if (aff.weights.cols() != total)
        throw DimensionError("affinity " + shape_str(aff.weights.shape()) + " does not cover " +
                             std::to_string(total) + " memory tokens");
    const std::size_t n_query = aff.weights.rows();

    ReadoutFeatures out;
    out.grid_h = grid_h;
    out.grid_w = grid_w;
    out.per_target = Tensor({n, n_query, cv});
    for (std::size_t j = 0; j < n; ++j) {
        // Concatenate target j's values across entries, then one matmul.
        Tensor vals({total, cv});
        std::size_t row = 0;
        for (const auto& e : mem.entries()) {
            std::copy(e.values.data().begin() + j * per_entry * cv,
                      e.values.data().begin() + (j + 1) * per_entry * cv,
                      vals.data().begin() + row * cv);
            row += per_entry;
        }
        Tensor r = matmul(aff.weights, vals);
        std::copy(r.data().begin(), r.data().end(),
                  out.per_target.data().begin() + j * n_query * cv);
    }
    return out;
}

Tensor ResidualStage::apply(const Tensor& grid) const {
    return add(grid, conv2.apply(relu(conv1.apply(grid))));
}

DecoderWeights make_decoder(std::size_t value_channels, std::size_t c4, std::size_t c8, Rng& rng) {
    auto conv = [&](std::size_t cout, std::size_t cin, std::size_t k) {
        Conv2d c;
        c.weight = random_normal({cout, cin, k, k}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cin * k * k)));
        c.bias = Tensor::zeros({cout});
        c.stride = 1;
        c.pad = k / 2;
        return c;
    };
    DecoderWeights w;
    w.stage16 = ResidualStage{conv(value_channels, value_channels, 3),
                              conv(value_channels, value_channels, 3)};
    w.skip_eighth = conv(value_channels, c8, 1);
    w.stage8 = ResidualStage{conv(value_channels, value_channels, 3),
                             conv(value_channels, value_channels, 3)};
    w.skip_quarter = conv(value_channels, c4, 1);
    w.head = conv(1, value_channels, 3);
    return w;
}

Tensor decode(const ReadoutFeatures& readout, const SkipFeatures& skips, const DecoderWeights& w) {
    const std::size_t n = readout.per_target.shape()[0];
    const std::size_t n_tokens = readout.per_target.shape()[1];
    const std::size_t cv = readout.per_target.shape()[2];
    if (readout.grid_h * readout.grid_w != n_tokens)
        throw DimensionError("readout grid " + std::to_string(readout.grid_h) + "x" +
                             std::to_string(readout.grid_w) + " does not cover " +
                             std::to_string(n_tokens) + " tokens");
    if (skips.eighth_h != 2 * readout.grid_h || skips.quarter_h != 4 * readout.grid_h)
        throw DimensionError("skip features do not match a 1/16 -> 1/4 upsampling path");

    Tensor eighth_grid = w.skip_eighth.apply(tokens_to_grid(skips.eighth, skips.eighth_h, skips.eighth_w));
    Tensor quarter_grid =
        w.skip_quarter.apply(tokens_to_grid(skips.quarter, skips.quarter_h, skips.quarter_w));

    const std::size_t out_h = readout.grid_h * 16;
    const std::size_t out_w = readout.grid_w * 16;
    Tensor logits({n, out_h, out_w});
    for (std::size_t j = 0; j < n; ++j) {
        Tensor tokens({n_tokens, cv});
        std::copy(readout.per_target.data().begin() + j * n_tokens * cv,
                  readout.per_target.data().begin() + (j + 1) * n_tokens * cv,
                  tokens.data().begin());
        Tensor x = tokens_to_grid(tokens, readout.grid_h, readout.grid_w);
        x = w.stage16.apply(x);
        x = upsample_nearest2x(x);
        x = add(x, eighth_grid);
        x = w.stage8.apply(x);
        x = upsample_nearest2x(x);
        x = add(x, quarter_grid);
        Tensor quarter_logit = w.head.apply(x);       // {1, H/4, W/4}
        Tensor full = upsample_bilinear(quarter_logit, 4);  // {1, H, W}
        std::copy(full.data().begin(), full.data().end(),
                  logits.data().begin() + j * out_h * out_w);
    }
    return logits;
}

Aggregated aggregate(const Tensor& logits) {
    if (logits.rank() != 3)
        throw DimensionError("aggregate expects {n,H,W} logits, got " + shape_str(logits.shape()));
    const std::size_t n = logits.shape()[0];
    const std::size_t h = logits.shape()[1];
    const std::size_t w = logits.shape()[2];
    if (n == 0) throw ContractError("aggregate needs n >= 1");

    Aggregated out;
    out.masks = TargetMasks::background(h, w);
    out.probabilities = Tensor({n + 1, h, w});
    // Reductions over targets are canonical so relabeling targets permutes
    // the output planes bit-exactly.
    std::vector<double> terms(n);
    std::vector<double> sum_terms(n + 1);
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t j = 0; j < n; ++j) {
            const double s = 1.0 / (1.0 + std::exp(-logits[j * h * w + p]));
            out.probabilities[(j + 1) * h * w + p] = s;
            terms[j] = 1.0 - s;
        }
        const double bg = canonical_product(terms);
        out.probabilities[p] = bg;
        sum_terms[0] = bg;
        for (std::size_t j = 0; j < n; ++j) sum_terms[j + 1] = out.probabilities[(j + 1) * h * w + p];
        const double denom = canonical_sum(sum_terms);
        int best = 0;
        double best_p = 0.0;
        for (std::size_t j = 0; j <= n; ++j) {
            const double v = out.probabilities[j * h * w + p] / denom;
            out.probabilities[j * h * w + p] = v;
            if (v > best_p) {
                best_p = v;
                best = static_cast<int>(j);
            }
        }
        out.masks.ids[p] = best;
    }
    return out;
}

}  // namespace stma
