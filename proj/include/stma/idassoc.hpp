#pragma once

#include "stma/conv.hpp"
#include "stma/embed.hpp"
#include "stma/image.hpp"
#include "stma/memory.hpp"
#include "stma/rng.hpp"
#include "stma/tensor.hpp"

#include <string>
#include <utility>

namespace stma {

// Row-stochastic query-key weights between test tokens and all memory keys.
struct AffinityMatrix {
    Tensor weights;  // {N, T*N}
};

enum class AffinityKind { Dot, L2 };

AffinityKind affinity_kind_from_string(const std::string& s);

struct AffinityResult {
    AffinityMatrix affinity;
    UsageUpdate usage;  // column mass per entry, feeds TemporalMemory::touch
};

// Scaled similarity between test tokens and every memory key token,
// softmax-normalized per test token. Dot is the default; L2 uses the
// negated squared distance with the same scaling.
AffinityResult affinity(const FeatureMap& test, const TemporalMemory& mem,
                        AffinityKind kind = AffinityKind::Dot);

// Per-target readout: affinity times the concatenated ID values.
struct ReadoutFeatures {
    Tensor per_target;  // {n, N, Cv}
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;
};

ReadoutFeatures readout(const AffinityMatrix& aff, const TemporalMemory& mem, std::size_t grid_h,
                        std::size_t grid_w);

struct ResidualStage {
    Conv2d conv1;  // 3x3 pad 1
    Conv2d conv2;  // 3x3 pad 1
    Tensor apply(const Tensor& grid) const;
};

struct DecoderWeights {
    ResidualStage stage16;
    Conv2d skip_eighth;   // 1x1 projection of the 1/8 skip
    ResidualStage stage8;
    Conv2d skip_quarter;  // 1x1 projection of the 1/4 skip
    Conv2d head;          // 3x3 to a single logit channel
};

DecoderWeights make_decoder(std::size_t value_channels, std::size_t c4, std::size_t c8, Rng& rng);

// Shared-weight per-target decoding: residual stage, 2x upsample, skip
// fusion (twice), head at 1/4 resolution, then bilinear 4x. Returns
// {n, H, W} logits.
Tensor decode(const ReadoutFeatures& readout, const SkipFeatures& skips, const DecoderWeights& w);

// Soft aggregation: sigmoid per target, product background, renormalize.
// Ties in the argmax go to the smaller ID.
struct Aggregated {
    TargetMasks masks;
    Tensor probabilities;  // {n+1, H, W}, plane 0 = background
};

Aggregated aggregate(const Tensor& logits);

}  // namespace stma
