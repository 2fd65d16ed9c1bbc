#pragma once

#include "stma/conv.hpp"
#include "stma/image.hpp"
#include "stma/rng.hpp"
#include "stma/tensor.hpp"

namespace stma {

// Token features for one frame: {N, C} with N = grid_h * grid_w.
struct FeatureMap {
    Tensor tokens;  // {N, C}
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    std::size_t token_count() const { return tokens.rows(); }
    std::size_t channels() const { return tokens.cols(); }
};

// Patch embedding parameters: linear projection plus a fixed sinusoidal
// positional table over the flat token index.
struct EmbedConfig {
    std::size_t patch = 16;
    std::size_t channels = 64;
    Tensor projection;  // {3*P*P, C}
    Tensor positional;  // {N, C}
};

// Multi-scale stem features the decoder fuses.
struct SkipFeatures {
    Tensor quarter;  // {(H/4)*(W/4), C4} token layout
    std::size_t quarter_h = 0, quarter_w = 0;
    Tensor eighth;  // {(H/8)*(W/8), C8}
    std::size_t eighth_h = 0, eighth_w = 0;
};

struct ConvStemWeights {
    Conv2d conv1;  // 3 -> C4, stride 2
    Conv2d conv2;  // C4 -> C4, stride 2 (quarter output)
    Conv2d conv3;  // C4 -> C8, stride 2 (eighth output)
};

// Interleaved sin/cos over the flat index, frequency base 10000. C must be even.
Tensor sinusoidal_table(std::size_t positions, std::size_t channels);

EmbedConfig make_embed_config(std::size_t patch, std::size_t channels, std::size_t frame_h,
                              std::size_t frame_w, Rng& rng);
ConvStemWeights make_conv_stem(std::size_t c4, std::size_t c8, Rng& rng);

// Row i holds the row-major flattened P x P x 3 patch (pixel-major, RGB
// interleaved) at grid position (i / grid_w, i % grid_w).
Tensor patchify(const Frame& frame, std::size_t patch);
Frame unpatchify(const Tensor& patches, std::size_t patch, std::size_t frame_h, std::size_t frame_w);

// tokens = patchify(frame) * E + positional table.
FeatureMap embed(const Frame& frame, const EmbedConfig& cfg);

// Two strided conv stages to 1/4, one more to 1/8, ReLU between stages.
SkipFeatures conv_stem(const Frame& frame, const ConvStemWeights& w);

}  // namespace stma
