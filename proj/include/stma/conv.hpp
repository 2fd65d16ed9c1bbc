#pragma once

#include "stma/tensor.hpp"

namespace stma {

// Plain dense 2-D convolution over channel-major {C, H, W} grids.
// Deterministic gather loop, no im2col.
struct Conv2d {
    Tensor weight;  // {Cout, Cin, K, K}
    Tensor bias;    // {Cout}
    std::size_t stride = 1;
    std::size_t pad = 0;

    Tensor apply(const Tensor& input) const;
};

// Token matrix {gh*gw, C} <-> channel-major grid {C, gh, gw}.
// Token i maps to grid position (i / gw, i % gw).
Tensor tokens_to_grid(const Tensor& tokens, std::size_t gh, std::size_t gw);
Tensor grid_to_tokens(const Tensor& grid);

// 2x nearest-neighbor upsampling of a {C, H, W} grid.
Tensor upsample_nearest2x(const Tensor& grid);
// Bilinear upsampling by an integer factor (half-pixel centers, no corner
// alignment), used for the final logit expansion.
Tensor upsample_bilinear(const Tensor& grid, std::size_t factor);

}  // namespace stma
