#include "stma/conv.hpp"

#include <cmath>

namespace stma {

Tensor Conv2d::apply(const Tensor& input) const {
    if (input.rank() != 3)
        throw DimensionError("conv input must be {C,H,W}, got " + shape_str(input.shape()));
    if (weight.rank() != 4)
        throw DimensionError("conv weight must be {Cout,Cin,K,K}, got " + shape_str(weight.shape()));
    const std::size_t cin = input.shape()[0];
    const std::size_t h = input.shape()[1];
    const std::size_t w = input.shape()[2];
    const std::size_t cout = weight.shape()[0];
    const std::size_t k = weight.shape()[2];
    if (weight.shape()[1] != cin)
        throw DimensionError("conv channel mismatch: input " + shape_str(input.shape()) +
                             " vs weight " + shape_str(weight.shape()));
    if (bias.size() != cout)
        throw DimensionError("conv bias size mismatch: " + shape_str(bias.shape()));

    const std::size_t oh = (h + 2 * pad - k) / stride + 1;
    const std::size_t ow = (w + 2 * pad - k) / stride + 1;
    Tensor out({cout, oh, ow});
    for (std::size_t oc = 0; oc < cout; ++oc) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = bias[oc];
                for (std::size_t ic = 0; ic < cin; ++ic) {
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            acc += weight[((oc * cin + ic) * k + ky) * k + kx] *
                                   input[(ic * h + static_cast<std::size_t>(iy)) * w +
                                         static_cast<std::size_t>(ix)];
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    return out;
}

Tensor tokens_to_grid(const Tensor& tokens, std::size_t gh, std::size_t gw) {
    if (tokens.rows() != gh * gw)
        throw DimensionError("token count " + std::to_string(tokens.rows()) + " != grid " +
                             std::to_string(gh) + "x" + std::to_string(gw));
    const std::size_t c = tokens.cols();
    Tensor grid({c, gh, gw});
    for (std::size_t i = 0; i < gh * gw; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) grid[(ch * gh + i / gw) * gw + i % gw] = tokens[i * c + ch];
    return grid;
}

Tensor grid_to_tokens(const Tensor& grid) {
    if (grid.rank() != 3)
        throw DimensionError("grid_to_tokens expects {C,H,W}, got " + shape_str(grid.shape()));
    const std::size_t c = grid.shape()[0], gh = grid.shape()[1], gw = grid.shape()[2];
    Tensor tokens({gh * gw, c});
    for (std::size_t i = 0; i < gh * gw; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) tokens[i * c + ch] = grid[(ch * gh + i / gw) * gw + i % gw];
    return tokens;
}

Tensor upsample_nearest2x(const Tensor& grid) {
    if (grid.rank() != 3)
        throw DimensionError("upsample expects {C,H,W}, got " + shape_str(grid.shape()));
    const std::size_t c = grid.shape()[0], h = grid.shape()[1], w = grid.shape()[2];
    Tensor out({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t x = 0; x < 2 * w; ++x)
                out[(ch * 2 * h + y) * 2 * w + x] = grid[(ch * h + y / 2) * w + x / 2];
    return out;
}

Tensor upsample_bilinear(const Tensor& grid, std::size_t factor) {
    if (grid.rank() != 3)
        throw DimensionError("upsample expects {C,H,W}, got " + shape_str(grid.shape()));
    const std::size_t c = grid.shape()[0], h = grid.shape()[1], w = grid.shape()[2];
    const std::size_t oh = h * factor, ow = w * factor;
    Tensor out({c, oh, ow});
    const double s = 1.0 / static_cast<double>(factor);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < oh; ++y) {
            const double sy = (static_cast<double>(y) + 0.5) * s - 0.5;
            const double fy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            const std::size_t y0 = static_cast<std::size_t>(fy);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double wy = fy - static_cast<double>(y0);
            for (std::size_t x = 0; x < ow; ++x) {
                const double sx = (static_cast<double>(x) + 0.5) * s - 0.5;
                const double fx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
                const std::size_t x0 = static_cast<std::size_t>(fx);
                const std::size_t x1 = std::min(x0 + 1, w - 1);
                const double wx = fx - static_cast<double>(x0);
                const double v00 = grid[(ch * h + y0) * w + x0];
                const double v01 = grid[(ch * h + y0) * w + x1];
                const double v10 = grid[(ch * h + y1) * w + x0];
                const double v11 = grid[(ch * h + y1) * w + x1];
                out[(ch * oh + y) * ow + x] =
                    (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11);
            }
        }
    }
    return out;
}

}  // namespace stma
