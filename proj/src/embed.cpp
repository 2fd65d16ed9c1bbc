#include "stma/embed.hpp"

#include <cmath>

namespace stma {

Tensor sinusoidal_table(std::size_t positions, std::size_t channels) {
    if (channels % 2 != 0)
        throw ContractError("sinusoidal table needs even channel count, got " +
                            std::to_string(channels));
    Tensor table({positions, channels});
    for (std::size_t p = 0; p < positions; ++p) {
        for (std::size_t i = 0; i < channels / 2; ++i) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(channels));
            const double angle = static_cast<double>(p) * freq;
            table[p * channels + 2 * i] = std::sin(angle);
            table[p * channels + 2 * i + 1] = std::cos(angle);
        }
    }
    return table;
}

EmbedConfig make_embed_config(std::size_t patch, std::size_t channels, std::size_t frame_h,
                              std::size_t frame_w, Rng& rng) {
    if (frame_h % patch != 0 || frame_w % patch != 0)
        throw ContractError("frame " + std::to_string(frame_h) + "x" + std::to_string(frame_w) +
                            " not divisible by patch " + std::to_string(patch));
    const std::size_t n = (frame_h / patch) * (frame_w / patch);
    const std::size_t d = 3 * patch * patch;
    EmbedConfig cfg;
    cfg.patch = patch;
    cfg.channels = channels;
    cfg.projection = random_normal({d, channels}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    cfg.positional = sinusoidal_table(n, channels);
    return cfg;
}

ConvStemWeights make_conv_stem(std::size_t c4, std::size_t c8, Rng& rng) {
    auto conv = [&](std::size_t cout, std::size_t cin) {
        Conv2d c;
        c.weight = random_normal({cout, cin, 3, 3}, rng,
                                 1.0 / std::sqrt(static_cast<double>(cin * 9)));
        c.bias = Tensor::zeros({cout});
        c.stride = 2;
        c.pad = 1;
        return c;
    };
    return ConvStemWeights{conv(c4, 3), conv(c4, c4), conv(c8, c4)};
}

Tensor patchify(const Frame& frame, std::size_t patch) {
    if (frame.height % patch != 0 || frame.width % patch != 0)
        throw ContractError("frame " + std::to_string(frame.height) + "x" +
                            std::to_string(frame.width) + " not divisible by patch " +
                            std::to_string(patch));
    const std::size_t gh = frame.height / patch;
    const std::size_t gw = frame.width / patch;
    const std::size_t d = 3 * patch * patch;
    Tensor out({gh * gw, d});
    for (std::size_t i = 0; i < gh * gw; ++i) {
        const std::size_t y0 = (i / gw) * patch;
        const std::size_t x0 = (i % gw) * patch;
        for (std::size_t py = 0; py < patch; ++py)
            for (std::size_t px = 0; px < patch; ++px)
                for (std::size_t c = 0; c < 3; ++c)
                    out[i * d + (py * patch + px) * 3 + c] = frame.at(c, y0 + py, x0 + px);
    }
    return out;
}

Frame unpatchify(const Tensor& patches, std::size_t patch, std::size_t frame_h,
                 std::size_t frame_w) {
    const std::size_t gh = frame_h / patch;
    const std::size_t gw = frame_w / patch;
    const std::size_t d = 3 * patch * patch;
    if (patches.rows() != gh * gw || patches.cols() != d)
        throw DimensionError("unpatchify shape " + shape_str(patches.shape()) +
                             " inconsistent with frame " + std::to_string(frame_h) + "x" +
                             std::to_string(frame_w));
    Frame f = Frame::zeros(frame_h, frame_w);
    for (std::size_t i = 0; i < gh * gw; ++i) {
        const std::size_t y0 = (i / gw) * patch;
        const std::size_t x0 = (i % gw) * patch;
        for (std::size_t py = 0; py < patch; ++py)
            for (std::size_t px = 0; px < patch; ++px)
                for (std::size_t c = 0; c < 3; ++c)
                    f.at(c, y0 + py, x0 + px) = patches[i * d + (py * patch + px) * 3 + c];
    }
    return f;
}

FeatureMap embed(const Frame& frame, const EmbedConfig& cfg) {
    const std::size_t gh = frame.height / cfg.patch;
    const std::size_t gw = frame.width / cfg.patch;
    Tensor patches = patchify(frame, cfg.patch);
    if (patches.cols() != cfg.projection.rows() || cfg.positional.rows() != gh * gw ||
        cfg.positional.cols() != cfg.channels)
        throw DimensionError("embed config does not match frame geometry: patches " +
                             shape_str(patches.shape()) + ", projection " +
                             shape_str(cfg.projection.shape()) + ", positional " +
                             shape_str(cfg.positional.shape()));
    return FeatureMap{add(matmul(patches, cfg.projection), cfg.positional), gh, gw};
}

SkipFeatures conv_stem(const Frame& frame, const ConvStemWeights& w) {
    if (frame.height % 8 != 0 || frame.width % 8 != 0)
        throw ContractError("conv_stem needs dims divisible by 8, got " +
                            std::to_string(frame.height) + "x" + std::to_string(frame.width));
    Tensor x1 = w.conv1.apply(frame.pixels);
    Tensor quarter = w.conv2.apply(relu(x1));
    Tensor eighth = w.conv3.apply(relu(quarter));
    SkipFeatures s;
    s.quarter_h = quarter.shape()[1];
    s.quarter_w = quarter.shape()[2];
    s.quarter = grid_to_tokens(quarter);
    s.eighth_h = eighth.shape()[1];
    s.eighth_w = eighth.shape()[2];
    s.eighth = grid_to_tokens(eighth);
    return s;
}

}  // namespace stma
