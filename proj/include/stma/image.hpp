#pragma once

#include "stma/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace stma {

// One RGB frame, channel-major {3, H, W}, values in [0,1].
struct Frame {
    std::size_t height = 0;
    std::size_t width = 0;
    Tensor pixels;  // shape {3, H, W}

    static Frame zeros(std::size_t h, std::size_t w) {
        return Frame{h, w, Tensor::zeros({3, h, w})};
    }
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return pixels[(c * height + y) * width + x];
    }
    double& at(std::size_t c, std::size_t y, std::size_t x) {
        return pixels[(c * height + y) * width + x];
    }
};

// Per-pixel target IDs, 0 = background. Mutually exclusive by construction.
struct TargetMasks {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<int> ids;  // row-major H*W

    static TargetMasks background(std::size_t h, std::size_t w) {
        return TargetMasks{h, w, std::vector<int>(h * w, 0)};
    }
    int at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
    int& at(std::size_t y, std::size_t x) { return ids[y * width + x]; }
    int max_id() const;
    // {H, W} tensor, 1.0 where ids == target, else 0.0.
    Tensor binary_plane(int target) const;
};

// Zero-pads bottom/right so both dims are multiples of `multiple`.
Frame pad_frame(const Frame& f, std::size_t multiple);
// Pads with background (ID 0).
TargetMasks pad_masks(const TargetMasks& m, std::size_t multiple);

// Readers dispatch on extension: .ppm/.pgm (binary P6/P5) and .png.
// Frames are scaled to [0,1] by /255.
Frame load_frame(const std::string& path);
void save_frame(const std::string& path, const Frame& f);

// Mask images are 8-bit single channel, pixel value = target ID.
TargetMasks load_masks(const std::string& path);
void save_masks(const std::string& path, const TargetMasks& m);

// Raw byte-level helpers shared by the loaders (also used in tests).
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace stma
