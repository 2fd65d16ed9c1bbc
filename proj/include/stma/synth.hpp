#pragma once

#include "stma/image.hpp"
#include "stma/rng.hpp"

#include <array>
#include <vector>

namespace stma {

enum class ShapeKind { Rectangle, Disk };

// Motion spec of one synthetic target. Positions wrap toroidally, so a
// target leaving one edge re-enters on the opposite side.
struct TargetSpec {
    ShapeKind kind = ShapeKind::Rectangle;
    long x0 = 0, y0 = 0;  // rect top-left / disk center at frame 0
    std::size_t extent_w = 8, extent_h = 8;  // rect dims
    std::size_t radius = 4;                  // disk radius
    long vx = 0, vy = 0;  // pixels per frame
    std::array<double, 3> color{0.5, 0.5, 0.5};
};

struct SequenceSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t length = 20;
    std::size_t targets = 2;
    std::uint64_t seed = 7;
};

struct SyntheticSequence {
    SequenceSpec spec;
    std::vector<TargetSpec> targets;
    std::vector<Frame> frames;
    std::vector<TargetMasks> masks;
};

// Analytic membership test: does target t cover pixel (y, x) at `frame`?
bool target_covers(const TargetSpec& t, const SequenceSpec& geo, std::size_t frame, std::size_t y,
                   std::size_t x);

// Deterministic given the seed. Masks are rendered from the same analytic
// membership test as the frames; z-order puts larger IDs in front.
SyntheticSequence generate_sequence(const SequenceSpec& spec);

}  // namespace stma
