#include "stma/synth.hpp"

#include "stma/tensor.hpp"

namespace stma {

namespace {

long wrap(long a, long m) { return ((a % m) + m) % m; }

constexpr double kBackground = 0.12;

}  // namespace

bool target_covers(const TargetSpec& t, const SequenceSpec& geo, std::size_t frame, std::size_t y,
                   std::size_t x) {
    const long w = static_cast<long>(geo.width);
    const long h = static_cast<long>(geo.height);
    const long k = static_cast<long>(frame);
    if (t.kind == ShapeKind::Rectangle) {
        const long u = wrap(static_cast<long>(x) - t.x0 - k * t.vx, w);
        const long v = wrap(static_cast<long>(y) - t.y0 - k * t.vy, h);
        return u < static_cast<long>(t.extent_w) && v < static_cast<long>(t.extent_h);
    }
    // Disk: signed toroidal offsets from the moving center.
    const long du = wrap(static_cast<long>(x) - t.x0 - k * t.vx + w / 2, w) - w / 2;
    const long dv = wrap(static_cast<long>(y) - t.y0 - k * t.vy + h / 2, h) - h / 2;
    const long r = static_cast<long>(t.radius);
    return du * du + dv * dv <= r * r;
}

SyntheticSequence generate_sequence(const SequenceSpec& spec) {
    if (spec.targets == 0) throw ContractError("sequence needs at least one target");
    const std::size_t max_extent = std::min(spec.height, spec.width) / 3;
    if (max_extent < 4)
        throw ContractError("frame too small for targets: " + std::to_string(spec.height) + "x" +
                            std::to_string(spec.width));

    SyntheticSequence seq;
    seq.spec = spec;
    Rng rng(spec.seed);
    std::uniform_int_distribution<long> pos_x(0, static_cast<long>(spec.width) - 1);
    std::uniform_int_distribution<long> pos_y(0, static_cast<long>(spec.height) - 1);
    std::uniform_int_distribution<std::size_t> extent(4, max_extent);
    std::uniform_int_distribution<long> vel(-3, 3);
    std::uniform_real_distribution<double> channel(0.25, 1.0);
    std::uniform_int_distribution<int> kind(0, 1);

    for (std::size_t j = 0; j < spec.targets; ++j) {
        TargetSpec t;
        t.kind = kind(rng) == 0 ? ShapeKind::Rectangle : ShapeKind::Disk;
        t.x0 = pos_x(rng);
        t.y0 = pos_y(rng);
        t.extent_w = extent(rng);
        t.extent_h = extent(rng);
        t.radius = std::max<std::size_t>(2, extent(rng) / 2);
        t.vx = vel(rng);
        t.vy = vel(rng);
        t.color = {channel(rng), channel(rng), channel(rng)};
        seq.targets.push_back(t);
    }

    seq.frames.reserve(spec.length);
    seq.masks.reserve(spec.length);
    for (std::size_t k = 0; k < spec.length; ++k) {
        Frame f = Frame::zeros(spec.height, spec.width);
        TargetMasks m = TargetMasks::background(spec.height, spec.width);
        for (std::size_t y = 0; y < spec.height; ++y) {
            for (std::size_t x = 0; x < spec.width; ++x) {
                int top = 0;
                for (std::size_t j = 0; j < spec.targets; ++j)
                    if (target_covers(seq.targets[j], spec, k, y, x)) top = static_cast<int>(j) + 1;
                m.at(y, x) = top;
                for (std::size_t c = 0; c < 3; ++c)
                    f.at(c, y, x) = top == 0 ? kBackground : seq.targets[top - 1].color[c];
            }
        }
        seq.frames.push_back(std::move(f));
        seq.masks.push_back(std::move(m));
    }
    return seq;
}

}  // namespace stma
