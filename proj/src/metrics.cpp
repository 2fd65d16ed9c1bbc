#include "stma/metrics.hpp"

#include "stma/tensor.hpp"

#include <cmath>

namespace stma {

namespace {

void require_same_geometry(const TargetMasks& a, const TargetMasks& b) {
    if (a.height != b.height || a.width != b.width)
        throw ContractError("mask geometry mismatch: " + std::to_string(a.height) + "x" +
                            std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                            std::to_string(b.width));
}

void require_valid_target(int target) {
    if (target < 1) throw ContractError("target IDs start at 1, got " + std::to_string(target));
}

}  // namespace

double region_similarity_j(const TargetMasks& pred, const TargetMasks& gt, int target) {
    require_same_geometry(pred, gt);
    require_valid_target(target);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.ids.size(); ++i) {
        const bool p = pred.ids[i] == target;
        const bool g = gt.ids[i] == target;
        inter += p && g;
        uni += p || g;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double default_boundary_tolerance(std::size_t height, std::size_t width) {
    const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
    return std::max(1.0, 0.008 * diag);
}

std::vector<std::uint8_t> boundary_map(const TargetMasks& m, int target) {
    std::vector<std::uint8_t> b(m.ids.size(), 0);
    for (std::size_t y = 0; y < m.height; ++y) {
        for (std::size_t x = 0; x < m.width; ++x) {
            if (m.at(y, x) != target) continue;
            const bool edge = y == 0 || x == 0 || y == m.height - 1 || x == m.width - 1;
            const bool exposed = edge || m.at(y - 1, x) != target || m.at(y + 1, x) != target ||
                                 m.at(y, x - 1) != target || m.at(y, x + 1) != target;
            if (exposed) b[y * m.width + x] = 1;
        }
    }
    return b;
}

namespace {

std::size_t count_matched(const std::vector<std::uint8_t>& from,
                          const std::vector<std::uint8_t>& to, std::size_t h, std::size_t w,
                          double tol) {
    const auto r = static_cast<std::ptrdiff_t>(std::floor(tol));
    const double tol2 = tol * tol;
    std::size_t matched = 0;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            if (!from[y * w + x]) continue;
            bool hit = false;
            for (std::ptrdiff_t dy = -r; dy <= r && !hit; ++dy) {
                const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + dy;
                if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                    const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + dx;
                    if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
                    if (static_cast<double>(dy * dy + dx * dx) > tol2) continue;
                    if (to[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)]) {
                        hit = true;
                        break;
                    }
                }
            }
            matched += hit;
        }
    }
    return matched;
}

}  // namespace

double contour_accuracy_f(const TargetMasks& pred, const TargetMasks& gt, int target,
                          double tolerance) {
    require_same_geometry(pred, gt);
    require_valid_target(target);
    if (tolerance <= 0.0) tolerance = default_boundary_tolerance(gt.height, gt.width);

    const auto pb = boundary_map(pred, target);
    const auto gb = boundary_map(gt, target);
    std::size_t np = 0, ng = 0;
    for (auto v : pb) np += v;
    for (auto v : gb) ng += v;
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;

    const std::size_t matched_p = count_matched(pb, gb, gt.height, gt.width, tolerance);
    const std::size_t matched_g = count_matched(gb, pb, gt.height, gt.width, tolerance);
    const double precision = static_cast<double>(matched_p) / static_cast<double>(np);
    const double recall = static_cast<double>(matched_g) / static_cast<double>(ng);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

EvalSummary summarize(const std::vector<FrameEval>& records) {
    EvalSummary s;
    if (records.empty()) return s;
    for (const auto& r : records) {
        s.mean_j += r.j;
        s.mean_f += r.f;
    }
    s.mean_j /= static_cast<double>(records.size());
    s.mean_f /= static_cast<double>(records.size());
    s.jf = (s.mean_j + s.mean_f) / 2.0;
    return s;
}

}  // namespace stma
