#pragma once

#include "stma/image.hpp"

#include <vector>

namespace stma {

// Region similarity J: intersection-over-union of target j's binary masks.
// Defined as 1 when both masks are empty.
double region_similarity_j(const TargetMasks& pred, const TargetMasks& gt, int target);

// DAVIS-style boundary tolerance: 0.8% of the image diagonal, floor 1 px.
double default_boundary_tolerance(std::size_t height, std::size_t width);

// Boundary bitmap of target j: mask pixels with a non-target 4-neighbor or
// on the image edge.
std::vector<std::uint8_t> boundary_map(const TargetMasks& m, int target);

// Contour accuracy F: boundary-matching F-measure within the tolerance
// radius. 1 when both boundaries are empty, 0 when exactly one is.
// tolerance <= 0 selects the default.
double contour_accuracy_f(const TargetMasks& pred, const TargetMasks& gt, int target,
                          double tolerance = 0.0);

struct FrameEval {
    std::size_t frame = 0;
    int target = 0;
    double j = 0.0;
    double f = 0.0;
};

struct EvalSummary {
    double mean_j = 0.0;
    double mean_f = 0.0;
    double jf = 0.0;  // (mean_j + mean_f) / 2, exactly
};

EvalSummary summarize(const std::vector<FrameEval>& records);

}  // namespace stma
