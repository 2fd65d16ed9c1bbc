#pragma once

// Independent reference implementations used only for verification: the
// checks in verify_all() and the test suites compare the production paths
// against these. Nothing here is called by the model itself.

#include "stma/conv.hpp"
#include "stma/idassoc.hpp"
#include "stma/image.hpp"
#include "stma/memory.hpp"
#include "stma/stml.hpp"
#include "stma/tensor.hpp"

#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace stma::oracle {

// Naive triple loop in k-outer order (different accumulation order from the
// production kernel).
Tensor matmul_reference(const Tensor& a, const Tensor& b);

// Generic multi-head self-attention over one token matrix, written as
// straight per-row loops. Output-projected, no residual.
Tensor mha_self_attention_reference(const Tensor& x, const StmlBlockWeights& w);

// Scatter-order convolution: iterates input pixels and distributes them to
// the outputs they touch.
Tensor conv2d_reference(const Tensor& input, const Conv2d& conv);

// Brute-force pairwise similarities plus a locally written softmax.
Tensor affinity_reference(const FeatureMap& test, const TemporalMemory& mem, AffinityKind kind);

// Max over the flattened (T*N) x Cv block per target (pre-projection).
Tensor maxpool_reference(const TemporalMemory& mem);

// Boundary F-measure by exhaustive O(|B_pred| * |B_gt|) matching.
double boundary_f_reference(const TargetMasks& pred, const TargetMasks& gt, int target,
                            double tolerance);

// Policy-only LFU model mirroring TemporalMemory's eviction rules.
class LfuSimulator {
public:
    LfuSimulator(std::size_t capacity, bool pin_first) : capacity_(capacity), pin_first_(pin_first) {}

    std::optional<std::size_t> insert(std::size_t frame);
    void touch(std::size_t position, double amount);
    std::size_t size() const { return entries_.size(); }
    const std::vector<std::pair<std::size_t, double>>& entries() const { return entries_; }

private:
    std::size_t capacity_;
    bool pin_first_;
    std::optional<std::size_t> pinned_;
    std::vector<std::pair<std::size_t, double>> entries_;  // (frame, usage)
};

// Central finite differences of f at the given (leaf, flat-element)
// coordinates. f re-evaluates the computation from perturbed leaves.
using LossFn = std::function<double(const std::vector<Tensor>&)>;
std::vector<double> central_difference(const LossFn& f, std::vector<Tensor> leaves,
                                       const std::vector<std::pair<std::size_t, std::size_t>>& coords,
                                       double step);

// |a-b| over a floored magnitude so finite-difference noise on near-zero
// gradients does not dominate.
double relative_error(double a, double b, double floor = 1e-3);

}  // namespace stma::oracle
