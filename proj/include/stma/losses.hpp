#pragma once

#include "stma/autodiff.hpp"
#include "stma/image.hpp"
#include "stma/tensor.hpp"

#include <vector>

namespace stma {

// Dice loss with eps = 1: 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps).
// probs must lie in [0,1]; gt must be binary.
double dice_loss(const Tensor& probs, const Tensor& gt_binary);
Var dice_loss_var(Var probs, const Tensor& gt_binary);

// Indices of the keep_fraction hardest pixels (largest values first, ties
// broken toward the smaller pixel index). Shared by the plain and tape
// paths so both select identically.
std::vector<std::size_t> hardest_pixels(const std::vector<double>& nll, double keep_fraction);

// Bootstrapped cross entropy over per-pixel class probabilities
// {n+1, H, W} (plane 0 = background): mean NLL of the true ID over the
// keep_fraction hardest pixels. Probabilities must sum to 1 per pixel and
// be positive where the ground truth selects them.
double bootstrapped_ce(const Tensor& probs, const TargetMasks& gt, double keep_fraction);
// Tape form; probs is a {n+1, H*W} leaf (same flat layout).
Var bootstrapped_ce_var(Var probs, const TargetMasks& gt, double keep_fraction);

// 0.5 * bootstrapped CE + 0.5 * mean per-target dice.
double combined_loss(const Tensor& probs, const TargetMasks& gt, double keep_fraction);
Var combined_loss_var(Var probs, const TargetMasks& gt, double keep_fraction);

}  // namespace stma
