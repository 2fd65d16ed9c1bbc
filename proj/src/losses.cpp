#include "stma/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace stma {

namespace {

void check_probs_range(const Tensor& probs) {
    for (double v : probs.data())
        if (!(v >= 0.0 && v <= 1.0))
            throw ContractError("probabilities must lie in [0,1], got " + std::to_string(v));
}

void check_binary(const Tensor& gt) {
    for (double v : gt.data())
        if (v != 0.0 && v != 1.0)
            throw ContractError("ground truth must be binary, got " + std::to_string(v));
}

constexpr double kDiceEps = 1.0;

}  // namespace

double dice_loss(const Tensor& probs, const Tensor& gt_binary) {
    if (!probs.same_shape(gt_binary))
        throw DimensionError("dice shapes disagree: " + shape_str(probs.shape()) + " vs " +
                             shape_str(gt_binary.shape()));
    check_probs_range(probs);
    check_binary(gt_binary);
    double spg = 0.0, sp = 0.0, sg = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        spg += probs[i] * gt_binary[i];
        sp += probs[i];
        sg += gt_binary[i];
    }
    const double num = 2.0 * spg + kDiceEps;
    const double den = (sp + sg) + kDiceEps;
    return 1.0 - num * (1.0 / den);
}

Var dice_loss_var(Var probs, const Tensor& gt_binary) {
    Tape* tape = probs.tape;
    check_probs_range(tape->value(probs));
    check_binary(gt_binary);
    Var g = tape->leaf(gt_binary);
    Var eps = tape->constant(kDiceEps);
    Var num = ad_add(ad_scale(ad_sum(ad_mul(probs, g)), 2.0), eps);
    Var den = ad_add(ad_add(ad_sum(probs), ad_sum(g)), eps);
    Var ratio = ad_mul(num, ad_reciprocal(den));
    return ad_sub(tape->constant(1.0), ratio);
}

std::vector<std::size_t> hardest_pixels(const std::vector<double>& nll, double keep_fraction) {
    if (keep_fraction <= 0.0 || keep_fraction > 1.0)
        throw ContractError("keep_fraction must be in (0,1]");
    const std::size_t total = nll.size();
    std::size_t keep = static_cast<std::size_t>(
        std::ceil(keep_fraction * static_cast<double>(total)));
    keep = std::min(std::max<std::size_t>(keep, 1), total);
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (nll[a] != nll[b]) return nll[a] > nll[b];
        return a < b;
    });
    order.resize(keep);
    return order;
}

namespace {

struct CeLayout {
    std::size_t planes = 0;
    std::size_t pixels = 0;
    std::vector<std::size_t> true_index;  // flat index of the true-class prob per pixel
};

CeLayout ce_layout(const Tensor& probs, const TargetMasks& gt) {
    CeLayout lo;
    if (probs.rank() < 2)
        throw DimensionError("cross entropy expects {n+1, ...} probabilities, got " +
                             shape_str(probs.shape()));
    lo.planes = probs.shape().front();
    lo.pixels = probs.size() / lo.planes;
    if (lo.pixels != gt.ids.size())
        throw DimensionError("probability grid covers " + std::to_string(lo.pixels) +
                             " pixels, masks have " + std::to_string(gt.ids.size()));
    if (gt.max_id() >= static_cast<int>(lo.planes))
        throw ContractError("mask ID " + std::to_string(gt.max_id()) + " has no probability plane");
    // Tolerance admits finite-difference probes of single coordinates.
    for (std::size_t p = 0; p < lo.pixels; ++p) {
        double sum = 0.0;
        for (std::size_t j = 0; j < lo.planes; ++j) sum += probs[j * lo.pixels + p];
        if (std::abs(sum - 1.0) > 1e-4)
            throw ContractError("pixel probabilities must sum to 1, got " + std::to_string(sum));
    }
    lo.true_index.resize(lo.pixels);
    for (std::size_t p = 0; p < lo.pixels; ++p)
        lo.true_index[p] = static_cast<std::size_t>(gt.ids[p]) * lo.pixels + p;
    return lo;
}

}  // namespace

double bootstrapped_ce(const Tensor& probs, const TargetMasks& gt, double keep_fraction) {
    const CeLayout lo = ce_layout(probs, gt);
    std::vector<double> nll(lo.pixels);
    for (std::size_t p = 0; p < lo.pixels; ++p) nll[p] = -std::log(probs[lo.true_index[p]]);
    const auto sel = hardest_pixels(nll, keep_fraction);
    double acc = 0.0;
    for (std::size_t idx : sel) acc += nll[idx];
    return acc / static_cast<double>(sel.size());
}

Var bootstrapped_ce_var(Var probs, const TargetMasks& gt, double keep_fraction) {
    Tape* tape = probs.tape;
    const CeLayout lo = ce_layout(tape->value(probs), gt);
    Var picked = ad_select_flat(probs, lo.true_index);
    Var nll = ad_scale(ad_log(picked), -1.0);
    const Tensor& nll_val = tape->value(nll);
    const auto sel = hardest_pixels({nll_val.data().begin(), nll_val.data().end()}, keep_fraction);
    return ad_mean(ad_select_flat(nll, sel));
}

double combined_loss(const Tensor& probs, const TargetMasks& gt, double keep_fraction) {
    const CeLayout lo = ce_layout(probs, gt);
    const std::size_t n = lo.planes - 1;
    if (n == 0) throw ContractError("combined loss needs at least one target plane");
    const double ce = bootstrapped_ce(probs, gt, keep_fraction);
    double dice_sum = 0.0;
    for (std::size_t j = 1; j <= n; ++j) {
        Tensor plane({1, lo.pixels});
        std::copy(probs.data().begin() + j * lo.pixels, probs.data().begin() + (j + 1) * lo.pixels,
                  plane.data().begin());
        Tensor bin({1, lo.pixels});
        for (std::size_t p = 0; p < lo.pixels; ++p)
            bin[p] = gt.ids[p] == static_cast<int>(j) ? 1.0 : 0.0;
        dice_sum += dice_loss(plane, bin);
    }
    const double dice_mean = dice_sum * (1.0 / static_cast<double>(n));
    return 0.5 * ce + 0.5 * dice_mean;
}

Var combined_loss_var(Var probs, const TargetMasks& gt, double keep_fraction) {
    Tape* tape = probs.tape;
    const CeLayout lo = ce_layout(tape->value(probs), gt);
    const std::size_t n = lo.planes - 1;
    if (n == 0) throw ContractError("combined loss needs at least one target plane");
    if (tape->value(probs).rank() != 2)
        throw DimensionError("combined_loss_var expects a {n+1, H*W} leaf");
    Var ce = bootstrapped_ce_var(probs, gt, keep_fraction);
    Var dice_sum{};
    for (std::size_t j = 1; j <= n; ++j) {
        Var plane = ad_slice_rows(probs, j, j + 1);
        Tensor bin({1, lo.pixels});
        for (std::size_t p = 0; p < lo.pixels; ++p)
            bin[p] = gt.ids[p] == static_cast<int>(j) ? 1.0 : 0.0;
        Var d = dice_loss_var(plane, bin);
        dice_sum = j == 1 ? d : ad_add(dice_sum, d);
    }
    Var dice_mean = ad_scale(dice_sum, 1.0 / static_cast<double>(n));
    return ad_add(ad_scale(ce, 0.5), ad_scale(dice_mean, 0.5));
}

}  // namespace stma
