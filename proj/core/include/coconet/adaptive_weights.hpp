#pragma once

#include "coconet/image.hpp"

#include <utility>

namespace coconet {

// Per-pair loss weights: σ balances the SSIM terms, γ the MSE terms.
// The "a" member belongs to the visible source, "b" to the infrared one.
struct AdaptiveWeights {
    double sigma_a = 0.5;
    double sigma_b = 0.5;
    double gamma_a = 0.5;
    double gamma_b = 0.5;

    AdaptiveWeights swapped() const { return {sigma_b, sigma_a, gamma_b, gamma_a}; }
};

// Two-way softmax with max subtraction.
std::pair<double, double> softmax2(double a, double b);

// σ from average gradient, γ from entropy (256 levels).
AdaptiveWeights compute_adaptive_weights(const ImagePlane& v, const ImagePlane& r);

// Patch-level weights, falling back to the full source pair when either patch
// is flat (zero average gradient): a flat patch carries no structure to rank.
AdaptiveWeights compute_patch_weights(const ImagePlane& v_patch, const ImagePlane& r_patch,
                                      const ImagePlane& v_source, const ImagePlane& r_source);

} // namespace coconet
