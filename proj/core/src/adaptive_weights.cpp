#include "coconet/adaptive_weights.hpp"

#include "coconet/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace coconet {

std::pair<double, double> softmax2(double a, double b) {
    const double top = std::max(a, b);
    const double ea = std::exp(a - top);
    const double eb = std::exp(b - top);
    const double sum = ea + eb;
    const double first = ea / sum;
    // Derive the second member from the first so the pair sums to exactly 1
    // whenever the subtraction is exact (Sterbenz: first in [0.5, 1]).
    if (first >= 0.5) return {first, 1.0 - first};
    const double second = eb / sum;
    return {1.0 - second, second};
}

AdaptiveWeights compute_adaptive_weights(const ImagePlane& v, const ImagePlane& r) {
    const auto [sa, sb] = softmax2(average_gradient(v), average_gradient(r));
    const auto [ga, gb] = softmax2(entropy(v), entropy(r));
    return {sa, sb, ga, gb};
}

AdaptiveWeights compute_patch_weights(const ImagePlane& v_patch, const ImagePlane& r_patch,
                                      const ImagePlane& v_source, const ImagePlane& r_source) {
    if (average_gradient(v_patch) == 0.0 || average_gradient(r_patch) == 0.0) {
        return compute_adaptive_weights(v_source, r_source);
    }
    return compute_adaptive_weights(v_patch, r_patch);
}

} // namespace coconet
