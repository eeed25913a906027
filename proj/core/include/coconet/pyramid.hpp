#pragma once

#include "coconet/tensor.hpp"

#include <string>
#include <vector>

namespace coconet {

// Ordered multi-level feature stacks, shallow to deep.
struct FeaturePyramid {
    std::vector<std::string> tap_names;
    std::vector<Tensor> levels;

    std::size_t size() const { return levels.size(); }
    const Tensor& operator[](std::size_t i) const { return levels[i]; }
};

} // namespace coconet
