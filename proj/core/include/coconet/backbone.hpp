#pragma once

#include "coconet/archive.hpp"
#include "coconet/image.hpp"
#include "coconet/pyramid.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace coconet {

// Frozen 19-layer VGG feature extractor (16 convolutions in five stages,
// 2×2 ceil-mode max pooling between stages). Inputs are single-channel
// planes in [-1, 1]; they are replicated to three channels and mapped onto
// the ImageNet mean/std convention before the first convolution.
class Backbone {
public:
    struct LayerSpec {
        std::string name;
        int in_channels;
        int out_channels;
        int stage; // 1..5
    };

    // Standard 19-layer configuration, in execution order.
    static const std::vector<LayerSpec>& layout();

    // Fan-in scaled random kernels from a fixed seed.
    static Backbone deterministic(std::uint64_t seed = 0);
    // Archive of kind "vgg19" with arrays "<layer>.weight" [out,in,3,3] and "<layer>.bias" [out].
    static Backbone load(const std::filesystem::path& weights);
    // "deterministic" (optionally "deterministic:<seed>") or a weights path.
    static Backbone from_spec(const std::string& spec);

    Archive to_archive() const;

    // Taps relu1_2 / relu2_2 / relu3_2 (64, 128, 256 channels), each resampled
    // bilinearly to the input extent. Requires H, W >= kMamMinExtent.
    static constexpr int kMamMinExtent = 16;
    FeaturePyramid extract_mam_taps(const Tensor& img) const;
    FeaturePyramid extract_mam_taps(const ImagePlane& img) const;

    // Taps relu1_2 ... relu5_2 (64, 128, 256, 512, 512), raw spatial sizes.
    // Requires H, W >= kContrastiveMinExtent.
    static constexpr int kContrastiveMinExtent = 8;
    static constexpr int kContrastiveTaps = 5;

    struct Trace {
        Shape input_shape;
        std::vector<Tensor> conv_inputs;
        std::vector<Tensor> relu_outputs;
        std::vector<std::vector<std::size_t>> pool_argmax;
        std::vector<Shape> pool_input_shapes;
    };
    // `trace` (optional) records what contrastive_backward needs.
    FeaturePyramid extract_contrastive_taps(const Tensor& img, Trace* trace = nullptr) const;
    FeaturePyramid extract_contrastive_taps(const ImagePlane& img) const;

    // d(loss)/d(input) given d(loss)/d(tap) for every contrastive tap.
    Tensor contrastive_backward(const Trace& trace, const std::vector<Tensor>& tap_grads) const;

    // Number of contrastive extractions performed (copies share the counter).
    std::size_t contrastive_calls() const { return counter_->load(); }
    void reset_call_counter() const { counter_->store(0); }

    std::uint32_t parameter_hash() const;

private:
    Backbone();

    Tensor preprocess(const Tensor& img) const;
    FeaturePyramid run(const Tensor& img, int last_stage, Trace* trace) const;

    std::vector<std::vector<double>> weights_;
    std::vector<std::vector<double>> biases_;
    std::shared_ptr<std::atomic<std::size_t>> counter_;
};

} // namespace coconet
