#pragma once

#include "coconet/archive.hpp"
#include "coconet/backbone.hpp"
#include "coconet/image.hpp"
#include "coconet/nn.hpp"
#include "coconet/pyramid.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace coconet {

struct FusionConfig {
    bool disable_ca = false;            // channel attention replaced by identity
    bool disable_backbone_taps = false; // backbone features replaced by zeros
};

// Two 3×3 conv + batch-norm + LeakyReLU groups.
class ConvBlock {
public:
    ConvBlock(const std::string& name, int in, int out);
    void init(std::mt19937_64& rng);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& params, std::vector<Buffer*>& buffers);

private:
    Conv2d conv1_;
    BatchNorm2d bn1_;
    LeakyReLU act1_;
    Conv2d conv2_;
    BatchNorm2d bn2_;
    LeakyReLU act2_;
};

// One 3×3 conv + batch-norm + LeakyReLU group.
class DecoderBlock {
public:
    DecoderBlock(const std::string& name, int in, int out);
    void init(std::mt19937_64& rng);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& dy);
    void collect(std::vector<Param*>& params, std::vector<Buffer*>& buffers);

private:
    Conv2d conv_;
    BatchNorm2d bn_;
    LeakyReLU act_;
};

// Stride-1 fusion network:
//   encoder    2-channel (ir, vis) stack -> f_U0..f_U3 (32, 64, 128, 256 channels)
//   MAM        per level n = 1..3: f_n^A = conv3×3(concat(CA(f_Un), CA(f_Rn), CA(f_Vn)))
//   decoder    fA3 -> 128; [.,fA2] -> 64; [.,fA1] -> 32; [.,f_U0] -> 1, tanh
// The backbone taps f_R, f_V are constants with respect to the parameters.
class FusionNet {
public:
    static constexpr std::array<int, 4> kEncoderWidths = {32, 64, 128, 256};
    static constexpr std::array<int, 3> kMamWidths = {64, 128, 256};
    static constexpr int kMinExtent = 16;
    static constexpr int kPadMultiple = 16;

    explicit FusionNet(FusionConfig config = {}, std::uint64_t seed = 0);

    const FusionConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    // --- stages (inputs are N-sample batches) ---
    FeaturePyramid encode(const Tensor& input, bool training);
    FeaturePyramid mam_fuse(const FeaturePyramid& f_u, const FeaturePyramid& f_r, const FeaturePyramid& f_v);
    Tensor decode(const FeaturePyramid& fused, const Tensor& f_u0, bool training);

    // Backbone taps for a batch of single-channel images, or zeros when the
    // taps are disabled.
    FeaturePyramid source_taps(const Backbone& backbone, const Tensor& img) const;

    // Full pipeline on N×1×H×W tensors in [-1,1] whose extents are already
    // valid (>= 16); returns N×1×H×W in (-1,1) and keeps activations for backward.
    Tensor forward(const Backbone& backbone, const Tensor& ir, const Tensor& vis, bool training);
    // Accumulates parameter gradients for d(loss)/d(fused output).
    void backward(const Tensor& d_fused);

    // Inference on arbitrary equal extents: reflective padding to the next
    // multiple of 16, evaluation-mode normalisation, crop back.
    ImagePlane forward_fuse(const Backbone& backbone, const ImagePlane& ir, const ImagePlane& vis) const;

    // Channel attention unit for (stream 0=U, 1=R, 2=V; level 0..2).
    ChannelAttention& attention(int stream, int level) { return attention_[static_cast<std::size_t>(stream * 3 + level)]; }

    std::vector<Param*> params();
    std::vector<Buffer*> buffers();
    std::size_t parameter_count();
    void zero_grad();

    // Parameters and buffers as archive arrays (names are stable identifiers).
    std::vector<ArchiveArray> state_arrays();
    void load_state_arrays(const Archive& archive);

private:
    FusionConfig config_;
    std::uint64_t seed_;
    std::vector<ConvBlock> encoder_;
    std::vector<ChannelAttention> attention_; // 3 streams × 3 levels
    std::vector<Conv2d> mam_conv_;
    std::vector<DecoderBlock> decoder_;
    Conv2d head_;

    // activations kept for backward
    Tensor head_out_;
};

} // namespace coconet
