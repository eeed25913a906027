#pragma once

#include "coconet/adaptive_weights.hpp"
#include "coconet/backbone.hpp"
#include "coconet/image.hpp"
#include "coconet/pyramid.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coconet {

// Losses work on unit-range intensities. The plane overloads normalise their
// inputs; the tensor overloads take network-space values in [-1, 1] and report
// gradients in that space.

inline constexpr double kDefaultAlpha = 20.0;
inline constexpr double kContrastiveEpsilon = 1e-12;

// Shallow to deep, one weight per contrastive tap.
std::vector<double> default_layer_weights();

// Gaussian window used by the structure term: 11, or the largest odd size
// that fits the smaller extent.
int loss_ssim_window(int rows, int cols);

double structure_loss(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f, const AdaptiveWeights& w);
double intensity_loss(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f, const AdaptiveWeights& w);
double pixel_loss(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f, const AdaptiveWeights& w,
                  double alpha = kDefaultAlpha);

struct PixelTerms {
    double l_s = 0.0;
    double l_n = 0.0;
    double l_p = 0.0;
};

// Batch mean of the per-sample pixel terms. `grad_f` (same size as f, may be
// empty) receives d(l_p)/df.
PixelTerms pixel_terms(const Tensor& v, const Tensor& r, const Tensor& f, std::span<const AdaptiveWeights> weights,
                       double alpha, std::span<double> grad_f = {});

struct ContrastiveBatch {
    FeaturePyramid anchor_taps;
    FeaturePyramid positive_taps;
    std::vector<FeaturePyramid> negative_taps;
    std::vector<double> layer_weights;
};

struct ContrastiveTerm {
    double value = 0.0;
    bool degenerate = false;           // some layer hit the denominator floor
    std::vector<Tensor> anchor_grads;  // d(value)/d(anchor tap), when requested
};

// Σᵢ wᵢ · mean|aᵢ − pᵢ| / max(Σₘ mean|aᵢ − nᵢᵐ|, ε), averaged over samples.
ContrastiveTerm contrastive_term(const ContrastiveBatch& batch, bool with_grad = false);

// Sources, mask and the unmasked negative images for one contrastive term.
// Tensors are N×1×H×W in [-1, 1]; the mask holds 0/1.
struct MaskedTermInputs {
    const Tensor* positive = nullptr;
    std::vector<const Tensor*> negatives;
    const Tensor* mask = nullptr;
};

struct MaskedTerm {
    double value = 0.0;
    bool degenerate = false;
};

// Backbone features of anchor, positive and negatives, all masked before
// extraction. Adds d(value)/df into `grad_f` when non-empty.
MaskedTerm masked_contrastive(const Backbone& backbone, const Tensor& f, const MaskedTermInputs& inputs,
                              std::span<const double> layer_weights, std::span<double> grad_f = {});

// Image-space (x + 1)·m − 1: the unit-range product x⊙m in network space.
Tensor apply_mask(const Tensor& x, const Tensor& m);
Tensor mask_tensor(const SaliencyMask& m);
Tensor plane_tensor(const ImagePlane& p);

struct ContrastivePair {
    double first = 0.0;  // l_ir or l_mri
    double second = 0.0; // l_vis or l_fun
    bool first_degenerate = false;
    bool second_degenerate = false;
};

// l_ir: anchor f⊙M, positive i_r⊙M, negatives (visible images)⊙M.
// l_vis: anchor f⊙M̄, positive i_v⊙M̄, negatives (infrared images)⊙M̄.
// Negative lists start with the co-located image.
ContrastivePair coupled_contrastive(const Backbone& backbone, const ImagePlane& f, const ImagePlane& i_r,
                                    const ImagePlane& i_v, const SaliencyMask& m,
                                    std::span<const ImagePlane> visible_negatives,
                                    std::span<const ImagePlane> infrared_negatives,
                                    std::span<const double> layer_weights);

// l_mri over M_m with functional negatives, l_fun over M_f = 1 − M_m with MRI negatives.
ContrastivePair medical_contrastive(const Backbone& backbone, const ImagePlane& f, const ImagePlane& i_mri,
                                    const ImagePlane& i_fun, const SaliencyMask& m_m,
                                    std::span<const ImagePlane> functional_negatives,
                                    std::span<const ImagePlane> mri_negatives,
                                    std::span<const double> layer_weights);

struct LossBreakdown {
    double l_s = 0.0;
    double l_n = 0.0;
    double l_p = 0.0;
    double l_ir = 0.0;
    double l_vis = 0.0;
    double l_total = 0.0;
    double alpha = kDefaultAlpha;
    bool ir_degenerate = false;
    bool vis_degenerate = false;
};

enum class FusionMode { Ivif, Medical };

// Tensor-level inputs for the contrastive part of one batch. In IVIF mode
// `first` is the infrared image, `second` the visible one, `mask` the
// foreground. In medical mode `first` is the MRI, `second` the functional
// luminance, `mask` M_m.
struct ContrastiveInputs {
    Tensor first;
    Tensor second;
    Tensor mask;
    std::vector<Tensor> first_negatives;  // opposite-modality images for the first term
    std::vector<Tensor> second_negatives; // opposite-modality images for the second term
};

struct LossOptions {
    double alpha = kDefaultAlpha;
    std::vector<double> layer_weights = default_layer_weights();
    bool stage1 = true;
};

struct LossEvaluation {
    LossBreakdown breakdown;
    Tensor grad_f; // empty unless requested
};

// L_total = L_P + L_ir + L_vis. In stage-1 mode the contrastive inputs are
// ignored, the backbone is never touched and both terms are exactly 0.
LossEvaluation total_loss(const Backbone* backbone, const Tensor& v, const Tensor& r, const Tensor& f,
                          std::span<const AdaptiveWeights> weights, const ContrastiveInputs* contrastive,
                          const LossOptions& options, bool with_grad);

// Training-log serialisation. Medical mode renames l_ir / l_vis to l_mri / l_fun.
std::string loss_csv_header(FusionMode mode);
std::string loss_csv_row(std::size_t step, const LossBreakdown& b, const AdaptiveWeights& w);

} // namespace coconet
