#include "coconet/losses.hpp"

#include "coconet/error.hpp"
#include "coconet/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace coconet {

namespace {

void require_same(const ImagePlane& a, const ImagePlane& b, const char* what) {
    if (!a.same_shape(b)) {
        throw DataError(fmt::format("{}: shapes differ ({}x{} vs {}x{})", what, a.rows(), a.cols(), b.rows(), b.cols()));
    }
}

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

std::vector<double> to_unit(std::span<const double> x) {
    std::vector<double> u(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) u[i] = (x[i] + 1.0) * 0.5;
    return u;
}

} // namespace

std::vector<double> default_layer_weights() { return {1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0}; }

int loss_ssim_window(int rows, int cols) {
    const int m = std::min(rows, cols);
    if (m >= 11) return 11;
    return m % 2 == 1 ? m : m - 1;
}

double structure_loss(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f, const AdaptiveWeights& w) {
    require_same(v, f, "structure loss");
    require_same(r, f, "structure loss");
    const auto vu = normalize(v, RangeTag::Unit);
    const auto ru = normalize(r, RangeTag::Unit);
    const auto fu = normalize(f, RangeTag::Unit);
    const int win = loss_ssim_window(f.rows(), f.cols());
    return w.sigma_a * (1.0 - ssim(vu, fu, win)) + w.sigma_b * (1.0 - ssim(ru, fu, win));
}

double intensity_loss(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f, const AdaptiveWeights& w) {
    require_same(v, f, "intensity loss");
    require_same(r, f, "intensity loss");
    const auto vu = normalize(v, RangeTag::Unit);
    const auto ru = normalize(r, RangeTag::Unit);
    const auto fu = normalize(f, RangeTag::Unit);
    double mv = 0.0;
    double mr = 0.0;
    for (std::size_t i = 0; i < fu.size(); ++i) {
        const double dv = fu.data()[i] - vu.data()[i];
        const double dr = fu.data()[i] - ru.data()[i];
        mv += dv * dv;
        mr += dr * dr;
    }
    const double n = static_cast<double>(fu.size());
    return w.gamma_a * mv / n + w.gamma_b * mr / n;
}

double pixel_loss(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f, const AdaptiveWeights& w, double alpha) {
    return alpha * structure_loss(v, r, f, w) + intensity_loss(v, r, f, w);
}

PixelTerms pixel_terms(const Tensor& v, const Tensor& r, const Tensor& f, std::span<const AdaptiveWeights> weights,
                       double alpha, std::span<double> grad_f) {
    if (!(v.shape() == f.shape()) || !(r.shape() == f.shape()) || f.c() != 1) {
        throw DataError("pixel loss expects equal single-channel stacks");
    }
    if (weights.size() != static_cast<std::size_t>(f.n())) throw DataError("one weight set per sample is required");
    if (!grad_f.empty() && grad_f.size() != f.numel()) throw DataError("gradient buffer size mismatch");

    const int h = f.h();
    const int w = f.w();
    const std::size_t k = f.shape().plane();
    const double inv_n = 1.0 / f.n();
    const SsimParams params{loss_ssim_window(h, w), 1.5, 1.0};
    PixelTerms out;
    std::vector<double> g1(grad_f.empty() ? 0 : k);
    std::vector<double> g2(grad_f.empty() ? 0 : k);
    for (int s = 0; s < f.n(); ++s) {
        const auto vu = to_unit(v.sample(s));
        const auto ru = to_unit(r.sample(s));
        const auto fu = to_unit(f.sample(s));
        const AdaptiveWeights& aw = weights[static_cast<std::size_t>(s)];
        const double s1 = ssim_raw(vu, fu, h, w, params, g1);
        const double s2 = ssim_raw(ru, fu, h, w, params, g2);
        double mv = 0.0;
        double mr = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            mv += (fu[i] - vu[i]) * (fu[i] - vu[i]);
            mr += (fu[i] - ru[i]) * (fu[i] - ru[i]);
        }
        const double ls = aw.sigma_a * (1.0 - s1) + aw.sigma_b * (1.0 - s2);
        const double ln = (aw.gamma_a * mv + aw.gamma_b * mr) / static_cast<double>(k);
        out.l_s += ls * inv_n;
        out.l_n += ln * inv_n;
        if (!grad_f.empty()) {
            auto g = grad_f.subspan(static_cast<std::size_t>(s) * k, k);
            for (std::size_t i = 0; i < k; ++i) {
                const double d_unit = alpha * (-aw.sigma_a * g1[i] - aw.sigma_b * g2[i]) +
                                      2.0 * (aw.gamma_a * (fu[i] - vu[i]) + aw.gamma_b * (fu[i] - ru[i])) /
                                          static_cast<double>(k);
                g[i] += 0.5 * d_unit * inv_n;
            }
        }
    }
    out.l_p = alpha * out.l_s + out.l_n;
    return out;
}

ContrastiveTerm contrastive_term(const ContrastiveBatch& batch, bool with_grad) {
    const std::size_t layers = batch.anchor_taps.size();
    if (layers == 0) throw DataError("contrastive term needs at least one tap");
    if (batch.negative_taps.empty()) throw DataError("contrastive term needs at least one negative");
    if (batch.positive_taps.size() != layers || batch.layer_weights.size() != layers) {
        throw DataError("contrastive pyramids and layer weights are not tap-aligned");
    }
    for (const auto& neg : batch.negative_taps)
        if (neg.size() != layers) throw DataError("negative pyramid is not tap-aligned");
    for (std::size_t i = 0; i < layers; ++i) {
        const Shape& s = batch.anchor_taps[i].shape();
        if (!(batch.positive_taps[i].shape() == s)) throw DataError(fmt::format("tap {}: positive shape differs", i));
        for (const auto& neg : batch.negative_taps)
            if (!(neg[i].shape() == s)) throw DataError(fmt::format("tap {}: negative shape differs", i));
        if (batch.layer_weights[i] < 0.0 || !std::isfinite(batch.layer_weights[i])) {
            throw ConfigError("contrastive layer weights must be finite and non-negative");
        }
    }

    ContrastiveTerm out;
    const int samples = batch.anchor_taps[0].n();
    const double inv_s = 1.0 / samples;
    if (with_grad) {
        for (std::size_t i = 0; i < layers; ++i) out.anchor_grads.emplace_back(batch.anchor_taps[i].shape());
    }
    for (std::size_t i = 0; i < layers; ++i) {
        const double wi = batch.layer_weights[i];
        for (int s = 0; s < samples; ++s) {
            const auto a = batch.anchor_taps[i].sample(s);
            const auto p = batch.positive_taps[i].sample(s);
            const double k = static_cast<double>(a.size());
            double num = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j) num += std::abs(a[j] - p[j]);
            num /= k;
            double den = 0.0;
            for (const auto& neg : batch.negative_taps) {
                const auto n = neg[i].sample(s);
                double d = 0.0;
                for (std::size_t j = 0; j < a.size(); ++j) d += std::abs(a[j] - n[j]);
                den += d / k;
            }
            const bool floored = den < kContrastiveEpsilon;
            if (floored) out.degenerate = true;
            const double den_f = floored ? kContrastiveEpsilon : den;
            out.value += wi * num / den_f * inv_s;
            if (!with_grad || wi == 0.0) continue;
            auto g = out.anchor_grads[i].sample(s);
            const double c_num = wi * inv_s / (den_f * k);
            for (std::size_t j = 0; j < a.size(); ++j) g[j] += c_num * sign(a[j] - p[j]);
            if (!floored) {
                const double c_den = wi * inv_s * num / (den_f * den_f * k);
                for (const auto& neg : batch.negative_taps) {
                    const auto n = neg[i].sample(s);
                    for (std::size_t j = 0; j < a.size(); ++j) g[j] -= c_den * sign(a[j] - n[j]);
                }
            }
        }
    }
    return out;
}

Tensor apply_mask(const Tensor& x, const Tensor& m) {
    if (!(x.shape() == m.shape())) throw DataError("mask " + m.shape().str() + " does not match image " + x.shape().str());
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.values()[i] = (x.values()[i] + 1.0) * m.values()[i] - 1.0;
    return out;
}

Tensor mask_tensor(const SaliencyMask& m) {
    std::vector<double> v(m.bits().begin(), m.bits().end());
    return Tensor(Shape{1, 1, m.rows(), m.cols()}, std::move(v));
}

Tensor plane_tensor(const ImagePlane& p) {
    const auto s = normalize(p, RangeTag::Signed);
    return Tensor(Shape{1, 1, s.rows(), s.cols()}, s.data());
}

MaskedTerm masked_contrastive(const Backbone& backbone, const Tensor& f, const MaskedTermInputs& inputs,
                              std::span<const double> layer_weights, std::span<double> grad_f) {
    if (!inputs.positive || !inputs.mask) throw DataError("contrastive term needs a positive image and a mask");
    if (inputs.negatives.empty()) throw DataError("contrastive term needs at least one negative");
    ContrastiveBatch batch;
    batch.layer_weights.assign(layer_weights.begin(), layer_weights.end());
    Backbone::Trace trace;
    const bool with_grad = !grad_f.empty();
    batch.anchor_taps = backbone.extract_contrastive_taps(apply_mask(f, *inputs.mask), with_grad ? &trace : nullptr);
    batch.positive_taps = backbone.extract_contrastive_taps(apply_mask(*inputs.positive, *inputs.mask));
    for (const Tensor* n : inputs.negatives) {
        batch.negative_taps.push_back(backbone.extract_contrastive_taps(apply_mask(*n, *inputs.mask)));
    }
    ContrastiveTerm term = contrastive_term(batch, with_grad);
    if (with_grad) {
        const Tensor g = backbone.contrastive_backward(trace, term.anchor_grads);
        if (grad_f.size() != g.numel()) throw DataError("gradient buffer size mismatch");
        for (std::size_t i = 0; i < g.numel(); ++i) grad_f[i] += g.values()[i] * inputs.mask->values()[i];
    }
    return {term.value, term.degenerate};
}

namespace {

Tensor complement(const Tensor& m) {
    Tensor out(m.shape());
    for (std::size_t i = 0; i < m.numel(); ++i) out.values()[i] = 1.0 - m.values()[i];
    return out;
}

ContrastivePair contrastive_pair(const Backbone& backbone, const Tensor& f, const ContrastiveInputs& in,
                                 std::span<const double> layer_weights, std::span<double> grad_f) {
    const Tensor inv = complement(in.mask);
    MaskedTermInputs first{&in.first, {}, &in.mask};
    for (const auto& t : in.first_negatives) first.negatives.push_back(&t);
    MaskedTermInputs second{&in.second, {}, &inv};
    for (const auto& t : in.second_negatives) second.negatives.push_back(&t);
    const MaskedTerm a = masked_contrastive(backbone, f, first, layer_weights, grad_f);
    const MaskedTerm b = masked_contrastive(backbone, f, second, layer_weights, grad_f);
    return {a.value, b.value, a.degenerate, b.degenerate};
}

ContrastivePair plane_pair(const Backbone& backbone, const ImagePlane& f, const ImagePlane& first,
                           const ImagePlane& second, const SaliencyMask& m, std::span<const ImagePlane> first_negatives,
                           std::span<const ImagePlane> second_negatives, std::span<const double> layer_weights) {
    require_same(first, f, "contrastive");
    require_same(second, f, "contrastive");
    if (!m.matches(f)) throw DataError("mask extent differs from the fused image");
    ContrastiveInputs in;
    in.first = plane_tensor(first);
    in.second = plane_tensor(second);
    in.mask = mask_tensor(m);
    for (const auto& n : first_negatives) {
        require_same(n, f, "contrastive negative");
        in.first_negatives.push_back(plane_tensor(n));
    }
    for (const auto& n : second_negatives) {
        require_same(n, f, "contrastive negative");
        in.second_negatives.push_back(plane_tensor(n));
    }
    return contrastive_pair(backbone, plane_tensor(f), in, layer_weights, {});
}

} // namespace

ContrastivePair coupled_contrastive(const Backbone& backbone, const ImagePlane& f, const ImagePlane& i_r,
                                    const ImagePlane& i_v, const SaliencyMask& m,
                                    std::span<const ImagePlane> visible_negatives,
                                    std::span<const ImagePlane> infrared_negatives,
                                    std::span<const double> layer_weights) {
    return plane_pair(backbone, f, i_r, i_v, m, visible_negatives, infrared_negatives, layer_weights);
}

ContrastivePair medical_contrastive(const Backbone& backbone, const ImagePlane& f, const ImagePlane& i_mri,
                                    const ImagePlane& i_fun, const SaliencyMask& m_m,
                                    std::span<const ImagePlane> functional_negatives,
                                    std::span<const ImagePlane> mri_negatives,
                                    std::span<const double> layer_weights) {
    return plane_pair(backbone, f, i_mri, i_fun, m_m, functional_negatives, mri_negatives, layer_weights);
}

LossEvaluation total_loss(const Backbone* backbone, const Tensor& v, const Tensor& r, const Tensor& f,
                          std::span<const AdaptiveWeights> weights, const ContrastiveInputs* contrastive,
                          const LossOptions& options, bool with_grad) {
    LossEvaluation out;
    if (with_grad) out.grad_f = Tensor(f.shape());
    std::span<double> g = with_grad ? std::span<double>(out.grad_f.values()) : std::span<double>{};
    const PixelTerms p = pixel_terms(v, r, f, weights, options.alpha, g);
    LossBreakdown& b = out.breakdown;
    b.alpha = options.alpha;
    b.l_s = p.l_s;
    b.l_n = p.l_n;
    b.l_p = p.l_p;
    if (!options.stage1) {
        if (!backbone || !contrastive) throw DataError("stage-2 loss needs a backbone and contrastive inputs");
        const ContrastivePair c = contrastive_pair(*backbone, f, *contrastive, options.layer_weights, g);
        b.l_ir = c.first;
        b.l_vis = c.second;
        b.ir_degenerate = c.first_degenerate;
        b.vis_degenerate = c.second_degenerate;
    }
    b.l_total = b.l_p + b.l_ir + b.l_vis;
    return out;
}

std::string loss_csv_header(FusionMode mode) {
    const char* a = mode == FusionMode::Medical ? "l_mri" : "l_ir";
    const char* b = mode == FusionMode::Medical ? "l_fun" : "l_vis";
    return fmt::format("step,l_s,l_n,l_p,{},{},l_total,sigma_a,sigma_b,gamma_a,gamma_b", a, b);
}

std::string loss_csv_row(std::size_t step, const LossBreakdown& b, const AdaptiveWeights& w) {
    return fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}", step, b.l_s, b.l_n,
                       b.l_p, b.l_ir, b.l_vis, b.l_total, w.sigma_a, w.sigma_b, w.gamma_a, w.gamma_b);
}

} // namespace coconet
