#pragma once

#include "coconet/image.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coconet {

// Shannon entropy (bits) of the plane's histogram over `levels` bins spanning
// its declared range. Non-integral values are rounded to the nearest bin.
double entropy(const ImagePlane& img, int levels = 256);

// Mean absolute first difference: (|∇h|₁ + |∇v|₁) / (H·W), interior
// differences only. A missing direction (1×N, N×1) contributes zero.
double average_gradient(const ImagePlane& img);

struct SpatialFrequency {
    double sf = 0.0;
    double horizontal = 0.0; // RMS of row-wise differences
    double vertical = 0.0;   // RMS of column-wise differences
};

SpatialFrequency spatial_frequency_parts(const ImagePlane& img);
double spatial_frequency(const ImagePlane& img);

enum class SdVariant {
    MeanSquaredDeviation, // (1/MN) Σ (f − μ)²
    SquareRooted,         // the conventional standard deviation
};

double standard_deviation(const ImagePlane& img, SdVariant variant = SdVariant::MeanSquaredDeviation);

// Pearson correlation; throws MetricError(metric) when either operand has
// zero variance.
double correlation(std::span<const double> a, std::span<const double> b, const std::string& metric = "corr");

struct ScdParts {
    double scd = 0.0;
    double r_visible = 0.0;  // corr(v, f − r)
    double r_infrared = 0.0; // corr(r, f − v)
};

// A constant fused image is rejected along with zero-variance operands.
ScdParts scd_parts(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f);
double scd(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f);

// Multi-scale VIFF. All inputs are mapped onto the 8-bit scale first.
// Requires both extents >= kVifMinExtent.
inline constexpr int kVifMinExtent = 16;
double vif_fusion(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f);

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double data_range = 1.0;
};

// Mean SSIM over all fully-contained windows. When `grad_y` is non-empty it
// receives d(mean SSIM)/dy.
double ssim_raw(std::span<const double> x, std::span<const double> y, int rows, int cols,
                const SsimParams& params, std::span<double> grad_y = {});

// Planes must share shape and range tag; C1, C2 scale with the tag's width.
double ssim(const ImagePlane& x, const ImagePlane& y, int window = 11, double sigma = 1.5);

struct MetricReport {
    double en = 0.0;
    double ag = 0.0;
    double sf = 0.0;
    double sf_h = 0.0;
    double sf_v = 0.0;
    double sd = 0.0;
    double scd = 0.0;
    double scd_r_v = 0.0;
    double scd_r_r = 0.0;
    double vif = 0.0;
};

struct MetricOptions {
    int entropy_levels = 256;
    SdVariant sd_variant = SdVariant::MeanSquaredDeviation;
};

// All six metrics of the fused plane `f` against sources `v` (visible) and
// `r` (infrared). Either a complete report or a MetricError.
MetricReport evaluate_triple(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f,
                             const MetricOptions& options = {});

struct Triple {
    std::string id;
    ImagePlane v;
    ImagePlane r;
    ImagePlane f;
};

struct MetricOutcome {
    std::string id;
    std::optional<MetricReport> report;
    std::string failed_metric; // set when report is empty
    std::string message;
};

// One outcome per triple, in input order.
std::vector<MetricOutcome> evaluate_batch(std::span<const Triple> triples, const MetricOptions& options = {});

// "pair_id,en,ag,sf,sd,scd,vif" with 6 decimals.
std::string csv_header();
std::string csv_row(const std::string& pair_id, const MetricReport& report);

} // namespace coconet
