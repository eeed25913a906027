#include "coconet/metrics.hpp"

#include "coconet/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace coconet {

namespace {

std::vector<double> gaussian_1d(int size, double sigma) {
    std::vector<double> g(static_cast<std::size_t>(size));
    const double centre = (size - 1) / 2.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - centre;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    const double sum = std::accumulate(g.begin(), g.end(), 0.0);
    for (double& v : g) v /= sum;
    return g;
}

// Separable correlation keeping only fully-contained windows.
std::vector<double> filter_valid(std::span<const double> img, int rows, int cols, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int out_rows = rows - k + 1;
    const int out_cols = cols - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(rows) * out_cols);
    for (int r = 0; r < rows; ++r) {
        const double* row = img.data() + static_cast<std::size_t>(r) * cols;
        for (int c = 0; c < out_cols; ++c) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * row[c + t];
            tmp[static_cast<std::size_t>(r) * out_cols + c] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(out_rows) * out_cols);
    for (int r = 0; r < out_rows; ++r) {
        for (int c = 0; c < out_cols; ++c) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * tmp[static_cast<std::size_t>(r + t) * out_cols + c];
            out[static_cast<std::size_t>(r) * out_cols + c] = acc;
        }
    }
    return out;
}

// Adjoint of filter_valid: scatters an (rows-k+1)×(cols-k+1) map back to rows×cols.
std::vector<double> filter_valid_adjoint(std::span<const double> map, int rows, int cols, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int in_rows = rows - k + 1;
    const int in_cols = cols - k + 1;
    std::vector<double> tmp(static_cast<std::size_t>(rows) * in_cols, 0.0);
    for (int r = 0; r < in_rows; ++r) {
        for (int c = 0; c < in_cols; ++c) {
            const double v = map[static_cast<std::size_t>(r) * in_cols + c];
            for (int t = 0; t < k; ++t) tmp[static_cast<std::size_t>(r + t) * in_cols + c] += g[t] * v;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < in_cols; ++c) {
            const double v = tmp[static_cast<std::size_t>(r) * in_cols + c];
            double* row = out.data() + static_cast<std::size_t>(r) * cols;
            for (int t = 0; t < k; ++t) row[c + t] += g[t] * v;
        }
    }
    return out;
}

// Mirror index with edge repetition ("symmetric" boundary), valid for any offset.
int mirror(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

// Separable correlation, output the same size as the input, symmetric boundary.
std::vector<double> filter_same(const std::vector<double>& img, int rows, int cols, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int half = k / 2;
    std::vector<double> tmp(img.size());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * img[static_cast<std::size_t>(r) * cols + mirror(c + t - half, cols)];
            tmp[static_cast<std::size_t>(r) * cols + c] = acc;
        }
    }
    std::vector<double> out(img.size());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += g[t] * tmp[static_cast<std::size_t>(mirror(r + t - half, rows)) * cols + c];
            out[static_cast<std::size_t>(r) * cols + c] = acc;
        }
    }
    return out;
}

double mean_of(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

void require_same_shape(const ImagePlane& a, const ImagePlane& b, const char* metric) {
    if (!a.same_shape(b)) throw MetricError(metric, "operands differ in shape");
}

std::vector<double> to_u8_scale(const ImagePlane& img) {
    const auto range = range_of(img.range());
    std::vector<double> out(img.size());
    std::transform(img.pixels().begin(), img.pixels().end(), out.begin(),
                   [&](double v) { return (v - range.lo) / range.width() * 255.0; });
    return out;
}

struct VifScaleMaps {
    std::vector<double> vid;
    std::vector<double> vind;
    std::vector<double> gain;
};

constexpr int kVifScales = 4;
constexpr double kVifFloor = 1e-10;
constexpr double kVifNoiseVar = 0.005 * 255.0 * 255.0;

// Per-scale local GSM information terms for one (reference, distorted) pair.
std::array<VifScaleMaps, kVifScales> vif_information_maps(std::vector<double> ref, std::vector<double> dist, int rows, int cols) {
    std::array<VifScaleMaps, kVifScales> out;
    for (int scale = 1; scale <= kVifScales; ++scale) {
        const int n = (1 << (kVifScales - scale + 1)) + 1;
        const auto g = gaussian_1d(n, n / 5.0);
        if (scale > 1) {
            ref = filter_same(ref, rows, cols, g);
            dist = filter_same(dist, rows, cols, g);
            const int r2 = (rows + 1) / 2;
            const int c2 = (cols + 1) / 2;
            std::vector<double> a(static_cast<std::size_t>(r2) * c2), b(a.size());
            for (int r = 0; r < r2; ++r) {
                for (int c = 0; c < c2; ++c) {
                    a[static_cast<std::size_t>(r) * c2 + c] = ref[static_cast<std::size_t>(2 * r) * cols + 2 * c];
                    b[static_cast<std::size_t>(r) * c2 + c] = dist[static_cast<std::size_t>(2 * r) * cols + 2 * c];
                }
            }
            ref = std::move(a);
            dist = std::move(b);
            rows = r2;
            cols = c2;
        }
        const std::size_t count = ref.size();
        std::vector<double> rr(count), dd(count), rd(count);
        for (std::size_t i = 0; i < count; ++i) {
            rr[i] = ref[i] * ref[i];
            dd[i] = dist[i] * dist[i];
            rd[i] = ref[i] * dist[i];
        }
        const auto mu1 = filter_same(ref, rows, cols, g);
        const auto mu2 = filter_same(dist, rows, cols, g);
        const auto e11 = filter_same(rr, rows, cols, g);
        const auto e22 = filter_same(dd, rows, cols, g);
        const auto e12 = filter_same(rd, rows, cols, g);

        auto& maps = out[static_cast<std::size_t>(scale - 1)];
        maps.vid.resize(count);
        maps.vind.resize(count);
        maps.gain.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            double s1 = std::max(e11[i] - mu1[i] * mu1[i], 0.0);
            const double s2 = std::max(e22[i] - mu2[i] * mu2[i], 0.0);
            const double s12 = e12[i] - mu1[i] * mu2[i];

            double gain = s12 / (s1 + kVifFloor);
            double sv = s2 - gain * s12;
            if (s1 < kVifFloor) {
                gain = 0.0;
                sv = s2;
                s1 = 0.0;
            }
            if (s2 < kVifFloor) {
                gain = 0.0;
                sv = 0.0;
            }
            if (gain < 0.0) {
                sv = s2;
                gain = 0.0;
            }
            sv = std::max(sv, kVifFloor);

            maps.gain[i] = gain;
            maps.vid[i] = std::log10(1.0 + gain * gain * s1 / (sv + kVifNoiseVar));
            maps.vind[i] = std::log10(1.0 + s1 / kVifNoiseVar);
        }
    }
    return out;
}

} // namespace

double entropy(const ImagePlane& img, int levels) {
    if (levels < 2) throw MetricError("EN", "at least two grey levels are required");
    const auto range = range_of(img.range());
    std::vector<std::size_t> hist(static_cast<std::size_t>(levels), 0);
    for (double v : img.pixels()) {
        const double pos = (v - range.lo) / range.width() * (levels - 1);
        const long bin = std::clamp(std::lround(pos), 0L, static_cast<long>(levels - 1));
        ++hist[static_cast<std::size_t>(bin)];
    }
    const double total = static_cast<double>(img.size());
    double en = 0.0;
    for (std::size_t count : hist) {
        if (count == 0) continue;
        const double p = static_cast<double>(count) / total;
        en -= p * std::log2(p);
    }
    return en;
}

double average_gradient(const ImagePlane& img) {
    double sum = 0.0;
    const int rows = img.rows();
    const int cols = img.cols();
    for (int r = 0; r < rows; ++r)
        for (int c = 1; c < cols; ++c) sum += std::abs(img(r, c) - img(r, c - 1));
    for (int r = 1; r < rows; ++r)
        for (int c = 0; c < cols; ++c) sum += std::abs(img(r, c) - img(r - 1, c));
    return sum / static_cast<double>(img.size());
}

SpatialFrequency spatial_frequency_parts(const ImagePlane& img) {
    if (img.rows() < 2 || img.cols() < 2) throw MetricError("SF", "image must be at least 2x2");
    double h = 0.0;
    double v = 0.0;
    for (int r = 0; r < img.rows(); ++r) {
        for (int c = 0; c < img.cols(); ++c) {
            if (c > 0) {
                const double d = img(r, c) - img(r, c - 1);
                h += d * d;
            }
            if (r > 0) {
                const double d = img(r, c) - img(r - 1, c);
                v += d * d;
            }
        }
    }
    const double mn = static_cast<double>(img.size());
    SpatialFrequency out;
    out.horizontal = std::sqrt(h / mn);
    out.vertical = std::sqrt(v / mn);
    out.sf = std::sqrt(out.horizontal * out.horizontal + out.vertical * out.vertical);
    return out;
}

double spatial_frequency(const ImagePlane& img) { return spatial_frequency_parts(img).sf; }

double standard_deviation(const ImagePlane& img, SdVariant variant) {
    const double mu = mean_of(img.pixels());
    double acc = 0.0;
    for (double v : img.pixels()) acc += (v - mu) * (v - mu);
    const double msd = acc / static_cast<double>(img.size());
    return variant == SdVariant::SquareRooted ? std::sqrt(msd) : msd;
}

double correlation(std::span<const double> a, std::span<const double> b, const std::string& metric) {
    if (a.size() != b.size() || a.empty()) throw MetricError(metric, "correlation operands differ in size");
    const double ma = mean_of(a);
    const double mb = mean_of(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw MetricError(metric, "correlation undefined for a zero-variance operand");
    return sab / std::sqrt(saa * sbb);
}

ScdParts scd_parts(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f) {
    require_same_shape(v, f, "SCD");
    require_same_shape(r, f, "SCD");
    const auto fp = f.pixels();
    if (std::all_of(fp.begin(), fp.end(), [&](double x) { return x == fp[0]; })) {
        throw MetricError("SCD", "fused image is constant");
    }
    std::vector<double> d_vf(f.size()), d_rf(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        d_vf[i] = f.pixels()[i] - r.pixels()[i];
        d_rf[i] = f.pixels()[i] - v.pixels()[i];
    }
    ScdParts out;
    out.r_visible = correlation(v.pixels(), d_vf, "SCD");
    out.r_infrared = correlation(r.pixels(), d_rf, "SCD");
    out.scd = out.r_visible + out.r_infrared;
    return out;
}

double scd(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f) { return scd_parts(v, r, f).scd; }

double vif_fusion(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f) {
    require_same_shape(v, f, "VIF");
    require_same_shape(r, f, "VIF");
    if (f.rows() < kVifMinExtent || f.cols() < kVifMinExtent) {
        throw MetricError("VIF", fmt::format("image must be at least {}x{}", kVifMinExtent, kVifMinExtent));
    }
    constexpr std::array<double, kVifScales> weights = {1.0 / 2.15, 0.0, 0.15 / 2.15, 1.0 / 2.15};
    constexpr double kBlockOffset = 1e-7;

    const auto fused = to_u8_scale(f);
    const auto from_v = vif_information_maps(to_u8_scale(v), fused, f.rows(), f.cols());
    const auto from_r = vif_information_maps(to_u8_scale(r), fused, f.rows(), f.cols());

    double total = 0.0;
    for (std::size_t s = 0; s < kVifScales; ++s) {
        const auto& a = from_v[s];
        const auto& b = from_r[s];
        double vid = 0.0;
        double vind = 0.0;
        for (std::size_t i = 0; i < a.gain.size(); ++i) {
            // Per location, keep the source with the smaller gain.
            const bool take_a = a.gain[i] < b.gain[i];
            vid += (take_a ? a.vid[i] : b.vid[i]) + kBlockOffset;
            vind += (take_a ? a.vind[i] : b.vind[i]) + kBlockOffset;
        }
        total += weights[s] * (vid / vind);
    }
    if (!std::isfinite(total)) throw MetricError("VIF", "non-finite result");
    return total;
}

double ssim_raw(std::span<const double> x, std::span<const double> y, int rows, int cols,
                const SsimParams& params, std::span<double> grad_y) {
    const int k = params.window;
    if (k < 1 || k % 2 == 0) throw MetricError("SSIM", "window size must be odd and positive");
    if (rows < k || cols < k) {
        throw MetricError("SSIM", fmt::format("image {}x{} smaller than the {}x{} window", rows, cols, k, k));
    }
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (x.size() != n || y.size() != n) throw MetricError("SSIM", "operands differ in shape");

    const auto g = gaussian_1d(k, params.sigma);
    const double c1 = (0.01 * params.data_range) * (0.01 * params.data_range);
    const double c2 = (0.03 * params.data_range) * (0.03 * params.data_range);

    std::vector<double> xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, rows, cols, g);
    const auto my = filter_valid(y, rows, cols, g);
    const auto exx = filter_valid(xx, rows, cols, g);
    const auto eyy = filter_valid(yy, rows, cols, g);
    const auto exy = filter_valid(xy, rows, cols, g);

    const std::size_t m = mx.size();
    const bool want_grad = !grad_y.empty();
    std::vector<double> d_mu, d_eyy, d_exy;
    if (want_grad) {
        d_mu.resize(m);
        d_eyy.resize(m);
        d_exy.resize(m);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double a1 = 2.0 * mx[i] * my[i] + c1;
        const double a2 = 2.0 * (exy[i] - mx[i] * my[i]) + c2;
        const double b1 = mx[i] * mx[i] + my[i] * my[i] + c1;
        const double b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + c2;
        const double den = b1 * b2;
        const double s = a1 * a2 / den;
        sum += s;
        if (want_grad) {
            const double inv_m = 1.0 / static_cast<double>(m);
            const double dnum_dmu = 2.0 * mx[i] * a2 - 2.0 * mx[i] * a1;
            const double dden_dmu = 2.0 * my[i] * b2 - 2.0 * my[i] * b1;
            d_mu[i] = inv_m * (dnum_dmu - s * dden_dmu) / den;
            d_eyy[i] = inv_m * (-s * b1) / den;
            d_exy[i] = inv_m * (2.0 * a1) / den;
        }
    }
    if (want_grad) {
        if (grad_y.size() != n) throw MetricError("SSIM", "gradient buffer has the wrong size");
        const auto gm = filter_valid_adjoint(d_mu, rows, cols, g);
        const auto ge = filter_valid_adjoint(d_eyy, rows, cols, g);
        const auto gx = filter_valid_adjoint(d_exy, rows, cols, g);
        for (std::size_t i = 0; i < n; ++i) grad_y[i] = gm[i] + 2.0 * y[i] * ge[i] + x[i] * gx[i];
    }
    return sum / static_cast<double>(m);
}

double ssim(const ImagePlane& x, const ImagePlane& y, int window, double sigma) {
    if (!x.same_shape(y)) throw MetricError("SSIM", "operands differ in shape");
    if (x.range() != y.range()) throw MetricError("SSIM", "operands declare different value ranges");
    return ssim_raw(x.pixels(), y.pixels(), x.rows(), x.cols(),
                    SsimParams{window, sigma, range_of(x.range()).width()});
}

MetricReport evaluate_triple(const ImagePlane& v, const ImagePlane& r, const ImagePlane& f,
                             const MetricOptions& options) {
    if (!v.same_shape(f) || !r.same_shape(f)) throw MetricError("shape", "triple members differ in shape");
    MetricReport report;
    report.en = entropy(f, options.entropy_levels);
    report.ag = average_gradient(f);
    const auto sf = spatial_frequency_parts(f);
    report.sf = sf.sf;
    report.sf_h = sf.horizontal;
    report.sf_v = sf.vertical;
    report.sd = standard_deviation(f, options.sd_variant);
    const auto parts = scd_parts(v, r, f);
    report.scd = parts.scd;
    report.scd_r_v = parts.r_visible;
    report.scd_r_r = parts.r_infrared;
    report.vif = vif_fusion(v, r, f);
    return report;
}

std::vector<MetricOutcome> evaluate_batch(std::span<const Triple> triples, const MetricOptions& options) {
    std::vector<MetricOutcome> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        MetricOutcome item{t.id, std::nullopt, {}, {}};
        try {
            item.report = evaluate_triple(t.v, t.r, t.f, options);
        } catch (const MetricError& e) {
            item.failed_metric = e.metric();
            item.message = e.what();
        }
        out.push_back(std::move(item));
    }
    return out;
}

std::string csv_header() { return "pair_id,en,ag,sf,sd,scd,vif"; }

std::string csv_row(const std::string& pair_id, const MetricReport& m) {
    return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", pair_id, m.en, m.ag, m.sf, m.sd, m.scd, m.vif);
}

} // namespace coconet
