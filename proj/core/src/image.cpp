#include "coconet/image.hpp"

#include "coconet/error.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

namespace coconet {

namespace {

constexpr double kKr = 0.299;
constexpr double kKg = 0.587;
constexpr double kKb = 0.114;

void check_extent(int rows, int cols) {
    if (rows < 1 || cols < 1) {
        throw DataError("image extent must be at least 1x1, got " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
}

} // namespace

ValueRange range_of(RangeTag tag) {
    switch (tag) {
    case RangeTag::Unit8: return {0.0, 255.0};
    case RangeTag::Unit: return {0.0, 1.0};
    case RangeTag::Signed: return {-1.0, 1.0};
    }
    return {0.0, 1.0};
}

const char* to_string(RangeTag tag) {
    switch (tag) {
    case RangeTag::Unit8: return "unit8";
    case RangeTag::Unit: return "unit";
    case RangeTag::Signed: return "signed";
    }
    return "?";
}

ImagePlane::ImagePlane(int rows, int cols, RangeTag tag, double fill)
    : ImagePlane(rows, cols, std::vector<double>(static_cast<std::size_t>(std::max(rows, 0)) * std::max(cols, 0), fill), tag) {}

ImagePlane::ImagePlane(int rows, int cols, std::vector<double> pixels, RangeTag tag)
    : rows_(rows), cols_(cols), tag_(tag), pixels_(std::move(pixels)) {
    check_extent(rows, cols);
    if (pixels_.size() != static_cast<std::size_t>(rows) * cols) {
        throw DataError("pixel count does not match image extent");
    }
    const auto range = range_of(tag);
    // Affine remaps may land an ulp outside the interval.
    const double slack = 1e-9 * range.width();
    for (double& v : pixels_) {
        if (!(v >= range.lo - slack && v <= range.hi + slack)) {
            throw DataError("pixel value " + std::to_string(v) + " outside declared range " +
                            to_string(tag));
        }
        v = std::clamp(v, range.lo, range.hi);
    }
}

ImagePlane ImagePlane::crop(int top, int left, int height, int width) const {
    if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > rows_ || left + width > cols_) {
        throw DataError("crop window outside image");
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(height) * width);
    for (int r = 0; r < height; ++r) {
        const auto row = pixels_.begin() + static_cast<std::ptrdiff_t>(top + r) * cols_ + left;
        out.insert(out.end(), row, row + width);
    }
    return ImagePlane(height, width, std::move(out), tag_);
}

ImagePlane ImagePlane::transposed() const {
    std::vector<double> out(pixels_.size());
    for (int r = 0; r < rows_; ++r)
        for (int c = 0; c < cols_; ++c) out[static_cast<std::size_t>(c) * rows_ + r] = (*this)(r, c);
    return ImagePlane(cols_, rows_, std::move(out), tag_);
}

ImagePlane normalize(const ImagePlane& img, RangeTag target) {
    if (img.range() == target) return img;
    const auto src = range_of(img.range());
    const auto dst = range_of(target);
    const double scale = dst.width() / src.width();
    std::vector<double> out(img.size());
    std::transform(img.pixels().begin(), img.pixels().end(), out.begin(),
                   [&](double v) { return dst.lo + (v - src.lo) * scale; });
    return ImagePlane(img.rows(), img.cols(), std::move(out), target);
}

std::vector<std::uint8_t> quantize_u8(const ImagePlane& img) {
    const auto u8 = normalize(img, RangeTag::Unit8);
    std::vector<std::uint8_t> out(u8.size());
    std::transform(u8.pixels().begin(), u8.pixels().end(), out.begin(), [](double v) {
        return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    });
    return out;
}

ImagePlane clamp_to_plane(int rows, int cols, std::span<const double> values, RangeTag tag) {
    const auto range = range_of(tag);
    std::vector<double> out(values.begin(), values.end());
    for (double& v : out) {
        if (std::isnan(v)) throw NumericError("cannot clamp NaN into an image plane");
        v = std::clamp(v, range.lo, range.hi);
    }
    return ImagePlane(rows, cols, std::move(out), tag);
}

YCbCrImage rgb_to_ycbcr(const ColorImage& img) {
    check_extent(img.rows, img.cols);
    const std::size_t n = static_cast<std::size_t>(img.rows) * img.cols;
    if (img.r.size() != n || img.g.size() != n || img.b.size() != n) {
        throw DataError("color channels have mismatched shapes");
    }
    std::vector<double> y(n), cb(n), cr(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double lum = kKr * img.r[i] + kKg * img.g[i] + kKb * img.b[i];
        y[i] = lum;
        cb[i] = 0.5 + (img.b[i] - lum) / (2.0 * (1.0 - kKb));
        cr[i] = 0.5 + (img.r[i] - lum) / (2.0 * (1.0 - kKr));
    }
    return {ImagePlane(img.rows, img.cols, std::move(y), RangeTag::Unit), std::move(cb), std::move(cr)};
}

ColorImage ycbcr_to_rgb(const YCbCrImage& img) {
    const auto y = normalize(img.y, RangeTag::Unit);
    const std::size_t n = y.size();
    if (img.cb.size() != n || img.cr.size() != n) {
        throw DataError("chroma planes do not match the luminance extent");
    }
    ColorImage out{y.rows(), y.cols(), std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const double lum = y.pixels()[i];
        const double r = lum + 2.0 * (1.0 - kKr) * (img.cr[i] - 0.5);
        const double b = lum + 2.0 * (1.0 - kKb) * (img.cb[i] - 0.5);
        const double g = (lum - kKr * r - kKb * b) / kKg;
        out.r[i] = std::clamp(r, 0.0, 1.0);
        out.g[i] = std::clamp(g, 0.0, 1.0);
        out.b[i] = std::clamp(b, 0.0, 1.0);
    }
    return out;
}

SaliencyMask::SaliencyMask(int rows, int cols, std::vector<std::uint8_t> bits)
    : rows_(rows), cols_(cols), bits_(std::move(bits)) {
    check_extent(rows, cols);
    if (bits_.size() != static_cast<std::size_t>(rows) * cols) {
        throw DataError("mask size does not match its extent");
    }
    for (auto& b : bits_) b = b ? 1 : 0;
}

SaliencyMask SaliencyMask::filled(int rows, int cols, bool value) {
    return SaliencyMask(rows, cols,
                        std::vector<std::uint8_t>(static_cast<std::size_t>(rows) * cols, value ? 1 : 0));
}

SaliencyMask SaliencyMask::complement() const {
    std::vector<std::uint8_t> out(bits_.size());
    std::transform(bits_.begin(), bits_.end(), out.begin(), [](std::uint8_t b) { return static_cast<std::uint8_t>(1 - b); });
    return SaliencyMask(rows_, cols_, std::move(out));
}

SaliencyMask SaliencyMask::crop(int top, int left, int height, int width) const {
    if (top < 0 || left < 0 || height < 1 || width < 1 || top + height > rows_ || left + width > cols_) {
        throw DataError("crop window outside mask");
    }
    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(height) * width);
    for (int r = 0; r < height; ++r) {
        const auto row = bits_.begin() + static_cast<std::ptrdiff_t>(top + r) * cols_ + left;
        out.insert(out.end(), row, row + width);
    }
    return SaliencyMask(height, width, std::move(out));
}

std::size_t SaliencyMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

ImagePlane SaliencyMask::apply(const ImagePlane& img) const {
    if (!matches(img)) throw DataError("mask shape does not match image");
    std::vector<double> out(img.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bits_[i] ? img.pixels()[i] : 0.0;
    return ImagePlane(img.rows(), img.cols(), std::move(out), img.range());
}

namespace {

// 4-connected largest component of the set bits.
std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& bits, int rows, int cols) {
    std::vector<int> label(bits.size(), -1);
    int best_label = -1;
    std::size_t best_size = 0;
    int next = 0;
    std::deque<int> queue;
    for (int start = 0; start < static_cast<int>(bits.size()); ++start) {
        if (!bits[start] || label[start] >= 0) continue;
        std::size_t size = 0;
        label[start] = next;
        queue.push_back(start);
        while (!queue.empty()) {
            const int idx = queue.front();
            queue.pop_front();
            ++size;
            const int r = idx / cols;
            const int c = idx % cols;
            const int nbrs[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (const auto& nb : nbrs) {
                if (nb[0] < 0 || nb[0] >= rows || nb[1] < 0 || nb[1] >= cols) continue;
                const int j = nb[0] * cols + nb[1];
                if (bits[j] && label[j] < 0) {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next;
        }
        ++next;
    }
    std::vector<std::uint8_t> out(bits.size(), 0);
    for (std::size_t i = 0; i < bits.size(); ++i) out[i] = (label[i] == best_label && best_label >= 0) ? 1 : 0;
    return out;
}

} // namespace

MaskResult threshold_saliency_mask(const ImagePlane& ir, double quantile, bool keep_largest_component) {
    if (!(quantile >= 0.0 && quantile < 1.0)) {
        throw ConfigError("mask quantile must lie in [0, 1), got " + std::to_string(quantile));
    }
    const auto [lo, hi] = std::minmax_element(ir.pixels().begin(), ir.pixels().end());
    if (*lo == *hi) {
        return {SaliencyMask::filled(ir.rows(), ir.cols(), false),
                "constant image: no pixel exceeds the intensity quantile"};
    }
    if (quantile == 0.0) return {SaliencyMask::filled(ir.rows(), ir.cols(), true), std::nullopt};

    std::vector<double> sorted(ir.pixels().begin(), ir.pixels().end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = quantile * static_cast<double>(sorted.size() - 1);
    const auto below = static_cast<std::size_t>(std::floor(pos));
    const std::size_t above = std::min(below + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(below);
    const double threshold = sorted[below] + frac * (sorted[above] - sorted[below]);

    std::vector<std::uint8_t> bits(ir.size());
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = ir.pixels()[i] > threshold ? 1 : 0;
    if (keep_largest_component) bits = largest_component(bits, ir.rows(), ir.cols());

    MaskResult result{SaliencyMask(ir.rows(), ir.cols(), std::move(bits)), std::nullopt};
    if (result.mask.count() == 0) result.warning = "no pixel exceeds the intensity quantile";
    return result;
}

namespace {

void check_pair(const SourcePair& pair, int patch_size) {
    if (!pair.ir.same_shape(pair.vis)) {
        throw DataError("pair '" + pair.id + "': infrared and visible extents differ");
    }
    if (pair.mask && !pair.mask->matches(pair.ir)) {
        throw DataError("pair '" + pair.id + "': mask extent differs from its images");
    }
    if (patch_size < 1 || patch_size > std::min(pair.ir.rows(), pair.ir.cols())) {
        throw DataError("patch size " + std::to_string(patch_size) + " exceeds extent of pair '" +
                        pair.id + "'");
    }
}

Patch cut(const SourcePair& pair, int pair_index, int top, int left, int p) {
    Patch patch{pair.ir.crop(top, left, p, p), pair.vis.crop(top, left, p, p), std::nullopt, pair_index, top, left};
    if (pair.mask) patch.mask = pair.mask->crop(top, left, p, p);
    return patch;
}

} // namespace

PatchSet crop_patches(const SourcePair& pair, int patch_size, int count, std::uint64_t seed) {
    return crop_patches(std::span<const SourcePair>(&pair, 1), patch_size, count, seed);
}

PatchSet crop_patches(std::span<const SourcePair> corpus, int patch_size, int count, std::uint64_t seed) {
    if (corpus.empty()) throw DataError("cannot crop patches from an empty corpus");
    if (count < 0) throw ConfigError("patch count must be non-negative");
    for (const auto& pair : corpus) check_pair(pair, patch_size);

    std::mt19937_64 rng(seed);
    PatchSet set{patch_size, {}};
    set.patches.reserve(static_cast<std::size_t>(count));
    std::uniform_int_distribution<int> pick_pair(0, static_cast<int>(corpus.size()) - 1);
    for (int i = 0; i < count; ++i) {
        const int idx = corpus.size() == 1 ? 0 : pick_pair(rng);
        const auto& pair = corpus[static_cast<std::size_t>(idx)];
        std::uniform_int_distribution<int> pick_top(0, pair.ir.rows() - patch_size);
        std::uniform_int_distribution<int> pick_left(0, pair.ir.cols() - patch_size);
        const int top = pick_top(rng);
        const int left = pick_left(rng);
        set.patches.push_back(cut(pair, idx, top, left, patch_size));
    }
    return set;
}

} // namespace coconet
