#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace coconet {

// Declared value range of a plane.
enum class RangeTag {
    Unit8,  // [0, 255]
    Unit,   // [0, 1]
    Signed, // [-1, 1]
};

struct ValueRange {
    double lo;
    double hi;
    double width() const { return hi - lo; }
};

ValueRange range_of(RangeTag tag);
const char* to_string(RangeTag tag);

// Single-channel raster, row-major. Every pixel lies inside the declared range;
// the constructor enforces it, and there is no mutable pixel access.
class ImagePlane {
public:
    ImagePlane(int rows, int cols, RangeTag tag, double fill);
    ImagePlane(int rows, int cols, std::vector<double> pixels, RangeTag tag);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return pixels_.size(); }
    RangeTag range() const { return tag_; }

    double operator()(int r, int c) const { return pixels_[static_cast<std::size_t>(r) * cols_ + c]; }
    std::span<const double> pixels() const { return pixels_; }
    const std::vector<double>& data() const { return pixels_; }

    bool same_shape(const ImagePlane& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    ImagePlane crop(int top, int left, int height, int width) const;
    ImagePlane transposed() const;

private:
    int rows_;
    int cols_;
    RangeTag tag_;
    std::vector<double> pixels_;
};

// Affine remap between declared ranges. Total on valid planes; the inverse is
// the same call with the source tag.
ImagePlane normalize(const ImagePlane& img, RangeTag target);

// Rounds onto [0,255] integers (after remapping to Unit8).
std::vector<std::uint8_t> quantize_u8(const ImagePlane& img);

// Clamps arbitrary values into `tag` and builds a plane.
ImagePlane clamp_to_plane(int rows, int cols, std::span<const double> values, RangeTag tag);

struct ColorImage {
    int rows = 0;
    int cols = 0;
    std::vector<double> r, g, b; // each in [0,1]
};

struct YCbCrImage {
    ImagePlane y; // Unit range
    std::vector<double> cb;
    std::vector<double> cr;
};

// Full-range BT.601 (JFIF) conversion on [0,1] data; chroma is centred on 0.5.
YCbCrImage rgb_to_ycbcr(const ColorImage& img);
// Output is clamped into [0,1]; a fused luminance can leave the RGB gamut.
ColorImage ycbcr_to_rgb(const YCbCrImage& img);

class SaliencyMask {
public:
    SaliencyMask(int rows, int cols, std::vector<std::uint8_t> bits);
    static SaliencyMask filled(int rows, int cols, bool value);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    bool operator()(int r, int c) const { return bits_[static_cast<std::size_t>(r) * cols_ + c] != 0; }
    std::span<const std::uint8_t> bits() const { return bits_; }

    SaliencyMask complement() const;
    SaliencyMask crop(int top, int left, int height, int width) const;
    std::size_t count() const;

    bool matches(const ImagePlane& img) const { return rows_ == img.rows() && cols_ == img.cols(); }

    // x ⊙ m; zero lies in every supported range.
    ImagePlane apply(const ImagePlane& img) const;

    bool operator==(const SaliencyMask&) const = default;

private:
    int rows_;
    int cols_;
    std::vector<std::uint8_t> bits_;
};

struct MaskResult {
    SaliencyMask mask;
    std::optional<std::string> warning;
};

// Marks pixels strictly above the `quantile` intensity of the plane (linear
// interpolation between order statistics). quantile == 0 selects every pixel.
// Constant planes yield an all-zero mask with a warning.
MaskResult threshold_saliency_mask(const ImagePlane& ir, double quantile,
                                   bool keep_largest_component = false);

// One registered source pair, optionally with its foreground mask.
struct SourcePair {
    std::string id;
    ImagePlane ir;
    ImagePlane vis;
    std::optional<SaliencyMask> mask;
};

struct Patch {
    ImagePlane ir;
    ImagePlane vis;
    std::optional<SaliencyMask> mask;
    int pair_index = 0;
    int top = 0;
    int left = 0;
};

struct PatchSet {
    int patch_size = 0;
    std::vector<Patch> patches;
};

// `count` aligned P×P crops of one pair, offsets uniform over valid positions.
PatchSet crop_patches(const SourcePair& pair, int patch_size, int count, std::uint64_t seed);

// Corpus variant: each patch picks a pair uniformly, then an offset.
PatchSet crop_patches(std::span<const SourcePair> corpus, int patch_size, int count,
                      std::uint64_t seed);

} // namespace coconet
