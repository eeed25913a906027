#include "coconet/image_io.hpp"

#include "coconet/error.hpp"

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <unistd.h>

namespace coconet {

namespace fs = std::filesystem;

namespace {

bool supported_extension(const fs::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".tif" || ext == ".tiff";
}

cv::Mat decode(const fs::path& path) {
    if (!fs::exists(path)) throw DataError("no such file: " + path.string());
    if (!supported_extension(path)) throw DataError("unsupported raster format: " + path.string());
    cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mat.empty()) throw DataError("cannot decode raster: " + path.string());
    if (mat.depth() != CV_8U) throw DataError("not an 8-bit raster: " + path.string());
    if (mat.channels() != 1 && mat.channels() != 3) {
        throw DataError("expected 1 or 3 channels in " + path.string());
    }
    if (mat.rows < 1 || mat.cols < 1) throw DataError("zero-sized raster: " + path.string());
    return mat;
}

std::vector<double> luma_u8(const cv::Mat& mat) {
    std::vector<double> out(static_cast<std::size_t>(mat.rows) * mat.cols);
    std::size_t i = 0;
    for (int r = 0; r < mat.rows; ++r) {
        if (mat.channels() == 1) {
            const auto* row = mat.ptr<std::uint8_t>(r);
            for (int c = 0; c < mat.cols; ++c) out[i++] = row[c];
        } else {
            const auto* row = mat.ptr<cv::Vec3b>(r);
            for (int c = 0; c < mat.cols; ++c) {
                const auto& bgr = row[c];
                out[i++] = std::round(0.299 * bgr[2] + 0.587 * bgr[1] + 0.114 * bgr[0]);
            }
        }
    }
    return out;
}

fs::path temp_sibling(const fs::path& path) {
    static std::atomic<unsigned> counter{0};
    auto name = "." + path.stem().string() + ".tmp" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++) + path.extension().string();
    return path.parent_path() / name;
}

void write_mat_atomic(const fs::path& path, const cv::Mat& mat) {
    if (!supported_extension(path)) throw DataError("unsupported output format: " + path.string());
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = temp_sibling(path);
    bool ok = false;
    try {
        ok = cv::imwrite(tmp.string(), mat);
    } catch (const cv::Exception& e) {
        ok = false;
    }
    if (!ok) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw DataError("cannot write raster: " + path.string());
    }
    fs::rename(tmp, path);
}

std::uint8_t to_u8(double unit) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(unit * 255.0), 0L, 255L));
}

} // namespace

ImagePlane load_grayscale(const fs::path& path) {
    const cv::Mat mat = decode(path);
    return ImagePlane(mat.rows, mat.cols, luma_u8(mat), RangeTag::Unit8);
}

ColorImage load_color(const fs::path& path) {
    const cv::Mat mat = decode(path);
    const std::size_t n = static_cast<std::size_t>(mat.rows) * mat.cols;
    ColorImage img{mat.rows, mat.cols, std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
    std::size_t i = 0;
    for (int r = 0; r < mat.rows; ++r) {
        for (int c = 0; c < mat.cols; ++c, ++i) {
            if (mat.channels() == 1) {
                img.r[i] = img.g[i] = img.b[i] = mat.at<std::uint8_t>(r, c) / 255.0;
            } else {
                const auto& bgr = mat.at<cv::Vec3b>(r, c);
                img.r[i] = bgr[2] / 255.0;
                img.g[i] = bgr[1] / 255.0;
                img.b[i] = bgr[0] / 255.0;
            }
        }
    }
    return img;
}

bool is_grayscale_raster(const fs::path& path) {
    const cv::Mat mat = decode(path);
    if (mat.channels() == 1) return true;
    for (int r = 0; r < mat.rows; ++r) {
        const auto* row = mat.ptr<cv::Vec3b>(r);
        for (int c = 0; c < mat.cols; ++c) {
            if (row[c][0] != row[c][1] || row[c][1] != row[c][2]) return false;
        }
    }
    return true;
}

SaliencyMask load_mask(const fs::path& path, const ImagePlane& paired) {
    const cv::Mat mat = decode(path);
    if (mat.rows != paired.rows() || mat.cols != paired.cols()) {
        throw DataError("mask " + path.string() + " is " + std::to_string(mat.rows) + "x" +
                        std::to_string(mat.cols) + " but its image is " + std::to_string(paired.rows()) +
                        "x" + std::to_string(paired.cols()));
    }
    const auto levels = luma_u8(mat);
    std::vector<std::uint8_t> bits(levels.size());
    std::transform(levels.begin(), levels.end(), bits.begin(),
                   [](double v) { return static_cast<std::uint8_t>(v / 255.0 >= 0.5 ? 1 : 0); });
    return SaliencyMask(mat.rows, mat.cols, std::move(bits));
}

void save_grayscale(const fs::path& path, const ImagePlane& img) {
    const auto levels = quantize_u8(img);
    cv::Mat mat(img.rows(), img.cols(), CV_8UC1);
    std::copy(levels.begin(), levels.end(), mat.ptr<std::uint8_t>(0));
    write_mat_atomic(path, mat);
}

void save_color(const fs::path& path, const ColorImage& img) {
    cv::Mat mat(img.rows, img.cols, CV_8UC3);
    std::size_t i = 0;
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c, ++i) {
            mat.at<cv::Vec3b>(r, c) = cv::Vec3b(to_u8(img.b[i]), to_u8(img.g[i]), to_u8(img.r[i]));
        }
    }
    write_mat_atomic(path, mat);
}

void save_mask(const fs::path& path, const SaliencyMask& mask) {
    cv::Mat mat(mask.rows(), mask.cols(), CV_8UC1);
    std::transform(mask.bits().begin(), mask.bits().end(), mat.ptr<std::uint8_t>(0),
                   [](std::uint8_t b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
    write_mat_atomic(path, mat);
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto tmp = temp_sibling(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open for writing: " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw DataError("write failed: " + tmp.string());
    }
    fs::rename(tmp, path);
}

} // namespace coconet
