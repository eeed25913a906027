#pragma once

#include "coconet/image.hpp"

#include <filesystem>

namespace coconet {

// 8-bit PNG/TIFF; three-channel rasters are converted with rounded BT.601 luma.
ImagePlane load_grayscale(const std::filesystem::path& path);

// 8-bit colour raster as [0,1] channels; single-channel input is replicated.
ColorImage load_color(const std::filesystem::path& path);

// True when the file is single-channel or all three channels agree.
bool is_grayscale_raster(const std::filesystem::path& path);

// Binarized at half the 8-bit range (value >= 128 -> 1).
SaliencyMask load_mask(const std::filesystem::path& path, const ImagePlane& paired);

// All writers go through a temporary sibling and an atomic rename. The
// format follows the extension (.png, .tif, .tiff).
void save_grayscale(const std::filesystem::path& path, const ImagePlane& img);
void save_color(const std::filesystem::path& path, const ColorImage& img);
void save_mask(const std::filesystem::path& path, const SaliencyMask& mask);

// Writes `contents` to `path` via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

} // namespace coconet
