#pragma once

#include <coconet/image.hpp>
#include <coconet/trainer.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace coconet::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfig = 2,
    kData = 3,
    kNumeric = 4,
};

struct RunConfig {
    TrainConfig train;
    std::filesystem::path corpus_dir;
    std::filesystem::path mask_dir; // defaults to <corpus_dir>/masks
    std::filesystem::path output_dir;
    std::string weights = "deterministic";
    bool deterministic = false;
    bool stage1_only = false;
    bool disable_ca = false;
    bool disable_backbone_taps = false;
};

// Flat object: the path / flag keys above plus every TrainConfig key, and an
// optional "preset" (ivif, medical_pet, medical_spect) applied first.
// Relative paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

// Fails with the offending path before any work starts.
void validate_paths(const RunConfig& cfg);

// IVIF: <corpus>/ir and <corpus>/vis. Medical: <corpus>/mri and
// <corpus>/functional (luminance of colour scans). Files pair by stem;
// masks come from mask_dir by stem when `with_masks`.
std::vector<SourcePair> load_corpus(const RunConfig& cfg, bool with_masks);

// Sorted raster files (.png, .tif, .tiff) of a directory.
std::vector<std::filesystem::path> list_rasters(const std::filesystem::path& dir);

// Entire command line minus the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace coconet::cli
