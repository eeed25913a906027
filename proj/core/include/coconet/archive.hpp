#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace coconet {

// Flat binary container for named float64 arrays.
//
//   "CCNTARCH"            8-byte magic
//   u32 container version
//   u64 manifest length
//   manifest              JSON: kind, version, metadata, arrays[{name, shape, offset, count}]
//   payload               little-endian float64 arrays, offsets relative to payload start
//   u32 crc32             over every preceding byte
//
// `kind` and `version` describe the content ("backbone", "checkpoint", ...);
// readers reject versions newer than they understand.
struct ArchiveArray {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<double> data;
};

struct Archive {
    std::string kind;
    int version = 1;
    nlohmann::json metadata = nlohmann::json::object();
    std::vector<ArchiveArray> arrays;

    const ArchiveArray* find(const std::string& name) const;
};

inline constexpr std::uint32_t kArchiveContainerVersion = 1;

std::string serialize_archive(const Archive& archive);
Archive parse_archive(const std::string& bytes);

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

// CRC32 of an arbitrary byte string (used for corpus and parameter hashes).
std::uint32_t crc32_of(const void* data, std::size_t size);

} // namespace coconet
