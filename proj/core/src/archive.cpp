#include "coconet/archive.hpp"

#include "coconet/error.hpp"
#include "coconet/image_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace coconet {

static_assert(std::endian::native == std::endian::little, "archive payload is written in host order");

namespace {

constexpr char kMagic[8] = {'C', 'C', 'N', 'T', 'A', 'R', 'C', 'H'};

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw DataError("archive truncated");
    T value;
    std::memcpy(&value, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return value;
}

} // namespace

std::uint32_t crc32_of(const void* data, std::size_t size) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    const auto* bytes = static_cast<const Bytef*>(data);
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = ::crc32(crc, bytes, chunk);
        bytes += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

const ArchiveArray* Archive::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

std::string serialize_archive(const Archive& archive) {
    nlohmann::json manifest;
    manifest["kind"] = archive.kind;
    manifest["version"] = archive.version;
    manifest["metadata"] = archive.metadata;
    manifest["arrays"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& a : archive.arrays) {
        std::int64_t expected = 1;
        for (auto d : a.shape) expected *= d;
        if (expected != static_cast<std::int64_t>(a.data.size())) {
            throw DataError("archive array '" + a.name + "' shape does not match its data");
        }
        manifest["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
        offset += a.data.size() * sizeof(double);
    }
    const std::string text = manifest.dump();

    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kArchiveContainerVersion);
    put<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& a : archive.arrays) {
        out.append(reinterpret_cast<const char*>(a.data.data()), a.data.size() * sizeof(double));
    }
    put<std::uint32_t>(out, crc32_of(out.data(), out.size()));
    return out;
}

Archive parse_archive(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) + 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw DataError("not an archive (bad magic)");
    }
    std::size_t pos = sizeof(kMagic);
    const auto container = get<std::uint32_t>(bytes, pos);
    if (container > kArchiveContainerVersion) {
        throw DataError("archive container version " + std::to_string(container) + " is newer than supported");
    }
    const auto manifest_size = get<std::uint64_t>(bytes, pos);
    if (manifest_size > bytes.size() - pos) throw DataError("archive truncated (manifest)");

    // Integrity first: a damaged tail or body must not be half-parsed.
    std::size_t crc_pos = bytes.size() - sizeof(std::uint32_t);
    const auto stored_crc = get<std::uint32_t>(bytes, crc_pos);
    if (crc32_of(bytes.data(), bytes.size() - sizeof(std::uint32_t)) != stored_crc) {
        throw DataError("archive integrity check failed (checksum mismatch)");
    }

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(pos, manifest_size));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("archive manifest is malformed: ") + e.what());
    }
    pos += manifest_size;
    const std::size_t payload_begin = pos;
    const std::size_t payload_size = bytes.size() - sizeof(std::uint32_t) - payload_begin;

    Archive archive;
    try {
        archive.kind = manifest.at("kind").get<std::string>();
        archive.version = manifest.at("version").get<int>();
        archive.metadata = manifest.value("metadata", nlohmann::json::object());
        for (const auto& entry : manifest.at("arrays")) {
            ArchiveArray a;
            a.name = entry.at("name").get<std::string>();
            a.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto count = entry.at("count").get<std::uint64_t>();
            if (offset + count * sizeof(double) > payload_size) {
                throw DataError("archive array '" + a.name + "' extends past the payload");
            }
            a.data.resize(count);
            std::memcpy(a.data.data(), bytes.data() + payload_begin + offset, count * sizeof(double));
            archive.arrays.push_back(std::move(a));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("archive manifest is malformed: ") + e.what());
    }
    return archive;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    write_file_atomic(path, serialize_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open archive: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_archive(buf.str());
}

} // namespace coconet
