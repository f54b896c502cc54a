#pragma once

// RHM1 container: "RHM1", u32 LE height, width, channels, then height*width*channels f64 LE values
// in row-major, channel-minor order. Checkpoints concatenate named RHM1 blocks and describe them
// in a JSON manifest next to the data file.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rht/core/error.hpp"
#include "rht/core/tensor.hpp"
#include "rht/core/volume.hpp"
#include "rht/htm.hpp"
#include "rht/stm.hpp"

namespace rht::io {

inline constexpr std::array<char, 4> rhm1_magic{'R', 'H', 'M', '1'};
inline constexpr std::size_t rhm1_header_bytes = 16;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

inline void put_f64(std::string& out, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i)
        out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

inline std::uint64_t get_le(const unsigned char* p, int bytes)
{
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i)
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

inline std::uint32_t checked_u32(std::size_t v, const char* what)
{
    if (v > 0xffffffffULL)
        throw FormatError(std::string("RHM1: ") + what + " exceeds 32 bits");
    return static_cast<std::uint32_t>(v);
}

} // namespace detail

inline std::string encode_rhm1(const Volume<double>& v)
{
    std::string out;
    out.reserve(rhm1_header_bytes + 8 * v.size());
    out.append(rhm1_magic.data(), rhm1_magic.size());
    detail::put_u32(out, detail::checked_u32(v.height(), "height"));
    detail::put_u32(out, detail::checked_u32(v.width(), "width"));
    detail::put_u32(out, detail::checked_u32(v.channels(), "channel count"));
    for (double x : v.values())
        detail::put_f64(out, x);
    return out;
}

/// Decodes one block starting at offset; advances offset past it.
inline Volume<double> decode_rhm1(std::string_view bytes, std::size_t& offset)
{
    if (bytes.size() < offset + rhm1_header_bytes)
        throw FormatError("RHM1: truncated header");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
    if (std::memcmp(p, rhm1_magic.data(), 4) != 0)
        throw FormatError("RHM1: bad magic");
    const auto h = static_cast<std::size_t>(detail::get_le(p + 4, 4));
    const auto w = static_cast<std::size_t>(detail::get_le(p + 8, 4));
    const auto c = static_cast<std::size_t>(detail::get_le(p + 12, 4));
    if (h == 0 || w == 0 || c == 0)
        throw FormatError("RHM1: zero dimension " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                          std::to_string(c));
    const std::size_t count = h * w * c;
    if (count / h / w != c || (bytes.size() - offset - rhm1_header_bytes) / 8 < count)
        throw FormatError("RHM1: payload shorter than " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                          std::to_string(c));
    Volume<double> v(h, w, c);
    auto vals = v.values();
    p += rhm1_header_bytes;
    for (std::size_t i = 0; i < count; ++i)
        vals[i] = std::bit_cast<double>(detail::get_le(p + 8 * i, 8));
    offset += rhm1_header_bytes + 8 * count;
    return v;
}

inline Volume<double> decode_rhm1(std::string_view bytes)
{
    std::size_t offset = 0;
    auto v = decode_rhm1(bytes, offset);
    if (offset != bytes.size())
        throw FormatError("RHM1: " + std::to_string(bytes.size() - offset) + " trailing bytes");
    return v;
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write to '" + path.string() + "' failed");
}

inline Volume<double> read_rhm1(const std::filesystem::path& path) { return decode_rhm1(read_file(path)); }

inline void write_rhm1(const std::filesystem::path& path, const Volume<double>& v) { write_file(path, encode_rhm1(v)); }

// ---------------------------------------------------------------------------------------------
// Typed views

/// Tensors map to blocks as: rank 1 -> 1x1xN, rank 2 -> 1xAxB, rank 3 -> AxBxC, rank 4 -> AxBx(C*D).
/// The manifest keeps the original shape so the mapping round-trips.
inline GridSize tensor_block_grid(const std::vector<std::size_t>& shape, std::size_t& channels)
{
    switch (shape.size()) {
    case 1: channels = shape[0]; return {1, 1};
    case 2: channels = shape[1]; return {1, shape[0]};
    case 3: channels = shape[2]; return {shape[0], shape[1]};
    case 4: channels = shape[2] * shape[3]; return {shape[0], shape[1]};
    default: throw InvalidArgument("tensor rank " + std::to_string(shape.size()) + " has no RHM1 mapping");
    }
}

inline Volume<double> tensor_to_volume(const Tensor<double>& t)
{
    std::size_t c = 0;
    const auto g = tensor_block_grid(t.shape, c);
    Volume<double> v(g.height, g.width, c);
    std::copy(t.data.begin(), t.data.end(), v.values().begin());
    return v;
}

inline Volume<double> theta_to_volume(const AffineMatrix<double>& theta)
{
    Volume<double> v(1, 6, 1);
    std::copy(theta.theta.begin(), theta.theta.end(), v.values().begin());
    return v;
}

inline AffineMatrix<double> volume_to_theta(const Volume<double>& v)
{
    if (v.size() != 6)
        throw FormatError("affine matrix block must hold 6 values, got " + shape_string(v));
    AffineMatrix<double> theta;
    std::copy(v.values().begin(), v.values().end(), theta.theta.begin());
    return theta;
}

/// C as a 1-channel (HW)x(HW) map; D and A as 1x(HW) maps. C is omitted when not materialized.
inline std::string encode_correlation(const CorrelationArtifacts<double>& art)
{
    std::string out;
    const std::size_t n = art.rows;
    if (!art.C.empty()) {
        Volume<double> c(n, art.cols, 1);
        std::copy(art.C.begin(), art.C.end(), c.values().begin());
        out += encode_rhm1(c);
    }
    Volume<double> d(1, n, 1), a(1, n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        d.values()[i] = static_cast<double>(art.D[i]);
        a.values()[i] = art.A[i];
    }
    out += encode_rhm1(d);
    out += encode_rhm1(a);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Named-map checkpoint

struct ManifestEntry {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t height = 0, width = 0, channels = 0;
    std::size_t offset = 0;
};

inline std::filesystem::path manifest_path(const std::filesystem::path& data_path)
{
    auto p = data_path;
    p += ".json";
    return p;
}

inline void validate_tensor_name(const std::string& name)
{
    rht::detail::require(!name.empty(), "checkpoint tensor names must be non-empty");
    for (unsigned char ch : name)
        rht::detail::require(ch >= 0x21 && ch < 0x7f, "checkpoint tensor name '" + name + "' must be printable ASCII");
}

/// Writes data_path (concatenated blocks) and data_path + ".json" (manifest). Names must be unique.
inline void save_checkpoint(const std::filesystem::path& data_path,
                            const std::vector<std::pair<std::string, const Tensor<double>*>>& tensors)
{
    std::string blob;
    nlohmann::json entries = nlohmann::json::array();
    std::map<std::string, int> seen;
    for (const auto& [name, t] : tensors) {
        validate_tensor_name(name);
        rht::detail::require(seen.emplace(name, 0).second, "duplicate checkpoint tensor name '" + name + "'");
        const auto v = tensor_to_volume(*t);
        entries.push_back({{"name", name},
                           {"shape", t->shape},
                           {"H", v.height()},
                           {"W", v.width()},
                           {"C", v.channels()},
                           {"offset", blob.size()}});
        blob += encode_rhm1(v);
    }
    write_file(data_path, blob);
    const nlohmann::json manifest{{"format", "RHM1"}, {"data", data_path.filename().string()}, {"tensors", entries}};
    write_file(manifest_path(data_path), manifest.dump(2) + "\n");
}

inline std::vector<ManifestEntry> parse_checkpoint_manifest(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    std::vector<ManifestEntry> out;
    try {
        if (j.at("format") != "RHM1")
            throw FormatError("checkpoint manifest: unsupported format");
        for (const auto& e : j.at("tensors")) {
            ManifestEntry m;
            e.at("name").get_to(m.name);
            e.at("shape").get_to(m.shape);
            e.at("H").get_to(m.height);
            e.at("W").get_to(m.width);
            e.at("C").get_to(m.channels);
            e.at("offset").get_to(m.offset);
            out.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    return out;
}

/// Fills every tensor in the list from the checkpoint; shapes must match exactly.
inline void load_checkpoint(const std::filesystem::path& data_path,
                            const std::vector<std::pair<std::string, Tensor<double>*>>& tensors)
{
    const auto entries = parse_checkpoint_manifest(read_file(manifest_path(data_path)));
    const auto blob = read_file(data_path);
    std::map<std::string, const ManifestEntry*> by_name;
    for (const auto& e : entries)
        by_name[e.name] = &e;
    for (const auto& [name, t] : tensors) {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw FormatError("checkpoint has no tensor '" + name + "'");
        const auto& e = *it->second;
        if (e.shape != t->shape)
            throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(Tensor<double>{e.shape, {}}) +
                             ", expected " + shape_string(*t));
        std::size_t offset = e.offset;
        const auto v = decode_rhm1(blob, offset);
        if (v.height() != e.height || v.width() != e.width || v.channels() != e.channels || v.size() != t->size())
            throw FormatError("checkpoint block for '" + name + "' disagrees with the manifest");
        std::copy(v.values().begin(), v.values().end(), t->data.begin());
    }
}

} // namespace rht::io
