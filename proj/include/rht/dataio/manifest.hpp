#pragma once

// Dataset manifest (JSON) and landmark conventions: pupil and eye-corner indices, boundary
// polylines, and the horizontal-flip permutation.

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rht/core/error.hpp"
#include "rht/dataio/pts.hpp"
#include "rht/heatmaps.hpp"
#include "rht/io/rhm1.hpp"
#include "rht/metrics.hpp"

namespace rht::dataio {

struct LandmarkConvention {
    std::string name;
    std::size_t num_landmarks = 0;
    std::vector<std::size_t> left_pupil;
    std::vector<std::size_t> right_pupil;
    std::optional<std::size_t> left_eye_corner;
    std::optional<std::size_t> right_eye_corner;
    BoundaryDefinition boundaries;
    std::vector<std::size_t> flip_permutation; // empty: flipping keeps indices

    void validate() const
    {
        rht::detail::require(num_landmarks >= 1, "convention '" + name + "' has no landmarks");
        auto check_index = [&](std::size_t i, const char* what) {
            rht::detail::require(i < num_landmarks, "convention '" + name + "': " + what + " index " +
                                                        std::to_string(i) + " out of range");
        };
        for (auto i : left_pupil)
            check_index(i, "left pupil");
        for (auto i : right_pupil)
            check_index(i, "right pupil");
        if (left_eye_corner)
            check_index(*left_eye_corner, "left eye corner");
        if (right_eye_corner)
            check_index(*right_eye_corner, "right eye corner");
        boundaries.validate(num_landmarks);
        if (!flip_permutation.empty()) {
            rht::detail::require(flip_permutation.size() == num_landmarks,
                                 "convention '" + name + "': flip permutation has " +
                                     std::to_string(flip_permutation.size()) + " entries for " +
                                     std::to_string(num_landmarks) + " landmarks");
            for (std::size_t i = 0; i < num_landmarks; ++i) {
                check_index(flip_permutation[i], "flip permutation");
                rht::detail::require(flip_permutation[flip_permutation[i]] == i,
                                     "convention '" + name + "': flip permutation is not an involution at " +
                                         std::to_string(i));
            }
        }
    }

    /// Normalization spec for the given kind; box kinds take the box from the caller.
    NormalizationSpec normalization(NormalizationKind kind, std::optional<BoxSize> box = std::nullopt) const
    {
        NormalizationSpec s;
        s.kind = kind;
        s.left_pupil = left_pupil;
        s.right_pupil = right_pupil;
        s.left_corner = left_eye_corner;
        s.right_corner = right_eye_corner;
        s.box = box;
        return s;
    }
};

namespace detail {

inline std::vector<std::size_t> range(std::size_t first, std::size_t last)
{
    std::vector<std::size_t> v;
    for (std::size_t i = first; i <= last; ++i)
        v.push_back(i);
    return v;
}

} // namespace detail

/// 68-point 300W layout with 13 boundaries: jaw, both brows, nose bridge, lower nose, four eyelids
/// and four lip contours.
inline LandmarkConvention default_convention_68()
{
    LandmarkConvention c;
    c.name = "300w-68";
    c.num_landmarks = 68;
    c.left_pupil = detail::range(36, 41);
    c.right_pupil = detail::range(42, 47);
    c.left_eye_corner = 36;
    c.right_eye_corner = 45;
    c.boundaries.boundaries = {
        detail::range(0, 16),
        detail::range(17, 21),
        detail::range(22, 26),
        detail::range(27, 30),
        detail::range(31, 35),
        {36, 37, 38, 39},
        {39, 40, 41, 36},
        {42, 43, 44, 45},
        {45, 46, 47, 42},
        detail::range(48, 54),
        {60, 61, 62, 63, 64},
        {60, 67, 66, 65, 64},
        {48, 59, 58, 57, 56, 55, 54},
    };
    std::vector<std::size_t> flip(68);
    for (std::size_t i = 0; i < 68; ++i)
        flip[i] = i;
    auto swap = [&](std::size_t a, std::size_t b) {
        flip[a] = b;
        flip[b] = a;
    };
    for (std::size_t i = 0; i < 8; ++i)
        swap(i, 16 - i);
    for (std::size_t i = 0; i < 5; ++i)
        swap(17 + i, 26 - i);
    swap(31, 35);
    swap(32, 34);
    swap(36, 45);
    swap(37, 44);
    swap(38, 43);
    swap(39, 42);
    swap(40, 47);
    swap(41, 46);
    swap(48, 54);
    swap(49, 53);
    swap(50, 52);
    swap(55, 59);
    swap(56, 58);
    swap(60, 64);
    swap(61, 63);
    swap(65, 67);
    c.flip_permutation = std::move(flip);
    return c;
}

inline nlohmann::json to_json(const LandmarkConvention& c)
{
    nlohmann::json j{{"name", c.name},
                     {"num_landmarks", c.num_landmarks},
                     {"left_pupil", c.left_pupil},
                     {"right_pupil", c.right_pupil},
                     {"boundaries", c.boundaries.boundaries},
                     {"flip_permutation", c.flip_permutation}};
    if (c.left_eye_corner)
        j["left_eye_corner"] = *c.left_eye_corner;
    if (c.right_eye_corner)
        j["right_eye_corner"] = *c.right_eye_corner;
    return j;
}

inline LandmarkConvention convention_from_json(const nlohmann::json& j)
{
    if (j.is_string()) {
        if (j.get<std::string>() == "300w-68")
            return default_convention_68();
        throw InvalidArgument("unknown landmark convention '" + j.get<std::string>() + "'");
    }
    LandmarkConvention c;
    try {
        c.name = j.value("name", std::string("custom"));
        j.at("num_landmarks").get_to(c.num_landmarks);
        c.left_pupil = j.value("left_pupil", std::vector<std::size_t>{});
        c.right_pupil = j.value("right_pupil", std::vector<std::size_t>{});
        if (j.contains("left_eye_corner"))
            c.left_eye_corner = j.at("left_eye_corner").get<std::size_t>();
        if (j.contains("right_eye_corner"))
            c.right_eye_corner = j.at("right_eye_corner").get<std::size_t>();
        c.boundaries.boundaries = j.value("boundaries", std::vector<std::vector<std::size_t>>{});
        c.flip_permutation = j.value("flip_permutation", std::vector<std::size_t>{});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("landmark convention: ") + e.what());
    }
    c.validate();
    return c;
}

struct DatasetEntry {
    std::filesystem::path image;
    std::filesystem::path annotation;
    std::optional<BoxSize> box;
    std::optional<std::filesystem::path> visibility;
    std::vector<std::string> tags;

    std::string stem() const { return annotation.stem().string(); }
};

struct DatasetManifest {
    LandmarkConvention convention = default_convention_68();
    std::vector<DatasetEntry> entries;

    /// Landmarks of one entry with visibility applied (all visible when no flag file is given).
    LandmarkSet load_landmarks(std::size_t i) const
    {
        const auto& e = entries.at(i);
        auto set = to_landmarks(read_pts(e.annotation));
        rht::detail::require(set.size() == convention.num_landmarks,
                             e.annotation.string() + " has " + std::to_string(set.size()) + " points, convention '" +
                                 convention.name + "' expects " + std::to_string(convention.num_landmarks));
        if (e.visibility)
            set.visibility = parse_visibility(io::read_file(*e.visibility), set.size());
        return set;
    }
};

/// Relative paths resolve against base_dir; every referenced file must exist.
inline DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    DatasetManifest m;
    if (j.contains("convention"))
        m.convention = convention_from_json(j.at("convention"));
    m.convention.validate();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        if (path.is_relative())
            path = base_dir / path;
        if (!std::filesystem::exists(path))
            throw IoError("manifest references missing file '" + path.string() + "'");
        return path;
    };
    try {
        for (const auto& e : j.value("entries", nlohmann::json::array())) {
            DatasetEntry d;
            if (e.contains("image"))
                d.image = resolve(e.at("image").get<std::string>());
            d.annotation = resolve(e.at("annotation").get<std::string>());
            if (e.contains("box")) {
                const auto& b = e.at("box");
                BoxSize box;
                if (b.is_array()) {
                    rht::detail::require(b.size() == 2, "manifest box must be [width, height]");
                    box = {b[0].get<double>(), b[1].get<double>()};
                } else {
                    box = {b.at("width").get<double>(), b.at("height").get<double>()};
                }
                rht::detail::require(box.width > 0 && box.height > 0, "manifest box must have positive size");
                d.box = box;
            }
            if (e.contains("visibility"))
                d.visibility = resolve(e.at("visibility").get<std::string>());
            d.tags = e.value("tags", std::vector<std::string>{});
            m.entries.push_back(std::move(d));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path)
{
    return parse_manifest(io::read_file(path), path.parent_path());
}

} // namespace rht::dataio
