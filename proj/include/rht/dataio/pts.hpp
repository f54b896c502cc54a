#pragma once

// 300W-style .pts annotations:
//
//   version: 1
//   n_points:  68
//   {
//   x y
//   ...
//   }

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "rht/core/error.hpp"
#include "rht/heatmaps.hpp"
#include "rht/io/rhm1.hpp"

namespace rht::dataio {

struct PtsAnnotation {
    int version = 1;
    std::size_t n_points = 0;
    std::vector<Point2> points;

    friend bool operator==(const PtsAnnotation&, const PtsAnnotation&) = default;
};

namespace detail {

class PtsTokenizer {
public:
    explicit PtsTokenizer(std::string_view text) : text_(text) {}

    /// Next whitespace-delimited token, or empty at end of input.
    std::string_view next()
    {
        while (pos_ < text_.size() && is_space(text_[pos_]))
            ++pos_;
        const std::size_t start = pos_;
        while (pos_ < text_.size() && !is_space(text_[pos_]))
            ++pos_;
        return text_.substr(start, pos_ - start);
    }

private:
    static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; }

    std::string_view text_;
    std::size_t pos_ = 0;
};

template <class N>
N parse_number(std::string_view tok, const char* what)
{
    N v{};
    if (!tok.empty() && tok.front() == '+')
        tok.remove_prefix(1);
    const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || end != tok.data() + tok.size())
        throw FormatError(std::string(".pts: ") + what + " is not a number: '" + std::string(tok) + "'");
    return v;
}

inline void expect(std::string_view got, std::string_view want)
{
    if (got != want)
        throw FormatError(".pts: expected '" + std::string(want) + "', got '" + std::string(got) + "'");
}

inline void append_number(std::string& out, double v)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, r.ptr);
}

} // namespace detail

/// Tolerates CRLF line endings and arbitrary whitespace between tokens.
inline PtsAnnotation parse_pts(std::string_view text)
{
    detail::PtsTokenizer tok(text);
    PtsAnnotation a;
    auto t = tok.next();
    // Accept both "version: 1" and "version:1".
    if (t == "version:") {
        a.version = detail::parse_number<int>(tok.next(), "version");
    } else if (t.starts_with("version:")) {
        a.version = detail::parse_number<int>(t.substr(8), "version");
    } else {
        throw FormatError(".pts: missing 'version:' header");
    }
    t = tok.next();
    if (t == "n_points:") {
        a.n_points = detail::parse_number<std::size_t>(tok.next(), "n_points");
    } else if (t.starts_with("n_points:")) {
        a.n_points = detail::parse_number<std::size_t>(t.substr(9), "n_points");
    } else {
        throw FormatError(".pts: missing 'n_points:' header");
    }
    detail::expect(tok.next(), "{");
    for (;;) {
        auto x = tok.next();
        if (x.empty())
            throw FormatError(".pts: missing closing '}'");
        if (x == "}")
            break;
        auto y = tok.next();
        if (y.empty() || y == "}")
            throw FormatError(".pts: odd number of coordinates");
        a.points.push_back({detail::parse_number<double>(x, "x coordinate"), detail::parse_number<double>(y, "y coordinate")});
    }
    if (!tok.next().empty())
        throw FormatError(".pts: content after closing '}'");
    if (a.points.size() != a.n_points)
        throw FormatError(".pts: header declares " + std::to_string(a.n_points) + " points, found " +
                          std::to_string(a.points.size()));
    return a;
}

/// Canonical layout with shortest round-trip number formatting and LF line endings.
inline std::string write_pts(const PtsAnnotation& a)
{
    rht::detail::require(a.points.size() == a.n_points, "write_pts: n_points disagrees with the point list");
    std::string out = "version: " + std::to_string(a.version) + "\nn_points: " + std::to_string(a.n_points) + "\n{\n";
    for (const auto& p : a.points) {
        detail::append_number(out, p.x);
        out.push_back(' ');
        detail::append_number(out, p.y);
        out.push_back('\n');
    }
    out += "}\n";
    return out;
}

inline PtsAnnotation read_pts(const std::filesystem::path& path) { return parse_pts(io::read_file(path)); }

inline void write_pts(const std::filesystem::path& path, const PtsAnnotation& a) { io::write_file(path, write_pts(a)); }

inline PtsAnnotation to_pts(const LandmarkSet& s) { return {1, s.size(), s.points}; }

inline LandmarkSet to_landmarks(const PtsAnnotation& a, ImageSize size = {})
{
    return LandmarkSet::visible_points(a.points, size);
}

/// Whitespace-separated 0/1 flags, one per landmark.
inline std::vector<std::uint8_t> parse_visibility(std::string_view text, std::size_t expected)
{
    detail::PtsTokenizer tok(text);
    std::vector<std::uint8_t> flags;
    for (auto t = tok.next(); !t.empty(); t = tok.next()) {
        if (t != "0" && t != "1")
            throw FormatError("visibility flags must be 0 or 1, got '" + std::string(t) + "'");
        flags.push_back(t == "1" ? 1 : 0);
    }
    if (flags.size() != expected)
        throw FormatError("visibility file has " + std::to_string(flags.size()) + " flags, expected " +
                          std::to_string(expected));
    return flags;
}

} // namespace rht::dataio
