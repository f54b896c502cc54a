#pragma once

// Binary PGM (P5) and PPM (P6) with maxval <= 255. In memory an image is a Volume<double> with 1 or
// 3 channels and values in [0, 1].

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "rht/core/error.hpp"
#include "rht/core/volume.hpp"
#include "rht/io/rhm1.hpp"

namespace rht::dataio {

namespace detail {

class PnmHeaderReader {
public:
    explicit PnmHeaderReader(std::string_view bytes) : b_(bytes) {}

    std::string_view token()
    {
        for (;;) {
            while (pos_ < b_.size() && is_space(b_[pos_]))
                ++pos_;
            if (pos_ < b_.size() && b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n')
                    ++pos_;
                continue;
            }
            break;
        }
        const std::size_t start = pos_;
        while (pos_ < b_.size() && !is_space(b_[pos_]) && b_[pos_] != '#')
            ++pos_;
        return b_.substr(start, pos_ - start);
    }

    std::size_t number(const char* what)
    {
        const auto t = token();
        std::size_t v = 0;
        if (t.empty())
            throw FormatError(std::string("PNM: missing ") + what);
        for (char c : t) {
            if (c < '0' || c > '9')
                throw FormatError(std::string("PNM: ") + what + " is not a number");
            v = v * 10 + static_cast<std::size_t>(c - '0');
            if (v > (1u << 24))
                throw FormatError(std::string("PNM: ") + what + " too large");
        }
        return v;
    }

    /// Exactly one whitespace byte separates the header from the raster.
    std::size_t raster_offset()
    {
        if (pos_ >= b_.size() || !is_space(b_[pos_]))
            throw FormatError("PNM: header not terminated by whitespace");
        return pos_ + 1;
    }

private:
    static bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

    std::string_view b_;
    std::size_t pos_ = 0;
};

inline std::uint8_t quantize(double v)
{
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

} // namespace detail

inline Volume<double> decode_pnm(std::string_view bytes)
{
    detail::PnmHeaderReader r(bytes);
    const auto magic = r.token();
    std::size_t channels = 0;
    if (magic == "P5")
        channels = 1;
    else if (magic == "P6")
        channels = 3;
    else
        throw FormatError("PNM: expected P5 or P6 magic, got '" + std::string(magic) + "'");
    const auto w = r.number("width");
    const auto h = r.number("height");
    const auto maxval = r.number("maxval");
    if (w == 0 || h == 0)
        throw FormatError("PNM: zero image dimension");
    if (maxval == 0 || maxval > 255)
        throw FormatError("PNM: only maxval 1..255 is supported, got " + std::to_string(maxval));
    const std::size_t offset = r.raster_offset();
    const std::size_t count = w * h * channels;
    if (bytes.size() - offset < count)
        throw FormatError("PNM: raster truncated");
    Volume<double> img(h, w, channels);
    auto vals = img.values();
    for (std::size_t i = 0; i < count; ++i)
        vals[i] = static_cast<double>(static_cast<unsigned char>(bytes[offset + i])) / static_cast<double>(maxval);
    return img;
}

/// P5 for one channel, P6 for three; values are clamped to [0, 1] and rounded to 8 bits.
inline std::string encode_pnm(const Volume<double>& img)
{
    rht::detail::require(img.channels() == 1 || img.channels() == 3,
                         "PNM images need 1 or 3 channels, got " + std::to_string(img.channels()));
    rht::detail::require(!img.empty(), "cannot encode an empty image");
    std::string out = (img.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(img.width()) + " " +
                      std::to_string(img.height()) + "\n255\n";
    out.reserve(out.size() + img.size());
    for (double v : img.values())
        out.push_back(static_cast<char>(detail::quantize(v)));
    return out;
}

inline Volume<double> read_image(const std::filesystem::path& path) { return decode_pnm(io::read_file(path)); }

inline void write_image(const std::filesystem::path& path, const Volume<double>& img)
{
    io::write_file(path, encode_pnm(img));
}

/// Luma for 3-channel input, identity for 1-channel input.
inline Volume<double> to_gray(const Volume<double>& img)
{
    rht::detail::require(img.channels() == 1 || img.channels() == 3,
                         "grayscale conversion needs 1 or 3 channels, got " + std::to_string(img.channels()));
    if (img.channels() == 1)
        return img;
    Volume<double> g(img.height(), img.width(), 1);
    for (std::size_t i = 0; i < img.pixels(); ++i) {
        auto p = img.pixel(i);
        g.values()[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
    return g;
}

/// One channel scaled so its maximum maps to 1 (all-nonpositive channels map to 0), for PGM output.
inline Volume<double> normalized_channel(const Volume<double>& v, std::size_t channel)
{
    rht::detail::require(channel < v.channels(), "channel " + std::to_string(channel) + " out of range (volume has " +
                                                     std::to_string(v.channels()) + ")");
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < v.pixels(); ++i) {
        lo = std::min(lo, v.pixel(i)[channel]);
        hi = std::max(hi, v.pixel(i)[channel]);
    }
    Volume<double> out(v.height(), v.width(), 1);
    // Heatmaps are non-negative; signed feature maps are shifted to start at 0.
    const double base = lo < 0 ? lo : 0.0;
    const double range = hi - base;
    if (!(range > 0) || !std::isfinite(range))
        return out;
    for (std::size_t i = 0; i < v.pixels(); ++i)
        out.values()[i] = (v.pixel(i)[channel] - base) / range;
    return out;
}

} // namespace rht::dataio
