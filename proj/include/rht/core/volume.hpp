#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "rht/core/error.hpp"

namespace rht {

struct GridSize {
    std::size_t height = 0;
    std::size_t width = 0;

    friend bool operator==(const GridSize&, const GridSize&) = default;
};

inline std::string to_string(GridSize s)
{
    return std::to_string(s.height) + "x" + std::to_string(s.width);
}

// Dense H x W x C grid, row-major with channels innermost.
template <class T>
class Volume {
    static_assert(std::is_floating_point_v<T>);

public:
    using value_type = T;

    Volume() = default;
    Volume(std::size_t height, std::size_t width, std::size_t channels, T fill = T{0})
        : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill)
    {
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t pixels() const noexcept { return height_ * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    GridSize grid() const noexcept { return {height_, width_}; }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(std::size_t y, std::size_t x, std::size_t c) noexcept
    {
        return data_[(y * width_ + x) * channels_ + c];
    }
    const T& operator()(std::size_t y, std::size_t x, std::size_t c) const noexcept
    {
        return data_[(y * width_ + x) * channels_ + c];
    }

    std::span<T> pixel(std::size_t y, std::size_t x) noexcept
    {
        return {data_.data() + (y * width_ + x) * channels_, channels_};
    }
    std::span<const T> pixel(std::size_t y, std::size_t x) const noexcept
    {
        return {data_.data() + (y * width_ + x) * channels_, channels_};
    }
    std::span<T> pixel(std::size_t linear) noexcept { return {data_.data() + linear * channels_, channels_}; }
    std::span<const T> pixel(std::size_t linear) const noexcept
    {
        return {data_.data() + linear * channels_, channels_};
    }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Volume& o) const noexcept
    {
        return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
    }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    std::vector<T> data_;
};

template <class T>
std::string shape_string(const Volume<T>& v)
{
    return std::to_string(v.height()) + "x" + std::to_string(v.width()) + "x" + std::to_string(v.channels());
}

template <class U, class T>
Volume<U> volume_cast(const Volume<T>& v)
{
    Volume<U> out(v.height(), v.width(), v.channels());
    std::transform(v.values().begin(), v.values().end(), out.values().begin(),
                   [](T x) { return static_cast<U>(x); });
    return out;
}

/// Channel-wise concatenation of equally sized grids.
template <class T>
Volume<T> concat_channels(std::span<const Volume<T>* const> parts)
{
    detail::require_shape(!parts.empty(), "concat_channels: no inputs");
    const auto h = parts.front()->height();
    const auto w = parts.front()->width();
    std::size_t total = 0;
    for (const auto* p : parts) {
        detail::require_shape(p->height() == h && p->width() == w,
                              "concat_channels: spatial size mismatch " + shape_string(*parts.front()) + " vs " +
                                  shape_string(*p));
        total += p->channels();
    }
    Volume<T> out(h, w, total);
    for (std::size_t i = 0; i < h * w; ++i) {
        auto dst = out.pixel(i).begin();
        for (const auto* p : parts)
            dst = std::copy(p->pixel(i).begin(), p->pixel(i).end(), dst);
    }
    return out;
}

template <class T>
Volume<T> concat_channels(const Volume<T>& a, const Volume<T>& b)
{
    const Volume<T>* parts[] = {&a, &b};
    return concat_channels<T>(std::span<const Volume<T>* const>(parts));
}

template <class T>
Volume<T> concat_channels(const Volume<T>& a, const Volume<T>& b, const Volume<T>& c)
{
    const Volume<T>* parts[] = {&a, &b, &c};
    return concat_channels<T>(std::span<const Volume<T>* const>(parts));
}

/// Copies channels [first, first + count) into a new grid.
template <class T>
Volume<T> slice_channels(const Volume<T>& v, std::size_t first, std::size_t count)
{
    detail::require_shape(first + count <= v.channels(), "slice_channels: range exceeds channel count");
    Volume<T> out(v.height(), v.width(), count);
    for (std::size_t i = 0; i < v.pixels(); ++i) {
        auto src = v.pixel(i).subspan(first, count);
        std::copy(src.begin(), src.end(), out.pixel(i).begin());
    }
    return out;
}

template <class T>
void add_in_place(Volume<T>& acc, const Volume<T>& v)
{
    detail::require_shape(acc.same_shape(v), "add_in_place: shape mismatch " + shape_string(acc) + " vs " +
                                                 shape_string(v));
    auto a = acc.values();
    auto b = v.values();
    for (std::size_t i = 0; i < a.size(); ++i)
        a[i] += b[i];
}

} // namespace rht
