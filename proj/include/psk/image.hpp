#pragma once

#include "psk/error.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace psk {

/// Row-major H x W x C raster of doubles; channel index varies fastest.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill)
    {
        if (w < 0 || h < 0 || c <= 0) fail(ErrorCode::InvalidArgument, "bad image dimensions");
    }

    std::size_t index(int x, int y, int c = 0) const
    {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
    double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const ImageBuffer& o) const
    {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool same_size(const ImageBuffer& o) const { return width == o.width && height == o.height; }
};

inline void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what)
{
    if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, what);
}

/// Bilinear sample at continuous pixel coordinates (integer = pixel center),
/// with clamp-to-edge.
inline double sample_bilinear(const ImageBuffer& img, double x, double y, int c)
{
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = std::min(static_cast<int>(std::floor(x)), img.width - 1);
    const int y0 = std::min(static_cast<int>(std::floor(y)), img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    return (1 - fx) * (1 - fy) * img.at(x0, y0, c) + fx * (1 - fy) * img.at(x1, y0, c) +
           (1 - fx) * fy * img.at(x0, y1, c) + fx * fy * img.at(x1, y1, c);
}

inline ImageBuffer extract_channel(const ImageBuffer& img, int c)
{
    ImageBuffer out(img.width, img.height, 1);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) out.data[i] = img.data[i * img.channels + c];
    return out;
}

// ---------------------------------------------------------------------------
// PSKF: 16-byte header ("PSKF", u32 width, u32 height, u32 channels, all
// little-endian) followed by width*height*channels little-endian float32.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v)
{
    const std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                                         static_cast<unsigned char>((v >> 16) & 0xff),
                                         static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline std::uint32_t get_u32(const unsigned char* b)
{
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

inline void write_pskf(const std::string& path, int width, int height, int channels, std::span<const double> values)
{
    if (values.size() != static_cast<std::size_t>(width) * height * channels)
        fail(ErrorCode::ShapeMismatch, "PSKF payload size does not match header");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write " + path);
    out.write("PSKF", 4);
    detail::put_u32(out, static_cast<std::uint32_t>(width));
    detail::put_u32(out, static_cast<std::uint32_t>(height));
    detail::put_u32(out, static_cast<std::uint32_t>(channels));
    for (double v : values) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    if (!out) fail(ErrorCode::IoError, "write failed for " + path);
}

inline void write_pskf(const std::string& path, const ImageBuffer& img)
{
    write_pskf(path, img.width, img.height, img.channels, img.data);
}

inline ImageBuffer read_pskf(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::IoError, "cannot open " + path);
    std::array<unsigned char, 16> header{};
    in.read(reinterpret_cast<char*>(header.data()), 16);
    if (!in || std::memcmp(header.data(), "PSKF", 4) != 0) fail(ErrorCode::ParseError, path + ": missing PSKF magic");
    const auto w = detail::get_u32(header.data() + 4);
    const auto h = detail::get_u32(header.data() + 8);
    const auto c = detail::get_u32(header.data() + 12);
    if (c == 0) fail(ErrorCode::ParseError, path + ": zero channels");
    ImageBuffer img(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    std::vector<unsigned char> raw(img.data.size() * 4);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) fail(ErrorCode::ParseError, path + ": truncated payload");
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = std::bit_cast<float>(detail::get_u32(raw.data() + 4 * i));
    return img;
}

} // namespace psk
