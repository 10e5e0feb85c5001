#pragma once

// Minimal 8-bit PNG encoder (grayscale or grayscale+alpha) on top of zlib.

#include <zlib.h>

#include <cstdint>
#include <string>
#include <vector>

#include "segbench/error.hpp"

namespace segbench::png {

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

inline void chunk(std::string& out, const char* type, const std::string& data) {
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    put_u32(out, static_cast<std::uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
}

}  // namespace detail

/// Encodes `pixels` (row-major, `channels` interleaved bytes per pixel).
/// One channel is grayscale, two are grayscale plus a second plane stored in
/// the alpha slot.
inline std::string encode(int width, int height, int channels, const std::vector<std::uint8_t>& pixels) {
    if (width < 1 || height < 1 || (channels != 1 && channels != 2))
        throw InvalidArgument("png: bad image shape");
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
        throw InvalidArgument("png: pixel buffer size mismatch");
    std::string raw;
    const std::size_t row = static_cast<std::size_t>(width) * channels;
    raw.reserve((row + 1) * height);
    for (int y = 0; y < height; ++y) {
        raw.push_back('\0');  // filter: none
        raw.append(reinterpret_cast<const char*>(pixels.data() + row * y), row);
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::string z(zlen, '\0');
    if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen, reinterpret_cast<const Bytef*>(raw.data()),
                  static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw Error("png: compression failed");
    z.resize(zlen);

    std::string out("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    detail::put_u32(ihdr, static_cast<std::uint32_t>(width));
    detail::put_u32(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);                           // bit depth
    ihdr.push_back(channels == 1 ? 0 : 4);       // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    detail::chunk(out, "IHDR", ihdr);
    detail::chunk(out, "IDAT", z);
    detail::chunk(out, "IEND", {});
    return out;
}

struct Decoded {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

/// Decoder for the subset written by `encode` (filter type 0 only).
inline Decoded decode(const std::string& data) {
    if (data.size() < 8 || data.compare(0, 8, std::string("\x89PNG\r\n\x1a\n", 8)) != 0)
        throw ParseError("png: bad signature");
    auto u32 = [&](std::size_t p) {
        return (std::uint32_t(std::uint8_t(data[p])) << 24) | (std::uint32_t(std::uint8_t(data[p + 1])) << 16) |
               (std::uint32_t(std::uint8_t(data[p + 2])) << 8) | std::uint32_t(std::uint8_t(data[p + 3]));
    };
    Decoded d;
    std::string idat;
    for (std::size_t p = 8; p + 12 <= data.size();) {
        const std::uint32_t len = u32(p);
        const std::string type = data.substr(p + 4, 4);
        if (p + 12 + len > data.size()) throw ParseError("png: truncated chunk");
        if (type == "IHDR") {
            d.width = static_cast<int>(u32(p + 8));
            d.height = static_cast<int>(u32(p + 12));
            const int ct = std::uint8_t(data[p + 17]);
            d.channels = ct == 0 ? 1 : ct == 4 ? 2 : 0;
            if (!d.channels || std::uint8_t(data[p + 16]) != 8) throw ParseError("png: unsupported format");
        } else if (type == "IDAT") {
            idat += data.substr(p + 8, len);
        }
        p += 12 + len;
    }
    const std::size_t row = static_cast<std::size_t>(d.width) * d.channels;
    uLongf rawlen = static_cast<uLongf>((row + 1) * d.height);
    std::string raw(rawlen, '\0');
    if (uncompress(reinterpret_cast<Bytef*>(raw.data()), &rawlen, reinterpret_cast<const Bytef*>(idat.data()),
                   static_cast<uLong>(idat.size())) != Z_OK)
        throw ParseError("png: inflate failed");
    d.pixels.resize(row * d.height);
    for (int y = 0; y < d.height; ++y) {
        if (raw[(row + 1) * y] != 0) throw ParseError("png: unsupported filter");
        std::copy_n(raw.begin() + static_cast<std::ptrdiff_t>((row + 1) * y + 1), row, d.pixels.begin() + static_cast<std::ptrdiff_t>(row * y));
    }
    return d;
}

}  // namespace segbench::png
