#pragma once

// Minimal PNG I/O over zlib: 8-bit RGB / grayscale and 16-bit grayscale,
// plus bilinear resize and a turbo-style colormap for preview images.

#include <zlib.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace htd {

struct Image8 {
    int width = 0, height = 0, channels = 0;  // channels: 1 or 3
    std::vector<uint8_t> pixels;              // row-major, interleaved
};

struct Image16 {
    int width = 0, height = 0;  // single channel
    std::vector<uint16_t> pixels;
};

namespace png_detail {

inline uint32_t crc_table_entry(uint32_t n) {
    for (int k = 0; k < 8; ++k) n = (n & 1) ? 0xedb88320u ^ (n >> 1) : n >> 1;
    return n;
}

inline uint32_t crc32_png(const uint8_t* buf, size_t len, uint32_t crc = 0xffffffffu) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t n = 0; n < 256; ++n) t[n] = crc_table_entry(n);
        return t;
    }();
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ buf[i]) & 0xff] ^ (crc >> 8);
    return crc;
}

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
    v.push_back(uint8_t(x >> 24));
    v.push_back(uint8_t(x >> 16));
    v.push_back(uint8_t(x >> 8));
    v.push_back(uint8_t(x));
}

inline uint32_t get_u32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | p[3];
}

inline void write_chunk(std::vector<uint8_t>& out, const char* type, const std::vector<uint8_t>& data) {
    put_u32(out, uint32_t(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = crc32_png(out.data() + start, out.size() - start) ^ 0xffffffffu;
    put_u32(out, crc);
}

inline std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& raw) {
    uLongf bound = compressBound(uLong(raw.size()));
    std::vector<uint8_t> out(bound);
    if (compress2(out.data(), &bound, raw.data(), uLong(raw.size()), 6) != Z_OK)
        throw DataError("png: zlib compression failed");
    out.resize(bound);
    return out;
}

inline std::vector<uint8_t> zlib_inflate(const std::vector<uint8_t>& comp, size_t expected) {
    std::vector<uint8_t> out(expected);
    uLongf len = uLongf(expected);
    int rc = uncompress(out.data(), &len, comp.data(), uLong(comp.size()));
    if (rc != Z_OK || len != expected) throw DataError("png: zlib decompression failed");
    return out;
}

// Undo PNG scanline filtering in place.
inline void unfilter(std::vector<uint8_t>& raw, int height, int stride, int bpp) {
    std::vector<uint8_t> prev(size_t(stride), 0);
    for (int y = 0; y < height; ++y) {
        uint8_t* row = raw.data() + size_t(y) * (stride + 1);
        uint8_t filter = row[0];
        uint8_t* cur = row + 1;
        for (int i = 0; i < stride; ++i) {
            int a = i >= bpp ? cur[i - bpp] : 0;
            int b = prev[size_t(i)];
            int c = i >= bpp ? prev[size_t(i - bpp)] : 0;
            int x = cur[i];
            switch (filter) {
                case 0: break;
                case 1: x += a; break;
                case 2: x += b; break;
                case 3: x += (a + b) / 2; break;
                case 4: {
                    int p = a + b - c;
                    int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    x += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw DataError("png: unsupported filter type");
            }
            cur[i] = uint8_t(x);
        }
        std::memcpy(prev.data(), cur, size_t(stride));
    }
}

inline std::vector<uint8_t> encode_png(const uint8_t* data, int width, int height, int channels,
                                       int bit_depth) {
    int bytes_per_sample = bit_depth / 8;
    int stride = width * channels * bytes_per_sample;
    std::vector<uint8_t> raw;
    raw.reserve(size_t(height) * (stride + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0);  // filter: none
        raw.insert(raw.end(), data + size_t(y) * stride, data + size_t(y + 1) * stride);
    }
    std::vector<uint8_t> ihdr;
    put_u32(ihdr, uint32_t(width));
    put_u32(ihdr, uint32_t(height));
    ihdr.push_back(uint8_t(bit_depth));
    ihdr.push_back(channels == 3 ? 2 : 0);  // color type: truecolor / gray
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", zlib_deflate(raw));
    write_chunk(out, "IEND", {});
    return out;
}

struct DecodedPng {
    int width = 0, height = 0, channels = 0, bit_depth = 0;
    std::vector<uint8_t> data;  // unfiltered scanline bytes, big-endian samples
};

inline DecodedPng decode_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image: " + path);
    std::vector<uint8_t> file((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0)
        throw DataError("not a PNG file: " + path);

    DecodedPng img;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= file.size()) {
        uint32_t len = get_u32(file.data() + pos);
        if (pos + 12 + len > file.size()) throw DataError("truncated PNG: " + path);
        std::string type(reinterpret_cast<const char*>(file.data() + pos + 4), 4);
        const uint8_t* body = file.data() + pos + 8;
        if (type == "IHDR") {
            img.width = int(get_u32(body));
            img.height = int(get_u32(body + 4));
            img.bit_depth = body[8];
            int color_type = body[9];
            if (color_type == 0) img.channels = 1;
            else if (color_type == 2) img.channels = 3;
            else throw DataError("png: unsupported color type in " + path);
            if (img.bit_depth != 8 && img.bit_depth != 16)
                throw DataError("png: unsupported bit depth in " + path);
            if (body[12] != 0) throw DataError("png: interlacing unsupported in " + path);
        } else if (type == "IDAT") {
            idat.insert(idat.end(), body, body + len);
        } else if (type == "IEND") {
            break;
        }
        pos += 12 + len;
    }
    if (img.width <= 0 || img.height <= 0) throw DataError("png: missing IHDR in " + path);
    int bpp = img.channels * img.bit_depth / 8;
    int stride = img.width * bpp;
    auto raw = zlib_inflate(idat, size_t(img.height) * (stride + 1));
    unfilter(raw, img.height, stride, bpp);
    img.data.resize(size_t(img.height) * stride);
    for (int y = 0; y < img.height; ++y)
        std::memcpy(img.data.data() + size_t(y) * stride, raw.data() + size_t(y) * (stride + 1) + 1,
                    size_t(stride));
    return img;
}

}  // namespace png_detail

inline void save_png(const Image8& img, const std::string& path) {
    auto bytes = png_detail::encode_png(img.pixels.data(), img.width, img.height, img.channels, 8);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write image: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline void save_png16(const Image16& img, const std::string& path) {
    std::vector<uint8_t> be(img.pixels.size() * 2);
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        be[2 * i] = uint8_t(img.pixels[i] >> 8);
        be[2 * i + 1] = uint8_t(img.pixels[i] & 0xff);
    }
    auto bytes = png_detail::encode_png(be.data(), img.width, img.height, 1, 16);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write image: " + path);
    os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

// Loads an 8-bit PNG (grayscale promoted to RGB).
inline Image8 load_png(const std::string& path) {
    auto d = png_detail::decode_png(path);
    if (d.bit_depth != 8) throw DataError("png: expected 8-bit image: " + path);
    Image8 img;
    img.width = d.width;
    img.height = d.height;
    img.channels = 3;
    img.pixels.resize(size_t(d.width) * d.height * 3);
    for (size_t p = 0; p < size_t(d.width) * d.height; ++p)
        for (int c = 0; c < 3; ++c)
            img.pixels[p * 3 + size_t(c)] = d.data[d.channels == 3 ? p * 3 + size_t(c) : p];
    return img;
}

inline Image16 load_png16(const std::string& path) {
    auto d = png_detail::decode_png(path);
    if (d.bit_depth != 16 || d.channels != 1)
        throw DataError("png: expected 16-bit grayscale image: " + path);
    Image16 img;
    img.width = d.width;
    img.height = d.height;
    img.pixels.resize(size_t(d.width) * d.height);
    for (size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = uint16_t((uint16_t(d.data[2 * i]) << 8) | d.data[2 * i + 1]);
    return img;
}

// Image8 (interleaved bytes) -> [1,3,H,W] float tensor in [0,1].
template <typename S>
Tensor<S> image_to_tensor(const Image8& img) {
    std::vector<S> v(size_t(3) * img.height * img.width);
    int64_t hw = int64_t(img.height) * img.width;
    for (int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c)
            v[size_t(int64_t(c) * hw + p)] =
                static_cast<S>(img.pixels[size_t(p * 3 + c)] / 255.0);
    return Tensor<S>::from_data({1, 3, img.height, img.width}, std::move(v));
}

// [1,3,H,W] or [3,H,W] tensor in [0,1] -> interleaved 8-bit image.
template <typename S>
Image8 tensor_to_image(const Tensor<S>& t) {
    int H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
    Image8 img;
    img.width = W;
    img.height = H;
    img.channels = 3;
    img.pixels.resize(size_t(3) * H * W);
    int64_t hw = int64_t(H) * W;
    for (int64_t p = 0; p < hw; ++p)
        for (int c = 0; c < 3; ++c) {
            double v = std::clamp(double(t.data()[size_t(int64_t(c) * hw + p)]), 0.0, 1.0);
            img.pixels[size_t(p * 3 + c)] = uint8_t(std::lround(v * 255.0));
        }
    return img;
}

// Bilinear resize of an interleaved 8-bit image.
inline Image8 resize_bilinear(const Image8& src, int new_w, int new_h) {
    Image8 dst;
    dst.width = new_w;
    dst.height = new_h;
    dst.channels = src.channels;
    dst.pixels.resize(size_t(new_w) * new_h * src.channels);
    double sx = double(src.width) / new_w, sy = double(src.height) / new_h;
    for (int y = 0; y < new_h; ++y)
        for (int x = 0; x < new_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5, fy = (y + 0.5) * sy - 0.5;
            int x0 = std::clamp(int(std::floor(fx)), 0, src.width - 1);
            int y0 = std::clamp(int(std::floor(fy)), 0, src.height - 1);
            int x1 = std::min(x0 + 1, src.width - 1);
            int y1 = std::min(y0 + 1, src.height - 1);
            double wx = std::clamp(fx - x0, 0.0, 1.0), wy = std::clamp(fy - y0, 0.0, 1.0);
            for (int c = 0; c < src.channels; ++c) {
                auto at = [&](int yy, int xx) {
                    return double(src.pixels[(size_t(yy) * src.width + size_t(xx)) * src.channels +
                                             size_t(c)]);
                };
                double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                           wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                dst.pixels[(size_t(y) * new_w + size_t(x)) * src.channels + size_t(c)] =
                    uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
            }
        }
    return dst;
}

// Compact turbo-style colormap: anchor colors interpolated linearly.
inline std::array<uint8_t, 3> colormap_turbo(double v) {
    static constexpr std::array<std::array<double, 3>, 9> anchors = {{
        {48, 18, 59}, {65, 69, 171}, {57, 140, 225}, {31, 201, 163}, {110, 236, 88},
        {210, 233, 53}, {248, 184, 42}, {228, 98, 37}, {122, 4, 3},
    }};
    v = std::clamp(v, 0.0, 1.0) * (anchors.size() - 1);
    size_t i = std::min(size_t(v), anchors.size() - 2);
    double f = v - double(i);
    std::array<uint8_t, 3> out{};
    for (int c = 0; c < 3; ++c)
        out[size_t(c)] = uint8_t(std::lround(anchors[i][size_t(c)] * (1 - f) + anchors[i + 1][size_t(c)] * f));
    return out;
}

// Disparity map [*,1,H,W] in (0,1) -> turbo preview (max-normalized).
template <typename S>
Image8 colorize_disparity(const Tensor<S>& disp) {
    int H = disp.dim(disp.rank() - 2), W = disp.dim(disp.rank() - 1);
    double mx = 1e-9;
    for (S v : disp.data()) mx = std::max(mx, double(v));
    Image8 img;
    img.width = W;
    img.height = H;
    img.channels = 3;
    img.pixels.resize(size_t(3) * H * W);
    for (int64_t p = 0; p < int64_t(H) * W; ++p) {
        auto rgb = colormap_turbo(double(disp.data()[size_t(p)]) / mx);
        for (int c = 0; c < 3; ++c) img.pixels[size_t(p * 3 + c)] = rgb[size_t(c)];
    }
    return img;
}

}  // namespace htd
