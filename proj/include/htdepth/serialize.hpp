#pragma once

// Binary tensor files: magic "HTDT", u8 rank, rank x u32 little-endian dims,
// then little-endian f32 payload. A manifest text file lists
// name <tab> path <tab> shape per tensor.

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "tensor.hpp"

namespace htd {

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}

}  // namespace detail

template <typename S>
void save_tensor(const Tensor<S>& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for write: " + path);
    os.write("HTDT", 4);
    unsigned char rank = static_cast<unsigned char>(t.rank());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (int d : t.shape()) detail::put_u32_le(os, static_cast<uint32_t>(d));
    for (S v : t.data()) {
        float f = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32_le(os, bits);
    }
    if (!os) throw DataError("write failed: " + path);
}

template <typename S>
Tensor<S> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open tensor file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "HTDT", 4) != 0)
        throw DataError("bad tensor magic in " + path);
    unsigned char rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 1);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::get_u32_le(is));
    int64_t n = shape_numel(shape);
    std::vector<S> data(static_cast<size_t>(n));
    for (auto& v : data) {
        uint32_t bits = detail::get_u32_le(is);
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<S>(f);
    }
    if (!is) throw DataError("truncated tensor file: " + path);
    return Tensor<S>::from_data(shape, std::move(data));
}

// Named parameter collection used for checkpoints and module state.
template <typename S>
using NamedTensors = std::vector<std::pair<std::string, Tensor<S>>>;

template <typename S>
void save_manifest(const NamedTensors<S>& tensors, const std::string& dir,
                   const std::string& manifest_name = "manifest.txt") {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream mf(fs::path(dir) / manifest_name);
    if (!mf) throw DataError("cannot write manifest in " + dir);
    for (const auto& [name, t] : tensors) {
        std::string fname = name + ".ht";
        for (auto& c : fname)
            if (c == '/' || c == '\\') c = '_';
        save_tensor(t, (fs::path(dir) / fname).string());
        mf << name << '\t' << fname << '\t' << shape_str(t.shape()) << '\n';
    }
}

template <typename S>
std::map<std::string, Tensor<S>> load_manifest(const std::string& dir,
                                               const std::string& manifest_name = "manifest.txt") {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / manifest_name);
    if (!mf) throw DataError("cannot open manifest in " + dir);
    std::map<std::string, Tensor<S>> out;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string name, fname, shape;
        if (!std::getline(ss, name, '\t') || !std::getline(ss, fname, '\t'))
            throw DataError("malformed manifest line: " + line);
        out.emplace(name, load_tensor<S>((fs::path(dir) / fname).string()));
    }
    return out;
}

}  // namespace htd
