#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "vssmseg/tensor.hpp"

// Binary containers.
//
// Tensor (VTNS): magic "VTNS", version byte 1, dtype code byte (1 = f32,
// 2 = f64), rank byte, rank x u64 little-endian dims, then the row-major
// little-endian payload.
//
// Checkpoint (VMCK): magic "VMCK", version byte 1, u32 little-endian entry
// count, entries = (u16 little-endian name length, UTF-8 name, VTNS blob).
namespace vssmseg::io {

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(is.gcount()) != n)
        throw IoError(std::string("truncated container while reading ") + what);
}

template <typename U>
void put_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    for (size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(os, buf, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const char* what) {
    unsigned char buf[sizeof(U)];
    get_bytes(is, buf, sizeof(U), what);
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

template <typename T>
struct bits_of;
template <>
struct bits_of<float> {
    using type = uint32_t;
};
template <>
struct bits_of<double> {
    using type = uint64_t;
};

}  // namespace detail

template <typename T>
void write_vtns(std::ostream& os, const Tensor<T>& t) {
    detail::put_bytes(os, "VTNS", 4);
    detail::put_le<uint8_t>(os, 1);  // version
    detail::put_le<uint8_t>(os, static_cast<uint8_t>(dtype_tag<T>::value));
    detail::put_le<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (int64_t d : t.shape()) detail::put_le<uint64_t>(os, static_cast<uint64_t>(d));
    using Bits = typename detail::bits_of<T>::type;
    for (int64_t i = 0; i < t.numel(); ++i)
        detail::put_le<Bits>(os, std::bit_cast<Bits>(t.data()[i]));
}

template <typename T>
Tensor<T> read_vtns(std::istream& is) {
    char magic[4];
    detail::get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "VTNS", 4) != 0)
        throw IoError("bad tensor container magic (expected VTNS, got '" +
                      std::string(magic, 4) + "')");
    uint8_t version = detail::get_le<uint8_t>(is, "version");
    if (version != 1)
        throw IoError("unsupported tensor container version " + std::to_string(version));
    uint8_t dtype = detail::get_le<uint8_t>(is, "dtype");
    if (dtype != static_cast<uint8_t>(dtype_tag<T>::value))
        throw IoError("tensor container dtype code " + std::to_string(dtype) +
                      " does not match requested dtype code " +
                      std::to_string(static_cast<int>(dtype_tag<T>::value)));
    uint8_t rank = detail::get_le<uint8_t>(is, "rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(detail::get_le<uint64_t>(is, "dims"));
    int64_t n = numel_of(shape);
    std::vector<T> data(static_cast<size_t>(n));
    using Bits = typename detail::bits_of<T>::type;
    for (int64_t i = 0; i < n; ++i)
        data[static_cast<size_t>(i)] = std::bit_cast<T>(detail::get_le<Bits>(is, "payload"));
    return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_vtns_file(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    write_vtns(os, t);
    if (!os) throw IoError("failed writing " + path);
}

template <typename T>
Tensor<T> load_vtns_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    return read_vtns<T>(is);
}

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor<T>>>& entries) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    detail::put_bytes(os, "VMCK", 4);
    detail::put_le<uint8_t>(os, 1);
    detail::put_le<uint32_t>(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
        detail::put_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
        detail::put_bytes(os, name.data(), name.size());
        write_vtns(os, t);
    }
    if (!os) throw IoError("failed writing " + path);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    char magic[4];
    detail::get_bytes(is, magic, 4, "magic");
    if (std::memcmp(magic, "VMCK", 4) != 0)
        throw IoError("bad checkpoint magic in " + path + " (expected VMCK, got '" +
                      std::string(magic, 4) + "')");
    uint8_t version = detail::get_le<uint8_t>(is, "version");
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
    uint32_t count = detail::get_le<uint32_t>(is, "entry count");
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t len = detail::get_le<uint16_t>(is, "name length");
        std::string name(len, '\0');
        detail::get_bytes(is, name.data(), len, "name");
        out.emplace_back(std::move(name), read_vtns<T>(is));
    }
    return out;
}

}  // namespace vssmseg::io
