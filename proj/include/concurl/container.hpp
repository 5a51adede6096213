#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "concurl/error.hpp"
#include "concurl/tensor.hpp"

namespace concurl {

// Binary layout (all integers little-endian):
//
//   "CCRL"                       magic
//   u32  version                 kContainerVersion
//   u64  header length, bytes    JSON header (compact, sorted keys)
//   f64  tau_b                   NaN when the file carries no model
//   u32  blob count
//   per blob:
//     u32 name length, name bytes
//     u8  dtype                  0 = f64, 1 = f32
//     u32 rank, u64 dims[rank]
//     payload                    prod(dims) little-endian values
inline constexpr char kContainerMagic[4] = {'C', 'C', 'R', 'L'};
inline constexpr std::uint32_t kContainerVersion = 1;

struct Blob {
    std::string name;
    Tensor value;
};

struct Container {
    nlohmann::json header = nlohmann::json::object();
    double tau_b = std::numeric_limits<double>::quiet_NaN();
    std::vector<Blob> blobs;

    const Tensor& blob(const std::string& name) const {
        for (const auto& b : blobs) {
            if (b.name == name) {
                return b.value;
            }
        }
        throw FormatError("container has no blob named '" + name + "'");
    }
};

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
    unsigned char bytes[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
        throw FormatError(std::string("truncated container while reading ") + what);
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

constexpr std::uint8_t dtype_code() { return std::is_same_v<Real, double> ? 0 : 1; }

}  // namespace detail

inline void write_container(std::ostream& out, const Container& c) {
    out.write(kContainerMagic, 4);
    detail::put_le<std::uint32_t>(out, kContainerVersion);
    const std::string header = c.header.dump();
    detail::put_le<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    detail::put_le<double>(out, c.tau_b);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.blobs.size()));
    for (const auto& b : c.blobs) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
        out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        detail::put_le<std::uint8_t>(out, detail::dtype_code());
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.value.rank()));
        for (auto d : b.value.shape()) {
            detail::put_le<std::uint64_t>(out, d);
        }
        for (auto v : b.value.data()) {
            detail::put_le<Real>(out, v);
        }
    }
}

inline Container read_container(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kContainerMagic, 4) != 0) {
        throw FormatError("not a CCRL container (bad magic)");
    }
    const auto version = detail::get_le<std::uint32_t>(in, "version");
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version));
    }
    Container c;
    const auto header_len = detail::get_le<std::uint64_t>(in, "header length");
    if (header_len > (1u << 26)) {
        throw FormatError("container header length is implausible");
    }
    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
        throw FormatError("truncated container header");
    }
    try {
        c.header = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("container header is not JSON: ") + e.what());
    }
    c.tau_b = detail::get_le<double>(in, "tau_b");
    const auto count = detail::get_le<std::uint32_t>(in, "blob count");
    for (std::uint32_t i = 0; i < count; ++i) {
        Blob b;
        const auto name_len = detail::get_le<std::uint32_t>(in, "blob name length");
        if (name_len > 4096) {
            throw FormatError("blob name length is implausible");
        }
        b.name.resize(name_len);
        if (!in.read(b.name.data(), name_len)) {
            throw FormatError("truncated blob name");
        }
        const auto dtype = detail::get_le<std::uint8_t>(in, "dtype");
        const auto rank = detail::get_le<std::uint32_t>(in, "rank");
        if (rank == 0 || rank > 8) {
            throw FormatError("blob '" + b.name + "' has invalid rank");
        }
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape.push_back(detail::get_le<std::uint64_t>(in, "dimension"));
            if (shape.back() == 0 || shape.back() > (1ull << 32)) {
                throw FormatError("blob '" + b.name + "' has invalid dimension");
            }
        }
        const std::size_t n = shape_size(shape);
        std::vector<Real> data(n);
        for (std::size_t k = 0; k < n; ++k) {
            if (dtype == 0) {
                data[k] = static_cast<Real>(detail::get_le<double>(in, "payload"));
            } else if (dtype == 1) {
                data[k] = static_cast<Real>(detail::get_le<float>(in, "payload"));
            } else {
                throw FormatError("blob '" + b.name + "' has unknown dtype");
            }
        }
        b.value = Tensor(std::move(shape), std::move(data));
        c.blobs.push_back(std::move(b));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError("trailing bytes after container payload");
    }
    return c;
}

inline void save_container(const std::filesystem::path& path, const Container& c) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    write_container(out, c);
    if (!out) {
        throw DataError("write failed for " + path.string());
    }
}

inline Container load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return read_container(in);
}

}  // namespace concurl
