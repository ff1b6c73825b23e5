#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ntae/errors.hpp"
#include "ntae/tensor.hpp"

namespace ntae {

namespace io {

inline std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    const auto* p = static_cast<const unsigned char*>(data);
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

template <typename T>
void put_le(std::string& out, T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

template <typename T>
T get_le(const std::string& buf, std::size_t off) {
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<T>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
    return v;
}

/// Appends the scalars of `t` as little-endian IEEE754 bytes.
template <typename Scalar>
void put_payload(std::string& out, const Tensor<Scalar>& t) {
    static_assert(std::endian::native == std::endian::little,
                  "serialization assumes a little-endian host");
    const std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(Scalar);
    const std::size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(out.data() + base, t.data(), bytes);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path);
}

inline void need(const std::string& buf, std::size_t off, std::size_t n, const char* what) {
    if (off + n > buf.size())
        throw FormatError(std::string("truncated file: need ") + std::to_string(n) +
                          " bytes for " + what + " at offset " + std::to_string(off) +
                          ", file has " + std::to_string(buf.size()));
}

}  // namespace io

inline constexpr std::uint16_t kTensorFormatVersion = 1;

/// NTT1 layout: magic "NTT1", version u16, dtype u8 (0 = f64, 1 = f32),
/// order u8, extents u64[order], payload (row-major, little-endian), crc32
/// of the payload.
template <typename Scalar>
void save_tensor(const std::string& path, const Tensor<Scalar>& t) {
    static_assert(std::is_same_v<Scalar, double> || std::is_same_v<Scalar, float>);
    std::string buf;
    buf.reserve(16 + t.shape().size() * 8 + static_cast<std::size_t>(t.size()) * sizeof(Scalar));
    buf += "NTT1";
    io::put_le<std::uint16_t>(buf, kTensorFormatVersion);
    buf.push_back(std::is_same_v<Scalar, double> ? 0 : 1);
    buf.push_back(static_cast<char>(t.order()));
    for (Index e : t.shape()) io::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(e));
    const std::size_t payload_start = buf.size();
    io::put_payload(buf, t);
    const std::uint32_t crc = io::crc32(buf.data() + payload_start, buf.size() - payload_start);
    io::put_le<std::uint32_t>(buf, crc);
    io::write_file(path, buf);
}

/// Loads an NTT1 file; 32-bit payloads widen losslessly to double.
inline Tensord load_tensor(const std::string& path) {
    const std::string buf = io::read_file(path);
    io::need(buf, 0, 8, "header");
    if (buf.compare(0, 4, "NTT1") != 0)
        throw FormatError("bad magic at offset 0 in " + path);
    const auto version = io::get_le<std::uint16_t>(buf, 4);
    if (version != kTensorFormatVersion)
        throw FormatError("unsupported format version " + std::to_string(version) +
                          " at offset 4");
    const unsigned dtype = static_cast<unsigned char>(buf[6]);
    if (dtype > 1) throw FormatError("unknown dtype code " + std::to_string(dtype) + " at offset 6");
    const unsigned order = static_cast<unsigned char>(buf[7]);
    if (order == 0) throw FormatError("zero tensor order at offset 7");
    std::size_t off = 8;
    io::need(buf, off, order * 8, "extents");
    Shape shape(order);
    for (unsigned k = 0; k < order; ++k, off += 8) {
        const auto e = io::get_le<std::uint64_t>(buf, off);
        if (e == 0) throw FormatError("zero extent at offset " + std::to_string(off));
        shape[k] = static_cast<Index>(e);
    }
    const Index count = shape_product(shape);
    const std::size_t scalar_bytes = dtype == 0 ? 8 : 4;
    const std::size_t payload_bytes = static_cast<std::size_t>(count) * scalar_bytes;
    const std::size_t available = buf.size() >= off + 4 ? buf.size() - off - 4 : 0;
    if (off + payload_bytes + 4 != buf.size())
        throw FormatError("declared " + std::to_string(count) + " elements (" +
                          std::to_string(payload_bytes) + " payload bytes at offset " +
                          std::to_string(off) + ") but file holds " + std::to_string(available));
    const auto stored_crc = io::get_le<std::uint32_t>(buf, off + payload_bytes);
    const auto actual_crc = io::crc32(buf.data() + off, payload_bytes);
    if (stored_crc != actual_crc)
        throw FormatError("payload checksum mismatch at offset " +
                          std::to_string(off + payload_bytes));

    Tensord t(std::move(shape));
    static_assert(std::endian::native == std::endian::little);
    if (dtype == 0) {
        std::memcpy(t.data(), buf.data() + off, payload_bytes);
    } else {
        std::vector<float> tmp(static_cast<std::size_t>(count));
        std::memcpy(tmp.data(), buf.data() + off, payload_bytes);
        for (Index i = 0; i < count; ++i) t[i] = static_cast<double>(tmp[static_cast<std::size_t>(i)]);
    }
    return t;
}

/// Label sidecar: one integer per line, ordered like the batch mode.
inline void save_labels(const std::string& path, const std::vector<int>& labels) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    for (int v : labels) out << v << '\n';
    if (!out) throw IoError("short write to " + path);
}

inline std::vector<int> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<int> labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::size_t pos = 0;
        int v = 0;
        try {
            v = std::stoi(line, &pos);
        } catch (const std::exception&) {
            throw FormatError("bad label on line " + std::to_string(lineno) + " of " + path);
        }
        while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
        if (pos != line.size())
            throw FormatError("bad label on line " + std::to_string(lineno) + " of " + path);
        labels.push_back(v);
    }
    return labels;
}

}  // namespace ntae
