#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vforest/common.hpp"

namespace vf::io {

// Little-endian binary writer. Multi-byte values are emitted byte by byte so
// the on-disk layout does not depend on host endianness.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw ValidationError("cannot open file for writing: " + path);
    }

    void magic(const char tag[5]) { out_.write(tag, 4); }

    void u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }
    void u32(std::uint32_t v) { put_le(v); }
    void u64(std::uint64_t v) { put_le(v); }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_le(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_le(bits);
    }
    void bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    bool good() const { return out_.good(); }

private:
    template <typename T>
    void put_le(T v) {
        for (unsigned i = 0; i < sizeof(T); ++i)
            out_.put(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw ValidationError("cannot open file for reading: " + path);
    }

    void expect_magic(const char tag[5]) {
        char buf[4];
        in_.read(buf, 4);
        if (!in_ || std::memcmp(buf, tag, 4) != 0)
            throw ValidationError(path_ + ": bad magic, expected " + std::string(tag, 4));
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(get()); }
    std::uint32_t u32() { return get_le<std::uint32_t>(); }
    std::uint64_t u64() { return get_le<std::uint64_t>(); }
    float f32() {
        std::uint32_t bits = get_le<std::uint32_t>();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        std::uint64_t bits = get_le<std::uint64_t>();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        std::string s(n, '\0');
        in_.read(s.data(), n);
        check();
        return s;
    }

private:
    char get() {
        int c = in_.get();
        check();
        return static_cast<char>(c);
    }
    template <typename T>
    T get_le() {
        T v = 0;
        for (unsigned i = 0; i < sizeof(T); ++i)
            v |= static_cast<T>(static_cast<unsigned char>(get())) << (8 * i);
        return v;
    }
    void check() {
        if (!in_) throw ValidationError(path_ + ": truncated or unreadable file");
    }
    std::ifstream in_;
    std::string path_;
};

// FNV-1a, used for manifest checksums and content-addressed run directories.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

std::uint64_t file_checksum(const std::string& path);

// Shortest decimal form that round-trips a double; keeps CSV output byte-stable.
std::string format_double(double v);

}  // namespace vf::io
