#ifndef DKVB_BINIO_HPP
#define DKVB_BINIO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "dkvb/common.hpp"

// Little-endian binary IO for the on-disk formats. The hot paths memcpy
// whole arrays on little-endian hosts and fall back to per-element byte
// composition elsewhere, so files are portable either way.

namespace dkvb::binio {

inline constexpr bool kLittleHost = std::endian::native == std::endian::little;

inline void put_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline void put_f32_array(std::ostream& out, const float* p, std::size_t n) {
    if constexpr (kLittleHost) {
        out.write(reinterpret_cast<const char*>(p),
                  static_cast<std::streamsize>(n * 4));
    } else {
        for (std::size_t i = 0; i < n; ++i) put_f32(out, p[i]);
    }
}

inline void put_u64_array(std::ostream& out, const std::uint64_t* p,
                          std::size_t n) {
    if constexpr (kLittleHost) {
        out.write(reinterpret_cast<const char*>(p),
                  static_cast<std::streamsize>(n * 8));
    } else {
        for (std::size_t i = 0; i < n; ++i) put_u64(out, p[i]);
    }
}

/// Tracks the byte offset so format errors can name where parsing failed.
class Reader {
public:
    Reader(std::istream& in, std::string source)
        : in_(in), source_(std::move(source)) {}

    std::size_t offset() const { return offset_; }

    void bytes(void* dst, std::size_t n, const char* field) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError(source_ + ": truncated while reading " + field +
                              " at byte offset " + std::to_string(offset_));
        }
        offset_ += n;
    }

    std::uint16_t u16(const char* field) {
        unsigned char b[2];
        bytes(b, 2, field);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }

    std::uint32_t u32(const char* field) {
        unsigned char b[4];
        bytes(b, 4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64(const char* field) {
        unsigned char b[8];
        bytes(b, 8, field);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    float f32(const char* field) {
        const std::uint32_t bits = u32(field);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    void f32_array(float* dst, std::size_t n, const char* field) {
        if constexpr (kLittleHost) {
            bytes(dst, n * 4, field);
        } else {
            for (std::size_t i = 0; i < n; ++i) dst[i] = f32(field);
        }
    }

    void u64_array(std::uint64_t* dst, std::size_t n, const char* field) {
        if constexpr (kLittleHost) {
            bytes(dst, n * 8, field);
        } else {
            for (std::size_t i = 0; i < n; ++i) dst[i] = u64(field);
        }
    }

    /// Match an exact magic string or fail with the offset.
    void expect_magic(const char* magic, std::size_t len) {
        std::string got(len, '\0');
        in_.read(got.data(), static_cast<std::streamsize>(len));
        if (static_cast<std::size_t>(in_.gcount()) != len ||
            got != std::string(magic, len)) {
            throw FormatError(source_ + ": bad magic at byte offset " +
                              std::to_string(offset_) + " (expected \"" +
                              std::string(magic, len) + "\")");
        }
        offset_ += len;
    }

    /// Assert end-of-file; trailing bytes are a format error.
    void expect_eof() {
        char c;
        in_.read(&c, 1);
        if (!in_.eof()) {
            throw FormatError(source_ + ": trailing bytes at offset " +
                              std::to_string(offset_));
        }
    }

    const std::string& source() const { return source_; }

private:
    std::istream& in_;
    std::string source_;
    std::size_t offset_ = 0;
};

}  // namespace dkvb::binio

#endif  // DKVB_BINIO_HPP
