#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sbnn/error.hpp"

namespace sbnn {

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
inline uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t crc = ~seed;
    for (size_t i = 0; i < len; ++i)
        crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return ~crc;
}

// Little-endian buffer writer; the whole payload is assembled in memory so
// the CRC32 trailer and atomic rename are straightforward.
class BinaryWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) { u8(v & 0xFF); u8(v >> 8); }
    void u32(uint32_t v) { u16(v & 0xFFFF); u16(static_cast<uint16_t>(v >> 16)); }
    void u64(uint64_t v) {
        u32(static_cast<uint32_t>(v));
        u32(static_cast<uint32_t>(v >> 32));
    }
    void i8(int8_t v) { u8(static_cast<uint8_t>(v)); }
    void i16(int16_t v) { u16(static_cast<uint16_t>(v)); }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f32(float v) {
        uint32_t bits;
        static_assert(sizeof(bits) == sizeof(v));
        __builtin_memcpy(&bits, &v, 4);
        u32(bits);
    }
    void bytes(const uint8_t* p, size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes(reinterpret_cast<const uint8_t*>(s.data()), s.size());
    }

    void append_crc32() {
        u32(crc32(buf_.data(), buf_.size()));
    }

    const std::vector<uint8_t>& buffer() const { return buf_; }

private:
    std::vector<uint8_t> buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(std::vector<uint8_t> data) : buf_(std::move(data)) {}

    static BinaryReader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw FormatError("cannot open " + path);
        return BinaryReader(std::vector<uint8_t>(
            (std::istreambuf_iterator<char>(in)),
            std::istreambuf_iterator<char>()));
    }

    size_t offset() const { return pos_; }
    size_t size() const { return buf_.size(); }
    bool at_end() const { return pos_ == buf_.size(); }

    // Validates and strips the trailing CRC32; call before reading fields.
    void check_crc32() {
        if (buf_.size() < 4) throw FormatError("file shorter than CRC trailer");
        const size_t body = buf_.size() - 4;
        uint32_t stored = 0;
        for (int i = 3; i >= 0; --i)
            stored = (stored << 8) | buf_[body + static_cast<size_t>(i)];
        const uint32_t actual = crc32(buf_.data(), body);
        if (stored != actual)
            throw ChecksumError("CRC32 mismatch: stored " + std::to_string(stored) +
                                ", computed " + std::to_string(actual));
        buf_.resize(body);
    }

    uint8_t u8() { need(1); return buf_[pos_++]; }
    uint16_t u16() {
        const uint16_t lo = u8();
        return static_cast<uint16_t>(lo | (static_cast<uint16_t>(u8()) << 8));
    }
    uint32_t u32() {
        const uint32_t lo = u16();
        return lo | (static_cast<uint32_t>(u16()) << 16);
    }
    uint64_t u64() {
        const uint64_t lo = u32();
        return lo | (static_cast<uint64_t>(u32()) << 32);
    }
    int8_t i8() { return static_cast<int8_t>(u8()); }
    int16_t i16() { return static_cast<int16_t>(u16()); }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    float f32() {
        const uint32_t bits = u32();
        float v;
        __builtin_memcpy(&v, &bits, 4);
        return v;
    }
    void bytes(uint8_t* out, size_t n) {
        need(n);
        std::copy(buf_.begin() + static_cast<long>(pos_),
                  buf_.begin() + static_cast<long>(pos_ + n), out);
        pos_ += n;
    }
    std::string str() {
        const uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    void need(size_t n) {
        if (pos_ + n > buf_.size())
            throw FormatError("unexpected end of data at byte " +
                              std::to_string(pos_));
    }

    std::vector<uint8_t> buf_;
    size_t pos_ = 0;
};

// Write-to-temp-then-rename so readers never observe partial files.
inline void atomic_write_file(const std::string& path,
                              const std::vector<uint8_t>& data) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot create " + tmp);
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size()));
        if (!out) throw FormatError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline void atomic_write_text(const std::string& path, const std::string& text) {
    atomic_write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

}  // namespace sbnn
