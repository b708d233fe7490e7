#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ramer/error.hpp"

namespace ramer::io {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
uint32_t crc32(const void* data, size_t n, uint32_t crc = 0);

// FNV-1a over a file's bytes; used for artifact hash chaining.
uint64_t file_hash(const std::string& path);
uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL);

// Little-endian buffer writer. write_file appends the CRC32 of everything
// written so far as the trailing 4 bytes.
class ByteWriter {
public:
    void put_u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void put_u16(uint16_t v);
    void put_u32(uint32_t v);
    void put_u64(uint64_t v);
    void put_f32(float v);
    void put_f64(double v);
    void put_bytes(const void* p, size_t n);
    void put_string(const std::string& s);  // u16 length + bytes
    const std::string& buffer() const { return buf_; }
    void write_file(const std::string& path) const;

private:
    std::string buf_;
};

// Bounds-checked little-endian reader over a whole file. Construction
// verifies the trailing CRC32; the CRC bytes are excluded from the readable
// range. Parse errors name the byte offset.
class ByteReader {
public:
    explicit ByteReader(const std::string& path);
    uint8_t get_u8();
    uint16_t get_u16();
    uint32_t get_u32();
    uint64_t get_u64();
    float get_f32();
    double get_f64();
    std::string get_string();
    void get_bytes(void* p, size_t n);
    size_t offset() const { return pos_; }
    size_t remaining() const { return end_ - pos_; }
    void expect_end() const;
    [[noreturn]] void fail(const std::string& msg) const;

private:
    void need(size_t n) const;
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
    size_t end_ = 0;
};

}  // namespace ramer::io
