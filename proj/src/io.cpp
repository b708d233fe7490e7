#include "ramer/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace ramer::io {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

const std::array<uint32_t, 256>& crc_table() {
    static const auto t = make_crc_table();
    return t;
}

}  // namespace

uint32_t crc32(const void* data, size_t n, uint32_t crc) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint32_t c = crc ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) c = crc_table()[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

uint64_t fnv1a64(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_error(ErrorKind::Artifact, "cannot open file for hashing: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    }
    return h;
}

void ByteWriter::put_u16(uint16_t v) {
    put_u8(static_cast<uint8_t>(v));
    put_u8(static_cast<uint8_t>(v >> 8));
}

void ByteWriter::put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) put_u8(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) put_u8(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::put_f32(float v) { put_u32(std::bit_cast<uint32_t>(v)); }

void ByteWriter::put_f64(double v) { put_u64(std::bit_cast<uint64_t>(v)); }

void ByteWriter::put_bytes(const void* p, size_t n) {
    buf_.append(static_cast<const char*>(p), n);
}

void ByteWriter::put_string(const std::string& s) {
    if (s.size() > 0xFFFF)
        throw_error(ErrorKind::Runtime, "string too long for u16 length prefix");
    put_u16(static_cast<uint16_t>(s.size()));
    put_bytes(s.data(), s.size());
}

void ByteWriter::write_file(const std::string& path) const {
    const uint32_t crc = crc32(buf_.data(), buf_.size());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw_error(ErrorKind::Runtime, "cannot open for writing: " + path);
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    char tail[4];
    for (int i = 0; i < 4; ++i) tail[i] = static_cast<char>(crc >> (8 * i));
    out.write(tail, 4);
    if (!out) throw_error(ErrorKind::Runtime, "write failed: " + path);
}

ByteReader::ByteReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_error(ErrorKind::Artifact, "cannot open file: " + path);
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    if (data_.size() < 4) fail("truncated file (no CRC trailer)");
    end_ = data_.size() - 4;
    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(static_cast<unsigned char>(data_[end_ + i])) << (8 * i);
    const uint32_t actual = crc32(data_.data(), end_);
    if (stored != actual) fail("CRC mismatch (file corrupt or truncated)");
}

void ByteReader::fail(const std::string& msg) const {
    throw_error(ErrorKind::Parse,
                path_ + " at offset " + std::to_string(pos_) + ": " + msg);
}

void ByteReader::need(size_t n) const {
    if (pos_ + n > end_) const_cast<ByteReader*>(this)->fail("unexpected end of data");
}

uint8_t ByteReader::get_u8() {
    need(1);
    return static_cast<uint8_t>(data_[pos_++]);
}

uint16_t ByteReader::get_u16() {
    need(2);
    uint16_t v = 0;
    for (int i = 0; i < 2; ++i)
        v |= static_cast<uint16_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 2;
    return v;
}

uint32_t ByteReader::get_u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
}

uint64_t ByteReader::get_u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
}

float ByteReader::get_f32() { return std::bit_cast<float>(get_u32()); }

double ByteReader::get_f64() { return std::bit_cast<double>(get_u64()); }

std::string ByteReader::get_string() {
    const uint16_t n = get_u16();
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
}

void ByteReader::get_bytes(void* p, size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
}

void ByteReader::expect_end() const {
    if (pos_ != end_) const_cast<ByteReader*>(this)->fail("trailing bytes after payload");
}

}  // namespace ramer::io
