#pragma once
// Little-endian primitive readers/writers shared by the ICOM, CAMF, CAMR and
// CAMW file formats. Byte order is fixed explicitly so files are portable.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace cam::io {

class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put_le(v); }
    void u32(std::uint32_t v) { put_le(v); }
    void f32(float v) { put_le(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { put_le(std::bit_cast<std::uint64_t>(v)); }

    const std::vector<char>& data() const { return buf_; }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + path.string());
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) throw IoError("write failed: " + path.string());
    }

private:
    template <typename U>
    void put_le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i)
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }

    std::vector<char> buf_;
};

// Reads from an in-memory copy of a file; every read is bounds-checked and a
// short file raises FormatError naming the field being read.
class ByteReader {
public:
    explicit ByteReader(std::vector<char> buf, std::string source = "<memory>")
        : buf_(std::move(buf)), source_(std::move(source)) {}

    static ByteReader from_file(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open for reading: " + path.string());
        std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(buf), path.string());
    }

    void expect_magic(std::string_view magic) {
        need(magic.size(), "magic");
        if (std::memcmp(buf_.data() + pos_, magic.data(), magic.size()) != 0)
            throw FormatError(source_ + ": bad magic, expected \"" + std::string(magic) + "\"");
        pos_ += magic.size();
    }

    std::string bytes(std::size_t n, const char* field) {
        need(n, field);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::uint8_t u8(const char* field) { return get_le<std::uint8_t>(field); }
    std::uint16_t u16(const char* field) { return get_le<std::uint16_t>(field); }
    std::uint32_t u32(const char* field) { return get_le<std::uint32_t>(field); }
    float f32(const char* field) { return std::bit_cast<float>(get_le<std::uint32_t>(field)); }
    double f64(const char* field) { return std::bit_cast<double>(get_le<std::uint64_t>(field)); }

    std::size_t remaining() const { return buf_.size() - pos_; }
    const std::string& source() const { return source_; }

    void expect_end() const {
        if (remaining() != 0)
            throw FormatError(source_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }

private:
    void need(std::size_t n, const char* field) const {
        if (buf_.size() - pos_ < n)
            throw FormatError(source_ + ": truncated while reading " + field);
    }

    template <typename U>
    U get_le(const char* field) {
        need(sizeof(U), field);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }

    std::vector<char> buf_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace cam::io
