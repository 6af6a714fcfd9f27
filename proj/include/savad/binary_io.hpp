#pragma once

// Little-endian byte encoding independent of host byte order.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "savad/errors.hpp"

namespace savad {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }
    [[nodiscard]] const std::string& buffer() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}

    void require(std::size_t n, const std::string& what) const {
        if (data_.size() - pos_ < n) {
            throw TruncatedError(source_ + ": truncated while reading " + what + " (need " + std::to_string(n) +
                                 " bytes, " + std::to_string(data_.size() - pos_) + " left)");
        }
    }
    std::uint8_t u8() {
        require(1, "u8");
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint16_t u16() {
        require(2, "u16");
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(data_[pos_++]) << (8 * i));
        return v;
    }
    std::uint32_t u32() {
        require(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(std::size_t n) {
        require(n, "bytes");
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }
    [[nodiscard]] bool done() const { return pos_ == data_.size(); }

private:
    std::string_view data_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace savad
