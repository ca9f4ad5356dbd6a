#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "isc/errors.hpp"

namespace isc::detail {

class ByteWriter {
public:
    explicit ByteWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    }

    void bytes(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
    void u16(std::uint16_t v) { little(v, 2); }
    void u32(std::uint32_t v) { little(v, 4); }
    void u64(std::uint64_t v) { little(v, 8); }
    void f64(double v) { little(std::bit_cast<std::uint64_t>(v), 8); }

    void finish(const std::filesystem::path& path) {
        out_.flush();
        if (!out_) throw IoError("write failed for " + path.string());
    }

private:
    void little(std::uint64_t v, int n) {
        std::array<char, 8> buf{};
        for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
        out_.write(buf.data(), n);
    }

    std::ofstream out_;
};

/// Sequential little-endian reader that reports the byte offset of every failure.
class ByteReader {
public:
    explicit ByteReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open " + path.string() + " for reading");
    }

    std::uint64_t offset() const noexcept { return offset_; }

    bool at_end() {
        return in_.peek() == std::char_traits<char>::eof();
    }

    std::string bytes(std::size_t n, std::string_view what) {
        std::string s(n, '\0');
        read_exact(s.data(), n, what);
        return s;
    }
    std::uint16_t u16(std::string_view what) { return static_cast<std::uint16_t>(little(2, what)); }
    std::uint32_t u32(std::string_view what) { return static_cast<std::uint32_t>(little(4, what)); }
    std::uint64_t u64(std::string_view what) { return little(8, what); }
    double f64(std::string_view what) { return std::bit_cast<double>(little(8, what)); }

private:
    void read_exact(char* dst, std::size_t n, std::string_view what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw FormatError("truncated file while reading " + std::string(what), offset_);
        }
        offset_ += n;
    }

    std::uint64_t little(int n, std::string_view what) {
        std::array<unsigned char, 8> buf{};
        read_exact(reinterpret_cast<char*>(buf.data()), static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = n - 1; i >= 0; --i) v = (v << 8) | buf[i];
        return v;
    }

    std::ifstream in_;
    std::uint64_t offset_ = 0;
};

}  // namespace isc::detail
