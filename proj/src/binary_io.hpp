#pragma once

// Little-endian binary encoding shared by the bank, landmark and checkpoint
// formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lgf/error.hpp"

namespace lgf::detail {

class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double d) {
        const auto v = std::bit_cast<std::uint64_t>(d);
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64s(std::span<const double> ds) {
        for (double d : ds) f64(d);
    }
    void save(const std::filesystem::path& path) const {
        if (path.empty()) throw IoError("empty output path");
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + path.string());
        out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        if (!out) throw IoError("write failed: " + path.string());
    }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    static ByteReader load(const std::filesystem::path& path) {
        if (path.empty()) throw IoError("empty input path");
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open: " + path.string());
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return ByteReader(std::move(bytes), path.string());
    }

    ByteReader(std::vector<std::uint8_t> bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
            throw IoError(name_ + ": bad magic, expected '" + std::string(m) + "'");
        pos_ += m.size();
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(v);
    }
    /// Reads `count` doubles after checking the payload fits in the file.
    std::vector<double> f64s(std::uint64_t count) {
        if (count > remaining() / 8) throw IoError(name_ + ": truncated payload or dimension overflow");
        std::vector<double> out(count);
        for (double& d : out) d = f64();
        return out;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }
    const std::string& name() const { return name_; }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw IoError(name_ + ": truncated file");
    }

    std::vector<std::uint8_t> bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

} // namespace lgf::detail
