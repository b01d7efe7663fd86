#pragma once

// Little-endian packing shared by the VPR* containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vpr/error.hpp"

namespace vpr::detail {

template <typename T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
        std::memcpy(&value, buf, sizeof(T));
    }
    return value;
}

class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f32(float v) { put(v); }
    void f64(double v) { put(v); }
    void f32s(std::span<const float> vs) {
        for (float v : vs) put(v);
    }

    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    template <typename T>
    void put(T v) {
        v = to_little(v);
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string container)
        : bytes_(bytes), container_(std::move(container)) {}

    void expect_magic(std::string_view m) {
        need(m.size());
        if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
            throw FormatError(container_ + ": bad magic bytes, expected \"" + std::string(m) + "\"");
        pos_ += m.size();
    }
    void expect_version(std::uint8_t version) {
        std::uint8_t got = u8();
        if (got != version)
            throw FormatError(container_ + ": unsupported version " + std::to_string(got));
    }
    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::uint64_t u64() { return get<std::uint64_t>(); }
    float f32() { return get<float>(); }
    double f64() { return get<double>(); }
    void f32s(std::span<float> out) {
        need(out.size() * sizeof(float));
        for (float& v : out) v = get<float>();
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    void expect_end() const {
        if (remaining() != 0)
            throw FormatError(container_ + ": " + std::to_string(remaining()) + " trailing bytes");
    }
    /// Checks a payload of count*elem_size bytes fits before allocating it.
    void need_elements(std::uint64_t count, std::size_t elem_size) const {
        if (count > remaining() / elem_size) throw FormatError(container_ + ": truncated payload");
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw FormatError(container_ + ": truncated data");
    }
    template <typename T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }

    std::span<const std::uint8_t> bytes_;
    std::string container_;
    std::size_t pos_ = 0;
};

}  // namespace vpr::detail
