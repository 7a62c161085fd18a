#pragma once

// Byte-level plumbing shared by every module: the canonical field encoding,
// hex helpers, and a small deterministic RNG. The canonical encoding is the
// substrate for message hashing and signing, so its layout is frozen by
// golden-vector tests; do not change it without re-pinning those vectors.

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pose {

using Bytes = std::vector<uint8_t>;

struct DecodeError : std::runtime_error {
    explicit DecodeError(const std::string& what) : std::runtime_error(what) {}
};

// Every field is a u32 little-endian length followed by the raw bytes.
// Fixed-width integers are carried as 8-byte little-endian fields. Vectors
// are a u64 count field followed by the elements. Nested structs encode to a
// byte blob that becomes a single field. Declaration order is the wire order.
class Encoder {
  public:
    Encoder& field(std::span<const uint8_t> data) {
        put_len(static_cast<uint32_t>(data.size()));
        out_.insert(out_.end(), data.begin(), data.end());
        return *this;
    }
    Encoder& field(const Bytes& data) { return field(std::span<const uint8_t>(data)); }
    Encoder& u64(uint64_t v) {
        uint8_t b[8];
        for (int i = 0; i < 8; i++) b[i] = static_cast<uint8_t>(v >> (8 * i));
        return field(std::span<const uint8_t>(b, 8));
    }
    Encoder& i64(int64_t v) { return u64(static_cast<uint64_t>(v)); }
    Encoder& u8(uint8_t v) { return field(std::span<const uint8_t>(&v, 1)); }
    Encoder& str(std::string_view s) {
        return field(std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
    }

    const Bytes& bytes() const { return out_; }
    Bytes take() { return std::move(out_); }

  private:
    void put_len(uint32_t n) {
        for (int i = 0; i < 4; i++) out_.push_back(static_cast<uint8_t>(n >> (8 * i)));
    }
    Bytes out_;
};

class Decoder {
  public:
    explicit Decoder(std::span<const uint8_t> in) : in_(in) {}
    explicit Decoder(const Bytes& in) : in_(in) {}
    // A Decoder views the buffer; constructing one over a temporary dangles.
    explicit Decoder(Bytes&&) = delete;

    Bytes field() {
        uint32_t n = len();
        if (in_.size() - pos_ < n) throw DecodeError("field overruns buffer");
        Bytes out(in_.begin() + pos_, in_.begin() + pos_ + n);
        pos_ += n;
        return out;
    }
    uint64_t u64() {
        Bytes f = field();
        if (f.size() != 8) throw DecodeError("expected 8-byte integer field");
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(f[i]) << (8 * i);
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    uint8_t u8() {
        Bytes f = field();
        if (f.size() != 1) throw DecodeError("expected 1-byte field");
        return f[0];
    }
    std::string str() {
        Bytes f = field();
        return std::string(f.begin(), f.end());
    }
    bool done() const { return pos_ == in_.size(); }
    void expect_done() const {
        if (!done()) throw DecodeError("trailing bytes after message");
    }

  private:
    uint32_t len() {
        if (in_.size() - pos_ < 4) throw DecodeError("length prefix overruns buffer");
        uint32_t n = 0;
        for (int i = 0; i < 4; i++) n |= static_cast<uint32_t>(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return n;
    }
    std::span<const uint8_t> in_;
    size_t pos_ = 0;
};

inline std::string to_hex(std::span<const uint8_t> data) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

inline Bytes from_hex(std::string_view hex) {
    auto nib = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    if (hex.size() % 2 != 0) throw DecodeError("odd hex length");
    Bytes out;
    out.reserve(hex.size() / 2);
    for (size_t i = 0; i < hex.size(); i += 2) {
        int hi = nib(hex[i]), lo = nib(hex[i + 1]);
        if (hi < 0 || lo < 0) throw DecodeError("bad hex digit");
        out.push_back(static_cast<uint8_t>(hi << 4 | lo));
    }
    return out;
}

inline Bytes str_bytes(std::string_view s) {
    return Bytes(s.begin(), s.end());
}

// splitmix64: tiny, portable, and stable across platforms. All simulation
// randomness flows through this (or digest-keyed streams built on it) so a
// (scenario, seed) pair replays byte-identically everywhere.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    // Unbiased draw in [0, n) by rejection; n = 0 is a caller bug.
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::logic_error("Rng::below(0)");
        uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
        uint64_t v;
        do {
            v = next();
        } while (v >= limit);
        return v % n;
    }
    int64_t range(int64_t lo, int64_t hi) {  // inclusive bounds
        if (hi < lo) throw std::logic_error("Rng::range bounds");
        return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
    }
    double unit() {  // [0,1) with 53 bits
        return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0);
    }
    Rng fork(uint64_t salt) {
        return Rng(next() ^ (salt * 0x9e3779b97f4a7c15ULL));
    }

  private:
    uint64_t state_;
};

}  // namespace pose
