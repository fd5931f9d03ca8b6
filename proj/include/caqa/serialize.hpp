#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "caqa/tensor.hpp"

namespace caqa {

inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t seed = 1469598103934665603ULL) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
    return h;
}

inline std::string fnv1a_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
    return std::string(buf);
}

class SerializeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Little binary writer with a running checksum; finish() appends it so the
/// reader can detect truncation or corruption.
class BinWriter {
public:
    explicit BinWriter(std::ostream& out) : out_(out) {}

    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void boolean(bool v) { u8(v ? 1 : 0); }

    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }

    void tensor(const Tensor& t) {
        u64(t.rank());
        for (std::size_t d : t.shape()) u64(d);
        raw(t.values().data(), t.size() * sizeof(double));
    }

    void finish() {
        const std::uint64_t sum = hash_;
        out_.write(reinterpret_cast<const char*>(&sum), sizeof sum);
        out_.flush();
        if (!out_) throw SerializeError("BinWriter: write failed");
    }

private:
    void raw(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) throw SerializeError("BinWriter: write failed");
        hash_ = fnv1a(p, n, hash_);
    }

    std::ostream& out_;
    std::uint64_t hash_ = 1469598103934665603ULL;
};

class BinReader {
public:
    explicit BinReader(std::istream& in) : in_(in) {}

    std::uint8_t u8() {
        std::uint8_t v;
        raw(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        raw(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof v);
        return v;
    }
    bool boolean() { return u8() != 0; }

    std::string str() {
        const std::uint64_t n = u64();
        if (n > (1ULL << 32)) throw SerializeError("BinReader: implausible string length");
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }

    Tensor tensor() {
        const std::uint64_t rank = u64();
        if (rank > 8) throw SerializeError("BinReader: implausible tensor rank");
        Shape shape(rank);
        for (std::uint64_t d = 0; d < rank; ++d) shape[d] = u64();
        Tensor t(shape);
        raw(t.values().data(), t.size() * sizeof(double));
        return t;
    }

    /// Verifies the trailing checksum over everything read so far.
    void finish() {
        const std::uint64_t want = hash_;
        std::uint64_t stored;
        in_.read(reinterpret_cast<char*>(&stored), sizeof stored);
        if (!in_) throw SerializeError("BinReader: truncated stream");
        if (stored != want) throw SerializeError("BinReader: checksum mismatch, file corrupted");
    }

private:
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (!in_) throw SerializeError("BinReader: truncated stream");
        hash_ = fnv1a(p, n, hash_);
    }

    std::istream& in_;
    std::uint64_t hash_ = 1469598103934665603ULL;
};

}  // namespace caqa
