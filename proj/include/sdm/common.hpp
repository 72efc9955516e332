#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <random>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sdm {

// ---------------------------------------------------------------------------
// Error taxonomy. The CLI maps these onto distinct exit codes.
// ---------------------------------------------------------------------------

struct SdmError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Bad flags / bad invocation (exit 2).
struct UsageError : SdmError {
    using SdmError::SdmError;
};
// A referenced input file or directory does not exist (exit 3).
struct MissingInputError : SdmError {
    using SdmError::SdmError;
};
// Input exists but its content violates a contract (exit 4).
struct DataError : SdmError {
    using SdmError::SdmError;
};
// Non-finite values or other numeric breakdown (exit 5).
struct NumericError : SdmError {
    using SdmError::SdmError;
};

// ---------------------------------------------------------------------------
// Deterministic RNG. All stochastic behaviour in the toolkit flows through
// this wrapper so that a seed fixes every draw, independent of the standard
// library's distribution implementations.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; two uniforms per sample, no cached spare.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n). Fixed-point multiply keeps the draw
    // platform-stable; the modulo bias at 64 bits is irrelevant here.
    std::size_t uniform_index(std::size_t n) {
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(gen_()) * n) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

// 64-bit FNV-1a; used for stream derivation and artifact fingerprints.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Deterministic child seed for a named sub-stream of a master seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
    std::uint64_t h = fnv1a64(label.data(), label.size(), master ^ 0x9e3779b97f4a7c15ull);
    // splitmix64 finalizer to decorrelate nearby masters
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

// ---------------------------------------------------------------------------
// Little-endian binary IO. All on-disk numeric formats are little-endian;
// these helpers spell the bytes out so the formats hold on any host.
// ---------------------------------------------------------------------------

namespace io {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
    write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline void write_string(std::ostream& os, std::string_view s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw DataError(std::string("truncated file while reading ") + what);
    }
}

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") {
    unsigned char b[4];
    read_bytes(is, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is, const char* what = "u64") {
    const std::uint64_t lo = read_u32(is, what);
    const std::uint64_t hi = read_u32(is, what);
    return lo | (hi << 32);
}

inline float read_f32(std::istream& is, const char* what = "f32") {
    const std::uint32_t bits = read_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline double read_f64(std::istream& is, const char* what = "f64") {
    const std::uint64_t bits = read_u64(is, what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

inline std::string read_string(std::istream& is, const char* what = "string") {
    const std::uint32_t n = read_u32(is, what);
    if (n > (1u << 24)) {
        throw DataError(std::string("implausible ") + what + " length: " + std::to_string(n));
    }
    std::string s(n, '\0');
    if (n > 0) read_bytes(is, s.data(), n, what);
    return s;
}

inline void expect_magic(std::istream& is, const char magic[4], const char* format) {
    char got[4];
    read_bytes(is, got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0) {
        throw DataError(std::string("not a ") + format + " file (bad magic)");
    }
}

// Guard for header-declared element counts; corrupt headers must fail as
// data errors, not as allocation failures.
inline std::size_t checked_count(std::uint64_t n, std::uint64_t limit, const char* what) {
    if (n > limit) {
        throw DataError(std::string("implausible ") + what + " count in header: " +
                        std::to_string(n));
    }
    return static_cast<std::size_t>(n);
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    return os;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw MissingInputError("missing input file: " + path.string());
    }
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingInputError("cannot open: " + path.string());
    return is;
}

inline std::uint64_t hash_file(const std::filesystem::path& path) {
    std::ifstream is = open_input(path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (is) {
        is.read(buf, sizeof(buf));
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    return h;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Small text utilities shared by the CSV readers.
// ---------------------------------------------------------------------------

inline std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(line.substr(start));
            break;
        }
        out.emplace_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Shortest decimal text that round-trips the double; deterministic output
// for CSV artifacts.
inline std::string format_double(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

// Worker count for the embarrassingly parallel stages; capped by SDM_THREADS.
inline unsigned thread_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SDM_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
    }
    return n;
}

}  // namespace sdm
