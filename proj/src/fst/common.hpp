#pragma once

// Shared error types, seeding, hashing and small I/O helpers.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fst {

// Error categories map onto CLI exit codes (1, 2, 3).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ArtifactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ValidationError(what);
}

inline void require_finite(double v, const std::string& where) {
    if (!std::isfinite(v)) throw NumericalError("non-finite value in " + where);
}

// 64-bit FNV-1a. Used for content hashes and seed labels; not cryptographic.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Child seed for a (parent, purpose) pair. Every random stream in the
/// toolkit is derived this way from the run's master seed, so adding a new
/// consumer never perturbs existing ones.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
    return splitmix64(parent ^ splitmix64(fnv1a64(label)));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label, std::uint64_t index) {
    return splitmix64(derive_seed(parent, label) + splitmix64(index + 1));
}

using Rng = std::mt19937_64;

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ArtifactError("cannot write " + path.string());
    out << contents;
}

inline std::string file_hash(const std::filesystem::path& path) {
    return hex64(fnv1a64(read_file(path)));
}

// Shortest round-trip decimal form, so CSV output is byte-stable and lossless.
inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Rows of a CSV file with a required header. Throws ArtifactError when the
/// header differs or a row has the wrong arity.
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                                      std::string_view expected_header) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != expected_header)
        throw ArtifactError(path.string() + ": expected header '" + std::string(expected_header) + "'");
    auto arity = split(expected_header, ',').size();
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split(line, ',');
        if (fields.size() != arity) throw ArtifactError(path.string() + ": malformed row '" + line + "'");
        rows.push_back(std::move(fields));
    }
    return rows;
}

inline double parse_double(const std::string& s) {
    if (s == "inf") return INFINITY;
    std::size_t used = 0;
    double v = std::stod(s, &used);
    if (used != s.size()) throw ArtifactError("bad number '" + s + "'");
    return v;
}

}  // namespace fst
