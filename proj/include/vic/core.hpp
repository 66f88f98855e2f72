#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vic {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Process exit codes used by the CLI; each error type maps to one.
enum class ExitCode : int {
    kOk = 0,
    kUsage = 1,
    kValidation = 2,
    kIo = 3,
    kDivergence = 4,
    kVersion = 5,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ExitCode code = ExitCode::kValidation)
        : std::runtime_error(what), code_(code) {}
    ExitCode code() const noexcept { return code_; }

private:
    ExitCode code_;
};

struct ParseError : Error {
    explicit ParseError(const std::string& w) : Error(w, ExitCode::kValidation) {}
};
struct ValidationError : Error {
    explicit ValidationError(const std::string& w) : Error(w, ExitCode::kValidation) {}
};
struct LabelingError : Error {
    explicit LabelingError(const std::string& w) : Error(w, ExitCode::kValidation) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& w) : Error(w, ExitCode::kValidation) {}
};
struct CapacityError : Error {
    explicit CapacityError(const std::string& w) : Error(w, ExitCode::kValidation) {}
};
struct IoError : Error {
    explicit IoError(const std::string& w) : Error(w, ExitCode::kIo) {}
};
struct TrainingError : Error {
    explicit TrainingError(const std::string& w) : Error(w, ExitCode::kDivergence) {}
};
struct VersionError : Error {
    explicit VersionError(const std::string& w) : Error(w, ExitCode::kVersion) {}
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace detail

using Rng = std::mt19937_64;

// Named sub-stream of a root seed. Every module draws from its own stream so
// that adding draws in one place does not shift another module's randomness.
inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
    return Rng(detail::splitmix64(seed ^ detail::fnv1a(stream)));
}

inline Rng make_rng(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
    return Rng(detail::splitmix64(detail::splitmix64(seed ^ detail::fnv1a(stream)) + index));
}

// Thread cap from VIC_THREADS (default 1).
inline unsigned thread_cap() {
    if (const char* env = std::getenv("VIC_THREADS")) {
        try {
            const int v = std::stoi(env);
            if (v >= 1) return static_cast<unsigned>(v);
        } catch (...) {
        }
    }
    return 1;
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace vic
