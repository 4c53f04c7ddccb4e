#pragma once

#include <atomic>
#include <charconv>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <vector>

namespace topocontro {

/// Base error for everything the library throws on contract violations.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a pipeline stage is invoked before the stage that produces its input.
class MissingArtifactError : public Error {
public:
    MissingArtifactError(std::string what, std::string producing_command)
        : Error(std::move(what)), producing_command_(std::move(producing_command)) {}

    const std::string& producing_command() const noexcept { return producing_command_; }

private:
    std::string producing_command_;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// splitmix64 finalizer; used to derive independent child seeds from a master seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
    return mix_seed(mix_seed(master) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

/// Deterministic random source. std::mt19937_64's output sequence is fixed by
/// the standard; the distributions in <random> are not, so the helpers here
/// are written against the raw engine output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r = engine_();
        while (r >= limit) r = engine_();
        return r % n;
    }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t between(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call, second discarded).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
};

/// Shortest round-trip decimal representation; locale independent.
std::string format_double(double v);

/// Fixed-point with `decimals` digits, locale independent.
std::string format_fixed(double v, int decimals);

/// Parses a double using the C locale; throws Error on garbage.
double parse_double(std::string_view s);

std::int64_t parse_int(std::string_view s);

unsigned default_jobs();

/// Runs body(i) for i in [0, n) on up to `jobs` threads. Results must be written
/// to per-index slots by the caller; the first exception by index is rethrown.
template <typename Body>
void parallel_for(std::size_t n, unsigned jobs, Body&& body) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(jobs, n);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                    try {
                        body(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace topocontro
