#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prism/types.hpp"

namespace prism {

/// Seeded generator with platform-independent conversions. std:: distributions
/// are implementation-defined, so sampling goes through these helpers instead.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);
    int integer(int lo, int hi_inclusive) {
        return lo + static_cast<int>(index(static_cast<std::size_t>(hi_inclusive - lo + 1)));
    }
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mix a seed with a stream tag so sub-generators are independent.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// FNV-1a 64-bit hash, used for fingerprints and manifest content hashes.
class Fingerprint {
public:
    Fingerprint& add_bytes(const void* data, std::size_t n);
    Fingerprint& add(std::string_view s) { return add_bytes(s.data(), s.size()); }
    Fingerprint& add(std::int64_t v) { return add_bytes(&v, sizeof v); }
    Fingerprint& add(double v) { return add_bytes(&v, sizeof v); }
    Fingerprint& add(const Vector& v);
    Fingerprint& add(const TokenSequence& s);
    std::uint64_t value() const { return h_; }
    std::string hex() const;

private:
    std::uint64_t h_ = 14695981039346656037ULL;
};

std::string fingerprint_pool(std::span<const Example> pool);
std::string fingerprint_targets(std::span<const PairedTarget> targets);
std::string hash_file(const std::string& path);
std::string hash_string(std::string_view s);

/// Shortest decimal that round-trips a double exactly (17 significant digits).
std::string format_double(double v);

/// Argsort by descending score, ties broken by ascending id.
std::vector<std::size_t> rank_order(std::span<const double> scores, std::span<const int> ids);

/// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency). Each
/// index runs exactly once; if any call throws, the exception from the lowest
/// failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Worker count for a --threads value: 0 means all available cores.
int resolve_threads(int threads);

double median(std::vector<double> v);
double mean(std::span<const double> v);

}  // namespace prism
