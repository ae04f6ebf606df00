#include "prism/util.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <fstream>
#include <numeric>
#include <sstream>
#include <exception>
#include <thread>

namespace prism {

std::size_t Rng::index(std::size_t n) {
    if (n == 0) {
        throw ValidationError("Rng::index called with n = 0");
    }
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u = 0.0;
    do {
        u = uniform();
    } while (u <= 0.0);
    const double v = uniform();
    const double r = std::sqrt(-2.0 * std::log(u));
    const double a = 2.0 * 3.14159265358979323846 * v;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Fingerprint& Fingerprint::add_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h_ ^= p[i];
        h_ *= 1099511628211ULL;
    }
    return *this;
}

Fingerprint& Fingerprint::add(const Vector& v) {
    add(static_cast<std::int64_t>(v.size()));
    return add_bytes(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
}

Fingerprint& Fingerprint::add(const TokenSequence& s) {
    add(static_cast<std::int64_t>(s.size()));
    for (int t : s) {
        add(static_cast<std::int64_t>(t));
    }
    return *this;
}

std::string Fingerprint::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h_));
    return buf;
}

std::string fingerprint_pool(std::span<const Example> pool) {
    Fingerprint f;
    f.add(std::string_view("pool"));
    for (const auto& z : pool) {
        f.add(static_cast<std::int64_t>(z.id)).add(z.query).add(z.response);
    }
    return f.hex();
}

std::string fingerprint_targets(std::span<const PairedTarget> targets) {
    Fingerprint f;
    f.add(std::string_view("targets"));
    for (const auto& t : targets) {
        f.add(static_cast<std::int64_t>(t.id)).add(t.query).add(t.positive).add(t.negative);
    }
    return f.hex();
}

std::string hash_string(std::string_view s) {
    Fingerprint f;
    f.add(s);
    return f.hex();
}

std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot read file for hashing: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return hash_string(ss.str());
}

std::string format_double(double v) {
    if (std::isnan(v)) {
        return "nan";
    }
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) {
            return buf;
        }
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::size_t> rank_order(std::span<const double> scores, std::span<const int> ids) {
    if (scores.size() != ids.size()) {
        throw ValidationError("rank_order: scores and ids differ in length");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return ids[a] < ids[b];
    });
    return order;
}

int resolve_threads(int threads) {
    if (threads < 0) {
        throw ValidationError("threads must be >= 0");
    }
    if (threads == 0) {
        return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }
    return threads;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(threads)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back(work);
    }
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

double median(std::vector<double> v) {
    if (v.empty()) {
        throw ValidationError("median of empty list");
    }
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(std::span<const double> v) {
    if (v.empty()) {
        throw ValidationError("mean of empty list");
    }
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

}  // namespace prism
