#include "fdg/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fdg/errors.hpp"

namespace fdg {

bool Matrix::all_finite() const {
    return fdg::all_finite(data);
}

bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

namespace {

// splitmix64 finalizer; also used to derive child seeds for split().
std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
    // xoshiro256** state from four successive splitmix64 outputs.
    std::uint64_t s = seed;
    for (auto& word : state_) {
        s += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        word = z ^ (z >> 31);
    }
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double Rng::normal() {
    // u1 in (0, 1] keeps the log finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw UsageError("uniform_int: n must be >= 1");
    // Reject the final partial block so every residue is equally likely.
    while (true) {
        const std::uint64_t x = next_u64();
        const std::uint64_t r = x % n;
        if (x - r <= std::numeric_limits<std::uint64_t>::max() - (n - 1)) return r;
    }
}

Rng Rng::split(std::string_view tag) const {
    return Rng(mix64(seed_ ^ fnv1a64(tag)));
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
    if (k > n) throw UsageError("sample_indices: k exceeds n");
    std::vector<std::size_t> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
        std::swap(v[i], v[j]);
    }
    v.resize(k);
    return v;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.empty()) throw UsageError("log_softmax: empty input");
    if (!all_finite(logits)) throw UsageError("log_softmax: non-finite input");
    const double m = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

double sq_euclidean(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw UsageError("sq_euclidean: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double h) {
    std::vector<double> point(theta.begin(), theta.end());
    std::vector<double> grad(theta.size());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = point[i];
        point[i] = orig + h;
        const double up = f(point);
        point[i] = orig - h;
        const double down = f(point);
        point[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericalError("finite_diff_grad: non-finite evaluation");
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace fdg
