#ifndef FDG_NUMERICS_HPP
#define FDG_NUMERICS_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

namespace fdg {

// Dense row-major matrix of doubles. Training math runs in 64-bit precision
// throughout; 32-bit values appear only inside dataset files.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    std::span<const double> row_span(std::size_t r) const { return {row(r), cols}; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
    bool operator==(const Matrix&) const = default;
};

// Deterministic xoshiro256** stream seeded through splitmix64. Equal seeds
// produce byte-identical streams; split(tag) derives an independent
// deterministic substream from a text tag. The exact update rules (including
// uniform_int rejection, normal sampling and shuffling) are written down in
// docs/FORMATS.md so the streams can be reproduced outside this codebase.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64();

    // Uniform double in [0, 1): 53 high bits of next_u64.
    double uniform();
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; each call consumes exactly two uniforms.
    double normal();

    // Unbiased integer in [0, n) by rejection. n must be >= 1.
    std::uint64_t uniform_int(std::uint64_t n);

    // Independent substream: child seed = mix64(seed ^ fnv1a64(tag)).
    Rng split(std::string_view tag) const;

    // Fisher-Yates, iterating from the back of the vector.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // First k entries of a partial front-to-back Fisher-Yates pass over 0..n-1;
    // a uniform draw of k distinct indices, in draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

private:
    std::uint64_t seed_ = 0;
    std::array<std::uint64_t, 4> state_{};
};

bool all_finite(std::span<const double> v);

// Log-probabilities of a softmax over `logits`, computed with a max shift so
// large inputs cannot overflow. exp of the result sums to 1 within 1e-12.
std::vector<double> log_softmax(std::span<const double> logits);

// Sum of squared componentwise differences.
double sq_euclidean(std::span<const double> a, std::span<const double> b);

// Central-difference gradient oracle: g_i = (f(x + h e_i) - f(x - h e_i)) / 2h.
// Every loss gradient in this project is checked against it.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> theta, double h);

}  // namespace fdg

#endif
