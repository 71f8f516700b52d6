#pragma once

// Dense arithmetic and keyed random streams shared by every other module.
//
// Storage is 32-bit; every reduction (dot products, means, norms) runs in
// 64-bit and is rounded once on the way out.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dppx {

using Vector = std::vector<float>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float & operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<float> flat() { return data_; }
    std::span<const float> flat() const { return data_; }
    const std::vector<float> & values() const { return data_; }

    bool operator==(const Matrix & other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

// Counter-based keyed generator. Sample i of a stream is a pure function of
// (root_seed, key, i), so streams for distinct keys can be consumed in any
// order or on any thread without changing their values. A single stream
// object is not thread-safe.
class RngStream {
public:
    RngStream(std::uint64_t root_seed, std::string_view key);

    std::uint64_t root_seed() const { return root_seed_; }
    const std::string & key() const { return key_; }
    std::uint64_t position() const { return counter_; }

    std::uint64_t next_u64();
    // Uniform in [0, 1) with 53 random bits.
    double next_uniform();
    // Standard normal via Box-Muller (both outputs are used).
    double next_normal();
    bool next_bernoulli(double prob) { return next_uniform() < prob; }
    // Uniform integer in [0, bound) without modulo bias.
    std::uint64_t next_below(std::uint64_t bound);

    // Derive an independent child stream, e.g. one per trial or per epoch.
    RngStream child(std::string_view suffix) const;

private:
    std::uint64_t root_seed_;
    std::string key_;
    std::uint64_t key_state_;
    std::uint64_t counter_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

Vector rmsnorm(std::span<const float> x, std::span<const float> gain, double eps = 1e-6);
Vector relu(std::span<const float> x);
Matrix bernoulli_mask(std::size_t rows, std::size_t cols, double keep_prob, RngStream & stream);
Vector matvec(const Matrix & w, std::span<const float> x);

// Column-wise Euclidean norm of a (samples x features) batch.
Vector column_norms(const Matrix & batch);

double dot64(std::span<const float> a, std::span<const float> b);
double mean64(std::span<const float> x);

// Throws NumericError naming `what` if any entry is NaN or infinite.
void require_finite(std::span<const float> x, std::string_view what);

}  // namespace dppx
