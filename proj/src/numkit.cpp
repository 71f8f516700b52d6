#include "dppx/numkit.hpp"

#include "dppx/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace dppx {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw DimensionError("matrix data length " + std::to_string(data_.size()) + " != " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0f;
    }
    return m;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t seed) {
    return fnv1a64(std::as_bytes(std::span(text.data(), text.size())), seed);
}

RngStream::RngStream(std::uint64_t root_seed, std::string_view key)
    : root_seed_(root_seed), key_(key), key_state_(splitmix64(fnv1a64(key) ^ splitmix64(root_seed))) {}

std::uint64_t RngStream::next_u64() {
    // The SplitMix64 sequence seeded at key_state, addressed by position.
    const std::uint64_t i = counter_++;
    return splitmix64(key_state_ + i * 0x9E3779B97F4A7C15ULL);
}

double RngStream::next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = next_uniform();
    while (u1 <= 0.0) {
        u1 = next_uniform();
    }
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
    if (bound == 0) {
        throw DomainError("next_below: bound must be positive");
    }
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64();
    unsigned __int128 m = static_cast<unsigned __int128>(x) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<unsigned __int128>(x) * bound;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

RngStream RngStream::child(std::string_view suffix) const {
    return RngStream(root_seed_, key_ + "/" + std::string(suffix));
}

Vector rmsnorm(std::span<const float> x, std::span<const float> gain, double eps) {
    if (gain.size() != x.size()) {
        throw DimensionError("rmsnorm: gain length " + std::to_string(gain.size()) + " != input length " +
                             std::to_string(x.size()));
    }
    if (!(eps >= 0.0)) {
        throw DomainError("rmsnorm: eps must be non-negative");
    }
    Vector out(x.size(), 0.0f);
    if (x.empty()) {
        return out;
    }
    double sq = 0.0;
    for (float v : x) {
        sq += static_cast<double>(v) * v;
    }
    const double denom = std::sqrt(sq / static_cast<double>(x.size()) + eps);
    if (denom == 0.0) {
        return out;
    }
    for (std::size_t j = 0; j < x.size(); ++j) {
        out[j] = static_cast<float>(static_cast<double>(gain[j]) * x[j] / denom);
    }
    return out;
}

Vector relu(std::span<const float> x) {
    Vector out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        out[j] = x[j] > 0.0f ? x[j] : 0.0f;
    }
    return out;
}

Matrix bernoulli_mask(std::size_t rows, std::size_t cols, double keep_prob, RngStream & stream) {
    if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
        throw DomainError("bernoulli_mask: keep_prob must lie in [0, 1]");
    }
    Matrix mask(rows, cols);
    for (float & m : mask.flat()) {
        m = stream.next_bernoulli(keep_prob) ? 1.0f : 0.0f;
    }
    return mask;
}

double dot64(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: length mismatch");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * b[i];
    }
    return acc;
}

double mean64(std::span<const float> x) {
    if (x.empty()) {
        return 0.0;
    }
    double acc = 0.0;
    for (float v : x) {
        acc += v;
    }
    return acc / static_cast<double>(x.size());
}

Vector matvec(const Matrix & w, std::span<const float> x) {
    if (w.cols() != x.size()) {
        throw DimensionError("matvec: matrix has " + std::to_string(w.cols()) + " columns, vector has " +
                             std::to_string(x.size()) + " entries");
    }
    Vector out(w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) {
        out[i] = static_cast<float>(dot64(w.row(i), x));
    }
    return out;
}

Vector column_norms(const Matrix & batch) {
    std::vector<double> acc(batch.cols(), 0.0);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
        const auto row = batch.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) {
            acc[j] += static_cast<double>(row[j]) * row[j];
        }
    }
    Vector out(batch.cols());
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = static_cast<float>(std::sqrt(acc[j]));
    }
    return out;
}

void require_finite(std::span<const float> x, std::string_view what) {
    for (float v : x) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(what) + ": non-finite value");
        }
    }
}

}  // namespace dppx
