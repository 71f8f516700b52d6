#pragma once

// Adam with a delta-anchored decay term:
//
//   theta_t = theta_{t-1} - lr * m_hat / (sqrt(v_hat) + eps)
//                         - lr * lambda / (sqrt(v_bar) + eps) * R
//
// with R = theta_{t-1} - anchor (l2), sign(theta_{t-1} - anchor) (l1) or 0,
// and v_bar the mean of v_hat over each tensor.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dppx {

enum class Regularizer { none, l2, l1 };
std::string to_string(Regularizer r);
Regularizer parse_regularizer(std::string_view name);

struct AdamRConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lambda = 0.0;
    Regularizer reg = Regularizer::none;
    // l1 only: a coordinate whose decay step would carry it past the anchor
    // lands on the anchor instead.
    bool l1_clamp = true;

    void validate() const;
};

struct AdamRState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;

    explicit AdamRState(std::span<const std::size_t> sizes);
    AdamRState() = default;
};

// One step over every tensor. `anchors` may be empty when reg == none.
// Gradients are checked before anything is modified; a rejected step leaves
// params and state untouched.
void adamr_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                std::span<const std::span<const double>> anchors, AdamRState & state, const AdamRConfig & cfg);

// Mean of the bias-corrected second moment, one value per tensor.
std::vector<double> mean_second_moment(const AdamRState & state, const AdamRConfig & cfg);

}  // namespace dppx
