#include "dppx/adamr.hpp"

#include "dppx/errors.hpp"

#include <cmath>

namespace dppx {

std::string to_string(Regularizer r) {
    switch (r) {
        case Regularizer::none: return "none";
        case Regularizer::l2: return "l2";
        case Regularizer::l1: return "l1";
    }
    return "none";
}

Regularizer parse_regularizer(std::string_view name) {
    if (name == "none") return Regularizer::none;
    if (name == "l2") return Regularizer::l2;
    if (name == "l1") return Regularizer::l1;
    throw PreconditionError("unknown regularizer '" + std::string(name) + "' (expected none, l2 or l1)");
}

void AdamRConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw DomainError("AdamR: lr must be finite and >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw DomainError("AdamR: betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) {
        throw DomainError("AdamR: eps must be positive");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw DomainError("AdamR: lambda must be finite and >= 0");
    }
}

AdamRState::AdamRState(std::span<const std::size_t> sizes) {
    for (std::size_t n : sizes) {
        m.emplace_back(n, 0.0);
        v.emplace_back(n, 0.0);
    }
}

namespace {

double sign(double x) {
    return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
}

double bias_corr(double beta, std::uint64_t t) {
    return 1.0 - std::pow(beta, static_cast<double>(t));
}

}  // namespace

void adamr_step(std::span<const std::span<double>> params, std::span<const std::span<const double>> grads,
                std::span<const std::span<const double>> anchors, AdamRState & state, const AdamRConfig & cfg) {
    cfg.validate();
    const bool regularized = cfg.reg != Regularizer::none;
    if (params.size() != grads.size() || params.size() != state.m.size() || state.v.size() != state.m.size()) {
        throw DimensionError("AdamR: parameter, gradient and state tensor counts differ");
    }
    if (regularized && anchors.size() != params.size()) {
        throw DimensionError("AdamR: regularized step needs one anchor per parameter tensor");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t n = params[i].size();
        if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n ||
            (regularized && anchors[i].size() != n)) {
            throw DimensionError("AdamR: shape mismatch in tensor " + std::to_string(i));
        }
        for (double g : grads[i]) {
            if (!std::isfinite(g)) {
                throw NumericError("AdamR: non-finite gradient in tensor " + std::to_string(i));
            }
        }
    }

    ++state.t;
    const double bc1 = bias_corr(cfg.beta1, state.t);
    const double bc2 = bias_corr(cfg.beta2, state.t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto & m = state.m[i];
        auto & v = state.v[i];
        const auto g = grads[i];
        double v_sum = 0.0;
        for (std::size_t k = 0; k < m.size(); ++k) {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            v_sum += v[k] / bc2;
        }
        const double v_bar = m.empty() ? 0.0 : v_sum / static_cast<double>(m.size());
        const double decay = regularized ? cfg.lr * cfg.lambda / (std::sqrt(v_bar) + cfg.eps) : 0.0;

        auto theta = params[i];
        for (std::size_t k = 0; k < theta.size(); ++k) {
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            const double adam = cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
            double reg = 0.0;
            if (regularized) {
                const double d = theta[k] - anchors[i][k];
                if (cfg.reg == Regularizer::l2) {
                    reg = decay * d;
                } else {
                    reg = decay * sign(d);
                    if (cfg.l1_clamp && std::abs(reg) > std::abs(d)) {
                        reg = d;
                    }
                }
            }
            theta[k] = theta[k] - adam - reg;
        }
    }
}

std::vector<double> mean_second_moment(const AdamRState & state, const AdamRConfig & cfg) {
    if (state.t == 0) {
        throw PreconditionError("mean second moment is undefined before the first step");
    }
    const double bc2 = bias_corr(cfg.beta2, state.t);
    std::vector<double> out;
    out.reserve(state.v.size());
    for (const auto & v : state.v) {
        double acc = 0.0;
        for (double x : v) {
            acc += x / bc2;
        }
        out.push_back(v.empty() ? 0.0 : acc / static_cast<double>(v.size()));
    }
    return out;
}

}  // namespace dppx
