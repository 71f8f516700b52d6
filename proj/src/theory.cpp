#include "dppx/theory.hpp"

#include "dppx/errors.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dppx {

namespace {

void require_open_unit(double v, const char * what) {
    if (!(v > 0.0 && v < 1.0)) {
        throw DomainError(std::string(what) + "=" + std::to_string(v) + " outside (0, 1)");
    }
}

NeuronStats stats_from_row(std::span<const double> c) {
    NeuronStats s;
    s.n = c.size();
    for (double v : c) {
        s.sum_c += v;
        s.sum_c2 += v * v;
    }
    if (s.n > 0) {
        const double n = static_cast<double>(s.n);
        s.mean = s.sum_c / n;
        double acc = 0.0;
        for (double v : c) {
            acc += (v - s.mean) * (v - s.mean);
        }
        s.variance = acc / n;
    }
    return s;
}

}  // namespace

std::vector<double> influence_row(const Matrix & delta_w, std::size_t row, std::span<const float> x) {
    if (delta_w.cols() != x.size()) {
        throw DimensionError("influence: delta has " + std::to_string(delta_w.cols()) + " columns, input has " +
                             std::to_string(x.size()) + " entries");
    }
    const auto w = delta_w.row(row);
    std::vector<double> c(w.size());
    for (std::size_t j = 0; j < w.size(); ++j) {
        c[j] = static_cast<double>(w[j]) * x[j];
    }
    return c;
}

InfluenceStats influence_stats(const Matrix & delta_w, std::span<const float> x) {
    if (delta_w.cols() != x.size()) {
        throw DimensionError("influence_stats: delta has " + std::to_string(delta_w.cols()) +
                             " columns, input has " + std::to_string(x.size()) + " entries");
    }
    InfluenceStats out;
    out.reserve(delta_w.rows());
    for (std::size_t i = 0; i < delta_w.rows(); ++i) {
        out.push_back(stats_from_row(influence_row(delta_w, i, x)));
    }
    return out;
}

std::vector<double> h_diff(const Matrix & delta_w, const Matrix & pruned, std::span<const float> x) {
    if (pruned.rows() != delta_w.rows() || pruned.cols() != delta_w.cols()) {
        throw DimensionError("h_diff: pruned delta shape differs from delta");
    }
    if (delta_w.cols() != x.size()) {
        throw DimensionError("h_diff: input length mismatch");
    }
    std::vector<double> h(delta_w.rows());
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] = dot64(delta_w.row(i), x) - dot64(pruned.row(i), x);
    }
    return h;
}

std::vector<double> h_diff(const Matrix & delta_w, const SparseTensor & pruned, std::span<const float> x) {
    if (pruned.rows() != delta_w.rows() || pruned.cols() != delta_w.cols()) {
        throw DimensionError("h_diff: pruned delta shape differs from delta");
    }
    if (const auto * dense = std::get_if<Matrix>(&pruned.payload)) {
        return h_diff(delta_w, *dense, x);
    }
    if (delta_w.cols() != x.size()) {
        throw DimensionError("h_diff: input length mismatch");
    }
    const auto & c = std::get<CsrMatrix>(pruned.payload);
    std::vector<double> h(delta_w.rows());
    for (std::size_t i = 0; i < h.size(); ++i) {
        double kept = 0.0;
        for (std::uint64_t k = c.row_ptr[i]; k < c.row_ptr[i + 1]; ++k) {
            kept += static_cast<double>(c.values[k]) * x[c.col_idx[k]];
        }
        h[i] = dot64(delta_w.row(i), x) - kept;
    }
    return h;
}

double phi(double p) {
    require_open_unit(p, "p");
    const double u = 1.0 - 2.0 * p;
    if (std::abs(p - 0.5) < 1e-4) {
        return 0.5 - u * u / 6.0;
    }
    return u / std::log((1.0 - p) / p);
}

std::string to_string(BoundKind k) {
    switch (k) {
        case BoundKind::chebyshev: return "chebyshev";
        case BoundKind::hoeffding: return "hoeffding";
        case BoundKind::kearns_saul: return "ks";
        case BoundKind::berend_kontorovich: return "bk";
    }
    return "unknown";
}

double bound_factor(BoundKind kind, double p, double gamma) {
    require_open_unit(p, "p");
    require_open_unit(gamma, "gamma");
    const double log_term = std::log(2.0 / gamma);
    switch (kind) {
        case BoundKind::chebyshev:
            return std::sqrt(p / ((1.0 - p) * gamma));
        case BoundKind::hoeffding:
            return std::sqrt(0.5 * log_term) / (1.0 - p);
        case BoundKind::kearns_saul:
            return std::sqrt(phi(p) * log_term) / (1.0 - p);
        case BoundKind::berend_kontorovich:
            if (p < 0.5) {
                throw DomainError("Berend-Kontorovich factor requires p >= 1/2");
            }
            return std::sqrt(2.0 * p * (1.0 - p) * log_term) / (1.0 - p);
    }
    throw DomainError("unknown bound kind");
}

double theorem1_factor(double p, double gamma, SmallPFactor small_p) {
    if (p > 0.5) {
        return bound_factor(BoundKind::berend_kontorovich, p, gamma);
    }
    if (small_p == SmallPFactor::phi) {
        require_open_unit(gamma, "gamma");
        return phi(p) * std::sqrt(std::log(2.0 / gamma)) / (1.0 - p);
    }
    return bound_factor(BoundKind::kearns_saul, p, gamma);
}

std::vector<double> theorem1_bound(const BoundInputs & in) {
    const double factor = theorem1_factor(in.p, in.gamma, in.small_p);
    std::vector<double> out;
    out.reserve(in.stats.size());
    for (const auto & s : in.stats) {
        out.push_back(factor * std::sqrt(s.sum_c2));
    }
    return out;
}

double q_eta_objective(double q, double eta, double p, double gamma, double sum_c, double sum_c2) {
    if (!(q > 0.0)) {
        throw DomainError("q must be positive");
    }
    if (!(eta > 0.0)) {
        throw DomainError("eta must be positive");
    }
    require_open_unit(p, "p");
    require_open_unit(gamma, "gamma");
    const double value = std::log(2.0 / gamma) + eta * (1.0 - (1.0 - p) / q) * sum_c +
                         eta * eta * phi(p) * sum_c2 / (4.0 * q * q);
    return std::abs(value);
}

double q_eta_objective_mean(double q, double eta, double p, double gamma, std::span<const NeuronStats> stats) {
    if (stats.empty()) {
        throw PreconditionError("q_eta objective needs at least one neuron");
    }
    // Validates the scalars once; the loop below repeats the same arithmetic.
    (void) q_eta_objective(q, eta, p, gamma, 0.0, 0.0);
    const double log_term = std::log(2.0 / gamma);
    const double linear = eta * (1.0 - (1.0 - p) / q);
    const double quadratic = eta * eta * phi(p) / (4.0 * q * q);
    double acc = 0.0;
    for (const auto & s : stats) {
        acc += std::abs(log_term + linear * s.sum_c + quadratic * s.sum_c2);
    }
    return acc / static_cast<double>(stats.size());
}

std::vector<double> q_grid(double p, double dq, std::size_t first, std::size_t last) {
    if (!(dq > 0.0)) {
        throw DomainError("grid step must be positive");
    }
    std::vector<double> grid;
    for (std::size_t t = first; t <= last; ++t) {
        grid.push_back((1.0 - p) + static_cast<double>(t) * dq);
    }
    return grid;
}

QEtaChoice q_eta_minimize(double eta, double p, double gamma, std::span<const NeuronStats> stats,
                          std::span<const double> grid) {
    if (grid.empty()) {
        throw PreconditionError("q_eta_minimize: empty grid");
    }
    QEtaChoice best{0.0, std::numeric_limits<double>::infinity(), 0};
    // Visit in ascending q so that strict improvement keeps the smallest q on ties.
    std::vector<std::size_t> order(grid.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return grid[a] < grid[b]; });
    for (std::size_t i : order) {
        const double v = q_eta_objective_mean(grid[i], eta, p, gamma, stats);
        if (v < best.objective) {
            best = {grid[i], v, i};
        }
    }
    return best;
}

double q_stationary_point(double p, double gamma, double sum_c, double sum_c2) {
    require_open_unit(p, "p");
    require_open_unit(gamma, "gamma");
    if (sum_c == 0.0) {
        throw DomainError("stationary point undefined for sum_c = 0");
    }
    return (1.0 - p) - std::sqrt(std::log(2.0 / gamma) * phi(p) * sum_c2) / sum_c;
}

McOutcome mc_violation(std::span<const double> c, double p, double q, double bound, std::size_t trials,
                       std::uint64_t seed) {
    if (trials == 0) {
        throw PreconditionError("mc_violation: trials must be >= 1");
    }
    if (!(p >= 0.0 && p < 1.0)) {
        throw DomainError("mc_violation: p outside [0, 1)");
    }
    if (!(q > 0.0)) {
        throw DomainError("mc_violation: q must be positive");
    }
    const double keep = 1.0 - p;
    double total = 0.0;
    for (double v : c) {
        total += v;
    }
    McOutcome out;
    out.trials = trials;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        RngStream stream(seed, "trial/" + std::to_string(t));
        double kept = 0.0;
        for (double v : c) {
            if (stream.next_bernoulli(keep)) {
                kept += v;
            }
        }
        const double h = total - kept / q;
        sum += h;
        sum_sq += h * h;
        if (std::abs(h) > bound) {
            ++out.violations;
        }
    }
    const double n = static_cast<double>(trials);
    out.rate = static_cast<double>(out.violations) / n;
    out.mean_h = sum / n;
    out.var_h = trials > 1 ? std::max(0.0, (sum_sq - n * out.mean_h * out.mean_h) / (n - 1.0)) : 0.0;
    return out;
}

double mc_violation_rate(std::span<const double> c, double p, double q, double bound, std::size_t trials,
                         std::uint64_t seed) {
    return mc_violation(c, p, q, bound, trials, seed).rate;
}

std::string bound_curves_csv(std::span<const double> p_grid, double gamma) {
    require_open_unit(gamma, "gamma");
    std::ostringstream os;
    os << std::setprecision(17);
    os << "p,chebyshev,hoeffding,ks,bk\n";
    for (double p : p_grid) {
        require_open_unit(p, "p");
        os << p << ',' << bound_factor(BoundKind::chebyshev, p, gamma) << ','
           << bound_factor(BoundKind::hoeffding, p, gamma) << ',' << bound_factor(BoundKind::kearns_saul, p, gamma)
           << ',';
        if (p >= 0.5) {
            os << bound_factor(BoundKind::berend_kontorovich, p, gamma);
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace dppx
