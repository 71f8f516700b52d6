#pragma once

// Concentration bounds for random drop-and-rescale and the analytic
// rescale objective used by per-layer q selection.
//
// Notation: for one output neuron i of a layer with delta dW and input x,
// c_j = dW_ij * x_j. With keep indicators d_j ~ Bernoulli(1 - p) and rescale
// 1/q, the output change is h = sum_j (1 - d_j / q) c_j.

#include "dppx/checkpoint.hpp"
#include "dppx/numkit.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dppx {

struct NeuronStats {
    double sum_c = 0.0;
    double sum_c2 = 0.0;
    double mean = 0.0;
    double variance = 0.0;
    std::size_t n = 0;
};

// One entry per output neuron (row of dW).
using InfluenceStats = std::vector<NeuronStats>;

InfluenceStats influence_stats(const Matrix & delta_w, std::span<const float> x);
// c_ij for one row, in 64-bit.
std::vector<double> influence_row(const Matrix & delta_w, std::size_t row, std::span<const float> x);

// h = dW x - P(dW) x, where `pruned` is the rescaled sparse delta.
std::vector<double> h_diff(const Matrix & delta_w, const SparseTensor & pruned, std::span<const float> x);
std::vector<double> h_diff(const Matrix & delta_w, const Matrix & pruned, std::span<const float> x);

// Kearns-Saul function (1 - 2p) / log((1 - p) / p); the removable
// singularity at p = 1/2 is filled by its Taylor expansion.
double phi(double p);

enum class BoundKind { chebyshev, hoeffding, kearns_saul, berend_kontorovich };
std::string to_string(BoundKind k);

// Multiplier of sqrt(sum_j c_j^2) that bounds |h| with probability >= 1 - gamma
// under rescale 1/(1 - p).
double bound_factor(BoundKind kind, double p, double gamma);

// Small-p factor used by the bound dispatch: sqrt(Phi(p)) by default, or
// Phi(p) without the root.
enum class SmallPFactor { sqrt_phi, phi };

struct BoundInputs {
    double p = 0.5;
    double gamma = 0.05;
    InfluenceStats stats;
    SmallPFactor small_p = SmallPFactor::sqrt_phi;
};

// Factor used by theorem1_bound: Kearns-Saul for p <= 1/2 and
// Berend-Kontorovich above.
double theorem1_factor(double p, double gamma, SmallPFactor small_p = SmallPFactor::sqrt_phi);
std::vector<double> theorem1_bound(const BoundInputs & in);

// |log(2/gamma) + eta (1 - (1-p)/q) sum_c + eta^2 Phi(p) sum_c2 / (4 q^2)|
double q_eta_objective(double q, double eta, double p, double gamma, double sum_c, double sum_c2);

// Mean of q_eta_objective over a set of neurons (or samples x neurons).
double q_eta_objective_mean(double q, double eta, double p, double gamma, std::span<const NeuronStats> stats);

// Grid q_t = (1 - p) + t * dq for t = first..last inclusive.
std::vector<double> q_grid(double p, double dq, std::size_t first, std::size_t last);

struct QEtaChoice {
    double q = 0.0;
    double objective = 0.0;
    std::size_t index = 0;  // position in the grid
};

// Grid argmin of the mean objective; ties go to the smallest q.
QEtaChoice q_eta_minimize(double eta, double p, double gamma, std::span<const NeuronStats> stats,
                          std::span<const double> grid);

// Stationary point of the unabsolute bound (mean and deviation terms):
// (1 - p) - sqrt(log(2/gamma) Phi(p) sum_c2) / sum_c. Requires sum_c != 0.
double q_stationary_point(double p, double gamma, double sum_c, double sum_c2);

struct McOutcome {
    double rate = 0.0;
    std::size_t violations = 0;
    std::size_t trials = 0;
    double mean_h = 0.0;
    double var_h = 0.0;
};

// Fraction of mask draws with |sum_j (1 - d_j / q) c_j| > bound. Trial t uses
// the stream (seed, "trial/t"), so results do not depend on scheduling.
McOutcome mc_violation(std::span<const double> c, double p, double q, double bound, std::size_t trials,
                       std::uint64_t seed);
double mc_violation_rate(std::span<const double> c, double p, double q, double bound, std::size_t trials,
                         std::uint64_t seed);

// One row per p: p, chebyshev, hoeffding, ks, bk (bk empty for p < 1/2).
std::string bound_curves_csv(std::span<const double> p_grid, double gamma);

}  // namespace dppx
