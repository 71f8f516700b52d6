#pragma once

// Delta-parameter pruning: random drop-and-rescale (DARE and arbitrary 1/q),
// unrescaled random drop, magnitude and WANDA top-k, and column-structured
// random pruning.
//
// Only rank-2 weight tensors are pruned unless PruneConfig::prune_vectors is
// set; other tensors are carried through dense and unchanged. "Layer" below
// means one pruned tensor, in delta order.

#include "dppx/checkpoint.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dppx {

enum class PruneMethod { dare, drop_rescale_q, random_drop, magnitude, wanda, structured };

std::string to_string(PruneMethod m);
// Accepts "dare", "drop_rescale_q" (alias "darex-q"), "random_drop", "mp"
// (alias "magnitude"), "wanda", "structured".
PruneMethod parse_prune_method(std::string_view name);

struct PruneConfig {
    PruneMethod method = PruneMethod::dare;
    double p = 0.0;
    // Scalar (size 1) or one entry per pruned tensor. Ignored by dare
    // (forced to 1 - p), random_drop and the importance methods.
    std::vector<double> q;
    double a = 1.0;  // structured: fraction of input columns selected
    double b = 1.0;  // structured: keep probability inside selected columns
    std::uint64_t seed = 0;
    bool prune_vectors = false;
};

struct PruneResult {
    SparseDelta sparse;
    std::vector<std::size_t> kept;   // per pruned tensor, delta order
    std::vector<std::size_t> total;  // per pruned tensor, rows * cols
    PruneConfig config;

    double retention() const;
};

// Kept positions of one pruned tensor as sorted row-major flat indices.
using KeepMask = std::vector<std::uint64_t>;

// One mask per pruned tensor. Sampling is keyed by (seed, tensor name), so a
// mask does not depend on which other tensors exist or their order.
struct MaskSet {
    std::vector<std::string> names;
    std::vector<KeepMask> masks;
};

bool is_pruned(const NamedTensor & t, bool prune_vectors);
std::vector<std::string> pruned_tensor_names(const DeltaSet & delta, bool prune_vectors);

// k = round-half-away-from-zero((1 - p) * count).
std::size_t keep_count(double p, std::size_t count);

MaskSet sample_bernoulli_masks(const DeltaSet & delta, double keep_prob, std::uint64_t seed, bool prune_vectors);
MaskSet sample_structured_masks(const DeltaSet & delta, double a, double b, std::uint64_t seed,
                                bool prune_vectors);

// Builds the pruned delta: kept entries become value / q, the rest vanish.
// `q` has size 1 (global) or one entry per mask. Exact zeros inside the mask
// are stored, so the mask is recoverable from the container.
PruneResult apply_masks(const DeltaSet & delta, const MaskSet & masks, const std::vector<double> & q);

PruneResult drop_rescale(const DeltaSet & delta, double p, const std::vector<double> & q, std::uint64_t seed,
                         bool prune_vectors = false);
PruneResult dare(const DeltaSet & delta, double p, std::uint64_t seed, bool prune_vectors = false);
PruneResult random_drop(const DeltaSet & delta, double p, std::uint64_t seed, bool prune_vectors = false);

// Exactly k entries with the largest score per tensor; ties go to the
// lexicographically smaller (row, col). Kept values are not rescaled.
KeepMask top_k_mask(std::span<const double> scores, std::size_t k);

PruneResult magnitude_prune(const DeltaSet & delta, double p, bool prune_vectors = false);

// Feature norms are keyed by tensor name and must match each pruned tensor's
// input width. Score = |dW_ij| * norm_j.
PruneResult wanda_prune(const DeltaSet & delta, double p, const std::map<std::string, Vector> & feature_norms,
                        bool prune_vectors = false);

enum class FeatureNormKind {
    batch_l2,    // Euclidean norm of each feature over the calibration batch
    sample_abs,  // |x_j| of a single calibration sample
};
Vector feature_norms(const Matrix & batch, FeatureNormKind kind, std::size_t sample = 0);

PruneResult structured_prune(const DeltaSet & delta, double a, double b, const std::vector<double> & q,
                             std::uint64_t seed, bool prune_vectors = false);

// Dispatches on cfg.method. `feature_norms` is only read by wanda.
PruneResult prune(const DeltaSet & delta, const PruneConfig & cfg,
                  const std::map<std::string, Vector> & feature_norms = {});

}  // namespace dppx
