#pragma once

// Rescale-factor search for drop-and-rescale pruning.
//
// Global search scans q_t = (1 - p) + t * dq, t = 1..N, under one frozen
// mask and keeps the q with the lowest objective (validation error or mean
// last-layer output change). Per-layer search scans eta instead; for each
// eta every layer gets the q minimising the analytic bound objective
// computed from that layer's influence statistics.

#include "dppx/checkpoint.hpp"
#include "dppx/dataset.hpp"
#include "dppx/pruners.hpp"
#include "dppx/theory.hpp"

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace dppx {

struct LayerInput {
    std::string tensor;  // weight tensor name in the checkpoint
    Matrix inputs;       // samples x input width of that layer
};

// What the search needs to know about a model family.
class ModelAdapter {
public:
    virtual ~ModelAdapter() = default;
    // samples x outputs
    virtual Matrix logits(const ModelCheckpoint & ckpt, const Matrix & batch) const = 0;
    // Inputs reaching each weight matrix under `ckpt`, in forward order.
    virtual std::vector<LayerInput> layer_inputs(const ModelCheckpoint & ckpt, const Matrix & batch) const = 0;
};

enum class Objective { validation, outdiff };
Objective parse_objective(std::string_view name);
std::string to_string(Objective o);

enum class EtaGrid { linear, logarithmic };

struct SearchConfig {
    double p = 0.99;
    double dq = 0.0;  // <= 0 selects (1 - p) / 2
    std::size_t rounds = 40;
    Objective objective = Objective::outdiff;
    double gamma = 0.05;
    std::uint64_t seed = 0;
    bool prune_vectors = false;

    // Per-layer search only.
    EtaGrid eta_grid = EtaGrid::logarithmic;
    double deta = 0.1;  // linear grid: eta_t = t * deta
    double eta_min = 1e-3;
    double eta_max = 1e2;
    std::size_t eta_rounds = 20;
    std::size_t q_rounds = 40;  // rounds of the per-layer q grid
    std::size_t stats_samples = 64;  // leading samples used for influence statistics
    // Skip the last q grid point per layer, as the analytic algorithm's
    // update condition does.
    bool exclude_last_q = true;

    double step() const { return dq > 0.0 ? dq : (1.0 - p) / 2.0; }
};

struct TracePoint {
    std::size_t t = 0;
    double value = 0.0;  // q (global) or eta (per-layer)
    double objective = 0.0;
    std::vector<double> q;
};

struct QSelection {
    bool per_layer = false;
    std::vector<double> q_best;  // size 1 for a global search
    double eta_best = 0.0;
    double objective = 0.0;
    std::size_t best_t = 0;
    std::vector<TracePoint> trace;
    Objective kind = Objective::outdiff;
};

nlohmann::json to_json(const QSelection & s);
std::string trace_csv(const QSelection & s);

// Misclassification rate of argmax(logits) against labels (ties -> lowest class).
double objective_validation(const ModelAdapter & model, const ModelCheckpoint & ckpt, const Dataset & data);
// Mean over samples and outputs of |f_pruned(x) - f_fine(x)|.
double objective_outdiff(const ModelAdapter & model, const ModelCheckpoint & pruned, const ModelCheckpoint & fine,
                         const Matrix & batch);

// Error rate from precomputed logits; used by the oracles in tests too.
double error_rate(const Matrix & logits, std::span<const std::uint16_t> labels);

QSelection find_q_global(const ModelAdapter & model, const ModelCheckpoint & base, const DeltaSet & delta,
                         const SearchConfig & cfg, const Dataset & data);

// Influence statistics of each pruned layer, pooled over samples
// (samples x neurons entries per layer), in pruned-tensor order.
struct LayerStats {
    std::string tensor;
    std::vector<NeuronStats> stats;
};
std::vector<LayerStats> collect_layer_stats(const ModelAdapter & model, const ModelCheckpoint & base,
                                            const DeltaSet & delta, const Matrix & batch, bool prune_vectors = false);

std::vector<double> per_layer_q_from_stats(const std::vector<LayerStats> & layers, double eta, const SearchConfig & cfg);

// One q per pruned layer for a fixed eta. Layer inputs are propagated through
// the fine-tuned (unpruned) model.
std::vector<double> analytic_per_layer_q(const ModelAdapter & model, const ModelCheckpoint & base,
                                         const DeltaSet & delta, const Matrix & batch, double eta,
                                         const SearchConfig & cfg);

std::vector<double> eta_values(const SearchConfig & cfg);

QSelection find_q_perlayer(const ModelAdapter & model, const ModelCheckpoint & base, const DeltaSet & delta,
                           const SearchConfig & cfg, const Dataset & data);

// Objective of one candidate rescale under the search's frozen mask.
double evaluate_candidate(const ModelAdapter & model, const ModelCheckpoint & base, const DeltaSet & delta,
                          const MaskSet & masks, const std::vector<double> & q, Objective objective,
                          const Dataset & data, const ModelCheckpoint & fine);

}  // namespace dppx
