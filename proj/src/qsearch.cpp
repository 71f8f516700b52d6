#include "dppx/qsearch.hpp"

#include "dppx/errors.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace dppx {

Objective parse_objective(std::string_view name) {
    if (name == "val" || name == "validation") return Objective::validation;
    if (name == "outdiff") return Objective::outdiff;
    throw PreconditionError("unknown objective '" + std::string(name) + "' (expected val or outdiff)");
}

std::string to_string(Objective o) {
    return o == Objective::validation ? "validation" : "outdiff";
}

nlohmann::json to_json(const QSelection & s) {
    nlohmann::json trace = nlohmann::json::array();
    for (const auto & tp : s.trace) {
        nlohmann::json row{{"t", tp.t}, {s.per_layer ? "eta" : "q", tp.value}, {"objective", tp.objective}};
        if (s.per_layer) {
            row["q"] = tp.q;
        }
        trace.push_back(std::move(row));
    }
    nlohmann::json j{{"per_layer", s.per_layer},
                     {"objective_kind", to_string(s.kind)},
                     {"objective", s.objective},
                     {"best_t", s.best_t},
                     {"trace", std::move(trace)}};
    if (s.per_layer) {
        j["q"] = s.q_best;
        j["eta"] = s.eta_best;
    } else {
        j["q"] = s.q_best.empty() ? 0.0 : s.q_best.front();
    }
    return j;
}

std::string trace_csv(const QSelection & s) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "t," << (s.per_layer ? "eta" : "q") << ",objective\n";
    for (const auto & tp : s.trace) {
        os << tp.t << ',' << tp.value << ',' << tp.objective << '\n';
    }
    return os.str();
}

double error_rate(const Matrix & logits, std::span<const std::uint16_t> labels) {
    if (logits.rows() == 0) {
        throw PreconditionError("error rate of an empty dataset");
    }
    if (labels.size() != logits.rows()) {
        throw PreconditionError("validation objective needs one label per sample");
    }
    std::size_t wrong = 0;
    for (std::size_t s = 0; s < logits.rows(); ++s) {
        const auto row = logits.row(s);
        std::size_t arg = 0;
        for (std::size_t k = 1; k < row.size(); ++k) {
            if (row[k] > row[arg]) {
                arg = k;
            }
        }
        if (arg != labels[s]) {
            ++wrong;
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(logits.rows());
}

double objective_validation(const ModelAdapter & model, const ModelCheckpoint & ckpt, const Dataset & data) {
    if (data.size() == 0) {
        throw PreconditionError("validation objective on an empty dataset");
    }
    if (!data.labeled()) {
        throw PreconditionError("validation objective needs labeled data");
    }
    return error_rate(model.logits(ckpt, data.features), data.labels);
}

double objective_outdiff(const ModelAdapter & model, const ModelCheckpoint & pruned, const ModelCheckpoint & fine,
                         const Matrix & batch) {
    if (batch.rows() == 0) {
        throw PreconditionError("output-change objective on an empty batch");
    }
    if (pruned.topology_tag() != fine.topology_tag()) {
        throw IncompatibleCheckpoints("output-change objective: topology '" + pruned.topology_tag() + "' vs '" +
                                      fine.topology_tag() + "'");
    }
    const Matrix a = model.logits(pruned, batch);
    const Matrix b = model.logits(fine, batch);
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw IncompatibleCheckpoints("output-change objective: models produce different output shapes");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        acc += std::abs(static_cast<double>(a.flat()[k]) - b.flat()[k]);
    }
    return acc / static_cast<double>(a.size());
}

double evaluate_candidate(const ModelAdapter & model, const ModelCheckpoint & base, const DeltaSet & delta,
                          const MaskSet & masks, const std::vector<double> & q, Objective objective,
                          const Dataset & data, const ModelCheckpoint & fine) {
    const PruneResult pruned = apply_masks(delta, masks, q);
    const ModelCheckpoint candidate = apply_delta(base, pruned.sparse);
    if (objective == Objective::validation) {
        return objective_validation(model, candidate, data);
    }
    return objective_outdiff(model, candidate, fine, data.features);
}

namespace {

void check_search_inputs(const SearchConfig & cfg, const Dataset & data) {
    if (!(cfg.p >= 0.0 && cfg.p < 1.0)) {
        throw DomainError("search: p outside [0, 1)");
    }
    if (data.size() == 0) {
        throw PreconditionError("search: empty dataset");
    }
    if (cfg.objective == Objective::validation && !data.labeled()) {
        throw PreconditionError("search: validation objective needs labeled data");
    }
}

}  // namespace

QSelection find_q_global(const ModelAdapter & model, const ModelCheckpoint & base, const DeltaSet & delta,
                         const SearchConfig & cfg, const Dataset & data) {
    if (cfg.rounds == 0) {
        throw PreconditionError("search: rounds must be >= 1");
    }
    check_search_inputs(cfg, data);
    const ModelCheckpoint fine = apply_delta(base, delta);
    const MaskSet masks = sample_bernoulli_masks(delta, 1.0 - cfg.p, cfg.seed, cfg.prune_vectors);
    const std::vector<double> grid = q_grid(cfg.p, cfg.step(), 1, cfg.rounds);

    QSelection sel;
    sel.kind = cfg.objective;
    sel.objective = std::numeric_limits<double>::infinity();
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        const double q = grid[t - 1];
        const double err = evaluate_candidate(model, base, delta, masks, {q}, cfg.objective, data, fine);
        sel.trace.push_back(TracePoint{t, q, err, {q}});
        // Later grid points win ties.
        if (err <= sel.objective) {
            sel.objective = err;
            sel.q_best = {q};
            sel.best_t = t;
        }
    }
    return sel;
}

std::vector<LayerStats> collect_layer_stats(const ModelAdapter & model, const ModelCheckpoint & base,
                                            const DeltaSet & delta, const Matrix & batch, bool prune_vectors) {
    if (batch.rows() == 0) {
        throw PreconditionError("per-layer q needs a non-empty batch");
    }
    const ModelCheckpoint fine = apply_delta(base, delta);
    const std::vector<LayerInput> inputs = model.layer_inputs(fine, batch);
    std::vector<LayerStats> out;
    for (const auto & name : pruned_tensor_names(delta, prune_vectors)) {
        const LayerInput * li = nullptr;
        for (const auto & cand : inputs) {
            if (cand.tensor == name) {
                li = &cand;
            }
        }
        if (li == nullptr) {
            throw PreconditionError("model exposes no layer input for tensor '" + name + "'");
        }
        const Matrix & dw = delta.at(name).value;
        if (li->inputs.cols() != dw.cols()) {
            throw DimensionError("layer '" + name + "' expects width " + std::to_string(dw.cols()) + ", got " +
                                 std::to_string(li->inputs.cols()));
        }
        LayerStats ls{name, {}};
        ls.stats.reserve(li->inputs.rows() * dw.rows());
        for (std::size_t s = 0; s < li->inputs.rows(); ++s) {
            auto st = influence_stats(dw, li->inputs.row(s));
            ls.stats.insert(ls.stats.end(), st.begin(), st.end());
        }
        out.push_back(std::move(ls));
    }
    return out;
}

std::vector<double> per_layer_q_from_stats(const std::vector<LayerStats> & layers, double eta,
                                           const SearchConfig & cfg) {
    if (cfg.q_rounds == 0) {
        throw PreconditionError("per-layer q grid needs at least one round");
    }
    const std::size_t last = cfg.exclude_last_q && cfg.q_rounds > 1 ? cfg.q_rounds - 1 : cfg.q_rounds;
    const std::vector<double> grid = q_grid(cfg.p, cfg.step(), 1, last);
    std::vector<double> q;
    q.reserve(layers.size());
    for (const auto & layer : layers) {
        q.push_back(q_eta_minimize(eta, cfg.p, cfg.gamma, layer.stats, grid).q);
    }
    return q;
}

std::vector<double> analytic_per_layer_q(const ModelAdapter & model, const ModelCheckpoint & base,
                                         const DeltaSet & delta, const Matrix & batch, double eta,
                                         const SearchConfig & cfg) {
    if (!(eta > 0.0)) {
        throw DomainError("eta must be positive");
    }
    return per_layer_q_from_stats(collect_layer_stats(model, base, delta, batch, cfg.prune_vectors), eta, cfg);
}

std::vector<double> eta_values(const SearchConfig & cfg) {
    if (cfg.eta_rounds == 0) {
        throw PreconditionError("search: eta rounds must be >= 1");
    }
    std::vector<double> etas;
    if (cfg.eta_grid == EtaGrid::linear) {
        if (!(cfg.deta > 0.0)) {
            throw DomainError("eta step must be positive");
        }
        for (std::size_t t = 1; t <= cfg.eta_rounds; ++t) {
            etas.push_back(static_cast<double>(t) * cfg.deta);
        }
        return etas;
    }
    if (!(cfg.eta_min > 0.0 && cfg.eta_max >= cfg.eta_min)) {
        throw DomainError("logarithmic eta grid needs 0 < eta_min <= eta_max");
    }
    if (cfg.eta_rounds == 1) {
        return {cfg.eta_min};
    }
    const double lo = std::log(cfg.eta_min);
    const double hi = std::log(cfg.eta_max);
    for (std::size_t t = 0; t < cfg.eta_rounds; ++t) {
        etas.push_back(std::exp(lo + (hi - lo) * static_cast<double>(t) / static_cast<double>(cfg.eta_rounds - 1)));
    }
    return etas;
}

QSelection find_q_perlayer(const ModelAdapter & model, const ModelCheckpoint & base, const DeltaSet & delta,
                           const SearchConfig & cfg, const Dataset & data) {
    check_search_inputs(cfg, data);
    const std::vector<double> etas = eta_values(cfg);
    const ModelCheckpoint fine = apply_delta(base, delta);
    const MaskSet masks = sample_bernoulli_masks(delta, 1.0 - cfg.p, cfg.seed, cfg.prune_vectors);
    const Dataset stats_batch = data.slice(0, std::min(cfg.stats_samples, data.size()));
    const std::vector<LayerStats> layers =
        collect_layer_stats(model, base, delta, stats_batch.features, cfg.prune_vectors);

    QSelection sel;
    sel.per_layer = true;
    sel.kind = cfg.objective;
    sel.objective = std::numeric_limits<double>::infinity();
    for (std::size_t t = 1; t <= etas.size(); ++t) {
        const double eta = etas[t - 1];
        std::vector<double> q = per_layer_q_from_stats(layers, eta, cfg);
        const double err = evaluate_candidate(model, base, delta, masks, q, cfg.objective, data, fine);
        if (err <= sel.objective) {
            sel.objective = err;
            sel.q_best = q;
            sel.eta_best = eta;
            sel.best_t = t;
        }
        sel.trace.push_back(TracePoint{t, eta, err, std::move(q)});
    }
    return sel;
}

}  // namespace dppx
