#include "dppx/pruners.hpp"

#include "dppx/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dppx {

namespace {

void require_drop_rate(double p, bool allow_one) {
    const bool ok = allow_one ? (p >= 0.0 && p <= 1.0) : (p >= 0.0 && p < 1.0);
    if (!ok) {
        throw DomainError("drop rate p=" + std::to_string(p) + (allow_one ? " outside [0, 1]" : " outside [0, 1)"));
    }
}

void require_fraction(double v, const char * what) {
    if (!(v > 0.0 && v <= 1.0)) {
        throw DomainError(std::string(what) + "=" + std::to_string(v) + " outside (0, 1]");
    }
}

PruneResult finish(PruneResult r, const DeltaSet & delta, const PruneConfig & cfg, std::string method,
                   double p, std::vector<double> q) {
    r.config = cfg;
    r.sparse.meta.method = std::move(method);
    r.sparse.meta.p = p;
    r.sparse.meta.q = std::move(q);
    r.sparse.meta.seed = cfg.seed;
    r.sparse.meta.a = cfg.a;
    r.sparse.meta.b = cfg.b;
    r.sparse.meta.extra["prune_vectors"] = cfg.prune_vectors;
    r.sparse.topology_tag = delta.topology_tag;
    r.sparse.base_digest = delta.base_digest;
    r.sparse.fine_digest = delta.fine_digest;
    return r;
}

MaskSet importance_masks(const DeltaSet & delta, double p, bool prune_vectors,
                         const std::map<std::string, Vector> * norms) {
    require_drop_rate(p, false);
    MaskSet set;
    for (const auto & e : delta.entries) {
        if (!is_pruned(e, prune_vectors)) {
            continue;
        }
        const Vector * nj = nullptr;
        if (norms != nullptr) {
            const auto it = norms->find(e.name);
            if (it == norms->end()) {
                throw PreconditionError("wanda: no feature norms for tensor '" + e.name + "'");
            }
            if (it->second.size() != e.value.cols()) {
                throw DimensionError("wanda: '" + e.name + "' has " + std::to_string(e.value.cols()) +
                                     " inputs but " + std::to_string(it->second.size()) + " norms");
            }
            nj = &it->second;
        }
        std::vector<double> scores(e.value.size());
        const std::size_t cols = e.value.cols();
        for (std::size_t k = 0; k < scores.size(); ++k) {
            double s = std::abs(static_cast<double>(e.value.flat()[k]));
            if (nj != nullptr) {
                const double norm = (*nj)[k % cols];
                if (!(norm >= 0.0)) {
                    throw DomainError("wanda: feature norms must be non-negative");
                }
                s *= norm;
            }
            scores[k] = s;
        }
        set.names.push_back(e.name);
        set.masks.push_back(top_k_mask(scores, keep_count(p, e.value.size())));
    }
    return set;
}

}  // namespace

std::string to_string(PruneMethod m) {
    switch (m) {
        case PruneMethod::dare: return "dare";
        case PruneMethod::drop_rescale_q: return "drop_rescale_q";
        case PruneMethod::random_drop: return "random_drop";
        case PruneMethod::magnitude: return "mp";
        case PruneMethod::wanda: return "wanda";
        case PruneMethod::structured: return "structured";
    }
    return "unknown";
}

PruneMethod parse_prune_method(std::string_view name) {
    if (name == "dare") return PruneMethod::dare;
    if (name == "drop_rescale_q" || name == "darex-q") return PruneMethod::drop_rescale_q;
    if (name == "random_drop") return PruneMethod::random_drop;
    if (name == "mp" || name == "magnitude") return PruneMethod::magnitude;
    if (name == "wanda") return PruneMethod::wanda;
    if (name == "structured") return PruneMethod::structured;
    throw PreconditionError("unknown pruning method '" + std::string(name) + "'");
}

double PruneResult::retention() const {
    const double kept_sum = std::accumulate(kept.begin(), kept.end(), 0.0);
    const double total_sum = std::accumulate(total.begin(), total.end(), 0.0);
    return total_sum > 0.0 ? kept_sum / total_sum : 0.0;
}

bool is_pruned(const NamedTensor & t, bool prune_vectors) {
    return t.is_matrix() || prune_vectors;
}

std::vector<std::string> pruned_tensor_names(const DeltaSet & delta, bool prune_vectors) {
    std::vector<std::string> names;
    for (const auto & e : delta.entries) {
        if (is_pruned(e, prune_vectors)) {
            names.push_back(e.name);
        }
    }
    return names;
}

std::size_t keep_count(double p, std::size_t count) {
    return static_cast<std::size_t>(std::llround((1.0 - p) * static_cast<double>(count)));
}

MaskSet sample_bernoulli_masks(const DeltaSet & delta, double keep_prob, std::uint64_t seed, bool prune_vectors) {
    if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) {
        throw DomainError("keep probability outside [0, 1]");
    }
    MaskSet set;
    for (const auto & e : delta.entries) {
        if (!is_pruned(e, prune_vectors)) {
            continue;
        }
        RngStream stream(seed, "mask/" + e.name);
        KeepMask mask;
        mask.reserve(static_cast<std::size_t>(keep_prob * static_cast<double>(e.value.size()) * 1.1) + 16);
        for (std::uint64_t k = 0; k < e.value.size(); ++k) {
            if (stream.next_bernoulli(keep_prob)) {
                mask.push_back(k);
            }
        }
        set.names.push_back(e.name);
        set.masks.push_back(std::move(mask));
    }
    return set;
}

MaskSet sample_structured_masks(const DeltaSet & delta, double a, double b, std::uint64_t seed,
                                bool prune_vectors) {
    require_fraction(a, "a");
    require_fraction(b, "b");
    MaskSet set;
    for (const auto & e : delta.entries) {
        if (!is_pruned(e, prune_vectors)) {
            continue;
        }
        const std::size_t n = e.value.cols();
        // The small slack keeps ceil(0.05 * 1000) at 50 despite rounding.
        const auto chosen = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(a * static_cast<double>(n) - 1e-9)));
        std::vector<std::uint32_t> cols(n);
        std::iota(cols.begin(), cols.end(), 0u);
        RngStream col_stream(seed, "structured-cols/" + e.name);
        for (std::size_t i = 0; i < chosen; ++i) {
            const auto j = i + col_stream.next_below(n - i);
            std::swap(cols[i], cols[j]);
        }
        std::vector<bool> selected(n, false);
        for (std::size_t i = 0; i < chosen; ++i) {
            selected[cols[i]] = true;
        }
        RngStream keep_stream(seed, "structured-keep/" + e.name);
        KeepMask mask;
        for (std::size_t r = 0; r < e.value.rows(); ++r) {
            for (std::size_t c = 0; c < n; ++c) {
                if (selected[c] && keep_stream.next_bernoulli(b)) {
                    mask.push_back(r * n + c);
                }
            }
        }
        set.names.push_back(e.name);
        set.masks.push_back(std::move(mask));
    }
    return set;
}

PruneResult apply_masks(const DeltaSet & delta, const MaskSet & masks, const std::vector<double> & q) {
    if (q.size() != 1 && q.size() != masks.masks.size()) {
        throw DimensionError("rescale vector has " + std::to_string(q.size()) + " entries for " +
                             std::to_string(masks.masks.size()) + " pruned tensors");
    }
    for (double v : q) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw DomainError("rescale q must be positive and finite");
        }
    }
    PruneResult r;
    std::size_t next = 0;
    for (const auto & e : delta.entries) {
        if (next < masks.names.size() && masks.names[next] == e.name) {
            const KeepMask & mask = masks.masks[next];
            const double qk = q.size() == 1 ? q[0] : q[next];
            std::vector<float> vals;
            vals.reserve(mask.size());
            for (std::uint64_t idx : mask) {
                if (idx >= e.value.size()) {
                    throw DimensionError("mask index beyond tensor '" + e.name + "'");
                }
                vals.push_back(static_cast<float>(static_cast<double>(e.value.flat()[idx]) / qk));
            }
            r.sparse.tensors.push_back(
                SparseTensor{e.name, e.rank, csr_from_sorted(e.value.rows(), e.value.cols(), mask, vals)});
            r.kept.push_back(mask.size());
            r.total.push_back(e.value.size());
            ++next;
        } else {
            r.sparse.tensors.push_back(SparseTensor{e.name, e.rank, e.value});
        }
    }
    if (next != masks.names.size()) {
        throw DimensionError("mask set does not match the delta's tensors");
    }
    return r;
}

PruneResult drop_rescale(const DeltaSet & delta, double p, const std::vector<double> & q, std::uint64_t seed,
                         bool prune_vectors) {
    require_drop_rate(p, false);
    if (q.empty()) {
        throw DimensionError("drop_rescale: q must have at least one entry");
    }
    const MaskSet masks = sample_bernoulli_masks(delta, 1.0 - p, seed, prune_vectors);
    PruneConfig cfg{PruneMethod::drop_rescale_q, p, q, 1.0, 1.0, seed, prune_vectors};
    return finish(apply_masks(delta, masks, q), delta, cfg, "drop_rescale_q", p, q);
}

PruneResult dare(const DeltaSet & delta, double p, std::uint64_t seed, bool prune_vectors) {
    require_drop_rate(p, false);
    const std::vector<double> q{1.0 - p};
    const MaskSet masks = sample_bernoulli_masks(delta, 1.0 - p, seed, prune_vectors);
    PruneConfig cfg{PruneMethod::dare, p, q, 1.0, 1.0, seed, prune_vectors};
    return finish(apply_masks(delta, masks, q), delta, cfg, "dare", p, q);
}

PruneResult random_drop(const DeltaSet & delta, double p, std::uint64_t seed, bool prune_vectors) {
    require_drop_rate(p, true);
    const std::vector<double> q{1.0};
    const MaskSet masks = sample_bernoulli_masks(delta, 1.0 - p, seed, prune_vectors);
    PruneConfig cfg{PruneMethod::random_drop, p, q, 1.0, 1.0, seed, prune_vectors};
    return finish(apply_masks(delta, masks, q), delta, cfg, "random_drop", p, q);
}

KeepMask top_k_mask(std::span<const double> scores, std::size_t k) {
    k = std::min(k, scores.size());
    std::vector<std::uint64_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::uint64_t{0});
    const auto better = [&](std::uint64_t x, std::uint64_t y) {
        if (scores[x] != scores[y]) {
            return scores[x] > scores[y];
        }
        return x < y;
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    KeepMask mask(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(mask.begin(), mask.end());
    return mask;
}

PruneResult magnitude_prune(const DeltaSet & delta, double p, bool prune_vectors) {
    const MaskSet masks = importance_masks(delta, p, prune_vectors, nullptr);
    PruneConfig cfg{PruneMethod::magnitude, p, {1.0}, 1.0, 1.0, 0, prune_vectors};
    return finish(apply_masks(delta, masks, {1.0}), delta, cfg, "mp", p, {1.0});
}

PruneResult wanda_prune(const DeltaSet & delta, double p, const std::map<std::string, Vector> & feature_norms,
                        bool prune_vectors) {
    const MaskSet masks = importance_masks(delta, p, prune_vectors, &feature_norms);
    PruneConfig cfg{PruneMethod::wanda, p, {1.0}, 1.0, 1.0, 0, prune_vectors};
    return finish(apply_masks(delta, masks, {1.0}), delta, cfg, "wanda", p, {1.0});
}

Vector feature_norms(const Matrix & batch, FeatureNormKind kind, std::size_t sample) {
    if (batch.rows() == 0) {
        throw PreconditionError("feature norms need a non-empty calibration batch");
    }
    if (kind == FeatureNormKind::batch_l2) {
        return column_norms(batch);
    }
    if (sample >= batch.rows()) {
        throw DimensionError("calibration sample index out of range");
    }
    Vector out(batch.cols());
    const auto row = batch.row(sample);
    for (std::size_t j = 0; j < out.size(); ++j) {
        out[j] = std::abs(row[j]);
    }
    return out;
}

PruneResult structured_prune(const DeltaSet & delta, double a, double b, const std::vector<double> & q,
                             std::uint64_t seed, bool prune_vectors) {
    if (q.empty()) {
        throw DimensionError("structured_prune: q must have at least one entry");
    }
    const MaskSet masks = sample_structured_masks(delta, a, b, seed, prune_vectors);
    const double p = 1.0 - a * b;
    PruneConfig cfg{PruneMethod::structured, p, q, a, b, seed, prune_vectors};
    return finish(apply_masks(delta, masks, q), delta, cfg, "structured", p, q);
}

PruneResult prune(const DeltaSet & delta, const PruneConfig & cfg, const std::map<std::string, Vector> & norms) {
    switch (cfg.method) {
        case PruneMethod::dare:
            return dare(delta, cfg.p, cfg.seed, cfg.prune_vectors);
        case PruneMethod::drop_rescale_q:
            return drop_rescale(delta, cfg.p, cfg.q, cfg.seed, cfg.prune_vectors);
        case PruneMethod::random_drop:
            return random_drop(delta, cfg.p, cfg.seed, cfg.prune_vectors);
        case PruneMethod::magnitude:
            return magnitude_prune(delta, cfg.p, cfg.prune_vectors);
        case PruneMethod::wanda:
            return wanda_prune(delta, cfg.p, norms, cfg.prune_vectors);
        case PruneMethod::structured:
            return structured_prune(delta, cfg.a, cfg.b, cfg.q.empty() ? std::vector<double>{1.0} : cfg.q, cfg.seed,
                                    cfg.prune_vectors);
    }
    throw PreconditionError("unhandled pruning method");
}

}  // namespace dppx
