#include "dppx/harness.hpp"

#include "dppx/errors.hpp"
#include "dppx/pruners.hpp"
#include "dppx/qsearch.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace dppx {

nlohmann::json to_json(const TaskSpec & t) {
    nlohmann::json j{{"kind", t.kind == TaskKind::gaussian_mixture ? "gaussian-mixture" : "file-dataset"},
                     {"classes", t.classes},
                     {"dim", t.dim},
                     {"train", t.train},
                     {"val", t.val},
                     {"test", t.test},
                     {"seed", t.seed}};
    if (t.kind == TaskKind::gaussian_mixture) {
        j["margin"] = t.margin;
        j["shift"] = t.shift;
        j["variant"] = t.variant;
        j["relabel"] = t.relabel;
        j["scale_spread"] = t.scale_spread;
    } else {
        j["path"] = t.path;
    }
    return j;
}

nlohmann::json to_json(const TrainConfig & c) {
    return {{"epochs", c.epochs},
            {"batch", c.batch},
            {"seed", c.seed},
            {"lr", c.opt.lr},
            {"beta1", c.opt.beta1},
            {"beta2", c.opt.beta2},
            {"eps", c.opt.eps},
            {"lambda", c.opt.lambda},
            {"reg", to_string(c.opt.reg)},
            {"l1_clamp", c.opt.l1_clamp}};
}

namespace {

Dataset sample_mixture(const std::vector<std::vector<double>> & means, std::size_t count, double noise,
                       double scale_spread, RngStream rng) {
    const std::size_t dim = means.front().size();
    Dataset d;
    d.features = Matrix(count, dim);
    d.labels.resize(count);
    for (std::size_t s = 0; s < count; ++s) {
        const auto y = static_cast<std::uint16_t>(rng.next_below(means.size()));
        d.labels[s] = y;
        auto row = d.features.row(s);
        const double scale = scale_spread > 0.0 ? std::exp(scale_spread * rng.next_normal()) : 1.0;
        for (std::size_t j = 0; j < dim; ++j) {
            row[j] = static_cast<float>(scale * (means[y][j] + noise * rng.next_normal()));
        }
    }
    return d;
}

std::vector<std::vector<double>> random_means(std::size_t classes, std::size_t dim, double norm, RngStream rng) {
    std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
    const double scale = norm / std::sqrt(static_cast<double>(dim));
    for (auto & m : means) {
        for (double & v : m) {
            v = scale * rng.next_normal();
        }
    }
    return means;
}

}  // namespace

Task make_task(const TaskSpec & spec) {
    if (spec.kind == TaskKind::file_dataset) {
        const Dataset all = load_dataset(spec.path);
        if (!all.labeled()) {
            throw PreconditionError("task dataset '" + spec.path + "' has no labels");
        }
        if (spec.val + spec.test >= all.size()) {
            throw PreconditionError("task dataset too small for the requested validation and test splits");
        }
        std::vector<std::size_t> order(all.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        RngStream rng(spec.seed, "task/shuffle");
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.next_below(i)]);
        }
        const std::span<const std::size_t> idx(order);
        Task t;
        t.val = all.select(idx.subspan(0, spec.val));
        t.test = all.select(idx.subspan(spec.val, spec.test));
        t.train = all.select(idx.subspan(spec.val + spec.test));
        return t;
    }
    if (spec.classes < 2 || spec.classes > 65535 || spec.dim == 0) {
        throw PreconditionError("gaussian mixture needs 2..65535 classes and a positive dimension");
    }
    if (spec.variant != 0 && spec.variant != 1) {
        throw PreconditionError("gaussian mixture variant must be 0 or 1");
    }
    auto means = random_means(spec.classes, spec.dim, spec.margin, RngStream(spec.seed, "task/means"));
    if (spec.variant == 1) {
        // Class k of the fine-tune task sits near cluster perm[k] of the
        // pretrain task, moved by a random offset.
        std::vector<std::size_t> perm(spec.classes);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        const std::size_t r = std::min(spec.relabel, spec.classes);
        if (r > 1) {
            std::rotate(perm.begin(), perm.begin() + 1, perm.begin() + static_cast<std::ptrdiff_t>(r));
        }
        const auto offsets = random_means(spec.classes, spec.dim, spec.shift, RngStream(spec.seed, "task/shift"));
        std::vector<std::vector<double>> moved(spec.classes);
        for (std::size_t k = 0; k < spec.classes; ++k) {
            moved[k] = means[perm[k]];
            for (std::size_t j = 0; j < spec.dim; ++j) {
                moved[k][j] += offsets[k][j];
            }
        }
        means = std::move(moved);
    }
    const std::string v = "task/v" + std::to_string(spec.variant);
    Task t;
    t.train = sample_mixture(means, spec.train, 1.0, spec.scale_spread, RngStream(spec.seed, v + "/train"));
    t.val = sample_mixture(means, spec.val, 1.0, spec.scale_spread, RngStream(spec.seed, v + "/val"));
    t.test = sample_mixture(means, spec.test, 1.0, spec.scale_spread, RngStream(spec.seed, v + "/test"));
    return t;
}

TrainResult train(TwoLayerNet net, const Dataset & data, const TrainConfig & cfg, const TwoLayerNet * anchor) {
    cfg.opt.validate();
    if (data.size() == 0 || !data.labeled()) {
        throw PreconditionError("training needs a non-empty labeled dataset");
    }
    if (cfg.batch == 0) {
        throw PreconditionError("batch size must be positive");
    }
    if (cfg.opt.reg != Regularizer::none) {
        if (anchor == nullptr) {
            throw PreconditionError("regularized training needs an anchor network");
        }
        if (!(anchor->shape() == net.shape())) {
            throw IncompatibleCheckpoints("anchor network has a different topology");
        }
    }
    const auto sizes = net.sizes();
    AdamRState state(sizes);
    std::vector<std::span<const double>> anchor_spans;
    if (anchor != nullptr && cfg.opt.reg != Regularizer::none) {
        for (const auto & p : anchor->params()) {
            anchor_spans.emplace_back(p.data);
        }
    }

    TrainResult out;
    std::vector<std::size_t> order(data.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        RngStream rng(cfg.seed, "shuffle/" + std::to_string(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.next_below(i)]);
        }
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
            const std::size_t n = std::min(cfg.batch, order.size() - begin);
            DMatrix x(n, data.dim());
            std::vector<std::uint16_t> y(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto src = data.features.row(order[begin + i]);
                std::copy(src.begin(), src.end(), x.row(i).begin());
                y[i] = data.labels[order[begin + i]];
            }
            const ForwardCache cache = net.forward(x);
            const LossResult l = cross_entropy(cache.logits, y);
            if (!std::isfinite(l.loss)) {
                throw NumericError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
            }
            loss_sum += l.loss * static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto z = cache.logits.row(i);
                const auto arg = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
                correct += arg == y[i] ? 1 : 0;
            }
            const auto grads = net.backward(cache, l.dlogits);
            std::vector<std::span<double>> ps;
            std::vector<std::span<const double>> gs;
            for (std::size_t i = 0; i < grads.size(); ++i) {
                ps.emplace_back(net.params()[i].data);
                gs.emplace_back(grads[i]);
            }
            adamr_step(ps, gs, anchor_spans, state, cfg.opt);
        }
        for (const auto & p : net.params()) {
            for (double v : p.data) {
                if (!std::isfinite(v)) {
                    throw NumericError("training diverged: non-finite parameter in '" + p.name + "'");
                }
            }
        }
        out.history.push_back(EpochStats{loss_sum / static_cast<double>(data.size()),
                                         static_cast<double>(correct) / static_cast<double>(data.size())});
    }
    out.net = std::move(net);
    return out;
}

double accuracy(const TwoLayerNet & net, const Dataset & data) {
    const Matrix logits = to_float(net.logits(to_double(data.features)));
    return 1.0 - error_rate(logits, data.labels);
}

double accuracy(const ModelCheckpoint & ckpt, const Dataset & data) {
    return accuracy(TwoLayerNet::from_checkpoint(ckpt), data);
}

double mean_loss(const TwoLayerNet & net, const Dataset & data) {
    return cross_entropy(net.logits(to_double(data.features)), data.labels).loss;
}

// ---- report ----

namespace {

void check_field(const std::string & s) {
    if (s.find_first_of(",\n\r\"") != std::string::npos) {
        throw PreconditionError("report field '" + s + "' contains a CSV delimiter");
    }
}

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(std::string_view s) {
    const std::string t(s);
    char * end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size()) {
        throw CorruptContainer("bad number '" + t + "' in report CSV");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            return out;
        }
        start = pos + 1;
    }
}

constexpr std::string_view kReportHeader = "experiment,method,regularizer,lambda,p,q,seed,metric,value";

}  // namespace

void ExperimentReport::append(ReportRow row) {
    check_field(row.experiment);
    check_field(row.method);
    check_field(row.regularizer);
    check_field(row.metric);
    rows_.push_back(std::move(row));
}

std::string ExperimentReport::to_csv() const {
    std::string out(kReportHeader);
    out += '\n';
    for (const auto & r : rows_) {
        out += r.experiment + ',' + r.method + ',' + r.regularizer + ',' + fmt_double(r.lambda) + ',' +
               fmt_double(r.p) + ',' + fmt_double(r.q) + ',' + std::to_string(r.seed) + ',' + r.metric + ',' +
               fmt_double(r.value) + '\n';
    }
    return out;
}

ExperimentReport ExperimentReport::from_csv(std::string_view text) {
    ExperimentReport rep;
    auto lines = split(text, '\n');
    if (lines.empty() || lines.front() != kReportHeader) {
        throw CorruptContainer("report CSV lacks the expected header");
    }
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) {
            continue;
        }
        const auto f = split(lines[i], ',');
        if (f.size() != 9) {
            throw CorruptContainer("report CSV line " + std::to_string(i + 1) + " has " + std::to_string(f.size()) +
                                   " fields");
        }
        ReportRow r;
        r.experiment = f[0];
        r.method = f[1];
        r.regularizer = f[2];
        r.lambda = parse_double(f[3]);
        r.p = parse_double(f[4]);
        r.q = parse_double(f[5]);
        std::uint64_t seed = 0;
        const auto res = std::from_chars(f[6].data(), f[6].data() + f[6].size(), seed);
        if (res.ec != std::errc{} || res.ptr != f[6].data() + f[6].size()) {
            throw CorruptContainer("bad seed in report CSV line " + std::to_string(i + 1));
        }
        r.seed = seed;
        r.metric = f[7];
        r.value = parse_double(f[8]);
        rep.rows_.push_back(std::move(r));
    }
    return rep;
}

std::vector<double> ExperimentReport::values(std::string_view method, std::string_view regularizer,
                                             std::string_view metric, std::optional<double> p) const {
    std::vector<double> out;
    for (const auto & r : rows_) {
        if ((method.empty() || r.method == method) && (regularizer.empty() || r.regularizer == regularizer) &&
            (metric.empty() || r.metric == metric) && (!p || r.p == *p)) {
            out.push_back(r.value);
        }
    }
    return out;
}

// ---- experiments ----

nlohmann::json HarnessConfig::to_json() const {
    return {{"shape", {{"input", shape.input}, {"hidden", shape.hidden}, {"classes", shape.classes}}},
            {"task", dppx::to_json(task)},
            {"pretrain", dppx::to_json(pretrain)},
            {"finetune", dppx::to_json(finetune)},
            {"lambda_l2", lambda_l2},
            {"lambda_l1", lambda_l1},
            {"seeds", seeds},
            {"p_grid", p_grid},
            {"lambda_grid", lambda_grid},
            {"sweep_p", sweep_p},
            {"sweep_rounds", sweep_rounds},
            {"storage_dim", storage_dim},
            {"storage_p", storage_p}};
}

const Task & ExperimentContext::task(int variant, std::uint64_t seed) {
    const auto key = std::make_pair(variant, seed);
    auto it = tasks_.find(key);
    if (it == tasks_.end()) {
        TaskSpec spec = cfg_.task;
        spec.seed = seed;
        spec.variant = variant;
        spec.dim = cfg_.shape.input;
        spec.classes = cfg_.shape.classes;
        it = tasks_.emplace(key, make_task(spec)).first;
    }
    return it->second;
}

void ExperimentContext::provide_base(std::uint64_t seed, ModelCheckpoint base) {
    const NetShape s = parse_topology_tag(base.topology_tag());
    bases_[{seed, s.norm}] = std::move(base);
}

const ModelCheckpoint & ExperimentContext::base(std::uint64_t seed, bool norm) {
    const auto key = std::make_pair(seed, norm);
    auto it = bases_.find(key);
    if (it == bases_.end()) {
        NetShape shape = cfg_.shape;
        shape.norm = norm;
        TrainConfig tc = cfg_.pretrain;
        tc.seed = seed;
        tc.opt.reg = Regularizer::none;
        TrainResult r = train(TwoLayerNet::init(shape, seed), task(0, seed).train, tc);
        it = bases_.emplace(key, r.net.to_checkpoint()).first;
    }
    return it->second;
}

const ModelCheckpoint & ExperimentContext::fine(std::uint64_t seed, bool norm, Regularizer reg, double lambda) {
    if (lambda == 0.0) {
        reg = Regularizer::none;
    }
    if (reg == Regularizer::none) {
        lambda = 0.0;
    }
    const std::string key = std::to_string(seed) + (norm ? "/n/" : "/i/") + to_string(reg) + "/" + fmt_double(lambda);
    auto it = fines_.find(key);
    if (it == fines_.end()) {
        const TwoLayerNet start = TwoLayerNet::from_checkpoint(base(seed, norm));
        TrainConfig tc = cfg_.finetune;
        tc.seed = splitmix64(seed ^ 0x5eedf17eULL);
        tc.opt.reg = reg;
        tc.opt.lambda = lambda;
        TrainResult r = train(start, task(1, seed).train, tc, &start);
        it = fines_.emplace(key, r.net.to_checkpoint()).first;
    }
    return it->second;
}

std::vector<std::string> experiment_ids() {
    return {"fig1-q-sweep",        "fig5a-reg-dare", "fig5b-norm-ablation", "fig5c-l1-importance",
            "fig5d-best-fit",      "c3-lambda-sweep", "table6-storage"};
}

namespace {

double reg_lambda(const HarnessConfig & c, Regularizer r) {
    switch (r) {
        case Regularizer::l2: return c.lambda_l2;
        case Regularizer::l1: return c.lambda_l1;
        case Regularizer::none: return 0.0;
    }
    return 0.0;
}

double pruned_accuracy(const ModelCheckpoint & base, const PruneResult & pr, const Dataset & test) {
    return accuracy(apply_delta(base, pr.sparse), test);
}

PruneResult prune_method(const DeltaSet & delta, const std::string & method, double p, std::uint64_t seed) {
    if (method == "dare") {
        return dare(delta, p, seed);
    }
    if (method == "mp") {
        return magnitude_prune(delta, p);
    }
    throw PreconditionError("harness: unsupported method '" + method + "'");
}

double mean_abs(const DeltaSet & d) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto & e : d.entries) {
        for (float v : e.value.flat()) {
            acc += std::abs(static_cast<double>(v));
        }
        n += e.value.size();
    }
    return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

void run_fig1(ExperimentContext & ctx, ExperimentReport & rep) {
    const auto & c = ctx.config();
    const std::string id = "fig1-q-sweep";
    const double p = c.sweep_p;
    const TwoLayerAdapter adapter;
    for (std::uint64_t seed : c.seeds) {
        const ModelCheckpoint & base = ctx.base(seed, true);
        const ModelCheckpoint & fine = ctx.fine(seed, true, Regularizer::none, 0.0);
        const Task & t = ctx.task(1, seed);
        const DeltaSet delta = compute_delta(fine, base);

        SearchConfig sc;
        sc.p = p;
        sc.rounds = c.sweep_rounds;
        sc.objective = Objective::outdiff;
        sc.seed = seed;
        const QSelection sel = find_q_global(adapter, base, delta, sc, t.val);

        // The sweep also covers q at and below 1 - p under the same mask.
        const MaskSet masks = sample_bernoulli_masks(delta, 1.0 - p, seed, false);
        const double dq = sc.step();
        for (std::size_t t_idx = 0; t_idx < c.sweep_rounds + 2; ++t_idx) {
            const double q = (1.0 - p) + (static_cast<double>(t_idx) - 1.0) * dq;
            const PruneResult pr = apply_masks(delta, masks, {q});
            const ModelCheckpoint cand = apply_delta(base, pr.sparse);
            const double od = objective_outdiff(adapter, cand, fine, t.val.features);
            rep.append({id, "drop-rescale", "none", 0.0, p, q, seed, "outdiff", od});
            rep.append({id, "drop-rescale", "none", 0.0, p, q, seed, "test_acc", accuracy(cand, t.test)});
        }
        const double q_e = sel.q_best.front();
        const PruneResult at_qe = apply_masks(delta, masks, {q_e});
        const PruneResult vanilla = apply_masks(delta, masks, {1.0 - p});
        rep.append({id, "darex-q", "none", 0.0, p, q_e, seed, "q_selected", q_e});
        rep.append({id, "darex-q", "none", 0.0, p, q_e, seed, "test_acc", pruned_accuracy(base, at_qe, t.test)});
        rep.append({id, "dare", "none", 0.0, p, 1.0 - p, seed, "test_acc", pruned_accuracy(base, vanilla, t.test)});
        rep.append({id, "fine", "none", 0.0, 0.0, 1.0, seed, "test_acc", accuracy(fine, t.test)});
    }
}

struct Arm {
    std::string method;
    Regularizer reg;
    bool norm = true;
    std::string label;  // method column
};

void run_arms(ExperimentContext & ctx, ExperimentReport & rep, const std::string & id, const std::vector<Arm> & arms) {
    const auto & c = ctx.config();
    for (std::uint64_t seed : c.seeds) {
        for (const auto & arm : arms) {
            const double lambda = reg_lambda(c, arm.reg);
            const ModelCheckpoint & base = ctx.base(seed, arm.norm);
            const DeltaSet delta = compute_delta(ctx.fine(seed, arm.norm, arm.reg, lambda), base);
            const Dataset & test = ctx.task(1, seed).test;
            for (double p : c.p_grid) {
                const PruneResult pr = prune_method(delta, arm.method, p, seed);
                const double q = pr.sparse.meta.q.front();
                rep.append({id, arm.label, to_string(arm.reg), lambda, p, q, seed, "test_acc",
                            pruned_accuracy(base, pr, test)});
            }
        }
    }
}

void run_lambda_sweep(ExperimentContext & ctx, ExperimentReport & rep) {
    const auto & c = ctx.config();
    const std::string id = "c3-lambda-sweep";
    const double p = 0.9;
    for (std::uint64_t seed : c.seeds) {
        const ModelCheckpoint & base = ctx.base(seed, true);
        const Dataset & test = ctx.task(1, seed).test;
        for (Regularizer reg : {Regularizer::l2, Regularizer::l1}) {
            for (double lambda : c.lambda_grid) {
                const ModelCheckpoint & fine = ctx.fine(seed, true, reg, lambda);
                const DeltaSet delta = compute_delta(fine, base);
                const std::string r = to_string(reg);
                rep.append({id, "fine", r, lambda, 0.0, 1.0, seed, "mean_abs_delta", mean_abs(delta)});
                rep.append({id, "fine", r, lambda, 0.0, 1.0, seed, "test_acc", accuracy(fine, test)});
                const PruneResult pr = dare(delta, p, seed);
                rep.append({id, "dare", r, lambda, p, 1.0 - p, seed, "test_acc", pruned_accuracy(base, pr, test)});
            }
        }
    }
}

void run_storage(ExperimentContext & ctx, ExperimentReport & rep) {
    const auto & c = ctx.config();
    const std::string id = "table6-storage";
    const std::size_t n = c.storage_dim;
    for (std::uint64_t seed : c.seeds) {
        Matrix m(n, n);
        RngStream rng(seed, "storage/delta");
        for (float & v : m.flat()) {
            v = static_cast<float>(1e-3 * rng.next_normal());
        }
        DeltaSet delta{"dense-" + std::to_string(n), {make_matrix_tensor("w", std::move(m))}, std::nullopt,
                       std::nullopt};
        for (double p : c.storage_p) {
            const PruneResult pr = dare(delta, p, seed);
            // Dense container of the pruned delta, then packed to CSR.
            SparseDelta dense_form = to_csr(from_csr(pr.sparse), false);
            for (auto & t : dense_form.tensors) {
                t.payload = t.densify();
            }
            dense_form.meta = pr.sparse.meta;
            SparseDelta packed = to_csr(from_csr(dense_form), true);
            packed.meta = pr.sparse.meta;
            const auto dense_bytes = encode(dense_form);
            const auto csr_bytes = encode(packed);
            SparseDelta unpacked = decode_delta(csr_bytes);
            for (auto & t : unpacked.tensors) {
                t.payload = t.densify();
            }
            const bool round_trip = encode(unpacked) == dense_bytes;
            const std::size_t nnz = packed.stored_entries();
            const std::size_t overhead = csr_bytes.size() - 8 * nnz;
            const double q = pr.sparse.meta.q.front();
            rep.append({id, "dare", "none", 0.0, p, q, seed, "nnz", static_cast<double>(nnz)});
            rep.append({id, "dare", "none", 0.0, p, q, seed, "csr_bytes", static_cast<double>(csr_bytes.size())});
            rep.append({id, "dare", "none", 0.0, p, q, seed, "dense_bytes", static_cast<double>(dense_bytes.size())});
            rep.append({id, "dare", "none", 0.0, p, q, seed, "overhead_bytes", static_cast<double>(overhead)});
            rep.append({id, "dare", "none", 0.0, p, q, seed, "round_trip", round_trip ? 1.0 : 0.0});
        }
    }
}

}  // namespace

ExperimentReport run_experiment(std::string_view id, ExperimentContext & ctx) {
    ExperimentReport rep;
    rep.meta() = {{"experiment", std::string(id)}, {"config", ctx.config().to_json()}};
    if (id == "fig1-q-sweep") {
        run_fig1(ctx, rep);
    } else if (id == "fig5a-reg-dare") {
        run_arms(ctx, rep, std::string(id),
                 {{"dare", Regularizer::none, true, "dare"},
                  {"dare", Regularizer::l2, true, "dare"},
                  {"dare", Regularizer::l1, true, "dare"}});
    } else if (id == "fig5b-norm-ablation") {
        run_arms(ctx, rep, std::string(id),
                 {{"dare", Regularizer::none, true, "dare+rmsnorm"}, {"dare", Regularizer::none, false, "dare+identity"}});
    } else if (id == "fig5c-l1-importance") {
        run_arms(ctx, rep, std::string(id), {{"mp", Regularizer::none, true, "mp"}, {"mp", Regularizer::l1, true, "mp"}});
    } else if (id == "fig5d-best-fit") {
        run_arms(ctx, rep, std::string(id),
                 {{"dare", Regularizer::l2, true, "dare"},
                  {"mp", Regularizer::l1, true, "mp"},
                  {"dare", Regularizer::none, true, "dare"},
                  {"mp", Regularizer::none, true, "mp"}});
    } else if (id == "c3-lambda-sweep") {
        run_lambda_sweep(ctx, rep);
    } else if (id == "table6-storage") {
        run_storage(ctx, rep);
    } else {
        throw PreconditionError("unknown experiment '" + std::string(id) + "'");
    }
    return rep;
}

}  // namespace dppx
