// dppx: command-line front end for delta-parameter pruning.
//
// Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric failure.
// Every output is staged next to its destination and renamed into place only
// after the whole command succeeded.

#include "dppx/checkpoint.hpp"
#include "dppx/dataset.hpp"
#include "dppx/errors.hpp"
#include "dppx/harness.hpp"
#include "dppx/model.hpp"
#include "dppx/pruners.hpp"
#include "dppx/qsearch.hpp"
#include "dppx/theory.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dppx;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Collects outputs and commits them together.
class Outputs {
public:
    void add(const fs::path & path, std::string bytes) { files_.push_back({path, std::move(bytes)}); }
    void add(const fs::path & path, const std::vector<std::uint8_t> & bytes) {
        add(path, std::string(bytes.begin(), bytes.end()));
    }
    void add_json(const fs::path & path, const json & j) { add(path, j.dump(2) + "\n"); }

    void commit() {
        std::vector<fs::path> staged;
        try {
            for (const auto & [path, bytes] : files_) {
                if (path.has_parent_path()) {
                    fs::create_directories(path.parent_path());
                }
                fs::path tmp = path;
                tmp += ".partial";
                std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
                f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
                f.close();
                if (!f) {
                    throw DataError("cannot write " + path.string());
                }
                staged.push_back(tmp);
            }
        } catch (...) {
            for (const auto & t : staged) {
                std::error_code ec;
                fs::remove(t, ec);
            }
            throw;
        }
        for (std::size_t i = 0; i < files_.size(); ++i) {
            fs::rename(staged[i], files_[i].first);
        }
    }

private:
    std::vector<std::pair<fs::path, std::string>> files_;
};

std::uint64_t default_seed() {
    const char * env = std::getenv("DPPX_SEED");
    if (env == nullptr || *env == '\0') {
        return 0;
    }
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(env, &used, 0);
        if (used != std::string(env).size()) {
            throw std::invalid_argument(env);
        }
        return v;
    } catch (const std::exception &) {
        throw UsageError(std::string("DPPX_SEED is not an unsigned integer: ") + env);
    }
}

std::vector<double> parse_list(const std::string & text, const char * what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception &) {
            throw UsageError(std::string("bad number in ") + what + ": '" + item + "'");
        }
    }
    if (out.empty()) {
        throw UsageError(std::string(what) + " is empty");
    }
    return out;
}

std::string format_list(const std::vector<double> & v) {
    std::ostringstream os;
    os.precision(17);
    for (std::size_t i = 0; i < v.size(); ++i) {
        os << (i ? "," : "") << v[i];
    }
    return os.str();
}

void require_file(const std::string & path) {
    if (!fs::is_regular_file(path)) {
        throw DataError("no such file: " + path);
    }
}

Dataset read_dataset(const std::string & path) {
    require_file(path);
    return load_dataset(path);
}

ModelCheckpoint read_checkpoint(const std::string & path) {
    require_file(path);
    if (peek_kind(path) != ContainerKind::checkpoint) {
        throw DataError(path + " holds a delta, not a checkpoint");
    }
    return load_checkpoint(path);
}

SparseDelta read_delta(const std::string & path) {
    require_file(path);
    if (peek_kind(path) != ContainerKind::delta) {
        throw DataError(path + " holds a checkpoint, not a delta");
    }
    return load_delta(path);
}

// --fine or --delta, exactly one.
struct DeltaSource {
    std::string base;
    std::string fine;
    std::string delta;

    void bind(CLI::App * cmd, bool need_base) {
        auto * b = cmd->add_option("--base", base, "base checkpoint");
        if (need_base) {
            b->required();
        }
        auto * f = cmd->add_option("--fine", fine, "fine-tuned checkpoint");
        auto * d = cmd->add_option("--delta", delta, "delta container");
        f->excludes(d);
    }

    void check() const {
        if (fine.empty() == delta.empty()) {
            throw UsageError("give exactly one of --fine and --delta");
        }
        if (!fine.empty() && base.empty()) {
            throw UsageError("--fine needs --base");
        }
    }

    DeltaSet load(std::optional<ModelCheckpoint> & base_out) const {
        if (!base.empty()) {
            base_out = read_checkpoint(base);
        }
        if (!fine.empty()) {
            return compute_delta(read_checkpoint(fine), *base_out);
        }
        return from_csr(read_delta(delta));
    }

    json to_json() const { return {{"base", base}, {"fine", fine}, {"delta", delta}}; }
};

ModelCheckpoint rebuild_fine(const ModelCheckpoint & base, const DeltaSet & delta) {
    ModelCheckpoint fine = apply_delta(base, delta);
    fine.meta() = json::object();
    return fine;
}

std::map<std::string, Vector> wanda_norms(const ModelCheckpoint & fine, const Dataset & data, FeatureNormKind kind,
                                          std::size_t samples) {
    const Matrix batch = data.slice(0, std::min(samples, data.size())).features;
    std::map<std::string, Vector> out;
    for (const auto & li : TwoLayerAdapter().layer_inputs(fine, batch)) {
        out[li.tensor] = feature_norms(li.inputs, kind);
    }
    return out;
}

std::vector<double> read_q_file(const std::string & path) {
    std::ifstream f(path);
    if (!f) {
        throw DataError("cannot read " + path);
    }
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception & e) {
        throw DataError(path + ": " + e.what());
    }
    const json & q = j.is_object() ? j.at("q") : j;
    if (q.is_number()) {
        return {q.get<double>()};
    }
    return q.get<std::vector<double>>();
}

std::string resolve_experiment(const std::string & id) {
    std::vector<std::string> hits;
    for (const auto & known : experiment_ids()) {
        if (known == id) {
            return known;
        }
        if (known.rfind(id, 0) == 0) {
            hits.push_back(known);
        }
    }
    if (hits.size() != 1) {
        std::string all;
        for (const auto & k : experiment_ids()) {
            all += " " + k;
        }
        throw UsageError("unknown or ambiguous experiment '" + id + "'; choose from" + all);
    }
    return hits.front();
}

std::vector<std::uint64_t> parse_seeds(const std::string & text) {
    if (text.find(',') == std::string::npos) {
        const double n = parse_list(text, "--seeds").front();
        if (n < 1 || n != static_cast<double>(static_cast<std::uint64_t>(n))) {
            throw UsageError("--seeds takes a count >= 1 or a comma list");
        }
        std::vector<std::uint64_t> out;
        for (std::uint64_t s = 1; s <= static_cast<std::uint64_t>(n); ++s) {
            out.push_back(s);
        }
        return out;
    }
    std::vector<std::uint64_t> out;
    for (double v : parse_list(text, "--seeds")) {
        if (v < 0 || v != static_cast<double>(static_cast<std::uint64_t>(v))) {
            throw UsageError("seeds must be non-negative integers");
        }
        out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
}

std::string csv_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{"Delta-parameter pruning toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");

    std::uint64_t seed = 0;
    std::function<void()> action;

    // gen-data
    auto * gen = app.add_subcommand("gen-data", "write a synthetic Gaussian-mixture task");
    std::string gen_dir;
    TaskSpec gen_spec;
    gen->add_option("--out-dir", gen_dir, "directory for train/val/test files")->required();
    gen->add_option("--classes", gen_spec.classes)->capture_default_str()->check(CLI::Range(2, 65535));
    gen->add_option("--dim", gen_spec.dim)->capture_default_str()->check(CLI::PositiveNumber);
    gen->add_option("--train", gen_spec.train)->capture_default_str();
    gen->add_option("--val", gen_spec.val)->capture_default_str();
    gen->add_option("--test", gen_spec.test)->capture_default_str();
    gen->add_option("--variant", gen_spec.variant, "0 = pretrain task, 1 = fine-tune task")
        ->capture_default_str()
        ->check(CLI::Range(0, 1));
    gen->add_option("--margin", gen_spec.margin)->capture_default_str();
    gen->add_option("--shift", gen_spec.shift)->capture_default_str();
    gen->add_option("--relabel", gen_spec.relabel)->capture_default_str();
    gen->add_option("--spread", gen_spec.scale_spread)->capture_default_str();
    gen->add_option("--seed", seed);
    gen->callback([&] {
        action = [&] {
            gen_spec.seed = seed;
            const Task t = make_task(gen_spec);
            Outputs out;
            const fs::path dir(gen_dir);
            for (const auto & [name, ds] : {std::pair{"train", &t.train}, {"val", &t.val}, {"test", &t.test}}) {
                out.add(dir / (std::string(name) + ".dpxd"), encode_dataset(*ds));
            }
            out.add_json(dir / "task.json", {{"command", "gen-data"}, {"task", to_json(gen_spec)}});
            out.commit();
            std::cout << "train=" << t.train.size() << " val=" << t.val.size() << " test=" << t.test.size() << "\n";
        };
    });

    // train
    auto * tr = app.add_subcommand("train", "train or fine-tune the two-layer network");
    std::string tr_data, tr_out, tr_init, tr_anchor, tr_reg = "none";
    std::size_t tr_hidden = 256, tr_classes = 0;
    bool tr_no_norm = false;
    TrainConfig tr_cfg;
    tr->add_option("--data", tr_data, "training dataset")->required();
    tr->add_option("--out", tr_out, "output checkpoint")->required();
    tr->add_option("--init", tr_init, "start from this checkpoint");
    tr->add_option("--anchor", tr_anchor, "regularization anchor (defaults to --init)");
    tr->add_option("--hidden", tr_hidden)->capture_default_str();
    tr->add_option("--classes", tr_classes, "0 infers from labels")->capture_default_str();
    tr->add_flag("--no-norm", tr_no_norm, "replace RMSNorm with the identity");
    tr->add_option("--epochs", tr_cfg.epochs)->capture_default_str();
    tr->add_option("--batch", tr_cfg.batch)->capture_default_str()->check(CLI::PositiveNumber);
    tr->add_option("--lr", tr_cfg.opt.lr)->capture_default_str();
    tr->add_option("--reg", tr_reg, "none, l2 or l1")->capture_default_str();
    tr->add_option("--lambda", tr_cfg.opt.lambda)->capture_default_str();
    tr->add_option("--seed", seed);
    tr->callback([&] {
        action = [&] {
            tr_cfg.seed = seed;
            tr_cfg.opt.reg = parse_regularizer(tr_reg);
            tr_cfg.opt.validate();
            if (tr_cfg.opt.reg != Regularizer::none && tr_anchor.empty() && tr_init.empty()) {
                throw UsageError("--reg needs --anchor or --init");
            }
            const Dataset data = read_dataset(tr_data);
            if (!data.labeled()) {
                throw DataError(tr_data + " has no labels");
            }
            TwoLayerNet net;
            if (!tr_init.empty()) {
                net = TwoLayerNet::from_checkpoint(read_checkpoint(tr_init));
            } else {
                std::size_t k = tr_classes;
                if (k == 0) {
                    k = 1 + *std::max_element(data.labels.begin(), data.labels.end());
                }
                net = TwoLayerNet::init(NetShape{data.dim(), tr_hidden, k, !tr_no_norm}, seed);
            }
            std::optional<TwoLayerNet> anchor;
            if (tr_cfg.opt.reg != Regularizer::none) {
                anchor = TwoLayerNet::from_checkpoint(read_checkpoint(tr_anchor.empty() ? tr_init : tr_anchor));
            }
            const TrainResult r = train(net, data, tr_cfg, anchor ? &*anchor : nullptr);
            ModelCheckpoint ck = r.net.to_checkpoint();
            json hist = json::array();
            for (const auto & e : r.history) {
                hist.push_back({{"loss", e.loss}, {"train_accuracy", e.train_accuracy}});
            }
            ck.meta() = {{"command", "train"},
                         {"data", tr_data},
                         {"init", tr_init},
                         {"anchor", tr_anchor},
                         {"hidden", tr_hidden},
                         {"classes", r.net.shape().classes},
                         {"norm", !tr_no_norm},
                         {"train", to_json(tr_cfg)},
                         {"history", hist}};
            Outputs out;
            out.add(tr_out, encode(ck));
            out.commit();
            const auto & last = r.history.empty() ? EpochStats{} : r.history.back();
            std::cout << "loss=" << last.loss << " train_accuracy=" << last.train_accuracy << "\n";
        };
    });

    // delta
    auto * dl = app.add_subcommand("delta", "write fine - base as a delta container");
    std::string dl_base, dl_fine, dl_out, dl_format = "dense";
    dl->add_option("--base", dl_base)->required();
    dl->add_option("--fine", dl_fine)->required();
    dl->add_option("--out", dl_out)->required();
    dl->add_option("--format", dl_format, "dense or csr")->capture_default_str()->check(CLI::IsMember({"dense", "csr"}));
    dl->callback([&] {
        action = [&] {
            const DeltaSet d = compute_delta(read_checkpoint(dl_fine), read_checkpoint(dl_base));
            SparseDelta s = to_csr(d, false);
            if (dl_format == "dense") {
                for (auto & t : s.tensors) {
                    t.payload = t.densify();
                }
            }
            s.meta.extra = {{"cli", {{"command", "delta"}, {"base", dl_base}, {"fine", dl_fine}, {"format", dl_format}}}};
            Outputs out;
            out.add(dl_out, encode(s));
            out.commit();
            std::cout << "tensors=" << s.tensors.size() << " stored=" << s.stored_entries() << "\n";
        };
    });

    // prune
    auto * pr = app.add_subcommand("prune", "prune a delta");
    DeltaSource pr_src;
    pr_src.bind(pr, false);
    std::string pr_method = "dare", pr_q, pr_q_file, pr_out, pr_data, pr_norm_kind = "batch";
    PruneConfig pr_cfg;
    std::size_t pr_calib = 64;
    pr->add_option("--method", pr_method, "dare, darex-q, random_drop, mp, wanda, structured")->capture_default_str();
    pr->add_option("--p", pr_cfg.p, "drop rate")->capture_default_str();
    auto * qo = pr->add_option("--q", pr_q, "rescale q, scalar or comma list per layer");
    auto * qf = pr->add_option("--q-file", pr_q_file, "JSON with q (find-q output or array)");
    qo->excludes(qf);
    pr->add_option("--a", pr_cfg.a, "structured: column fraction")->capture_default_str();
    pr->add_option("--b", pr_cfg.b, "structured: keep fraction in selected columns")->capture_default_str();
    pr->add_flag("--prune-vectors", pr_cfg.prune_vectors, "also prune biases and gains");
    pr->add_option("--data", pr_data, "wanda: calibration dataset");
    pr->add_option("--calib-samples", pr_calib, "wanda: calibration rows")->capture_default_str();
    pr->add_option("--wanda-norm", pr_norm_kind, "batch (||x_j||_2) or sample (|x_j|)")
        ->capture_default_str()
        ->check(CLI::IsMember({"batch", "sample"}));
    pr->add_option("--seed", seed);
    pr->add_option("--out", pr_out)->required();
    pr->callback([&] {
        action = [&] {
            pr_src.check();
            pr_cfg.method = parse_prune_method(pr_method);
            pr_cfg.seed = seed;
            if (!pr_q.empty()) {
                pr_cfg.q = parse_list(pr_q, "--q");
            } else if (!pr_q_file.empty()) {
                pr_cfg.q = read_q_file(pr_q_file);
            }
            const bool needs_q = pr_cfg.method == PruneMethod::drop_rescale_q;
            if (needs_q && pr_cfg.q.empty()) {
                throw UsageError("--method darex-q needs --q or --q-file");
            }
            if (!needs_q && pr_cfg.method != PruneMethod::structured && !pr_cfg.q.empty()) {
                throw UsageError("--q only applies to darex-q and structured");
            }
            if (pr_cfg.method == PruneMethod::structured && pr_cfg.q.empty()) {
                pr_cfg.q = {pr_cfg.a * pr_cfg.b};
            }
            if (pr_cfg.method == PruneMethod::wanda && (pr_data.empty() || pr_src.base.empty())) {
                throw UsageError("--method wanda needs --base and --data");
            }
            std::optional<ModelCheckpoint> base;
            const DeltaSet delta = pr_src.load(base);
            std::map<std::string, Vector> norms;
            if (pr_cfg.method == PruneMethod::wanda) {
                norms = wanda_norms(rebuild_fine(*base, delta), read_dataset(pr_data),
                                    pr_norm_kind == "batch" ? FeatureNormKind::batch_l2 : FeatureNormKind::sample_abs,
                                    pr_calib);
            }
            PruneResult r = prune(delta, pr_cfg, norms);
            r.sparse.meta.extra["cli"] = {{"command", "prune"},
                                          {"source", pr_src.to_json()},
                                          {"method", pr_method},
                                          {"p", pr_cfg.p},
                                          {"q", pr_cfg.q},
                                          {"a", pr_cfg.a},
                                          {"b", pr_cfg.b},
                                          {"seed", seed},
                                          {"prune_vectors", pr_cfg.prune_vectors},
                                          {"data", pr_data},
                                          {"calib_samples", pr_calib},
                                          {"wanda_norm", pr_norm_kind}};
            const auto bytes = encode(r.sparse);
            std::size_t nnz = 0;
            for (auto k : r.kept) {
                nnz += k;
            }
            Outputs out;
            out.add(pr_out, bytes);
            out.commit();
            std::cout << "nnz=" << nnz << " retention=" << csv_number(r.retention()) << " bytes=" << bytes.size()
                      << "\n";
        };
    });

    // find-q
    auto * fq = app.add_subcommand("find-q", "search the rescale factor");
    DeltaSource fq_src;
    fq_src.bind(fq, true);
    std::string fq_data, fq_out, fq_obj = "outdiff", fq_trace;
    SearchConfig fq_cfg;
    bool fq_per_layer = false;
    fq->add_option("--data", fq_data, "search dataset")->required();
    fq->add_option("--objective", fq_obj, "val or outdiff")->capture_default_str();
    fq->add_flag("--per-layer", fq_per_layer, "one q per weight matrix via the eta search");
    fq->add_option("--p", fq_cfg.p)->capture_default_str();
    fq->add_option("--dq", fq_cfg.dq, "q grid step; <= 0 uses (1 - p) / 2")->capture_default_str();
    fq->add_option("--deta", fq_cfg.deta, "linear eta grid step; unset uses a log grid");
    fq->add_option("--eta-min", fq_cfg.eta_min)->capture_default_str();
    fq->add_option("--eta-max", fq_cfg.eta_max)->capture_default_str();
    fq->add_option("--rounds", fq_cfg.rounds, "grid points (q, or eta with --per-layer)")->capture_default_str();
    fq->add_option("--q-rounds", fq_cfg.q_rounds, "per-layer q grid points")->capture_default_str();
    fq->add_option("--gamma", fq_cfg.gamma)->capture_default_str();
    fq->add_option("--stats-samples", fq_cfg.stats_samples)->capture_default_str();
    fq->add_flag("--include-last-q", "do not skip the last per-layer q grid point");
    fq->add_option("--trace", fq_trace, "also write the trace as CSV");
    fq->add_option("--seed", seed);
    fq->add_option("--out", fq_out)->required();
    fq->callback([&] {
        action = [&] {
            fq_src.check();
            fq_cfg.seed = seed;
            fq_cfg.objective = parse_objective(fq_obj);
            fq_cfg.exclude_last_q = fq->count("--include-last-q") == 0;
            const bool linear = fq->count("--deta") > 0;
            fq_cfg.eta_grid = linear ? EtaGrid::linear : EtaGrid::logarithmic;
            if (fq_per_layer) {
                fq_cfg.eta_rounds = fq_cfg.rounds;
            }
            std::optional<ModelCheckpoint> base;
            const DeltaSet delta = fq_src.load(base);
            const Dataset data = read_dataset(fq_data);
            const TwoLayerAdapter adapter;
            TwoLayerNet::from_checkpoint(*base);  // topology check
            const QSelection sel = fq_per_layer ? find_q_perlayer(adapter, *base, delta, fq_cfg, data)
                                                : find_q_global(adapter, *base, delta, fq_cfg, data);
            json j = to_json(sel);
            j["config"] = {{"command", "find-q"},
                           {"source", fq_src.to_json()},
                           {"data", fq_data},
                           {"objective", fq_obj},
                           {"per_layer", fq_per_layer},
                           {"p", fq_cfg.p},
                           {"dq", fq_cfg.step()},
                           {"eta_grid", linear ? "linear" : "log"},
                           {"deta", fq_cfg.deta},
                           {"eta_min", fq_cfg.eta_min},
                           {"eta_max", fq_cfg.eta_max},
                           {"rounds", fq_cfg.rounds},
                           {"q_rounds", fq_cfg.q_rounds},
                           {"gamma", fq_cfg.gamma},
                           {"stats_samples", fq_cfg.stats_samples},
                           {"exclude_last_q", fq_cfg.exclude_last_q},
                           {"seed", seed}};
            if (fq_per_layer) {
                j["layers"] = pruned_tensor_names(delta, false);
            }
            Outputs out;
            out.add_json(fq_out, j);
            if (!fq_trace.empty()) {
                out.add(fq_trace, trace_csv(sel));
            }
            out.commit();
            std::cout << "q=" << format_list(sel.q_best) << " objective=" << csv_number(sel.objective) << "\n";
        };
    });

    // bounds
    auto * bd = app.add_subcommand("bounds", "concentration bound factors versus p");
    std::string bd_grid = "0.01,0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.95,0.99", bd_out, bd_data;
    double bd_gamma = 0.05;
    std::size_t bd_synth = 0, bd_trials = 1000, bd_samples = 16;
    DeltaSource bd_src;
    bd->add_option("--p-grid", bd_grid, "comma-separated drop rates")->capture_default_str();
    bd->add_option("--gamma", bd_gamma)->capture_default_str();
    bd->add_option("--synthetic", bd_synth, "also validate on n synthetic N(0,1) coefficients");
    bd->add_option("--trials", bd_trials, "Monte-Carlo trials for --synthetic")->capture_default_str();
    bd->add_option("--base", bd_src.base, "stats source: base checkpoint");
    auto * bf = bd->add_option("--fine", bd_src.fine, "stats source: fine-tuned checkpoint");
    auto * bdd = bd->add_option("--delta", bd_src.delta, "stats source: delta container");
    bf->excludes(bdd);
    bd->add_option("--data", bd_data, "stats source: input batch");
    bd->add_option("--samples", bd_samples, "stats source: rows of the batch used")->capture_default_str();
    bd->add_option("--seed", seed);
    bd->add_option("--out", bd_out, "CSV of bound factors")->required();
    bd->callback([&] {
        action = [&] {
            const std::vector<double> grid = parse_list(bd_grid, "--p-grid");
            for (double p : grid) {
                if (!(p > 0.0 && p < 1.0)) {
                    throw DomainError("p-grid values must lie in (0, 1), got " + csv_number(p));
                }
            }
            const std::string csv = bound_curves_csv(grid, bd_gamma);
            json meta{{"command", "bounds"},
                      {"p_grid", grid},
                      {"gamma", bd_gamma},
                      {"synthetic", bd_synth},
                      {"trials", bd_trials},
                      {"seed", seed},
                      {"source", bd_src.to_json()},
                      {"data", bd_data},
                      {"samples", bd_samples}};
            if (bd_synth > 0) {
                std::vector<double> c(bd_synth);
                RngStream rng(seed, "bounds/synthetic");
                double ss = 0.0;
                for (double & v : c) {
                    v = rng.next_normal();
                    ss += v * v;
                }
                json rows = json::array();
                for (double p : grid) {
                    const double bound = theorem1_factor(p, bd_gamma) * std::sqrt(ss);
                    const McOutcome mc = mc_violation(c, p, 1.0 - p, bound, bd_trials, seed);
                    rows.push_back({{"p", p}, {"bound", bound}, {"violation_rate", mc.rate}});
                }
                meta["synthetic_results"] = rows;
            }
            const bool has_src = !bd_src.fine.empty() || !bd_src.delta.empty();
            if (has_src) {
                bd_src.check();
                if (bd_src.base.empty() || bd_data.empty()) {
                    throw UsageError("bound statistics need --base, --fine or --delta, and --data");
                }
                std::optional<ModelCheckpoint> base;
                const DeltaSet delta = bd_src.load(base);
                const Dataset data = read_dataset(bd_data);
                const Matrix batch = data.slice(0, std::min(bd_samples, data.size())).features;
                json layers = json::array();
                for (const auto & ls : collect_layer_stats(TwoLayerAdapter(), *base, delta, batch)) {
                    double mean_norm = 0.0;
                    for (const auto & s : ls.stats) {
                        mean_norm += std::sqrt(s.sum_c2);
                    }
                    mean_norm /= static_cast<double>(std::max<std::size_t>(1, ls.stats.size()));
                    json per_p = json::array();
                    for (double p : grid) {
                        per_p.push_back({{"p", p}, {"mean_bound", theorem1_factor(p, bd_gamma) * mean_norm}});
                    }
                    layers.push_back({{"tensor", ls.tensor}, {"mean_sqrt_sum_c2", mean_norm}, {"bounds", per_p}});
                }
                meta["layer_results"] = layers;
            } else if (!bd_src.base.empty() || !bd_data.empty()) {
                throw UsageError("--base/--data are only used with --fine or --delta");
            }
            Outputs out;
            out.add(bd_out, csv);
            out.add_json(bd_out + ".json", meta);
            out.commit();
            std::cout << "rows=" << grid.size() << "\n";
        };
    });

    // pack / unpack
    auto * pk = app.add_subcommand("pack", "store a delta container in CSR form");
    std::string pk_in, pk_out;
    bool pk_keep_zeros = false;
    pk->add_option("--in", pk_in)->required();
    pk->add_option("--out", pk_out)->required();
    pk->add_flag("--keep-zeros", pk_keep_zeros, "store exact zeros too");
    pk->callback([&] {
        action = [&] {
            const SparseDelta in = read_delta(pk_in);
            SparseDelta s = to_csr(from_csr(in), !pk_keep_zeros);
            s.meta = in.meta;
            s.base_digest = in.base_digest;
            s.fine_digest = in.fine_digest;
            const auto bytes = encode(s);
            Outputs out;
            out.add(pk_out, bytes);
            out.commit();
            std::cout << "stored=" << s.stored_entries() << " bytes=" << bytes.size() << "\n";
        };
    });
    auto * up = app.add_subcommand("unpack", "store a delta container densely");
    std::string up_in, up_out;
    up->add_option("--in", up_in)->required();
    up->add_option("--out", up_out)->required();
    up->callback([&] {
        action = [&] {
            SparseDelta s = read_delta(up_in);
            for (auto & t : s.tensors) {
                t.payload = t.densify();
            }
            const auto bytes = encode(s);
            Outputs out;
            out.add(up_out, bytes);
            out.commit();
            std::cout << "stored=" << s.stored_entries() << " bytes=" << bytes.size() << "\n";
        };
    });

    // eval
    auto * ev = app.add_subcommand("eval", "accuracy of base, or base plus a delta");
    std::string ev_base, ev_delta, ev_data, ev_out;
    ev->add_option("--base", ev_base, "checkpoint to evaluate, or base for --delta")->required();
    ev->add_option("--delta", ev_delta, "delta applied to --base");
    ev->add_option("--data", ev_data)->required();
    ev->add_option("--out", ev_out, "write metrics as JSON");
    ev->callback([&] {
        action = [&] {
            ModelCheckpoint ck = read_checkpoint(ev_base);
            if (!ev_delta.empty()) {
                ck = apply_delta(ck, read_delta(ev_delta));
            }
            const Dataset data = read_dataset(ev_data);
            if (!data.labeled()) {
                throw DataError(ev_data + " has no labels");
            }
            const TwoLayerNet net = TwoLayerNet::from_checkpoint(ck);
            const double acc = accuracy(net, data);
            const double loss = mean_loss(net, data);
            json j{{"accuracy", acc},
                   {"loss", loss},
                   {"samples", data.size()},
                   {"config", {{"command", "eval"}, {"base", ev_base}, {"delta", ev_delta}, {"data", ev_data}}}};
            if (!ev_out.empty()) {
                Outputs out;
                out.add_json(ev_out, j);
                out.commit();
            }
            std::cout << "accuracy=" << csv_number(acc) << " loss=" << csv_number(loss) << "\n";
        };
    });

    // stats
    auto * st = app.add_subcommand("stats", "delta statistics per tensor");
    DeltaSource st_src;
    st_src.bind(st, false);
    std::string st_data, st_out;
    std::size_t st_samples = 64;
    st->add_option("--data", st_data, "input batch for mean |dW x| (needs --base)");
    st->add_option("--samples", st_samples)->capture_default_str();
    st->add_option("--out", st_out)->required();
    st->callback([&] {
        action = [&] {
            st_src.check();
            std::optional<ModelCheckpoint> base;
            const DeltaSet delta = st_src.load(base);
            std::map<std::string, Matrix> acts;
            if (!st_data.empty()) {
                if (!base) {
                    throw UsageError("--data needs --base");
                }
                const Dataset data = read_dataset(st_data);
                const Matrix batch = data.slice(0, std::min(st_samples, data.size())).features;
                for (const auto & li : TwoLayerAdapter().layer_inputs(rebuild_fine(*base, delta), batch)) {
                    acts[li.tensor] = li.inputs;
                }
            }
            Outputs out;
            out.add(st_out, delta_stats_csv(delta_stats(delta, acts)));
            out.add_json(st_out + ".json", {{"command", "stats"},
                                            {"source", st_src.to_json()},
                                            {"data", st_data},
                                            {"samples", st_samples}});
            out.commit();
        };
    });

    // experiment
    auto * ex = app.add_subcommand("experiment", "run a scripted controlled experiment");
    std::string ex_id, ex_seeds = "5", ex_dir = ".", ex_pgrid;
    HarnessConfig hc;
    ex->add_option("--id", ex_id, "experiment id or unique prefix")->required();
    ex->add_option("--seeds", ex_seeds, "count (1..n) or comma list")->capture_default_str();
    ex->add_option("--out-dir", ex_dir)->capture_default_str();
    ex->add_option("--p-grid", ex_pgrid, "override the pruning-rate grid");
    ex->add_option("--hidden", hc.shape.hidden)->capture_default_str();
    ex->add_option("--train", hc.task.train)->capture_default_str();
    ex->add_option("--test", hc.task.test)->capture_default_str();
    ex->add_option("--pretrain-epochs", hc.pretrain.epochs)->capture_default_str();
    ex->add_option("--finetune-epochs", hc.finetune.epochs)->capture_default_str();
    ex->add_option("--sweep-rounds", hc.sweep_rounds)->capture_default_str();
    ex->add_option("--storage-dim", hc.storage_dim)->capture_default_str();
    ex->callback([&] {
        action = [&] {
            const std::string id = resolve_experiment(ex_id);
            hc.seeds = parse_seeds(ex_seeds);
            if (!ex_pgrid.empty()) {
                hc.p_grid = parse_list(ex_pgrid, "--p-grid");
            }
            ExperimentContext ctx(hc);
            const ExperimentReport rep = run_experiment(id, ctx);
            json meta = rep.meta();
            meta["command"] = "experiment";
            meta["rows"] = rep.rows().size();
            const fs::path dir(ex_dir);
            Outputs out;
            out.add(dir / (id + ".csv"), rep.to_csv());
            out.add_json(dir / (id + ".json"), meta);
            out.commit();
            std::cout << id << " rows=" << rep.rows().size() << "\n";
        };
    });

    try {
        seed = default_seed();
        app.parse(argc, argv);
        if (action) {
            action();
        }
    } catch (const CLI::ParseError & e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UsageError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DomainError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const PreconditionError & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError & e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const Error & e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const DataError & e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception & e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error & e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
