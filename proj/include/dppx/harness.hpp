#pragma once

// Controlled testbed: synthetic pretrain/fine-tune tasks, training with
// AdamR, evaluation and the scripted experiments.

#include "dppx/adamr.hpp"
#include "dppx/dataset.hpp"
#include "dppx/model.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dppx {

enum class TaskKind { gaussian_mixture, file_dataset };

struct TaskSpec {
    TaskKind kind = TaskKind::gaussian_mixture;
    std::size_t classes = 10;
    std::size_t dim = 64;
    std::size_t train = 1000;
    std::size_t val = 1000;
    std::size_t test = 5000;
    std::uint64_t seed = 0;
    // Gaussian mixture only. Cluster means have norm ~ margin, noise is unit
    // variance per coordinate. Variant 1 moves every mean by ~shift and
    // rotates the labels of the first `relabel` clusters.
    double margin = 3.0;
    double shift = 1.5;
    int variant = 0;
    // Number of leading classes whose labels variant 1 rotates (0 or 1: none).
    std::size_t relabel = 3;
    // Each sample is multiplied by exp(scale_spread * N(0, 1)).
    double scale_spread = 1.0;
    // File dataset only: one file split into train/val/test by a seeded shuffle.
    std::string path;
};

nlohmann::json to_json(const TaskSpec & t);

struct Task {
    Dataset train;
    Dataset val;
    Dataset test;
};

Task make_task(const TaskSpec & spec);

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch = 64;
    AdamRConfig opt;
    std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainConfig & c);

struct EpochStats {
    double loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainResult {
    TwoLayerNet net;
    std::vector<EpochStats> history;
};

// Minibatch training with softmax cross-entropy. `anchor` is required for a
// regularized optimizer and must share the network's topology. Throws
// NumericError when the loss or a gradient stops being finite.
TrainResult train(TwoLayerNet net, const Dataset & data, const TrainConfig & cfg,
                  const TwoLayerNet * anchor = nullptr);

double accuracy(const TwoLayerNet & net, const Dataset & data);
double accuracy(const ModelCheckpoint & ckpt, const Dataset & data);
// Mean cross-entropy (labeled) of the network on a dataset.
double mean_loss(const TwoLayerNet & net, const Dataset & data);

struct ReportRow {
    std::string experiment;
    std::string method;
    std::string regularizer;
    double lambda = 0.0;
    double p = 0.0;
    double q = 0.0;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;

    bool operator==(const ReportRow &) const = default;
};

class ExperimentReport {
public:
    void append(ReportRow row);
    const std::vector<ReportRow> & rows() const { return rows_; }
    nlohmann::json & meta() { return meta_; }
    const nlohmann::json & meta() const { return meta_; }

    // experiment,method,regularizer,lambda,p,q,seed,metric,value
    std::string to_csv() const;
    static ExperimentReport from_csv(std::string_view text);

    // Values of rows matching every non-empty filter, in insertion order.
    std::vector<double> values(std::string_view method, std::string_view regularizer, std::string_view metric,
                               std::optional<double> p = std::nullopt) const;

private:
    std::vector<ReportRow> rows_;
    nlohmann::json meta_ = nlohmann::json::object();
};

struct HarnessConfig {
    NetShape shape;
    TaskSpec task;  // seed and variant are filled per run
    TrainConfig pretrain{20, 64, AdamRConfig{1e-3}, 0};
    TrainConfig finetune{50, 64, AdamRConfig{5e-3}, 0};
    double lambda_l2 = 5e-2;
    double lambda_l1 = 1e-3;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<double> p_grid{0.0, 0.5, 0.9, 0.99};
    std::vector<double> lambda_grid{0.0, 1e-3, 1e-2, 1e-1};
    double sweep_p = 0.99;       // fig1
    std::size_t sweep_rounds = 40;
    std::size_t storage_dim = 1024;  // table6
    std::vector<double> storage_p{0.9, 0.99, 0.999};

    nlohmann::json to_json() const;
};

// Caches pretrained and fine-tuned checkpoints so several experiments in one
// process share training runs.
class ExperimentContext {
public:
    explicit ExperimentContext(HarnessConfig cfg) : cfg_(std::move(cfg)) {}
    const HarnessConfig & config() const { return cfg_; }

    const Task & task(int variant, std::uint64_t seed);
    const ModelCheckpoint & base(std::uint64_t seed, bool norm);
    const ModelCheckpoint & fine(std::uint64_t seed, bool norm, Regularizer reg, double lambda);
    // Seeds a pretrained checkpoint instead of training one (must match the shape).
    void provide_base(std::uint64_t seed, ModelCheckpoint base);

private:
    HarnessConfig cfg_;
    std::map<std::pair<int, std::uint64_t>, Task> tasks_;
    std::map<std::pair<std::uint64_t, bool>, ModelCheckpoint> bases_;
    std::map<std::string, ModelCheckpoint> fines_;
};

std::vector<std::string> experiment_ids();
ExperimentReport run_experiment(std::string_view id, ExperimentContext & ctx);

}  // namespace dppx
