#pragma once

#include "msmbd/dataset.hpp"
#include "msmbd/model.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace msmbd {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view text);

struct TrainConfig {
    std::uint64_t seed = 0;
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t patience = 0; // epochs without val-F1 improvement; 0 disables

    /// Throws ValidationError naming the offending field.
    void validate() const;
};

struct Metrics {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    /// Derived rates use 0 whenever a denominator is 0; bot is the
    /// positive class.
    static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);
    std::size_t total() const { return tp + fp + tn + fn; }
};

/// Plain SGD or Adam over every tensor of a registry, in name order.
class Optimizer {
public:
    explicit Optimizer(const TrainConfig& cfg);
    /// Applies one update from the accumulated gradients scaled by
    /// `grad_scale`.
    void step(ParamRegistry& params, double grad_scale = 1.0);

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

/// Model inputs for one labeled account, built once per run.
struct Example {
    std::string id;
    ModalityEmbeddings inputs;
    int label = -1; // 0 human, 1 bot, -1 unlabeled
};

std::vector<Example> build_examples(const Model& model, const Dataset& dataset, Split split,
                                    bool require_labels = true);

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_accuracy = 0.0;
    double val_f1 = 0.0;

    bool operator==(const EpochRecord&) const = default;
};

std::string epoch_log_csv(const std::vector<EpochRecord>& log);

struct TrainResult {
    Model best;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded shuffle per epoch, one optimizer step per mini-batch on the mean
/// batch gradient, best-val-F1 snapshot (ties go to the lower train loss).
/// Throws NumericError on a non-finite loss.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, Model model, const EpochCallback& on_epoch = {});
TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set, const TrainConfig& cfg,
                  Model model, const EpochCallback& on_epoch = {});

/// Forward passes split across `threads` workers; results are collected
/// by index so output is independent of the thread count.
std::vector<Prediction> predict_all(const Model& model, const std::vector<Example>& examples,
                                    std::size_t threads = 1);

Metrics evaluate(const Model& model, const std::vector<Example>& examples, std::size_t threads = 1);
/// Throws ValidationError on an empty or unlabeled split.
Metrics evaluate(const Model& model, const Dataset& dataset, Split split, std::size_t threads = 1);

struct AblationRun {
    std::uint64_t seed = 0;
    Metrics cmrca;
    Metrics concat_fc;
};

struct AblationReport {
    std::vector<AblationRun> runs;
    double mean_cmrca_f1 = 0.0;
    double mean_concat_fc_f1 = 0.0;
    double mean_cmrca_accuracy = 0.0;
    double mean_concat_fc_accuracy = 0.0;

    double delta_f1() const { return mean_cmrca_f1 - mean_concat_fc_f1; }
    double delta_accuracy() const { return mean_cmrca_accuracy - mean_concat_fc_accuracy; }
};

/// Trains both fusion modes from `model_cfg` with identical configs, once
/// per seed (the seed drives both init and shuffling), and scores them on
/// the test split.
AblationReport run_ablation(const Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            const std::vector<std::uint64_t>& seeds);

std::string metrics_json(const Metrics& m);
std::string ablation_json(const AblationReport& report);

} // namespace msmbd
