#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqw/config.hpp"
#include "sqw/data.hpp"
#include "sqw/ensemble.hpp"
#include "sqw/inq.hpp"
#include "sqw/model.hpp"
#include "sqw/packstore.hpp"

namespace sqw {

// One measured value. seed is the seed number as text, or "mean" / "best"
// for the per-axis aggregate rows.
struct MetricRecord {
  std::string recipe;
  std::string task;
  std::string model_size;
  std::string axis;    // sweep point: "float", "b=4", "k=3", "b=4,k=3", "suggest", ...
  std::string metric;  // dice | object_f1 | seg_avg | top1_error | top1_accuracy |
                       // frame_error_rate | frame_accuracy
  double value = 0.0;  // percent
  std::string seed;
};

struct TaskData {
  Dataset train, val, test;
};

// Deterministic seed mixing for independent streams derived from one run seed.
uint64_t mix_seed(uint64_t base, uint64_t stream);

TaskData make_task_data(const ExperimentConfig& cfg, uint64_t seed);
std::vector<int> task_input_shape(const ExperimentConfig& cfg);
std::vector<LayerSpec> task_model_specs(const ExperimentConfig& cfg);
ModelGraph make_task_model(const ExperimentConfig& cfg, uint64_t seed);

TrainConfig train_config_of(const ExperimentConfig& cfg);

// Trains one float model from scratch on data.train.
ModelGraph train_float_baseline(const ExperimentConfig& cfg, const TaskData& data,
                                uint64_t seed);

// Runs incremental quantization on a trained model at the given bit width.
InqLog run_inq(ModelGraph& model, const ExperimentConfig& cfg, const TaskData& data, int bits,
               uint64_t seed, PartitionState* out_state);

// Whole-test-set probability tensors.
Tensor predict_probs(const ModelGraph& model, const Dataset& ds, int batch_size = 64);
Tensor predict_probs(const Ensemble& ens, const Dataset& ds, int batch_size = 64);

// Uncertainty + representativeness selection from the pool, scored by
// ensembles trained per cfg.suggestion (seeded from the run seed).
SuggestionResult run_suggestion(const ExperimentConfig& cfg, uint64_t seed,
                                const Dataset& seed_set, const Dataset& pool);

// Task metrics (in percent) for precomputed test-set probabilities.
std::vector<MetricRecord> records_from_probs(const ExperimentConfig& cfg,
                                             const std::string& axis, const std::string& seed,
                                             const Tensor& probs, const Dataset& test);

// True when larger values of the metric are better.
bool metric_higher_is_better(const std::string& metric);

// Appends per-axis mean and best rows (grouped by axis+metric, order of first
// appearance).
void append_aggregates(std::vector<MetricRecord>& records);

std::string records_to_csv(const std::vector<MetricRecord>& records);

// Runs the configured recipe, writes results.csv, log.jsonl and model files
// under cfg.out_dir, and returns all records (aggregates included).
std::vector<MetricRecord> run_experiment(const ExperimentConfig& cfg);

}  // namespace sqw
