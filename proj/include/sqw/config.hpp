#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sqw/data.hpp"
#include "sqw/inq.hpp"

namespace sqw {

struct OptimizerConfig {
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double lr_decay = 1e-6;
  int64_t lr_drop_step = -1;
  double lr_drop_to = 0.0;
};

struct TrainParams {
  int epochs = 6;
  int batch_size = 32;
};

struct DatasetConfig {
  int train_count = 0;
  int val_count = 0;
  int test_count = 0;
  SegParams seg;
  double seg_test_hard_fraction = -1.0;  // < 0: same mix as the training pool
  ClsParams cls;
  AsrParams asr;
  std::string idx_images;  // optional external IDX pair for the cls task
  std::string idx_labels;
};

struct SuggestionParams {
  int uncertainty_take = 8;
  int representative_take = 4;
  int iterations = 5;
  std::optional<int> quantize_suggestors;
  int seed_size = 12;      // initial labeled samples
  int ensemble_size = 3;   // K of the scoring ensemble
  int member_epochs = 6;   // training budget per refresh
};

// One experiment description, loadable from JSON (config_version 1).
struct ExperimentConfig {
  int config_version = 1;
  std::string task = "cls";         // seg | cls | asr
  std::string model_size = "full";  // full | small
  std::string recipe = "bitwidth-sweep";
  std::vector<int> bit_widths = {2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> parallel = {1, 3, 5, 7};
  std::vector<uint64_t> seeds = {1, 2, 3};
  InqSchedule schedule;
  OptimizerConfig optimizer;
  TrainParams train;
  std::string strategy = "magnitude";
  std::optional<double> max_level_override;
  DatasetConfig dataset;
  SuggestionParams suggestion;
  std::string out_dir = "out";
  int workers = 1;
};

// Paper-derived per-task defaults; the base for any loaded file.
ExperimentConfig config_defaults(const std::string& task);

// Defaults for the file's task, overridden by the file's fields.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);
std::string config_to_json(const ExperimentConfig& cfg);

void validate_config(const ExperimentConfig& cfg);

}  // namespace sqw
