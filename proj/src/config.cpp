#include "sqw/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace sqw {

using nlohmann::json;

ExperimentConfig config_defaults(const std::string& task) {
  ExperimentConfig c;
  c.task = task;
  c.schedule.fractions = {0.5, 0.75, 0.875, 1.0};
  c.schedule.epochs_per_step = 2;
  if (task == "cls") {
    c.optimizer = {1e-4, 0.9, 0.0, 1e-6, -1, 0.0};
    c.train = {6, 32};
    c.max_level_override = 4.0;
    c.dataset.train_count = 8000;
    c.dataset.val_count = 500;
    c.dataset.test_count = 1000;
  } else if (task == "seg") {
    c.optimizer = {5e-4, 0.9, 0.0, 0.0, 480, 5e-5};
    c.train = {40, 8};
    c.dataset.train_count = 120;
    c.dataset.val_count = 40;
    c.dataset.test_count = 80;
  } else if (task == "asr") {
    c.optimizer = {1e-4, 0.9, 0.0, 1e-6, -1, 0.0};
    c.train = {80, 16};
    c.dataset.train_count = 400;
    c.dataset.val_count = 100;
    c.dataset.test_count = 100;
  } else {
    throw std::invalid_argument("unknown task: " + task);
  }
  return c;
}

namespace {

template <typename T>
void get_to_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void get_opt_double(const json& j, const char* key, std::optional<double>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null())
    out.reset();
  else
    out = j.at(key).get<double>();
}

void get_opt_int(const json& j, const char* key, std::optional<int>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null())
    out.reset();
  else
    out = j.at(key).get<int>();
}

void parse_into(const json& j, ExperimentConfig& c) {
  get_to_if(j, "model_size", c.model_size);
  get_to_if(j, "recipe", c.recipe);
  get_to_if(j, "bit_widths", c.bit_widths);
  get_to_if(j, "parallel", c.parallel);
  get_to_if(j, "seeds", c.seeds);
  get_to_if(j, "strategy", c.strategy);
  get_opt_double(j, "max_level_override", c.max_level_override);
  get_to_if(j, "out_dir", c.out_dir);
  get_to_if(j, "workers", c.workers);
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    get_to_if(s, "fractions", c.schedule.fractions);
    get_to_if(s, "epochs_per_step", c.schedule.epochs_per_step);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    get_to_if(o, "lr", c.optimizer.lr);
    get_to_if(o, "momentum", c.optimizer.momentum);
    get_to_if(o, "weight_decay", c.optimizer.weight_decay);
    get_to_if(o, "lr_decay", c.optimizer.lr_decay);
    get_to_if(o, "lr_drop_step", c.optimizer.lr_drop_step);
    get_to_if(o, "lr_drop_to", c.optimizer.lr_drop_to);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    get_to_if(t, "epochs", c.train.epochs);
    get_to_if(t, "batch_size", c.train.batch_size);
  }
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    get_to_if(d, "train_count", c.dataset.train_count);
    get_to_if(d, "val_count", c.dataset.val_count);
    get_to_if(d, "test_count", c.dataset.test_count);
    get_to_if(d, "idx_images", c.dataset.idx_images);
    get_to_if(d, "idx_labels", c.dataset.idx_labels);
    get_to_if(d, "seg_test_hard_fraction", c.dataset.seg_test_hard_fraction);
    if (d.contains("seg")) {
      const json& s = d.at("seg");
      get_to_if(s, "image_size", c.dataset.seg.image_size);
      get_to_if(s, "hard_fraction", c.dataset.seg.hard_fraction);
      get_to_if(s, "noise", c.dataset.seg.noise);
      get_to_if(s, "easy_contrast", c.dataset.seg.easy_contrast);
      get_to_if(s, "hard_contrast", c.dataset.seg.hard_contrast);
    }
    if (d.contains("cls")) {
      const json& s = d.at("cls");
      get_to_if(s, "image_size", c.dataset.cls.image_size);
      get_to_if(s, "num_classes", c.dataset.cls.num_classes);
      get_to_if(s, "noise", c.dataset.cls.noise);
      get_to_if(s, "max_shift", c.dataset.cls.max_shift);
    }
    if (d.contains("asr")) {
      const json& s = d.at("asr");
      get_to_if(s, "num_classes", c.dataset.asr.num_classes);
      get_to_if(s, "seq_len", c.dataset.asr.seq_len);
      get_to_if(s, "feat_dim", c.dataset.asr.feat_dim);
      get_to_if(s, "class_sep", c.dataset.asr.class_sep);
      get_to_if(s, "noise", c.dataset.asr.noise);
      get_to_if(s, "min_run", c.dataset.asr.min_run);
      get_to_if(s, "max_run", c.dataset.asr.max_run);
    }
  }
  if (j.contains("suggestion")) {
    const json& s = j.at("suggestion");
    get_to_if(s, "uncertainty_take", c.suggestion.uncertainty_take);
    get_to_if(s, "representative_take", c.suggestion.representative_take);
    get_to_if(s, "iterations", c.suggestion.iterations);
    get_opt_int(s, "quantize_suggestors", c.suggestion.quantize_suggestors);
    get_to_if(s, "seed_size", c.suggestion.seed_size);
    get_to_if(s, "ensemble_size", c.suggestion.ensemble_size);
    get_to_if(s, "member_epochs", c.suggestion.member_epochs);
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("config parse error: ") + e.what());
  }
  if (j.contains("config_version") && j.at("config_version").get<int>() != 1)
    throw std::runtime_error("unsupported config_version");
  const std::string task = j.value("task", "cls");
  ExperimentConfig c = config_defaults(task);
  parse_into(j, c);
  validate_config(c);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["config_version"] = c.config_version;
  j["task"] = c.task;
  j["model_size"] = c.model_size;
  j["recipe"] = c.recipe;
  j["bit_widths"] = c.bit_widths;
  j["parallel"] = c.parallel;
  j["seeds"] = c.seeds;
  j["strategy"] = c.strategy;
  if (c.max_level_override)
    j["max_level_override"] = *c.max_level_override;
  else
    j["max_level_override"] = nullptr;
  j["schedule"] = {{"fractions", c.schedule.fractions},
                   {"epochs_per_step", c.schedule.epochs_per_step}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"momentum", c.optimizer.momentum},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"lr_decay", c.optimizer.lr_decay},
                    {"lr_drop_step", c.optimizer.lr_drop_step},
                    {"lr_drop_to", c.optimizer.lr_drop_to}};
  j["train"] = {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}};
  json d;
  d["train_count"] = c.dataset.train_count;
  d["val_count"] = c.dataset.val_count;
  d["test_count"] = c.dataset.test_count;
  if (!c.dataset.idx_images.empty()) d["idx_images"] = c.dataset.idx_images;
  if (!c.dataset.idx_labels.empty()) d["idx_labels"] = c.dataset.idx_labels;
  d["seg_test_hard_fraction"] = c.dataset.seg_test_hard_fraction;
  d["seg"] = {{"image_size", c.dataset.seg.image_size},
              {"hard_fraction", c.dataset.seg.hard_fraction},
              {"noise", c.dataset.seg.noise},
              {"easy_contrast", c.dataset.seg.easy_contrast},
              {"hard_contrast", c.dataset.seg.hard_contrast}};
  d["cls"] = {{"image_size", c.dataset.cls.image_size},
              {"num_classes", c.dataset.cls.num_classes},
              {"noise", c.dataset.cls.noise},
              {"max_shift", c.dataset.cls.max_shift}};
  d["asr"] = {{"num_classes", c.dataset.asr.num_classes},
              {"seq_len", c.dataset.asr.seq_len},
              {"feat_dim", c.dataset.asr.feat_dim},
              {"class_sep", c.dataset.asr.class_sep},
              {"noise", c.dataset.asr.noise},
              {"min_run", c.dataset.asr.min_run},
              {"max_run", c.dataset.asr.max_run}};
  j["dataset"] = d;
  json s;
  s["uncertainty_take"] = c.suggestion.uncertainty_take;
  s["representative_take"] = c.suggestion.representative_take;
  s["iterations"] = c.suggestion.iterations;
  if (c.suggestion.quantize_suggestors)
    s["quantize_suggestors"] = *c.suggestion.quantize_suggestors;
  else
    s["quantize_suggestors"] = nullptr;
  s["seed_size"] = c.suggestion.seed_size;
  s["ensemble_size"] = c.suggestion.ensemble_size;
  s["member_epochs"] = c.suggestion.member_epochs;
  j["suggestion"] = s;
  j["out_dir"] = c.out_dir;
  j["workers"] = c.workers;
  return j.dump(2);
}

void validate_config(const ExperimentConfig& c) {
  if (c.task != "seg" && c.task != "cls" && c.task != "asr")
    throw std::runtime_error("config: unknown task " + c.task);
  if (c.model_size != "full" && c.model_size != "small")
    throw std::runtime_error("config: unknown model_size " + c.model_size);
  if (c.seeds.empty()) throw std::runtime_error("config: seeds must be nonempty");
  for (int b : c.bit_widths)
    if (b < 2 || b > 16) throw std::runtime_error("config: bit width out of range");
  for (int k : c.parallel)
    if (k < 1) throw std::runtime_error("config: parallel count must be >= 1");
  check_schedule(c.schedule);
  if (c.optimizer.lr <= 0) throw std::runtime_error("config: lr must be positive");
  if (c.train.epochs < 0 || c.train.batch_size < 1)
    throw std::runtime_error("config: bad train params");
  if (c.dataset.train_count < 1 || c.dataset.test_count < 1)
    throw std::runtime_error("config: dataset split counts must be positive");
  if (c.suggestion.representative_take > c.suggestion.uncertainty_take)
    throw std::runtime_error("config: representative_take must not exceed uncertainty_take");
  if (c.workers < 1) throw std::runtime_error("config: workers must be >= 1");
  partition_strategy_from_name(c.strategy);
}

}  // namespace sqw
