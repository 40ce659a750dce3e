// Command-line front end: train / quantize / evaluate models, pack and
// inspect SQW files, and run experiment recipes from a JSON config.
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sqw/experiments.hpp"

namespace fs = std::filesystem;
using namespace sqw;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string task;
  int64_t seed = -1;
  std::string out;
  int bits = -1;
  int parallel_k = -1;
  int workers = -1;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_bits = true,
                bool with_parallel = false) {
  cmd->add_option("--config", o.config_path, "experiment config (JSON)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--task", o.task, "task when no config file is given: seg | cls | asr");
  cmd->add_option("--seed", o.seed, "run seed (replaces the config seed list)");
  cmd->add_option("--out", o.out, "output directory (replaces the config out_dir)");
  if (with_bits) cmd->add_option("--bits", o.bits, "bit width (replaces the config sweep)");
  if (with_parallel)
    cmd->add_option("--parallel", o.parallel_k, "ensemble size (replaces the config sweep)");
  cmd->add_option("--workers", o.workers, "concurrent sweep jobs");
}

ExperimentConfig resolve_config(const CommonOpts& o) {
  ExperimentConfig cfg;
  if (o.config_path.empty()) {
    cfg = config_defaults(o.task.empty() ? "cls" : o.task);
  } else {
    cfg = load_config(o.config_path);
    if (!o.task.empty() && o.task != cfg.task)
      throw std::runtime_error("--task conflicts with the config file's task");
  }
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (o.seed >= 0) cfg.seeds = {static_cast<uint64_t>(o.seed)};
  if (o.bits > 0) cfg.bit_widths = {o.bits};
  if (o.parallel_k > 0) cfg.parallel = {o.parallel_k};
  if (o.workers > 0) cfg.workers = o.workers;
  validate_config(cfg);
  return cfg;
}

void print_records(const std::vector<MetricRecord>& recs) {
  for (const auto& r : recs)
    std::printf("%-14s %-18s seed=%-5s %8.4f\n", r.axis.c_str(), r.metric.c_str(),
                r.seed.c_str(), r.value);
}

ModelGraph load_model_for(const ExperimentConfig& cfg, const std::string& path) {
  ModelGraph m = build_model<float>(task_input_shape(cfg), task_model_specs(cfg));
  load_into_model(m, load_packed(path));
  return m;
}

std::string model_out_path(const ExperimentConfig& cfg, const std::string& tag,
                           uint64_t seed) {
  fs::create_directories(cfg.out_dir + "/models");
  return cfg.out_dir + "/models/" + cfg.task + "_" + cfg.model_size + "_" + tag + "_s" +
         std::to_string(seed) + ".sqw";
}

void print_memory_report(const MemoryReport& r) {
  std::printf("quantizable weights: %" PRId64 " -> %" PRId64 " bytes (%.4fx)\n",
              r.float_bytes, r.packed_bytes, r.reduction_ratio);
  std::printf("whole model:         %" PRId64 " -> %" PRId64 " bytes (%.4fx)\n",
              r.whole_model_float_bytes, r.whole_model_bytes, r.whole_model_ratio);
}

int cmd_train(const CommonOpts& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const uint64_t seed = cfg.seeds.front();
  const TaskData data = make_task_data(cfg, seed);
  ModelGraph m = train_float_baseline(cfg, data, seed);
  print_records(records_from_probs(cfg, "float", std::to_string(seed),
                                   predict_probs(m, data.test), data.test));
  const std::string path = model_out_path(cfg, "float", seed);
  save_packed(path, pack_model(m, nullptr));
  std::printf("saved %s\n", path.c_str());
  return 0;
}

int cmd_inq(const CommonOpts& o, const std::string& model_path) {
  const ExperimentConfig cfg = resolve_config(o);
  const uint64_t seed = cfg.seeds.front();
  const int bits = cfg.bit_widths.front();
  const TaskData data = make_task_data(cfg, seed);
  ModelGraph m = model_path.empty() ? train_float_baseline(cfg, data, seed)
                                    : load_model_for(cfg, model_path);
  PartitionState state;
  const InqLog log = run_inq(m, cfg, data, bits, seed, &state);
  for (const auto& s : log.steps)
    std::printf("fraction %.4f (achieved %.6f)  train loss %.4f  val acc %.4f\n",
                s.target_fraction, s.achieved_fraction, s.train_loss, s.val_accuracy);
  print_records(records_from_probs(cfg, "b=" + std::to_string(bits), std::to_string(seed),
                                   predict_probs(m, data.test), data.test));
  const std::string path = model_out_path(cfg, "b" + std::to_string(bits), seed);
  const PackedModel pm = pack_model(m, &state);
  save_packed(path, pm);
  print_memory_report(memory_report(pm));
  std::printf("saved %s\n", path.c_str());
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& model_path) {
  const ExperimentConfig cfg = resolve_config(o);
  const uint64_t seed = cfg.seeds.front();
  const TaskData data = make_task_data(cfg, seed);
  const ModelGraph m = load_model_for(cfg, model_path);
  print_records(records_from_probs(cfg, "eval", std::to_string(seed),
                                   predict_probs(m, data.test), data.test));
  return 0;
}

int cmd_ensemble_eval(const CommonOpts& o, const std::vector<std::string>& model_paths) {
  const ExperimentConfig cfg = resolve_config(o);
  const uint64_t seed = cfg.seeds.front();
  const TaskData data = make_task_data(cfg, seed);
  Ensemble ens;
  for (const auto& p : model_paths) ens.members.push_back(load_model_for(cfg, p));
  print_records(records_from_probs(cfg, "k=" + std::to_string(ens.size()),
                                   std::to_string(seed), predict_probs(ens, data.test),
                                   data.test));
  return 0;
}

int cmd_suggest(const CommonOpts& o) {
  const ExperimentConfig cfg = resolve_config(o);
  if (cfg.task != "seg") throw std::runtime_error("suggest expects task seg");
  const uint64_t seed = cfg.seeds.front();
  const TaskData data = make_task_data(cfg, seed);
  const int64_t seed_size =
      std::min<int64_t>(cfg.suggestion.seed_size, data.train.size() - 1);
  std::vector<int64_t> head(static_cast<size_t>(seed_size));
  std::iota(head.begin(), head.end(), 0);
  std::vector<int64_t> tail(static_cast<size_t>(data.train.size() - seed_size));
  std::iota(tail.begin(), tail.end(), seed_size);
  const Dataset seed_set = subset(data.train, head);
  const Dataset pool = subset(data.train, tail);
  const SuggestionResult res = run_suggestion(cfg, seed, seed_set, pool);
  nlohmann::json j;
  j["seed"] = seed;
  j["seed_size"] = seed_size;
  j["selected_pool_indices"] = res.selected;
  j["pool_exhausted"] = res.pool_exhausted;
  fs::create_directories(cfg.out_dir);
  const std::string path = cfg.out_dir + "/suggested.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
  std::printf("selected %zu pool samples -> %s\n", res.selected.size(), path.c_str());
  return 0;
}

int cmd_pack(const CommonOpts& o, const std::string& model_path) {
  const ExperimentConfig cfg = resolve_config(o);
  const int bits = cfg.bit_widths.front();
  ModelGraph m = load_model_for(cfg, model_path);
  // One-shot quantization: single 100% step, no retraining epochs.
  InqSchedule once;
  once.fractions = {1.0};
  once.epochs_per_step = 0;
  Rng rng(cfg.seeds.front());
  PartitionState state;
  Dataset unused;
  inq_train(m, unused, nullptr, once, bits, train_config_of(cfg),
            partition_strategy_from_name(cfg.strategy), rng, cfg.max_level_override, &state);
  const PackedModel pm = pack_model(m, &state);
  fs::create_directories(cfg.out_dir);
  const std::string path =
      cfg.out_dir + "/" + fs::path(model_path).stem().string() + "_b" + std::to_string(bits) +
      ".sqw";
  save_packed(path, pm);
  print_memory_report(memory_report(pm));
  std::printf("saved %s\n", path.c_str());
  return 0;
}

int cmd_unpack(const CommonOpts& o, const std::string& model_path) {
  const ExperimentConfig cfg = resolve_config(o);
  const PackedModel pm = load_packed(model_path);
  PackedModel flat;
  for (const auto& t : pm.tensors) {
    PackedTensor ft;
    ft.name = t.name;
    ft.shape = t.shape;
    ft.dtype = PackedDtype::float32;
    ft.values = tensor_values(t);
    flat.tensors.push_back(std::move(ft));
  }
  fs::create_directories(cfg.out_dir);
  const std::string path =
      cfg.out_dir + "/" + fs::path(model_path).stem().string() + "_float.sqw";
  save_packed(path, flat);
  std::printf("saved %s (%zu tensors as float32)\n", path.c_str(), flat.tensors.size());
  return 0;
}

int cmd_bench(const CommonOpts& o, const std::string& model_path, int reps, int batch) {
  const ExperimentConfig cfg = resolve_config(o);
  const uint64_t seed = cfg.seeds.front();
  const TaskData data = make_task_data(cfg, seed);
  const ModelGraph arch = build_model<float>(task_input_shape(cfg), task_model_specs(cfg));
  const PackedModel pm = load_packed(model_path);
  std::vector<int64_t> idx(static_cast<size_t>(std::min<int64_t>(batch, data.test.size())));
  std::iota(idx.begin(), idx.end(), 0);
  Tensor x;
  std::vector<int32_t> targets;
  make_batch(data.test, idx, x, targets);
  const BenchReport r = bench(arch, pm, x, reps);
  std::printf("repetitions:    %d\n", r.repetitions);
  std::printf("multiply:       %.3f ms\n", r.multiply_ms);
  std::printf("shift-add:      %.3f ms\n", r.shiftadd_ms);
  std::printf("speedup:        %.3fx\n", r.speedup);
  std::printf("zero-skip rate: %.4f\n", r.zero_skip_rate);
  return 0;
}

int cmd_report(const CommonOpts& o) {
  const ExperimentConfig cfg = resolve_config(o);
  const auto records = run_experiment(cfg);
  for (const auto& r : records)
    if (r.seed == "mean" || r.seed == "best")
      std::printf("%-14s %-18s %-4s %8.4f\n", r.axis.c_str(), r.metric.c_str(),
                  r.seed.c_str(), r.value);
  std::printf("wrote %s/results.csv and %s/log.jsonl\n", cfg.out_dir.c_str(),
              cfg.out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"power-of-two weight quantization toolkit"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string model_path;
  std::vector<std::string> model_paths;
  int reps = 20;
  int batch = 16;

  auto* train = app.add_subcommand("train", "train a float-precision model");
  add_common(train, o, false);

  auto* inq = app.add_subcommand("inq", "incrementally quantize a model");
  add_common(inq, o);
  inq->add_option("--model", model_path, "float SQW model to start from (else trains one)")
      ->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a model file on the task test set");
  add_common(eval, o, false);
  eval->add_option("model", model_path, "SQW model file")
      ->required()
      ->check(CLI::ExistingFile);

  auto* ens = app.add_subcommand("ensemble-eval", "evaluate a probability-mean ensemble");
  add_common(ens, o, false);
  ens->add_option("models", model_paths, "SQW model files")
      ->required()
      ->check(CLI::ExistingFile);

  auto* suggest = app.add_subcommand("suggest", "pick training samples by uncertainty");
  add_common(suggest, o);

  auto* pack = app.add_subcommand("pack", "one-shot quantize a float model file");
  add_common(pack, o);
  pack->add_option("model", model_path, "float SQW model file")
      ->required()
      ->check(CLI::ExistingFile);

  auto* unpack = app.add_subcommand("unpack", "expand a packed model to float32 tensors");
  add_common(unpack, o, false);
  unpack->add_option("model", model_path, "packed SQW model file")
      ->required()
      ->check(CLI::ExistingFile);

  auto* bench_cmd = app.add_subcommand("bench", "time multiply vs shift-add inference");
  add_common(bench_cmd, o, false);
  bench_cmd->add_option("model", model_path, "packed SQW model file")
      ->required()
      ->check(CLI::ExistingFile);
  bench_cmd->add_option("--reps", reps, "timed repetitions");
  bench_cmd->add_option("--batch", batch, "inference batch size");

  auto* report = app.add_subcommand("report", "run the configured experiment recipe");
  add_common(report, o, true, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(o);
    if (inq->parsed()) return cmd_inq(o, model_path);
    if (eval->parsed()) return cmd_eval(o, model_path);
    if (ens->parsed()) return cmd_ensemble_eval(o, model_paths);
    if (suggest->parsed()) return cmd_suggest(o);
    if (pack->parsed()) return cmd_pack(o, model_path);
    if (unpack->parsed()) return cmd_unpack(o, model_path);
    if (bench_cmd->parsed()) return cmd_bench(o, model_path, reps, batch);
    if (report->parsed()) return cmd_report(o);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
