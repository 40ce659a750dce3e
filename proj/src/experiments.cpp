#include "sqw/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "json.hpp"

#include "sqw/metrics.hpp"

namespace sqw {

uint64_t mix_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

// Fixed stream tags so reordering work cannot change any derived seed.
enum : uint64_t {
  kStreamData = 1,
  kStreamModel = 2,
  kStreamShuffle = 3,
  kStreamSegTest = 5,
  kStreamInq = 20,          // + bit width
  kStreamMember = 100,      // + member index
  kStreamSuggest = 200,     // + 1000 * refresh + member
  kStreamFinalModel = 300,
  kStreamRandomPick = 400,
};

std::vector<int64_t> iota_idx(int64_t from, int64_t count) {
  std::vector<int64_t> v(static_cast<size_t>(count));
  std::iota(v.begin(), v.end(), from);
  return v;
}

}  // namespace

TaskData make_task_data(const ExperimentConfig& cfg, uint64_t seed) {
  const auto& d = cfg.dataset;
  TaskData td;
  if (cfg.task == "seg") {
    SegParams p = d.seg;
    p.count = d.train_count + d.val_count;
    const Dataset pool = generate_seg(p, mix_seed(seed, kStreamData));
    td.train = subset(pool, iota_idx(0, d.train_count));
    td.val = subset(pool, iota_idx(d.train_count, d.val_count));
    SegParams tp = d.seg;
    tp.count = d.test_count;
    if (d.seg_test_hard_fraction >= 0.0) tp.hard_fraction = d.seg_test_hard_fraction;
    td.test = generate_seg(tp, mix_seed(seed, kStreamSegTest));
    return td;
  }
  Dataset all;
  if (cfg.task == "cls") {
    if (!d.idx_images.empty()) {
      all = load_idx_dataset(d.idx_images, d.idx_labels);
      if (all.inputs.dim(2) != d.cls.image_size || all.inputs.dim(3) != d.cls.image_size)
        throw std::runtime_error("IDX image size differs from dataset.cls.image_size");
      if (all.num_classes > d.cls.num_classes)
        throw std::runtime_error("IDX labels exceed dataset.cls.num_classes");
      all.num_classes = d.cls.num_classes;
      if (all.size() < d.train_count + d.val_count + d.test_count)
        throw std::runtime_error("IDX dataset smaller than the configured splits");
    } else {
      ClsParams p = d.cls;
      p.count = d.train_count + d.val_count + d.test_count;
      all = generate_cls(p, mix_seed(seed, kStreamData));
    }
  } else if (cfg.task == "asr") {
    AsrParams p = d.asr;
    p.count = d.train_count + d.val_count + d.test_count;
    all = generate_asr(p, mix_seed(seed, kStreamData));
  } else {
    throw std::invalid_argument("unknown task: " + cfg.task);
  }
  td.train = subset(all, iota_idx(0, d.train_count));
  td.val = subset(all, iota_idx(d.train_count, d.val_count));
  td.test = subset(all, iota_idx(d.train_count + d.val_count, d.test_count));
  return td;
}

std::vector<int> task_input_shape(const ExperimentConfig& cfg) {
  if (cfg.task == "seg") return {1, cfg.dataset.seg.image_size, cfg.dataset.seg.image_size};
  if (cfg.task == "cls") return {1, cfg.dataset.cls.image_size, cfg.dataset.cls.image_size};
  return {cfg.dataset.asr.seq_len, cfg.dataset.asr.feat_dim};
}

std::vector<LayerSpec> task_model_specs(const ExperimentConfig& cfg) {
  const bool small = cfg.model_size == "small";
  std::vector<LayerSpec> s;
  if (cfg.task == "cls") {
    const int ch = small ? 4 : 8;
    const int hidden = small ? 64 : 256;
    s = {make_pad2d(1),      make_conv2d(ch, 3), make_relu(),
         make_maxpool2x2(),  make_dense(hidden), make_relu(),
         make_dense(cfg.dataset.cls.num_classes), make_softmax_output()};
  } else if (cfg.task == "seg") {
    const int c1 = small ? 4 : 8, c2 = small ? 8 : 16;
    s = {make_pad2d(1), make_conv2d(c1, 3), make_relu(), make_maxpool2x2(),
         make_pad2d(1), make_conv2d(c2, 3), make_relu(), make_maxpool2x2(),
         make_pad2d(1), make_conv2d(c2, 3), make_relu(), make_upsample2x2(),
         make_pad2d(1), make_conv2d(c1, 3), make_relu(), make_upsample2x2(),
         make_pad2d(1), make_conv2d(2, 3),  make_softmax_output()};
  } else if (cfg.task == "asr") {
    const int width = 32, hidden = 16;
    s.push_back(make_dense(width));
    s.push_back(make_relu());
    if (!small) {  // the small variant drops the second and third front layers
      s.push_back(make_dense(width));
      s.push_back(make_relu());
      s.push_back(make_dense(width));
      s.push_back(make_relu());
    }
    s.push_back(make_birnn(hidden));
    s.push_back(make_dense(cfg.dataset.asr.num_classes));
    s.push_back(make_softmax_output());
  } else {
    throw std::invalid_argument("unknown task: " + cfg.task);
  }
  return s;
}

ModelGraph make_task_model(const ExperimentConfig& cfg, uint64_t seed) {
  ModelGraph m = build_model<float>(task_input_shape(cfg), task_model_specs(cfg));
  Rng rng(mix_seed(seed, kStreamModel));
  init_model(m, rng);
  return m;
}

TrainConfig train_config_of(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.batch_size = cfg.train.batch_size;
  tc.lr = cfg.optimizer.lr;
  tc.momentum = cfg.optimizer.momentum;
  tc.weight_decay = cfg.optimizer.weight_decay;
  tc.lr_decay = cfg.optimizer.lr_decay;
  tc.lr_drop_step = cfg.optimizer.lr_drop_step;
  tc.lr_drop_to = cfg.optimizer.lr_drop_to;
  return tc;
}

ModelGraph train_float_baseline(const ExperimentConfig& cfg, const TaskData& data,
                                uint64_t seed) {
  ModelGraph m = make_task_model(cfg, seed);
  OptimizerState opt = make_optimizer(m, cfg.optimizer.lr, cfg.optimizer.momentum,
                                      cfg.optimizer.weight_decay, cfg.optimizer.lr_decay);
  Rng shuffle(mix_seed(seed, kStreamShuffle));
  train_model(m, data.train, train_config_of(cfg), opt, shuffle);
  return m;
}

InqLog run_inq(ModelGraph& model, const ExperimentConfig& cfg, const TaskData& data, int bits,
               uint64_t seed, PartitionState* out_state) {
  Rng rng(mix_seed(seed, kStreamInq + static_cast<uint64_t>(bits)));
  const Dataset* val = data.val.size() > 0 ? &data.val : nullptr;
  return inq_train(model, data.train, val, cfg.schedule, bits, train_config_of(cfg),
                   partition_strategy_from_name(cfg.strategy), rng, cfg.max_level_override,
                   out_state);
}

Tensor predict_probs(const ModelGraph& model, const Dataset& ds, int batch_size) {
  Workspace ws;
  Tensor x, all;
  std::vector<int32_t> targets;
  const int64_t n = ds.size();
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(n, start + batch_size);
    make_batch(ds, iota_idx(start, end - start), x, targets);
    const Tensor& probs = forward(model, x, ws);
    if (all.rank() == 0) {
      std::vector<int> shape = probs.shape;
      shape[0] = static_cast<int>(n);
      all = Tensor(shape);
    }
    const int64_t per = probs.numel() / probs.dim(0);
    std::copy(probs.data.begin(), probs.data.end(), all.data.begin() + start * per);
  }
  return all;
}

Tensor predict_probs(const Ensemble& ens, const Dataset& ds, int batch_size) {
  Tensor x, all;
  std::vector<int32_t> targets;
  const int64_t n = ds.size();
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t end = std::min(n, start + batch_size);
    make_batch(ds, iota_idx(start, end - start), x, targets);
    const Tensor probs = ensemble_predict(ens, x);
    if (all.rank() == 0) {
      std::vector<int> shape = probs.shape;
      shape[0] = static_cast<int>(n);
      all = Tensor(shape);
    }
    const int64_t per = probs.numel() / probs.dim(0);
    std::copy(probs.data.begin(), probs.data.end(), all.data.begin() + start * per);
  }
  return all;
}

SuggestionResult run_suggestion(const ExperimentConfig& cfg, uint64_t seed,
                                const Dataset& seed_set, const Dataset& pool) {
  int refresh = 0;
  const EnsembleTrainer trainer = [&](const Dataset& labeled) {
    Ensemble ens;
    TrainConfig tc = train_config_of(cfg);
    tc.epochs = cfg.suggestion.member_epochs;
    for (int k = 0; k < cfg.suggestion.ensemble_size; ++k) {
      const uint64_t ms = mix_seed(seed, kStreamSuggest + 1000 * static_cast<uint64_t>(refresh) +
                                             static_cast<uint64_t>(k));
      ModelGraph m = make_task_model(cfg, ms);
      OptimizerState opt = make_optimizer(m, tc.lr, tc.momentum, tc.weight_decay, tc.lr_decay);
      Rng shuffle(mix_seed(ms, kStreamShuffle));
      train_model(m, labeled, tc, opt, shuffle);
      if (cfg.suggestion.quantize_suggestors) {
        Rng qrng(mix_seed(ms, kStreamInq));
        inq_train(m, labeled, nullptr, cfg.schedule, *cfg.suggestion.quantize_suggestors, tc,
                  partition_strategy_from_name(cfg.strategy), qrng, cfg.max_level_override);
      }
      ens.members.push_back(std::move(m));
    }
    ++refresh;
    return ens;
  };
  SuggestionConfig scfg;
  scfg.uncertainty_take = cfg.suggestion.uncertainty_take;
  scfg.representative_take = cfg.suggestion.representative_take;
  scfg.iterations = cfg.suggestion.iterations;
  scfg.quantize_suggestors = cfg.suggestion.quantize_suggestors;
  return suggest_training_set(seed_set, pool, scfg, trainer);
}

std::vector<MetricRecord> records_from_probs(const ExperimentConfig& cfg,
                                             const std::string& axis, const std::string& seed,
                                             const Tensor& probs, const Dataset& test) {
  std::vector<MetricRecord> recs;
  auto add = [&](const std::string& metric, double value) {
    recs.push_back({cfg.recipe, cfg.task, cfg.model_size, axis, metric, value, seed});
  };
  if (cfg.task == "seg") {
    const int h = probs.dim(2), w = probs.dim(3);
    const int64_t px = static_cast<int64_t>(h) * w;
    double dice_sum = 0.0, f1_sum = 0.0;
    const std::vector<int32_t> preds = site_predictions(probs);
    for (int64_t i = 0; i < test.size(); ++i) {
      std::vector<uint8_t> pm(static_cast<size_t>(px)), tm(static_cast<size_t>(px));
      for (int64_t k = 0; k < px; ++k) {
        pm[static_cast<size_t>(k)] = preds[i * px + k] == 1;
        tm[static_cast<size_t>(k)] = test.labels[i * px + k] == 1;
      }
      dice_sum += metric_dice(pm, tm);
      f1_sum += metric_object_f1(pm, tm, h, w);
    }
    const double dice = 100.0 * dice_sum / static_cast<double>(test.size());
    const double f1 = 100.0 * f1_sum / static_cast<double>(test.size());
    add("dice", dice);
    add("object_f1", f1);
    add("seg_avg", seg_avg(dice, f1));
  } else {
    const std::vector<int32_t> preds = site_predictions(probs);
    const double err = cfg.task == "cls" ? metric_top1_error(preds, test.labels)
                                         : metric_frame_error_rate(preds, test.labels);
    if (cfg.task == "cls") {
      add("top1_accuracy", 100.0 - err);
      add("top1_error", err);
    } else {
      add("frame_accuracy", 100.0 - err);
      add("frame_error_rate", err);
    }
  }
  return recs;
}

bool metric_higher_is_better(const std::string& metric) {
  return metric.find("error") == std::string::npos;
}

void append_aggregates(std::vector<MetricRecord>& records) {
  std::vector<std::pair<std::string, std::string>> keys;  // (axis, metric) in order
  for (const auto& r : records) {
    if (r.seed == "mean" || r.seed == "best") continue;
    const auto key = std::make_pair(r.axis, r.metric);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<MetricRecord> aggs;
  for (const auto& [axis, metric] : keys) {
    std::vector<double> vals;
    const MetricRecord* sample = nullptr;
    for (const auto& r : records) {
      if (r.axis == axis && r.metric == metric && r.seed != "mean" && r.seed != "best") {
        vals.push_back(r.value);
        sample = &r;
      }
    }
    if (vals.empty()) continue;
    const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                        static_cast<double>(vals.size());
    const double best = metric_higher_is_better(metric)
                            ? *std::max_element(vals.begin(), vals.end())
                            : *std::min_element(vals.begin(), vals.end());
    MetricRecord m = *sample;
    m.value = mean;
    m.seed = "mean";
    aggs.push_back(m);
    m.value = best;
    m.seed = "best";
    aggs.push_back(m);
  }
  records.insert(records.end(), aggs.begin(), aggs.end());
}

static std::string fmt_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string records_to_csv(const std::vector<MetricRecord>& records) {
  std::string out = "recipe,task,model_size,axis,metric,seed,value\n";
  for (const auto& r : records) {
    out += r.recipe + "," + r.task + "," + r.model_size + "," + r.axis + "," + r.metric + "," +
           r.seed + "," + fmt_value(r.value) + "\n";
  }
  return out;
}

namespace {

void parallel_for(int workers, int njobs, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, njobs));
  if (workers == 1) {
    for (int i = 0; i < njobs; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= njobs) break;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string sanitize_axis(const std::string& axis) {
  std::string s;
  for (char c : axis)
    if (std::isalnum(static_cast<unsigned char>(c))) s += c;
  return s;
}

std::string model_file(const ExperimentConfig& cfg, const std::string& axis, uint64_t seed) {
  return cfg.out_dir + "/models/" + cfg.task + "_" + cfg.model_size + "_" +
         sanitize_axis(axis) + "_s" + std::to_string(seed) + ".sqw";
}

void save_model_file(const ExperimentConfig& cfg, const std::string& axis, uint64_t seed,
                     const ModelGraph& model, const PartitionState* state) {
  save_packed(model_file(cfg, axis, seed), pack_model(model, state));
}

using RecordSlots = std::vector<std::vector<MetricRecord>>;

void merge_slots(const RecordSlots& slots, std::vector<MetricRecord>& out) {
  for (const auto& s : slots) out.insert(out.end(), s.begin(), s.end());
}

// Runs body; completed slot outputs are merged even when body throws, so an
// aborted sweep still flushes the rows it finished.
template <typename Merge, typename Body>
void merge_guarded(Merge merge, Body body) {
  try {
    body();
  } catch (...) {
    merge();
    throw;
  }
  merge();
}

void recipe_bitwidth_sweep(const ExperimentConfig& cfg, std::vector<MetricRecord>& records) {
  const size_t ns = cfg.seeds.size();
  const size_t nb = cfg.bit_widths.size();
  std::vector<TaskData> data(ns);
  std::vector<ModelGraph> baselines(ns);
  RecordSlots base_out(ns), q_out(ns * nb);
  auto merge = [&] {
    merge_slots(base_out, records);
    RecordSlots ordered;
    for (size_t bi = 0; bi < nb; ++bi)
      for (size_t si = 0; si < ns; ++si) ordered.push_back(q_out[si * nb + bi]);
    merge_slots(ordered, records);
  };
  merge_guarded(merge, [&] {
    parallel_for(cfg.workers, static_cast<int>(ns), [&](int i) {
      const size_t si = static_cast<size_t>(i);
      const uint64_t seed = cfg.seeds[si];
      data[si] = make_task_data(cfg, seed);
      baselines[si] = train_float_baseline(cfg, data[si], seed);
      base_out[si] = records_from_probs(cfg, "float", std::to_string(seed),
                                        predict_probs(baselines[si], data[si].test),
                                        data[si].test);
      save_model_file(cfg, "float", seed, baselines[si], nullptr);
    });
    parallel_for(cfg.workers, static_cast<int>(ns * nb), [&](int j) {
      const size_t si = static_cast<size_t>(j) / nb, bi = static_cast<size_t>(j) % nb;
      const uint64_t seed = cfg.seeds[si];
      const int bits = cfg.bit_widths[bi];
      ModelGraph m = baselines[si];
      PartitionState state;
      run_inq(m, cfg, data[si], bits, seed, &state);
      const std::string axis = "b=" + std::to_string(bits);
      q_out[static_cast<size_t>(j)] = records_from_probs(
          cfg, axis, std::to_string(seed), predict_probs(m, data[si].test), data[si].test);
      save_model_file(cfg, axis, seed, m, &state);
    });
  });
}

void recipe_parallel_sweep(const ExperimentConfig& cfg, std::vector<MetricRecord>& records) {
  const size_t ns = cfg.seeds.size();
  const int kmax = *std::max_element(cfg.parallel.begin(), cfg.parallel.end());
  std::vector<TaskData> data(ns);
  std::vector<std::vector<ModelGraph>> members(
      ns, std::vector<ModelGraph>(static_cast<size_t>(kmax)));
  parallel_for(cfg.workers, static_cast<int>(ns), [&](int i) {
    data[static_cast<size_t>(i)] = make_task_data(cfg, cfg.seeds[static_cast<size_t>(i)]);
  });
  parallel_for(cfg.workers, static_cast<int>(ns * static_cast<size_t>(kmax)), [&](int j) {
    const size_t si = static_cast<size_t>(j) / static_cast<size_t>(kmax);
    const int k = j % kmax;
    const uint64_t seed = cfg.seeds[si];
    const uint64_t member_seed = mix_seed(seed, kStreamMember + static_cast<uint64_t>(k));
    members[si][static_cast<size_t>(k)] = train_float_baseline(cfg, data[si], member_seed);
    save_model_file(cfg, "member" + std::to_string(k), seed, members[si][static_cast<size_t>(k)],
                    nullptr);
  });
  // Ensemble evaluation reuses the trained members; rows append in sweep order
  // so a failure mid-loop leaves the finished axes in place.
  for (int k : cfg.parallel) {
    for (size_t si = 0; si < ns; ++si) {
      Ensemble ens;
      ens.members.assign(members[si].begin(), members[si].begin() + k);
      const Tensor probs = predict_probs(ens, data[si].test);
      const auto recs = records_from_probs(cfg, "k=" + std::to_string(k),
                                           std::to_string(cfg.seeds[si]), probs, data[si].test);
      records.insert(records.end(), recs.begin(), recs.end());
    }
  }
}

void recipe_bitwidth_parallel(const ExperimentConfig& cfg, std::vector<MetricRecord>& records) {
  const size_t ns = cfg.seeds.size();
  const size_t nb = cfg.bit_widths.size();
  const int kmax = *std::max_element(cfg.parallel.begin(), cfg.parallel.end());
  std::vector<TaskData> data(ns);
  std::vector<std::vector<ModelGraph>> members(ns, std::vector<ModelGraph>(static_cast<size_t>(kmax)));
  parallel_for(cfg.workers, static_cast<int>(ns), [&](int i) {
    data[static_cast<size_t>(i)] = make_task_data(cfg, cfg.seeds[static_cast<size_t>(i)]);
  });
  parallel_for(cfg.workers, static_cast<int>(ns * static_cast<size_t>(kmax)), [&](int j) {
    const size_t si = static_cast<size_t>(j) / static_cast<size_t>(kmax);
    const int k = j % kmax;
    const uint64_t member_seed =
        mix_seed(cfg.seeds[si], kStreamMember + static_cast<uint64_t>(k));
    members[si][static_cast<size_t>(k)] = train_float_baseline(cfg, data[si], member_seed);
  });
  std::vector<std::vector<std::vector<ModelGraph>>> quantized(
      ns, std::vector<std::vector<ModelGraph>>(nb, std::vector<ModelGraph>(static_cast<size_t>(kmax))));
  parallel_for(cfg.workers, static_cast<int>(ns * nb * static_cast<size_t>(kmax)), [&](int j) {
    const size_t si = static_cast<size_t>(j) / (nb * static_cast<size_t>(kmax));
    const size_t rem = static_cast<size_t>(j) % (nb * static_cast<size_t>(kmax));
    const size_t bi = rem / static_cast<size_t>(kmax);
    const int k = static_cast<int>(rem % static_cast<size_t>(kmax));
    const uint64_t member_seed =
        mix_seed(cfg.seeds[si], kStreamMember + static_cast<uint64_t>(k));
    ModelGraph m = members[si][static_cast<size_t>(k)];
    PartitionState state;
    run_inq(m, cfg, data[si], cfg.bit_widths[bi], member_seed, &state);
    if (k == 0)
      save_model_file(cfg, "b" + std::to_string(cfg.bit_widths[bi]) + "member0", cfg.seeds[si],
                      m, &state);
    quantized[si][bi][static_cast<size_t>(k)] = std::move(m);
  });
  for (size_t bi = 0; bi < nb; ++bi) {
    for (int k : cfg.parallel) {
      for (size_t si = 0; si < ns; ++si) {
        Ensemble ens;
        ens.members.assign(quantized[si][bi].begin(), quantized[si][bi].begin() + k);
        const Tensor probs = predict_probs(ens, data[si].test);
        const std::string axis =
            "b=" + std::to_string(cfg.bit_widths[bi]) + ",k=" + std::to_string(k);
        const auto recs = records_from_probs(cfg, axis, std::to_string(cfg.seeds[si]), probs,
                                             data[si].test);
        records.insert(records.end(), recs.begin(), recs.end());
      }
    }
  }
}

void recipe_small_model(const ExperimentConfig& cfg, std::vector<MetricRecord>& records) {
  const size_t ns = cfg.seeds.size();
  const std::vector<int> bits = {4, 8};
  const std::vector<std::string> sizes = {"full", "small"};
  {
    ExperimentConfig full = cfg, small = cfg;
    full.model_size = "full";
    small.model_size = "small";
    const auto mf = build_model<float>(task_input_shape(full), task_model_specs(full));
    const auto msm = build_model<float>(task_input_shape(small), task_model_specs(small));
    if (msm.param_count() >= mf.param_count())
      throw std::logic_error("small model must have strictly fewer parameters");
  }
  std::vector<TaskData> data(ns);
  RecordSlots cells(ns * sizes.size());
  auto merge = [&] {
    RecordSlots ordered;
    for (size_t zi = 0; zi < sizes.size(); ++zi)
      for (size_t si = 0; si < ns; ++si) ordered.push_back(cells[si * sizes.size() + zi]);
    merge_slots(ordered, records);
  };
  merge_guarded(merge, [&] {
    parallel_for(cfg.workers, static_cast<int>(ns), [&](int i) {
      data[static_cast<size_t>(i)] = make_task_data(cfg, cfg.seeds[static_cast<size_t>(i)]);
    });
    parallel_for(cfg.workers, static_cast<int>(cells.size()), [&](int j) {
      const size_t si = static_cast<size_t>(j) / sizes.size();
      const size_t zi = static_cast<size_t>(j) % sizes.size();
      ExperimentConfig c = cfg;
      c.model_size = sizes[zi];
      const uint64_t seed = cfg.seeds[si];
      ModelGraph base = train_float_baseline(c, data[si], seed);
      auto& out = cells[static_cast<size_t>(j)];
      const std::string size_tag = sizes[zi];
      auto base_recs = records_from_probs(c, size_tag + "-float", std::to_string(seed),
                                          predict_probs(base, data[si].test), data[si].test);
      out.insert(out.end(), base_recs.begin(), base_recs.end());
      save_model_file(c, size_tag + "-float", seed, base, nullptr);
      for (int b : bits) {
        ModelGraph m = base;
        PartitionState state;
        run_inq(m, c, data[si], b, seed, &state);
        const std::string axis = size_tag + "-b" + std::to_string(b);
        auto recs = records_from_probs(c, axis, std::to_string(seed),
                                       predict_probs(m, data[si].test), data[si].test);
        out.insert(out.end(), recs.begin(), recs.end());
        save_model_file(c, axis, seed, m, &state);
      }
    });
  });
}

void recipe_suggestion_compare(const ExperimentConfig& cfg,
                               std::vector<MetricRecord>& records) {
  if (cfg.task != "seg")
    throw std::runtime_error("suggestion-compare recipe expects task seg");
  const size_t ns = cfg.seeds.size();
  RecordSlots outs(ns);
  auto body = [&](int i) {
    const uint64_t seed = cfg.seeds[static_cast<size_t>(i)];
    const TaskData data = make_task_data(cfg, seed);
    const int64_t seed_size =
        std::min<int64_t>(cfg.suggestion.seed_size, data.train.size() - 1);
    const Dataset seed_set = subset(data.train, iota_idx(0, seed_size));
    const Dataset pool = subset(data.train, iota_idx(seed_size, data.train.size() - seed_size));
    const SuggestionResult res = run_suggestion(cfg, seed, seed_set, pool);
    const int64_t budget = static_cast<int64_t>(res.selected.size());

    auto train_and_eval = [&](const std::vector<int64_t>& pool_idx, const std::string& axis) {
      Dataset labeled = seed_set;
      append_samples(labeled, pool, pool_idx);
      ModelGraph m = make_task_model(cfg, mix_seed(seed, kStreamFinalModel));
      OptimizerState opt = make_optimizer(m, cfg.optimizer.lr, cfg.optimizer.momentum,
                                          cfg.optimizer.weight_decay, cfg.optimizer.lr_decay);
      Rng shuffle(mix_seed(seed, kStreamFinalModel + 1));
      train_model(m, labeled, train_config_of(cfg), opt, shuffle);
      auto recs = records_from_probs(cfg, axis, std::to_string(seed),
                                     predict_probs(m, data.test), data.test);
      auto& out = outs[static_cast<size_t>(i)];
      out.insert(out.end(), recs.begin(), recs.end());
      save_model_file(cfg, axis, seed, m, nullptr);
    };
    train_and_eval(res.selected, "suggest");
    std::vector<int64_t> pool_all = iota_idx(0, pool.size());
    Rng pick(mix_seed(seed, kStreamRandomPick));
    for (int64_t k = 0; k < budget; ++k) {
      const int64_t j = k + static_cast<int64_t>(pick.next_below(pool_all.size() - k));
      std::swap(pool_all[static_cast<size_t>(k)], pool_all[static_cast<size_t>(j)]);
    }
    train_and_eval(std::vector<int64_t>(pool_all.begin(), pool_all.begin() + budget), "random");
  };
  merge_guarded([&] { merge_slots(outs, records); },
                [&] { parallel_for(cfg.workers, static_cast<int>(ns), body); });
}

void write_outputs(const ExperimentConfig& cfg, const std::vector<MetricRecord>& records) {
  {
    std::ofstream csv(cfg.out_dir + "/results.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write results.csv");
    csv << records_to_csv(records);
  }
  std::ofstream log(cfg.out_dir + "/log.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write log.jsonl");
  nlohmann::json head;
  head["config"] = nlohmann::json::parse(config_to_json(cfg));
  log << head.dump() << "\n";
  for (const auto& r : records) {
    nlohmann::json j;
    j["recipe"] = r.recipe;
    j["task"] = r.task;
    j["model_size"] = r.model_size;
    j["axis"] = r.axis;
    j["metric"] = r.metric;
    j["seed"] = r.seed;
    j["value"] = r.value;
    log << j.dump() << "\n";
  }
}

}  // namespace

std::vector<MetricRecord> run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir + "/models");
  std::vector<MetricRecord> records;
  try {
    if (cfg.recipe == "bitwidth-sweep")
      recipe_bitwidth_sweep(cfg, records);
    else if (cfg.recipe == "parallel-sweep")
      recipe_parallel_sweep(cfg, records);
    else if (cfg.recipe == "bitwidth-parallel")
      recipe_bitwidth_parallel(cfg, records);
    else if (cfg.recipe == "small-model")
      recipe_small_model(cfg, records);
    else if (cfg.recipe == "suggestion-compare")
      recipe_suggestion_compare(cfg, records);
    else
      throw std::runtime_error("unknown recipe: " + cfg.recipe);
  } catch (...) {
    // Raw rows only: aggregates over an incomplete sweep would mislead.
    write_outputs(cfg, records);
    throw;
  }
  for (const auto& r : records)
    if (r.value < 0.0 || r.value > 100.0)
      throw std::logic_error("metric out of percentage range: " + r.metric);
  append_aggregates(records);
  write_outputs(cfg, records);
  return records;
}

}  // namespace sqw
