#include "sqw/inq.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sqw {

const char* partition_strategy_name(PartitionStrategy s) {
  return s == PartitionStrategy::magnitude ? "magnitude" : "random";
}

PartitionStrategy partition_strategy_from_name(const std::string& name) {
  if (name == "magnitude") return PartitionStrategy::magnitude;
  if (name == "random") return PartitionStrategy::random;
  throw std::invalid_argument("unknown partition strategy: " + name);
}

int64_t TensorPartition::quantized_count() const {
  int64_t n = 0;
  for (uint8_t f : free_mask) n += (f == 0);
  return n;
}

double TensorPartition::quantized_fraction() const {
  if (free_mask.empty()) return 0.0;
  return static_cast<double>(quantized_count()) / static_cast<double>(free_mask.size());
}

bool PartitionState::fully_quantized() const {
  for (const auto& layer : units)
    for (const auto& u : layer)
      if (u.active && u.quantized_count() != static_cast<int64_t>(u.free_mask.size()))
        return false;
  return true;
}

double PartitionState::quantized_fraction() const {
  int64_t q = 0, n = 0;
  for (const auto& layer : units)
    for (const auto& u : layer)
      if (u.active) {
        q += u.quantized_count();
        n += static_cast<int64_t>(u.free_mask.size());
      }
  return n == 0 ? 0.0 : static_cast<double>(q) / static_cast<double>(n);
}

void check_schedule(const InqSchedule& s) {
  if (s.fractions.empty()) throw std::invalid_argument("schedule: no fractions");
  double prev = 0.0;
  for (double f : s.fractions) {
    if (!(f > prev)) throw std::invalid_argument("schedule: fractions must strictly increase");
    if (f > 1.0) throw std::invalid_argument("schedule: fraction above 1.0");
    prev = f;
  }
  if (s.fractions.back() != 1.0) throw std::invalid_argument("schedule: must end at 1.0");
  if (s.epochs_per_step < 0) throw std::invalid_argument("schedule: negative epochs_per_step");
}

PartitionState init_partition(const ModelGraph& model, int bit_width,
                              std::optional<double> max_level_override) {
  PartitionState st;
  st.units.resize(model.layers.size());
  for (size_t l = 0; l < model.layers.size(); ++l) {
    st.units[l].resize(model.layers[l].params.size());
    for (size_t p = 0; p < model.layers[l].params.size(); ++p) {
      const auto& par = model.layers[l].params[p];
      if (!par.quantizable) continue;
      TensorPartition& u = st.units[l][p];
      u.active = true;
      double max_abs = 0.0;
      for (float w : par.value.data) max_abs = std::max(max_abs, std::abs(static_cast<double>(w)));
      u.level_set = derive_level_set(max_abs, bit_width, max_level_override);
      u.free_mask.assign(par.value.numel(), 1);
      u.codes.assign(par.value.numel(), QuantCode{});
    }
  }
  return st;
}

std::vector<int64_t> partition_layer(const std::vector<float>& weights,
                                     const std::vector<uint8_t>& free_mask,
                                     double target_fraction, PartitionStrategy strategy,
                                     Rng& rng) {
  if (weights.size() != free_mask.size())
    throw std::invalid_argument("partition_layer: mask size mismatch");
  if (target_fraction < 0.0 || target_fraction > 1.0)
    throw std::invalid_argument("partition_layer: fraction out of range");
  const int64_t n = static_cast<int64_t>(weights.size());
  int64_t quantized = 0;
  std::vector<int64_t> free_pos;
  free_pos.reserve(weights.size());
  for (int64_t i = 0; i < n; ++i) {
    if (free_mask[i])
      free_pos.push_back(i);
    else
      ++quantized;
  }
  const int64_t target = std::llround(target_fraction * static_cast<double>(n));
  if (target < quantized)
    throw std::invalid_argument("partition_layer: target below current quantized fraction");
  const int64_t need = target - quantized;
  if (need == 0) return {};
  if (strategy == PartitionStrategy::magnitude) {
    std::stable_sort(free_pos.begin(), free_pos.end(), [&](int64_t a, int64_t b) {
      const float ma = std::abs(weights[a]), mb = std::abs(weights[b]);
      if (ma != mb) return ma > mb;
      return a < b;
    });
  } else {
    for (int64_t i = 0; i < need; ++i) {
      const int64_t j = i + static_cast<int64_t>(rng.next_below(free_pos.size() - i));
      std::swap(free_pos[i], free_pos[j]);
    }
  }
  std::vector<int64_t> picked(free_pos.begin(), free_pos.begin() + need);
  std::sort(picked.begin(), picked.end());
  return picked;
}

void quantize_group(PartitionState& state, ModelGraph& model, int layer, int param,
                    const std::vector<int64_t>& positions) {
  TensorPartition& u = state.units.at(layer).at(param);
  if (!u.active) throw std::invalid_argument("quantize_group: tensor is not quantizable");
  auto& w = model.layers.at(layer).params.at(param).value.data;
  for (int64_t pos : positions) {
    if (pos < 0 || pos >= static_cast<int64_t>(w.size()))
      throw std::out_of_range("quantize_group: position out of range");
    if (!u.free_mask[pos])
      throw std::invalid_argument("quantize_group: position already quantized");
    const double q = quantize_value(w[pos], u.level_set);
    u.codes[pos] = encode_level(q, u.level_set);
    w[pos] = static_cast<float>(q);
    u.free_mask[pos] = 0;
  }
}

FreezeMask freeze_mask_from(const PartitionState& state, const ModelGraph& model) {
  FreezeMask m = empty_freeze_mask(model);
  for (size_t l = 0; l < state.units.size(); ++l) {
    for (size_t p = 0; p < state.units[l].size(); ++p) {
      const TensorPartition& u = state.units[l][p];
      if (!u.active) continue;
      std::vector<uint8_t> frozen(u.free_mask.size());
      for (size_t i = 0; i < u.free_mask.size(); ++i) frozen[i] = u.free_mask[i] ? 0 : 1;
      m[l][p] = std::move(frozen);
    }
  }
  return m;
}

void check_partition_invariants(const PartitionState& state, const ModelGraph& model) {
  if (state.units.size() != model.layers.size())
    throw std::logic_error("partition state does not match model");
  for (size_t l = 0; l < state.units.size(); ++l) {
    for (size_t p = 0; p < state.units[l].size(); ++p) {
      const TensorPartition& u = state.units[l][p];
      const auto& par = model.layers[l].params[p];
      if (u.active != par.quantizable)
        throw std::logic_error("partition active flag mismatch");
      if (!u.active) continue;
      check_level_set(u.level_set);
      if (u.free_mask.size() != static_cast<size_t>(par.value.numel()) ||
          u.codes.size() != u.free_mask.size())
        throw std::logic_error("partition mask size mismatch");
      for (size_t i = 0; i < u.free_mask.size(); ++i) {
        if (u.free_mask[i]) continue;
        const double v = decode_level(u.codes[i], u.level_set);
        if (static_cast<double>(par.value.data[i]) != v)
          throw std::logic_error("quantized weight does not match its code");
      }
    }
  }
}

InqLog inq_train(ModelGraph& model, const Dataset& train, const Dataset* val,
                 const InqSchedule& schedule, int bit_width, const TrainConfig& tcfg,
                 PartitionStrategy strategy, Rng& rng,
                 std::optional<double> max_level_override, PartitionState* out_state) {
  check_schedule(schedule);
  PartitionState state = init_partition(model, bit_width, max_level_override);
  OptimizerState opt =
      make_optimizer(model, tcfg.lr, tcfg.momentum, tcfg.weight_decay, tcfg.lr_decay);
  InqLog log;
  TrainConfig step_cfg = tcfg;
  step_cfg.epochs = schedule.epochs_per_step;
  for (double fraction : schedule.fractions) {
    for (size_t l = 0; l < model.layers.size(); ++l) {
      for (size_t p = 0; p < model.layers[l].params.size(); ++p) {
        TensorPartition& u = state.units[l][p];
        if (!u.active) continue;
        const auto positions = partition_layer(model.layers[l].params[p].value.data,
                                               u.free_mask, fraction, strategy, rng);
        quantize_group(state, model, static_cast<int>(l), static_cast<int>(p), positions);
      }
    }
    const FreezeMask freeze = freeze_mask_from(state, model);
    InqStepLog step;
    step.target_fraction = fraction;
    step.achieved_fraction = state.quantized_fraction();
    if (schedule.epochs_per_step > 0)
      step.train_loss = train_model(model, train, step_cfg, opt, rng, &freeze);
    if (val) step.val_accuracy = accuracy_on(model, *val);
    check_partition_invariants(state, model);
    log.steps.push_back(step);
  }
  if (!state.fully_quantized()) throw std::logic_error("inq_train: free set not exhausted");
  if (out_state) *out_state = std::move(state);
  return log;
}

}  // namespace sqw
