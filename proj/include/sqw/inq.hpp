#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sqw/model.hpp"
#include "sqw/optimizer.hpp"
#include "sqw/quantlevels.hpp"
#include "sqw/rng.hpp"
#include "sqw/train.hpp"

namespace sqw {

enum class PartitionStrategy { magnitude, random };

const char* partition_strategy_name(PartitionStrategy s);
PartitionStrategy partition_strategy_from_name(const std::string& name);

// Quantization bookkeeping for one weight tensor. free_mask[i] = 1 means the
// weight still floats; positions with free_mask[i] = 0 hold decode(codes[i]).
// The two sets are disjoint and exhaustive by construction (one mask).
struct TensorPartition {
  bool active = false;  // false for biases and other non-quantizable params
  std::vector<uint8_t> free_mask;
  std::vector<QuantCode> codes;
  LevelSet level_set;

  int64_t quantized_count() const;
  double quantized_fraction() const;
};

struct PartitionState {
  std::vector<std::vector<TensorPartition>> units;  // [layer][param]

  bool fully_quantized() const;
  double quantized_fraction() const;  // across all active tensors
};

struct InqSchedule {
  std::vector<double> fractions;  // strictly increasing, in (0,1], last = 1.0
  int epochs_per_step = 2;
};

void check_schedule(const InqSchedule& s);

// Derives one level set per quantizable tensor from its current weights (or
// the override) and marks every weight free. Level sets stay fixed afterward.
PartitionState init_partition(const ModelGraph& model, int bit_width,
                              std::optional<double> max_level_override = std::nullopt);

// Picks currently-free positions to raise the accumulated quantized count to
// round(target_fraction * N), half up. magnitude takes largest |w| first
// (ties by ascending index); random samples uniformly from the free set.
std::vector<int64_t> partition_layer(const std::vector<float>& weights,
                                     const std::vector<uint8_t>& free_mask,
                                     double target_fraction, PartitionStrategy strategy,
                                     Rng& rng);

// Quantizes the selected free positions of one tensor in place and clears
// their mask bits. A position outside the free set is a contract violation.
void quantize_group(PartitionState& state, ModelGraph& model, int layer, int param,
                    const std::vector<int64_t>& positions);

// Freeze mask for the optimizer: quantized positions frozen, all else free.
FreezeMask freeze_mask_from(const PartitionState& state, const ModelGraph& model);

// Verifies mask/code consistency and that every quantized weight decodes
// bit-exactly from its stored code. Throws on violation.
void check_partition_invariants(const PartitionState& state, const ModelGraph& model);

struct InqStepLog {
  double target_fraction = 0.0;
  double achieved_fraction = 0.0;
  double train_loss = 0.0;
  double val_accuracy = -1.0;  // -1 when no validation set given
};

struct InqLog {
  std::vector<InqStepLog> steps;
};

// Incremental quantization: per schedule step, partition each quantizable
// tensor, quantize the selected group, then retrain the free weights for
// epochs_per_step with the freeze mask (the final step retrains biases only).
// The optimizer starts fresh here and persists across steps.
InqLog inq_train(ModelGraph& model, const Dataset& train, const Dataset* val,
                 const InqSchedule& schedule, int bit_width, const TrainConfig& tcfg,
                 PartitionStrategy strategy, Rng& rng,
                 std::optional<double> max_level_override = std::nullopt,
                 PartitionState* out_state = nullptr);

}  // namespace sqw
