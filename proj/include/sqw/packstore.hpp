#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sqw/inq.hpp"
#include "sqw/model.hpp"
#include "sqw/quantlevels.hpp"
#include "sqw/tensor.hpp"

namespace sqw {

// SQW container, version 1. Layout (all integers little-endian):
//   magic "SQW1"; u16 version; u16 tensor_count;
//   per tensor: u16 name_len; name bytes; u8 dtype (0=float32, 1=packed);
//               u8 rank; u32 dims[rank];
//   packed:  u8 bit_width; i16 n1; i16 n2; ceil(bit_width*N/8) payload bytes,
//            codes packed LSB-first in flat index order, pad bits zero.
//   float32: N 4-byte floats.

struct PackFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : PackFormatError {
  using PackFormatError::PackFormatError;
};
struct BadVersionError : PackFormatError {
  using PackFormatError::PackFormatError;
};
struct TruncatedError : PackFormatError {
  using PackFormatError::PackFormatError;
};

enum class PackedDtype : uint8_t { float32 = 0, packed = 1 };

struct PackedTensor {
  std::string name;
  std::vector<int> shape;
  PackedDtype dtype = PackedDtype::float32;
  // dtype == packed
  int bit_width = 0;
  int16_t n1 = 0;
  int16_t n2 = 0;
  std::vector<uint8_t> payload;
  // dtype == float32
  std::vector<float> values;

  int64_t numel() const;
  LevelSet level_set() const;
};

struct PackedModel {
  std::vector<PackedTensor> tensors;

  const PackedTensor* find(const std::string& name) const;
};

PackedTensor pack_codes(const std::string& name, const std::vector<int>& shape,
                        const std::vector<QuantCode>& codes, const LevelSet& ls);
std::vector<QuantCode> unpack_codes(const PackedTensor& t);

// Decoded float values for either dtype.
std::vector<float> tensor_values(const PackedTensor& t);

// Tensors with a fully quantized partition entry are packed; everything else
// (biases, still-float weights) is stored float32. state may be null.
PackedModel pack_model(const ModelGraph& model, const PartitionState* state);

std::vector<uint8_t> serialize(const PackedModel& m);
PackedModel deserialize(const std::vector<uint8_t>& bytes);

void save_packed(const std::string& path, const PackedModel& m);
PackedModel load_packed(const std::string& path);

// Writes tensor values into an architecture-compatible model, matched by
// name. Every model parameter must be present with the right shape.
void load_into_model(ModelGraph& model, const PackedModel& pm);

struct MemoryReport {
  int64_t float_bytes = 0;        // packed weights at 4 bytes each
  int64_t packed_bytes = 0;       // stored payload bytes for those weights
  int64_t whole_model_bytes = 0;  // payloads + float32 tensors
  int64_t whole_model_float_bytes = 0;
  double reduction_ratio = 1.0;  // weights-only headline, bit-level (32/b shape)
  double whole_model_ratio = 1.0;
};

MemoryReport memory_report(const PackedModel& m);

// Multiplier-free execution: per weight a sign and an exponent; each
// contribution is the activation scaled by an exact power of two. Zero codes
// are skipped entirely.
struct SaParam {
  bool is_packed = false;
  std::vector<int> shape;
  std::vector<int8_t> sign;   // 0 marks a zero weight
  std::vector<int16_t> expo;  // exponent p of 2^p, valid where sign != 0
  std::vector<float> values;  // float32 tensors (biases)
};

struct ShiftAddNet {
  std::vector<int> input_shape;
  std::vector<LayerSpec> specs;
  std::vector<std::vector<SaParam>> params;
  double zero_skip_rate = 0.0;  // fraction of packed codes that are zero
};

// Throws std::runtime_error("requires quantized model") when any quantizable
// weight tensor is stored float32.
ShiftAddNet prepare_shiftadd(const ModelGraph& arch, const PackedModel& pm);

Tensor shiftadd_forward(const ShiftAddNet& net, const Tensor& x);

struct BenchReport {
  int repetitions = 0;
  double multiply_ms = 0.0;  // median wall time per forward
  double shiftadd_ms = 0.0;
  double speedup = 0.0;  // multiply_ms / shiftadd_ms
  double zero_skip_rate = 0.0;
};

// Times the standard multiply forward against the shift-add forward on the
// same batch. Reports medians; asserts nothing about which is faster.
BenchReport bench(const ModelGraph& arch, const PackedModel& pm, const Tensor& batch,
                  int repetitions);

}  // namespace sqw
