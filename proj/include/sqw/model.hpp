#pragma once

#include <string>
#include <vector>

#include "sqw/layers.hpp"
#include "sqw/rng.hpp"
#include "sqw/tensor.hpp"

namespace sqw {

template <typename T>
struct ParamTensorT {
  std::string name;  // "layer<i>.<role>", stable across save/load
  TensorT<T> value;
  bool quantizable = false;  // weights yes, biases no
};

template <typename T>
struct LayerStateT {
  LayerSpec spec;
  std::vector<ParamTensorT<T>> params;
};

// Sequential feed-forward graph. Shapes are validated once at build time;
// forward/backward assume them.
template <typename T>
struct ModelGraphT {
  std::vector<int> input_shape;  // per sample, batch dim excluded
  std::vector<LayerStateT<T>> layers;

  std::vector<int> output_shape() const;  // per sample
  int64_t param_count() const;
  int64_t quantizable_param_count() const;
  int last_param_layer() const;  // index of last layer with params, -1 if none
};

using ModelGraph = ModelGraphT<float>;

// Activations and caches from one forward pass, reused by backward.
template <typename T>
struct WorkspaceT {
  std::vector<TensorT<T>> acts;  // acts[0] = input, acts[i+1] = layer i output
  std::vector<std::vector<int64_t>> pool_argmax;
  std::vector<TensorT<T>> rnn_hf, rnn_hb;
};

using Workspace = WorkspaceT<float>;

template <typename T>
using GradsT = std::vector<std::vector<TensorT<T>>>;

using Grads = GradsT<float>;

template <typename T>
ModelGraphT<T> build_model(const std::vector<int>& input_shape,
                           const std::vector<LayerSpec>& specs);

// He-uniform weights (limit sqrt(6/fan_in)), zero biases.
template <typename T>
void init_model(ModelGraphT<T>& model, Rng& rng);

template <typename T>
GradsT<T> zero_grads(const ModelGraphT<T>& model);

// Runs the graph on a batch; returns ws.acts.back(). For a softmax_output
// model that is the per-site probability tensor.
template <typename T>
const TensorT<T>& forward(const ModelGraphT<T>& model, const TensorT<T>& x, WorkspaceT<T>& ws);

// Mean cross-entropy backward pass over the forward pass cached in ws.
// Targets are flat site indices (see ClassLayout). Accumulates nothing:
// grads are overwritten. Returns the loss.
template <typename T>
double backward(const ModelGraphT<T>& model, const WorkspaceT<T>& ws,
                const std::vector<int32_t>& targets, GradsT<T>& grads,
                TensorT<T>* ginput = nullptr);

// Copies parameter values between models with identical architecture,
// possibly across scalar types (used by the double-precision test oracle).
template <typename Dst, typename Src>
void copy_params(ModelGraphT<Dst>& dst, const ModelGraphT<Src>& src);

}  // namespace sqw
