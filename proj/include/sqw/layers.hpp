#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sqw/tensor.hpp"

namespace sqw {

enum class LayerKind {
  dense,
  conv2d,
  relu,
  maxpool2x2,
  upsample2x2,
  pad2d,
  birnn,
  softmax_output,
};

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

// One layer of a sequential model. Field use per kind:
//   dense:   units
//   conv2d:  out_channels, kernel
//   pad2d:   pad
//   birnn:   hidden (per direction)
// relu / maxpool2x2 / upsample2x2 / softmax_output take no hyperparameters.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;
  int out_channels = 0;
  int kernel = 3;
  int pad = 1;
  int hidden = 0;
};

LayerSpec make_dense(int units);
LayerSpec make_conv2d(int out_channels, int kernel);
LayerSpec make_relu();
LayerSpec make_maxpool2x2();
LayerSpec make_upsample2x2();
LayerSpec make_pad2d(int pad);
LayerSpec make_birnn(int hidden);
LayerSpec make_softmax_output();

// Per-sample output shape (batch dim excluded). Throws on incompatible input.
std::vector<int> layer_output_shape(const LayerSpec& spec, const std::vector<int>& in);

// Probability layout of a softmax output: `classes` along one axis,
// `outer * inner` independent prediction sites.
//   rank 2 [N,C]     -> outer=N,   inner=1
//   rank 3 [N,T,C]   -> outer=N*T, inner=1
//   rank 4 [N,C,H,W] -> outer=N,   inner=H*W
struct ClassLayout {
  int64_t outer = 0;
  int classes = 0;
  int64_t inner = 0;
  int64_t sites() const { return outer * inner; }
};

ClassLayout class_layout(const std::vector<int>& shape);

namespace kern {

template <typename T>
void dense_forward(const TensorT<T>& x2d, const TensorT<T>& W, const TensorT<T>& b,
                   TensorT<T>& y);
template <typename T>
void dense_backward(const TensorT<T>& x2d, const TensorT<T>& W, const TensorT<T>& gy,
                    TensorT<T>* gx, TensorT<T>& gW, TensorT<T>& gb);

template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& W, const TensorT<T>& b,
                    TensorT<T>& y);
template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& W, const TensorT<T>& gy,
                     TensorT<T>* gx, TensorT<T>& gW, TensorT<T>& gb);

template <typename T>
void relu_forward(const TensorT<T>& x, TensorT<T>& y);
template <typename T>
void relu_backward(const TensorT<T>& x, const TensorT<T>& gy, TensorT<T>& gx);

template <typename T>
void maxpool2x2_forward(const TensorT<T>& x, TensorT<T>& y, std::vector<int64_t>& argmax);
template <typename T>
void maxpool2x2_backward(const TensorT<T>& gy, const std::vector<int64_t>& argmax,
                         TensorT<T>& gx);

template <typename T>
void upsample2x2_forward(const TensorT<T>& x, TensorT<T>& y);
template <typename T>
void upsample2x2_backward(const TensorT<T>& gy, TensorT<T>& gx);

template <typename T>
void pad2d_forward(const TensorT<T>& x, int pad, TensorT<T>& y);
template <typename T>
void pad2d_backward(const TensorT<T>& gy, int pad, TensorT<T>& gx);

// Bidirectional vanilla RNN, tanh cells, outputs the two directions
// concatenated on the feature axis. Parameter order as stored in the model:
// Wx_f [H,F], Wh_f [H,H], b_f [H], Wx_b, Wh_b, b_b.
template <typename T>
void birnn_forward(const TensorT<T>& x, const TensorT<T>& Wx_f, const TensorT<T>& Wh_f,
                   const TensorT<T>& b_f, const TensorT<T>& Wx_b, const TensorT<T>& Wh_b,
                   const TensorT<T>& b_b, TensorT<T>& h_f, TensorT<T>& h_b, TensorT<T>& y);
template <typename T>
void birnn_backward(const TensorT<T>& x, const TensorT<T>& Wx_f, const TensorT<T>& Wh_f,
                    const TensorT<T>& Wx_b, const TensorT<T>& Wh_b, const TensorT<T>& h_f,
                    const TensorT<T>& h_b, const TensorT<T>& gy, TensorT<T>* gx,
                    TensorT<T>& gWx_f, TensorT<T>& gWh_f, TensorT<T>& gb_f, TensorT<T>& gWx_b,
                    TensorT<T>& gWh_b, TensorT<T>& gb_b);

template <typename T>
void softmax_forward(const TensorT<T>& x, TensorT<T>& y);
template <typename T>
void softmax_backward(const TensorT<T>& probs, const TensorT<T>& gy, TensorT<T>& gx);

// Mean cross-entropy over all prediction sites plus its gradient at the
// logits (softmax input): (p - onehot) / sites. Throws on invalid targets.
template <typename T>
double xent_loss_and_logit_grad(const TensorT<T>& probs, const std::vector<int32_t>& targets,
                                TensorT<T>* glogits);

}  // namespace kern

}  // namespace sqw
