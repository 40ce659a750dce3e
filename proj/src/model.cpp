#include "sqw/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sqw {

template <typename T>
std::vector<int> ModelGraphT<T>::output_shape() const {
  std::vector<int> s = input_shape;
  for (const auto& l : layers) s = layer_output_shape(l.spec, s);
  return s;
}

template <typename T>
int64_t ModelGraphT<T>::param_count() const {
  int64_t n = 0;
  for (const auto& l : layers)
    for (const auto& p : l.params) n += p.value.numel();
  return n;
}

template <typename T>
int64_t ModelGraphT<T>::quantizable_param_count() const {
  int64_t n = 0;
  for (const auto& l : layers)
    for (const auto& p : l.params)
      if (p.quantizable) n += p.value.numel();
  return n;
}

template <typename T>
int ModelGraphT<T>::last_param_layer() const {
  int last = -1;
  for (size_t i = 0; i < layers.size(); ++i)
    if (!layers[i].params.empty()) last = static_cast<int>(i);
  return last;
}

static int dense_fan_in(const std::vector<int>& in) {
  if (in.size() == 2) return in[1];  // [T,F]: applied per step
  int64_t n = 1;
  for (int d : in) n *= d;
  return static_cast<int>(n);
}

template <typename T>
ModelGraphT<T> build_model(const std::vector<int>& input_shape,
                           const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw std::invalid_argument("build_model: no layers");
  ModelGraphT<T> m;
  m.input_shape = input_shape;
  std::vector<int> cur = input_shape;
  for (size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& spec = specs[i];
    LayerStateT<T> layer;
    layer.spec = spec;
    const std::string prefix = "layer" + std::to_string(i) + ".";
    auto add = [&](const std::string& role, std::vector<int> shape, bool quantizable) {
      layer.params.push_back({prefix + role, TensorT<T>(std::move(shape)), quantizable});
    };
    switch (spec.kind) {
      case LayerKind::dense:
        add("weight", {spec.units, dense_fan_in(cur)}, true);
        add("bias", {spec.units}, false);
        break;
      case LayerKind::conv2d:
        add("weight", {spec.out_channels, cur[0], spec.kernel, spec.kernel}, true);
        add("bias", {spec.out_channels}, false);
        break;
      case LayerKind::birnn:
        add("wx_f", {spec.hidden, cur[1]}, true);
        add("wh_f", {spec.hidden, spec.hidden}, true);
        add("b_f", {spec.hidden}, false);
        add("wx_b", {spec.hidden, cur[1]}, true);
        add("wh_b", {spec.hidden, spec.hidden}, true);
        add("b_b", {spec.hidden}, false);
        break;
      default:
        break;
    }
    cur = layer_output_shape(spec, cur);  // validates compatibility
    m.layers.push_back(std::move(layer));
  }
  return m;
}

template <typename T>
void init_model(ModelGraphT<T>& model, Rng& rng) {
  for (auto& layer : model.layers) {
    for (auto& p : layer.params) {
      if (!p.quantizable) {  // biases stay zero
        std::fill(p.value.data.begin(), p.value.data.end(), T(0));
        continue;
      }
      const int fan_in = p.value.dim(p.value.rank() - 1) *
                         (p.value.rank() == 4 ? p.value.dim(2) * p.value.dim(1) : 1);
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : p.value.data) v = static_cast<T>(rng.uniform(-limit, limit));
    }
  }
}

template <typename T>
GradsT<T> zero_grads(const ModelGraphT<T>& model) {
  GradsT<T> g(model.layers.size());
  for (size_t i = 0; i < model.layers.size(); ++i)
    for (const auto& p : model.layers[i].params) g[i].emplace_back(p.value.shape);
  return g;
}

template <typename T>
static TensorT<T> as_2d(const TensorT<T>& x) {
  // Dense input views: [N,F] stays, [N,T,F] folds time into rows,
  // [N,C,H,W] flattens features.
  switch (x.rank()) {
    case 2: return x;
    case 3: return x.reshaped({x.dim(0) * x.dim(1), x.dim(2)});
    case 4: return x.reshaped({x.dim(0), static_cast<int>(x.numel() / x.dim(0))});
    default: throw std::invalid_argument("dense: unsupported input rank");
  }
}

template <typename T>
const TensorT<T>& forward(const ModelGraphT<T>& model, const TensorT<T>& x, WorkspaceT<T>& ws) {
  const size_t M = model.layers.size();
  ws.acts.assign(1, x);
  ws.acts.resize(M + 1);
  ws.pool_argmax.assign(M, {});
  ws.rnn_hf.assign(M, TensorT<T>());
  ws.rnn_hb.assign(M, TensorT<T>());
  for (size_t i = 0; i < M; ++i) {
    const auto& layer = model.layers[i];
    const TensorT<T>& in = ws.acts[i];
    TensorT<T>& out = ws.acts[i + 1];
    switch (layer.spec.kind) {
      case LayerKind::dense: {
        const TensorT<T> x2d = as_2d(in);
        TensorT<T> y2d;
        kern::dense_forward(x2d, layer.params[0].value, layer.params[1].value, y2d);
        out = (in.rank() == 3)
                  ? y2d.reshaped({in.dim(0), in.dim(1), layer.spec.units})
                  : std::move(y2d);
        break;
      }
      case LayerKind::conv2d:
        kern::conv2d_forward(in, layer.params[0].value, layer.params[1].value, out);
        break;
      case LayerKind::relu:
        kern::relu_forward(in, out);
        break;
      case LayerKind::maxpool2x2:
        kern::maxpool2x2_forward(in, out, ws.pool_argmax[i]);
        break;
      case LayerKind::upsample2x2:
        kern::upsample2x2_forward(in, out);
        break;
      case LayerKind::pad2d:
        kern::pad2d_forward(in, layer.spec.pad, out);
        break;
      case LayerKind::birnn:
        kern::birnn_forward(in, layer.params[0].value, layer.params[1].value,
                            layer.params[2].value, layer.params[3].value,
                            layer.params[4].value, layer.params[5].value, ws.rnn_hf[i],
                            ws.rnn_hb[i], out);
        break;
      case LayerKind::softmax_output:
        kern::softmax_forward(in, out);
        break;
    }
  }
  return ws.acts.back();
}

template <typename T>
double backward(const ModelGraphT<T>& model, const WorkspaceT<T>& ws,
                const std::vector<int32_t>& targets, GradsT<T>& grads, TensorT<T>* ginput) {
  const size_t M = model.layers.size();
  if (M == 0 || model.layers.back().spec.kind != LayerKind::softmax_output)
    throw std::invalid_argument("backward: model must end in softmax_output");
  if (grads.size() != M) grads = zero_grads(model);
  TensorT<T> g;
  const double loss = kern::xent_loss_and_logit_grad(ws.acts[M], targets, &g);
  for (int i = static_cast<int>(M) - 2; i >= 0; --i) {
    const auto& layer = model.layers[i];
    const TensorT<T>& in = ws.acts[i];
    const bool need_gx = (i > 0) || (ginput != nullptr);
    TensorT<T> gx;
    switch (layer.spec.kind) {
      case LayerKind::dense: {
        const TensorT<T> x2d = as_2d(in);
        const TensorT<T> gy2d = as_2d(g);
        TensorT<T> gx2d;
        kern::dense_backward(x2d, layer.params[0].value, gy2d, need_gx ? &gx2d : nullptr,
                             grads[i][0], grads[i][1]);
        if (need_gx) gx = gx2d.reshaped(in.shape);
        break;
      }
      case LayerKind::conv2d:
        kern::conv2d_backward(in, layer.params[0].value, g, need_gx ? &gx : nullptr,
                              grads[i][0], grads[i][1]);
        break;
      case LayerKind::relu:
        if (need_gx) kern::relu_backward(in, g, gx);
        break;
      case LayerKind::maxpool2x2:
        if (need_gx) {
          gx = TensorT<T>(in.shape);
          kern::maxpool2x2_backward(g, ws.pool_argmax[i], gx);
        }
        break;
      case LayerKind::upsample2x2:
        if (need_gx) {
          gx = TensorT<T>(in.shape);
          kern::upsample2x2_backward(g, gx);
        }
        break;
      case LayerKind::pad2d:
        if (need_gx) {
          gx = TensorT<T>(in.shape);
          kern::pad2d_backward(g, layer.spec.pad, gx);
        }
        break;
      case LayerKind::birnn:
        kern::birnn_backward(in, layer.params[0].value, layer.params[1].value,
                             layer.params[3].value, layer.params[4].value, ws.rnn_hf[i],
                             ws.rnn_hb[i], g, need_gx ? &gx : nullptr, grads[i][0],
                             grads[i][1], grads[i][2], grads[i][3], grads[i][4],
                             grads[i][5]);
        break;
      case LayerKind::softmax_output:
        throw std::invalid_argument("backward: softmax_output must be the last layer");
    }
    if (need_gx) g = std::move(gx);
  }
  if (ginput) *ginput = std::move(g);
  return loss;
}

template <typename Dst, typename Src>
void copy_params(ModelGraphT<Dst>& dst, const ModelGraphT<Src>& src) {
  if (dst.layers.size() != src.layers.size())
    throw std::invalid_argument("copy_params: layer count mismatch");
  for (size_t i = 0; i < dst.layers.size(); ++i) {
    if (dst.layers[i].params.size() != src.layers[i].params.size())
      throw std::invalid_argument("copy_params: param count mismatch");
    for (size_t p = 0; p < dst.layers[i].params.size(); ++p) {
      auto& d = dst.layers[i].params[p].value;
      const auto& s = src.layers[i].params[p].value;
      if (d.shape != s.shape) throw std::invalid_argument("copy_params: shape mismatch");
      for (int64_t k = 0; k < d.numel(); ++k) d.data[k] = static_cast<Dst>(s.data[k]);
    }
  }
}

template struct ModelGraphT<float>;
template struct ModelGraphT<double>;

template ModelGraphT<float> build_model<float>(const std::vector<int>&,
                                               const std::vector<LayerSpec>&);
template ModelGraphT<double> build_model<double>(const std::vector<int>&,
                                                 const std::vector<LayerSpec>&);
template void init_model<float>(ModelGraphT<float>&, Rng&);
template void init_model<double>(ModelGraphT<double>&, Rng&);
template GradsT<float> zero_grads<float>(const ModelGraphT<float>&);
template GradsT<double> zero_grads<double>(const ModelGraphT<double>&);
template const TensorT<float>& forward<float>(const ModelGraphT<float>&, const TensorT<float>&,
                                              WorkspaceT<float>&);
template const TensorT<double>& forward<double>(const ModelGraphT<double>&,
                                                const TensorT<double>&, WorkspaceT<double>&);
template double backward<float>(const ModelGraphT<float>&, const WorkspaceT<float>&,
                                const std::vector<int32_t>&, GradsT<float>&, TensorT<float>*);
template double backward<double>(const ModelGraphT<double>&, const WorkspaceT<double>&,
                                 const std::vector<int32_t>&, GradsT<double>&,
                                 TensorT<double>*);
template void copy_params<float, double>(ModelGraphT<float>&, const ModelGraphT<double>&);
template void copy_params<double, float>(ModelGraphT<double>&, const ModelGraphT<float>&);
template void copy_params<float, float>(ModelGraphT<float>&, const ModelGraphT<float>&);
template void copy_params<double, double>(ModelGraphT<double>&, const ModelGraphT<double>&);

}  // namespace sqw
