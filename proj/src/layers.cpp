#include "sqw/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace sqw {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2x2: return "maxpool2x2";
    case LayerKind::upsample2x2: return "upsample2x2";
    case LayerKind::pad2d: return "pad2d";
    case LayerKind::birnn: return "birnn";
    case LayerKind::softmax_output: return "softmax_output";
  }
  throw std::logic_error("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::dense;
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "relu") return LayerKind::relu;
  if (name == "maxpool2x2") return LayerKind::maxpool2x2;
  if (name == "upsample2x2") return LayerKind::upsample2x2;
  if (name == "pad2d") return LayerKind::pad2d;
  if (name == "birnn") return LayerKind::birnn;
  if (name == "softmax_output") return LayerKind::softmax_output;
  throw std::invalid_argument("unknown layer kind: " + name);
}

LayerSpec make_dense(int units) {
  if (units <= 0) throw std::invalid_argument("dense units must be positive");
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.units = units;
  return s;
}

LayerSpec make_conv2d(int out_channels, int kernel) {
  if (out_channels <= 0 || kernel <= 0)
    throw std::invalid_argument("conv2d needs positive out_channels and kernel");
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.out_channels = out_channels;
  s.kernel = kernel;
  return s;
}

LayerSpec make_relu() { return LayerSpec{LayerKind::relu}; }
LayerSpec make_maxpool2x2() { return LayerSpec{LayerKind::maxpool2x2}; }
LayerSpec make_upsample2x2() { return LayerSpec{LayerKind::upsample2x2}; }

LayerSpec make_pad2d(int pad) {
  if (pad < 0) throw std::invalid_argument("pad2d pad must be non-negative");
  LayerSpec s;
  s.kind = LayerKind::pad2d;
  s.pad = pad;
  return s;
}

LayerSpec make_birnn(int hidden) {
  if (hidden <= 0) throw std::invalid_argument("birnn hidden must be positive");
  LayerSpec s;
  s.kind = LayerKind::birnn;
  s.hidden = hidden;
  return s;
}

LayerSpec make_softmax_output() { return LayerSpec{LayerKind::softmax_output}; }

static int64_t flat_count(const std::vector<int>& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::vector<int> layer_output_shape(const LayerSpec& spec, const std::vector<int>& in) {
  const int rank = static_cast<int>(in.size());
  switch (spec.kind) {
    case LayerKind::dense:
      // rank 1 [F] and rank 3 [C,H,W] collapse to a vector; rank 2 [T,F] is
      // applied per time step.
      if (rank == 2) return {in[0], spec.units};
      if (rank == 1 || rank == 3) {
        if (flat_count(in) <= 0) throw std::invalid_argument("dense: empty input");
        return {spec.units};
      }
      throw std::invalid_argument("dense: unsupported input rank");
    case LayerKind::conv2d: {
      if (rank != 3) throw std::invalid_argument("conv2d: input must be [C,H,W]");
      const int oh = in[1] - spec.kernel + 1;
      const int ow = in[2] - spec.kernel + 1;
      if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: kernel larger than input");
      return {spec.out_channels, oh, ow};
    }
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2x2:
      if (rank != 3) throw std::invalid_argument("maxpool2x2: input must be [C,H,W]");
      if (in[1] % 2 != 0 || in[2] % 2 != 0)
        throw std::invalid_argument("maxpool2x2: spatial dims must be even");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::upsample2x2:
      if (rank != 3) throw std::invalid_argument("upsample2x2: input must be [C,H,W]");
      return {in[0], in[1] * 2, in[2] * 2};
    case LayerKind::pad2d:
      if (rank != 3) throw std::invalid_argument("pad2d: input must be [C,H,W]");
      return {in[0], in[1] + 2 * spec.pad, in[2] + 2 * spec.pad};
    case LayerKind::birnn:
      if (rank != 2) throw std::invalid_argument("birnn: input must be [T,F]");
      return {in[0], 2 * spec.hidden};
    case LayerKind::softmax_output:
      if (rank < 1 || rank > 3)
        throw std::invalid_argument("softmax_output: unsupported input rank");
      return in;
  }
  throw std::logic_error("unknown layer kind");
}

ClassLayout class_layout(const std::vector<int>& shape) {
  ClassLayout lo;
  switch (shape.size()) {
    case 2:  // [N,C]
      lo.outer = shape[0];
      lo.classes = shape[1];
      lo.inner = 1;
      return lo;
    case 3:  // [N,T,C]
      lo.outer = static_cast<int64_t>(shape[0]) * shape[1];
      lo.classes = shape[2];
      lo.inner = 1;
      return lo;
    case 4:  // [N,C,H,W]
      lo.outer = shape[0];
      lo.classes = shape[1];
      lo.inner = static_cast<int64_t>(shape[2]) * shape[3];
      return lo;
    default:
      throw std::invalid_argument("class_layout: rank must be 2, 3 or 4");
  }
}

namespace kern {

// All kernels accumulate in double regardless of T. For T=float the products
// of two floats are exact in double, which keeps the packed shift-add path
// bit-identical to these reference loops.

template <typename T>
void dense_forward(const TensorT<T>& x2d, const TensorT<T>& W, const TensorT<T>& b,
                   TensorT<T>& y) {
  const int R = x2d.dim(0), I = x2d.dim(1), U = W.dim(0);
  if (W.dim(1) != I) throw std::invalid_argument("dense_forward: weight/input mismatch");
  y = TensorT<T>({R, U});
  const T* xp = x2d.data.data();
  const T* wp = W.data.data();
  T* yp = y.data.data();
  for (int r = 0; r < R; ++r) {
    for (int u = 0; u < U; ++u) {
      double acc = static_cast<double>(b.data[u]);
      const T* wrow = wp + static_cast<int64_t>(u) * I;
      const T* xrow = xp + static_cast<int64_t>(r) * I;
      for (int i = 0; i < I; ++i)
        acc += static_cast<double>(wrow[i]) * static_cast<double>(xrow[i]);
      yp[static_cast<int64_t>(r) * U + u] = static_cast<T>(acc);
    }
  }
}

template <typename T>
void dense_backward(const TensorT<T>& x2d, const TensorT<T>& W, const TensorT<T>& gy,
                    TensorT<T>* gx, TensorT<T>& gW, TensorT<T>& gb) {
  const int R = x2d.dim(0), I = x2d.dim(1), U = W.dim(0);
  gW = TensorT<T>({U, I});
  gb = TensorT<T>({U});
  for (int u = 0; u < U; ++u) {
    double accb = 0.0;
    for (int r = 0; r < R; ++r) accb += static_cast<double>(gy.data[static_cast<int64_t>(r) * U + u]);
    gb.data[u] = static_cast<T>(accb);
    for (int i = 0; i < I; ++i) {
      double acc = 0.0;
      for (int r = 0; r < R; ++r)
        acc += static_cast<double>(gy.data[static_cast<int64_t>(r) * U + u]) *
               static_cast<double>(x2d.data[static_cast<int64_t>(r) * I + i]);
      gW.data[static_cast<int64_t>(u) * I + i] = static_cast<T>(acc);
    }
  }
  if (gx) {
    *gx = TensorT<T>({R, I});
    for (int r = 0; r < R; ++r) {
      for (int i = 0; i < I; ++i) {
        double acc = 0.0;
        for (int u = 0; u < U; ++u)
          acc += static_cast<double>(gy.data[static_cast<int64_t>(r) * U + u]) *
                 static_cast<double>(W.data[static_cast<int64_t>(u) * I + i]);
        gx->data[static_cast<int64_t>(r) * I + i] = static_cast<T>(acc);
      }
    }
  }
}

template <typename T>
void conv2d_forward(const TensorT<T>& x, const TensorT<T>& W, const TensorT<T>& b,
                    TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int OC = W.dim(0), K = W.dim(2);
  if (W.dim(1) != C || W.dim(3) != K)
    throw std::invalid_argument("conv2d_forward: weight shape mismatch");
  const int OH = H - K + 1, OW = Wd - K + 1;
  y = TensorT<T>({N, OC, OH, OW});
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      const double bias = static_cast<double>(b.data[oc]);
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias;
          for (int ic = 0; ic < C; ++ic) {
            for (int ky = 0; ky < K; ++ky) {
              const T* xrow =
                  x.data.data() +
                  (((static_cast<int64_t>(n) * C + ic) * H + oy + ky) * Wd + ox);
              const T* wrow =
                  W.data.data() +
                  (((static_cast<int64_t>(oc) * C + ic) * K + ky) * K);
              for (int kx = 0; kx < K; ++kx)
                acc += static_cast<double>(wrow[kx]) * static_cast<double>(xrow[kx]);
            }
          }
          y.data[((static_cast<int64_t>(n) * OC + oc) * OH + oy) * OW + ox] =
              static_cast<T>(acc);
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const TensorT<T>& x, const TensorT<T>& W, const TensorT<T>& gy,
                     TensorT<T>* gx, TensorT<T>& gW, TensorT<T>& gb) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int OC = W.dim(0), K = W.dim(2);
  const int OH = gy.dim(2), OW = gy.dim(3);
  gW = TensorT<T>({OC, C, K, K});
  gb = TensorT<T>({OC});
  std::vector<double> gw_acc(gW.numel(), 0.0);
  std::vector<double> gb_acc(OC, 0.0);
  std::vector<double> gx_acc;
  if (gx) gx_acc.assign(x.numel(), 0.0);
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          const double g = static_cast<double>(
              gy.data[((static_cast<int64_t>(n) * OC + oc) * OH + oy) * OW + ox]);
          gb_acc[oc] += g;
          for (int ic = 0; ic < C; ++ic) {
            for (int ky = 0; ky < K; ++ky) {
              for (int kx = 0; kx < K; ++kx) {
                const int64_t xi =
                    ((static_cast<int64_t>(n) * C + ic) * H + oy + ky) * Wd + ox + kx;
                gw_acc[((static_cast<int64_t>(oc) * C + ic) * K + ky) * K + kx] +=
                    g * static_cast<double>(x.data[xi]);
                if (gx)
                  gx_acc[xi] +=
                      g * static_cast<double>(
                              W.data[((static_cast<int64_t>(oc) * C + ic) * K + ky) * K + kx]);
              }
            }
          }
        }
      }
    }
  }
  for (int64_t i = 0; i < gW.numel(); ++i) gW.data[i] = static_cast<T>(gw_acc[i]);
  for (int oc = 0; oc < OC; ++oc) gb.data[oc] = static_cast<T>(gb_acc[oc]);
  if (gx) {
    *gx = TensorT<T>(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) gx->data[i] = static_cast<T>(gx_acc[i]);
  }
}

template <typename T>
void relu_forward(const TensorT<T>& x, TensorT<T>& y) {
  y = TensorT<T>(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
}

template <typename T>
void relu_backward(const TensorT<T>& x, const TensorT<T>& gy, TensorT<T>& gx) {
  gx = TensorT<T>(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) gx.data[i] = x.data[i] > T(0) ? gy.data[i] : T(0);
}

template <typename T>
void maxpool2x2_forward(const TensorT<T>& x, TensorT<T>& y, std::vector<int64_t>& argmax) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = H / 2, OW = W / 2;
  y = TensorT<T>({N, C, OH, OW});
  argmax.assign(y.numel(), 0);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          // Ties keep the first element in scan order.
          int64_t best_i = ((static_cast<int64_t>(n) * C + c) * H + 2 * oy) * W + 2 * ox;
          T best = x.data[best_i];
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const int64_t xi =
                  ((static_cast<int64_t>(n) * C + c) * H + 2 * oy + dy) * W + 2 * ox + dx;
              if (x.data[xi] > best) {
                best = x.data[xi];
                best_i = xi;
              }
            }
          }
          const int64_t yi = ((static_cast<int64_t>(n) * C + c) * OH + oy) * OW + ox;
          y.data[yi] = best;
          argmax[yi] = best_i;
        }
      }
    }
  }
}

template <typename T>
void maxpool2x2_backward(const TensorT<T>& gy, const std::vector<int64_t>& argmax,
                         TensorT<T>& gx) {
  for (int64_t i = 0; i < gy.numel(); ++i) gx.data[argmax[i]] += gy.data[i];
}

template <typename T>
void upsample2x2_forward(const TensorT<T>& x, TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  y = TensorT<T>({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const T v = x.data[((static_cast<int64_t>(n) * C + c) * H + i) * W + j];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              y.data[((static_cast<int64_t>(n) * C + c) * 2 * H + 2 * i + dy) * 2 * W + 2 * j +
                     dx] = v;
        }
}

template <typename T>
void upsample2x2_backward(const TensorT<T>& gy, TensorT<T>& gx) {
  const int N = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          double acc = 0.0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              acc += static_cast<double>(
                  gy.data[((static_cast<int64_t>(n) * C + c) * 2 * H + 2 * i + dy) * 2 * W +
                          2 * j + dx]);
          gx.data[((static_cast<int64_t>(n) * C + c) * H + i) * W + j] = static_cast<T>(acc);
        }
}

template <typename T>
void pad2d_forward(const TensorT<T>& x, int pad, TensorT<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int OH = H + 2 * pad, OW = W + 2 * pad;
  y = TensorT<T>({N, C, OH, OW});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        std::memcpy(y.data.data() +
                        ((static_cast<int64_t>(n) * C + c) * OH + i + pad) * OW + pad,
                    x.data.data() + ((static_cast<int64_t>(n) * C + c) * H + i) * W,
                    sizeof(T) * static_cast<size_t>(W));
}

template <typename T>
void pad2d_backward(const TensorT<T>& gy, int pad, TensorT<T>& gx) {
  const int N = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const int OH = H + 2 * pad, OW = W + 2 * pad;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H; ++i)
        std::memcpy(gx.data.data() + ((static_cast<int64_t>(n) * C + c) * H + i) * W,
                    gy.data.data() +
                        ((static_cast<int64_t>(n) * C + c) * OH + i + pad) * OW + pad,
                    sizeof(T) * static_cast<size_t>(W));
}

template <typename T>
static void rnn_direction_forward(const TensorT<T>& x, const TensorT<T>& Wx,
                                  const TensorT<T>& Wh, const TensorT<T>& b, bool reverse,
                                  TensorT<T>& h) {
  const int N = x.dim(0), Tn = x.dim(1), F = x.dim(2);
  const int H = Wx.dim(0);
  h = TensorT<T>({N, Tn, H});
  for (int n = 0; n < N; ++n) {
    for (int step = 0; step < Tn; ++step) {
      const int t = reverse ? Tn - 1 - step : step;
      const int tprev = reverse ? t + 1 : t - 1;
      const T* xrow = x.data.data() + (static_cast<int64_t>(n) * Tn + t) * F;
      const T* hprev = (step == 0)
                           ? nullptr
                           : h.data.data() + (static_cast<int64_t>(n) * Tn + tprev) * H;
      T* hrow = h.data.data() + (static_cast<int64_t>(n) * Tn + t) * H;
      for (int j = 0; j < H; ++j) {
        double acc = static_cast<double>(b.data[j]);
        const T* wxrow = Wx.data.data() + static_cast<int64_t>(j) * F;
        for (int f = 0; f < F; ++f)
          acc += static_cast<double>(wxrow[f]) * static_cast<double>(xrow[f]);
        if (hprev) {
          const T* whrow = Wh.data.data() + static_cast<int64_t>(j) * H;
          for (int k = 0; k < H; ++k)
            acc += static_cast<double>(whrow[k]) * static_cast<double>(hprev[k]);
        }
        hrow[j] = std::tanh(static_cast<T>(acc));
      }
    }
  }
}

template <typename T>
void birnn_forward(const TensorT<T>& x, const TensorT<T>& Wx_f, const TensorT<T>& Wh_f,
                   const TensorT<T>& b_f, const TensorT<T>& Wx_b, const TensorT<T>& Wh_b,
                   const TensorT<T>& b_b, TensorT<T>& h_f, TensorT<T>& h_b, TensorT<T>& y) {
  const int N = x.dim(0), Tn = x.dim(1);
  const int H = Wx_f.dim(0);
  rnn_direction_forward(x, Wx_f, Wh_f, b_f, false, h_f);
  rnn_direction_forward(x, Wx_b, Wh_b, b_b, true, h_b);
  y = TensorT<T>({N, Tn, 2 * H});
  for (int n = 0; n < N; ++n)
    for (int t = 0; t < Tn; ++t) {
      const int64_t src = (static_cast<int64_t>(n) * Tn + t) * H;
      const int64_t dst = (static_cast<int64_t>(n) * Tn + t) * 2 * H;
      std::memcpy(y.data.data() + dst, h_f.data.data() + src, sizeof(T) * static_cast<size_t>(H));
      std::memcpy(y.data.data() + dst + H, h_b.data.data() + src,
                  sizeof(T) * static_cast<size_t>(H));
    }
}

template <typename T>
static void rnn_direction_backward(const TensorT<T>& x, const TensorT<T>& Wx,
                                   const TensorT<T>& Wh, const TensorT<T>& h, bool reverse,
                                   const TensorT<T>& gy, int gy_offset, int gy_stride,
                                   std::vector<double>* gx_acc, std::vector<double>& gWx_acc,
                                   std::vector<double>& gWh_acc, std::vector<double>& gb_acc) {
  const int N = x.dim(0), Tn = x.dim(1), F = x.dim(2);
  const int H = Wh.dim(0);
  std::vector<double> carry(H), gpre(H);
  for (int n = 0; n < N; ++n) {
    std::fill(carry.begin(), carry.end(), 0.0);
    // Walk opposite to the forward direction of this RNN.
    for (int step = Tn - 1; step >= 0; --step) {
      const int t = reverse ? Tn - 1 - step : step;
      const int tprev = reverse ? t + 1 : t - 1;
      const T* hrow = h.data.data() + (static_cast<int64_t>(n) * Tn + t) * H;
      const T* hprev = (step == 0)
                           ? nullptr
                           : h.data.data() + (static_cast<int64_t>(n) * Tn + tprev) * H;
      const T* xrow = x.data.data() + (static_cast<int64_t>(n) * Tn + t) * F;
      const T* gyrow =
          gy.data.data() + (static_cast<int64_t>(n) * Tn + t) * gy_stride + gy_offset;
      for (int j = 0; j < H; ++j) {
        const double hj = static_cast<double>(hrow[j]);
        gpre[j] = (static_cast<double>(gyrow[j]) + carry[j]) * (1.0 - hj * hj);
        gb_acc[j] += gpre[j];
        double* gwx = gWx_acc.data() + static_cast<int64_t>(j) * F;
        for (int f = 0; f < F; ++f) gwx[f] += gpre[j] * static_cast<double>(xrow[f]);
        if (hprev) {
          double* gwh = gWh_acc.data() + static_cast<int64_t>(j) * H;
          for (int k = 0; k < H; ++k) gwh[k] += gpre[j] * static_cast<double>(hprev[k]);
        }
      }
      if (gx_acc) {
        double* gxrow = gx_acc->data() + (static_cast<int64_t>(n) * Tn + t) * F;
        for (int j = 0; j < H; ++j) {
          const T* wxrow = Wx.data.data() + static_cast<int64_t>(j) * F;
          for (int f = 0; f < F; ++f) gxrow[f] += gpre[j] * static_cast<double>(wxrow[f]);
        }
      }
      if (step > 0) {
        std::fill(carry.begin(), carry.end(), 0.0);
        for (int j = 0; j < H; ++j) {
          const T* whrow = Wh.data.data() + static_cast<int64_t>(j) * H;
          for (int k = 0; k < H; ++k) carry[k] += gpre[j] * static_cast<double>(whrow[k]);
        }
      }
    }
  }
}

template <typename T>
void birnn_backward(const TensorT<T>& x, const TensorT<T>& Wx_f, const TensorT<T>& Wh_f,
                    const TensorT<T>& Wx_b, const TensorT<T>& Wh_b, const TensorT<T>& h_f,
                    const TensorT<T>& h_b, const TensorT<T>& gy, TensorT<T>* gx,
                    TensorT<T>& gWx_f, TensorT<T>& gWh_f, TensorT<T>& gb_f, TensorT<T>& gWx_b,
                    TensorT<T>& gWh_b, TensorT<T>& gb_b) {
  const int F = x.dim(2);
  const int H = Wx_f.dim(0);
  gWx_f = TensorT<T>({H, F});
  gWh_f = TensorT<T>({H, H});
  gb_f = TensorT<T>({H});
  gWx_b = TensorT<T>({H, F});
  gWh_b = TensorT<T>({H, H});
  gb_b = TensorT<T>({H});
  std::vector<double> gwx_f(gWx_f.numel(), 0.0), gwh_f(gWh_f.numel(), 0.0), gb_fa(H, 0.0);
  std::vector<double> gwx_b(gWx_b.numel(), 0.0), gwh_b(gWh_b.numel(), 0.0), gb_ba(H, 0.0);
  std::vector<double> gx_acc;
  if (gx) gx_acc.assign(x.numel(), 0.0);
  rnn_direction_backward(x, Wx_f, Wh_f, h_f, false, gy, 0, 2 * H,
                         gx ? &gx_acc : nullptr, gwx_f, gwh_f, gb_fa);
  rnn_direction_backward(x, Wx_b, Wh_b, h_b, true, gy, H, 2 * H,
                         gx ? &gx_acc : nullptr, gwx_b, gwh_b, gb_ba);
  for (int64_t i = 0; i < gWx_f.numel(); ++i) gWx_f.data[i] = static_cast<T>(gwx_f[i]);
  for (int64_t i = 0; i < gWh_f.numel(); ++i) gWh_f.data[i] = static_cast<T>(gwh_f[i]);
  for (int i = 0; i < H; ++i) gb_f.data[i] = static_cast<T>(gb_fa[i]);
  for (int64_t i = 0; i < gWx_b.numel(); ++i) gWx_b.data[i] = static_cast<T>(gwx_b[i]);
  for (int64_t i = 0; i < gWh_b.numel(); ++i) gWh_b.data[i] = static_cast<T>(gwh_b[i]);
  for (int i = 0; i < H; ++i) gb_b.data[i] = static_cast<T>(gb_ba[i]);
  if (gx) {
    *gx = TensorT<T>(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) gx->data[i] = static_cast<T>(gx_acc[i]);
  }
}

template <typename T>
void softmax_forward(const TensorT<T>& x, TensorT<T>& y) {
  const ClassLayout lo = class_layout(x.shape);
  y = TensorT<T>(x.shape);
  for (int64_t o = 0; o < lo.outer; ++o) {
    for (int64_t i = 0; i < lo.inner; ++i) {
      const int64_t base = (o * lo.classes) * lo.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < lo.classes; ++c)
        mx = std::max(mx, static_cast<double>(x.data[base + static_cast<int64_t>(c) * lo.inner]));
      double sum = 0.0;
      for (int c = 0; c < lo.classes; ++c)
        sum += std::exp(static_cast<double>(x.data[base + static_cast<int64_t>(c) * lo.inner]) - mx);
      for (int c = 0; c < lo.classes; ++c) {
        const int64_t idx = base + static_cast<int64_t>(c) * lo.inner;
        y.data[idx] =
            static_cast<T>(std::exp(static_cast<double>(x.data[idx]) - mx) / sum);
      }
    }
  }
}

template <typename T>
void softmax_backward(const TensorT<T>& probs, const TensorT<T>& gy, TensorT<T>& gx) {
  const ClassLayout lo = class_layout(probs.shape);
  gx = TensorT<T>(probs.shape);
  for (int64_t o = 0; o < lo.outer; ++o) {
    for (int64_t i = 0; i < lo.inner; ++i) {
      const int64_t base = (o * lo.classes) * lo.inner + i;
      double dot = 0.0;
      for (int c = 0; c < lo.classes; ++c) {
        const int64_t idx = base + static_cast<int64_t>(c) * lo.inner;
        dot += static_cast<double>(gy.data[idx]) * static_cast<double>(probs.data[idx]);
      }
      for (int c = 0; c < lo.classes; ++c) {
        const int64_t idx = base + static_cast<int64_t>(c) * lo.inner;
        gx.data[idx] = static_cast<T>(static_cast<double>(probs.data[idx]) *
                                      (static_cast<double>(gy.data[idx]) - dot));
      }
    }
  }
}

template <typename T>
double xent_loss_and_logit_grad(const TensorT<T>& probs, const std::vector<int32_t>& targets,
                                TensorT<T>* glogits) {
  const ClassLayout lo = class_layout(probs.shape);
  const int64_t sites = lo.sites();
  if (static_cast<int64_t>(targets.size()) != sites)
    throw std::invalid_argument("xent: target count does not match prediction sites");
  if (glogits) *glogits = TensorT<T>(probs.shape);
  double loss = 0.0;
  constexpr double tiny = 1e-12;
  for (int64_t o = 0; o < lo.outer; ++o) {
    for (int64_t i = 0; i < lo.inner; ++i) {
      const int64_t site = o * lo.inner + i;
      const int32_t t = targets[site];
      if (t < 0 || t >= lo.classes) throw std::invalid_argument("xent: target out of range");
      const int64_t base = (o * lo.classes) * lo.inner + i;
      loss -= std::log(
          std::max(tiny, static_cast<double>(probs.data[base + static_cast<int64_t>(t) * lo.inner])));
      if (glogits) {
        for (int c = 0; c < lo.classes; ++c) {
          const int64_t idx = base + static_cast<int64_t>(c) * lo.inner;
          const double p = static_cast<double>(probs.data[idx]);
          const double onehot = (c == t) ? 1.0 : 0.0;
          glogits->data[idx] = static_cast<T>((p - onehot) / static_cast<double>(sites));
        }
      }
    }
  }
  return loss / static_cast<double>(sites);
}

#define SQW_INSTANTIATE_KERNELS(T)                                                            \
  template void dense_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                                 TensorT<T>&);                                                \
  template void dense_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                  TensorT<T>*, TensorT<T>&, TensorT<T>&);                     \
  template void conv2d_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                  TensorT<T>&);                                               \
  template void conv2d_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,   \
                                   TensorT<T>*, TensorT<T>&, TensorT<T>&);                    \
  template void relu_forward<T>(const TensorT<T>&, TensorT<T>&);                              \
  template void relu_backward<T>(const TensorT<T>&, const TensorT<T>&, TensorT<T>&);          \
  template void maxpool2x2_forward<T>(const TensorT<T>&, TensorT<T>&, std::vector<int64_t>&); \
  template void maxpool2x2_backward<T>(const TensorT<T>&, const std::vector<int64_t>&,        \
                                       TensorT<T>&);                                          \
  template void upsample2x2_forward<T>(const TensorT<T>&, TensorT<T>&);                       \
  template void upsample2x2_backward<T>(const TensorT<T>&, TensorT<T>&);                      \
  template void pad2d_forward<T>(const TensorT<T>&, int, TensorT<T>&);                        \
  template void pad2d_backward<T>(const TensorT<T>&, int, TensorT<T>&);                       \
  template void birnn_forward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                                 const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,     \
                                 const TensorT<T>&, TensorT<T>&, TensorT<T>&, TensorT<T>&);   \
  template void birnn_backward<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                  const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,    \
                                  const TensorT<T>&, const TensorT<T>&, TensorT<T>*,          \
                                  TensorT<T>&, TensorT<T>&, TensorT<T>&, TensorT<T>&,         \
                                  TensorT<T>&, TensorT<T>&);                                  \
  template void softmax_forward<T>(const TensorT<T>&, TensorT<T>&);                           \
  template void softmax_backward<T>(const TensorT<T>&, const TensorT<T>&, TensorT<T>&);       \
  template double xent_loss_and_logit_grad<T>(const TensorT<T>&,                              \
                                              const std::vector<int32_t>&, TensorT<T>*);

SQW_INSTANTIATE_KERNELS(float)
SQW_INSTANTIATE_KERNELS(double)

#undef SQW_INSTANTIATE_KERNELS

}  // namespace kern

}  // namespace sqw
