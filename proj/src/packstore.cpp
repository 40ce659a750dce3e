#include "sqw/packstore.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

namespace sqw {

static constexpr char kMagic[4] = {'S', 'Q', 'W', '1'};
static constexpr uint16_t kVersion = 1;
static constexpr int64_t kMaxTensorElems = int64_t(1) << 40;

int64_t PackedTensor::numel() const {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

LevelSet PackedTensor::level_set() const {
  if (dtype != PackedDtype::packed) throw std::logic_error("float32 tensor has no level set");
  return LevelSet{bit_width, n1, n2};
}

const PackedTensor* PackedModel::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

static int64_t payload_bytes(int bit_width, int64_t n) {
  return (static_cast<int64_t>(bit_width) * n + 7) / 8;
}

PackedTensor pack_codes(const std::string& name, const std::vector<int>& shape,
                        const std::vector<QuantCode>& codes, const LevelSet& ls) {
  check_level_set(ls);
  if (name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
  if (shape.empty() || shape.size() > 255) throw std::invalid_argument("bad tensor rank");
  if (ls.n1 > 32767 || ls.n1 < -32768 || ls.n2 > 32767 || ls.n2 < -32768)
    throw std::invalid_argument("level set exponents out of storable range");
  PackedTensor t;
  t.name = name;
  t.shape = shape;
  t.dtype = PackedDtype::packed;
  t.bit_width = ls.bit_width;
  t.n1 = static_cast<int16_t>(ls.n1);
  t.n2 = static_cast<int16_t>(ls.n2);
  const int64_t n = t.numel();
  if (static_cast<int64_t>(codes.size()) != n)
    throw std::invalid_argument("code count does not match shape");
  t.payload.assign(payload_bytes(ls.bit_width, n), 0);
  for (int64_t i = 0; i < n; ++i) {
    const uint32_t v = code_bits(codes[i], ls);
    const int64_t base = i * ls.bit_width;
    for (int k = 0; k < ls.bit_width; ++k) {
      if ((v >> k) & 1u) t.payload[(base + k) >> 3] |= uint8_t(1u << ((base + k) & 7));
    }
  }
  return t;
}

std::vector<QuantCode> unpack_codes(const PackedTensor& t) {
  if (t.dtype != PackedDtype::packed) throw std::logic_error("tensor is not packed");
  const LevelSet ls = t.level_set();
  const int64_t n = t.numel();
  if (static_cast<int64_t>(t.payload.size()) != payload_bytes(ls.bit_width, n))
    throw PackFormatError("payload size does not match shape");
  std::vector<QuantCode> codes(n);
  for (int64_t i = 0; i < n; ++i) {
    uint32_t v = 0;
    const int64_t base = i * ls.bit_width;
    for (int k = 0; k < ls.bit_width; ++k)
      v |= uint32_t((t.payload[(base + k) >> 3] >> ((base + k) & 7)) & 1u) << k;
    codes[i] = code_from_bits(v, ls);
    if (codes[i].magnitude_index > static_cast<uint16_t>(ls.levels()))
      throw PackFormatError("code magnitude index out of range");
  }
  return codes;
}

std::vector<float> tensor_values(const PackedTensor& t) {
  if (t.dtype == PackedDtype::float32) {
    if (static_cast<int64_t>(t.values.size()) != t.numel())
      throw PackFormatError("float tensor value count mismatch");
    return t.values;
  }
  const LevelSet ls = t.level_set();
  const std::vector<QuantCode> codes = unpack_codes(t);
  std::vector<float> out(codes.size());
  for (size_t i = 0; i < codes.size(); ++i)
    out[i] = static_cast<float>(decode_level(codes[i], ls));
  return out;
}

PackedModel pack_model(const ModelGraph& model, const PartitionState* state) {
  PackedModel pm;
  for (size_t l = 0; l < model.layers.size(); ++l) {
    for (size_t p = 0; p < model.layers[l].params.size(); ++p) {
      const auto& par = model.layers[l].params[p];
      const TensorPartition* unit = nullptr;
      if (state && l < state->units.size() && p < state->units[l].size() &&
          state->units[l][p].active)
        unit = &state->units[l][p];
      const bool fully_quantized =
          unit && unit->quantized_count() == static_cast<int64_t>(unit->free_mask.size());
      if (fully_quantized) {
        pm.tensors.push_back(pack_codes(par.name, par.value.shape, unit->codes, unit->level_set));
      } else {
        PackedTensor t;
        t.name = par.name;
        t.shape = par.value.shape;
        t.dtype = PackedDtype::float32;
        t.values = par.value.data;
        pm.tensors.push_back(std::move(t));
      }
    }
  }
  return pm;
}

namespace {

void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }
void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(uint8_t(v & 0xff));
  b.push_back(uint8_t(v >> 8));
}
void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(uint8_t((v >> (8 * i)) & 0xff));
}
void put_i16(std::vector<uint8_t>& b, int16_t v) { put_u16(b, static_cast<uint16_t>(v)); }
void put_f32(std::vector<uint8_t>& b, float v) { put_u32(b, std::bit_cast<uint32_t>(v)); }

struct Cursor {
  const std::vector<uint8_t>& b;
  size_t off = 0;

  void need(size_t n) const {
    if (off + n > b.size()) throw TruncatedError("truncated file");
  }
  uint8_t u8() {
    need(1);
    return b[off++];
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = uint16_t(b[off]) | uint16_t(b[off + 1]) << 8;
    off += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  int16_t i16() { return static_cast<int16_t>(u16()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + off), n);
    off += n;
    return s;
  }
  std::vector<uint8_t> bytes(size_t n) {
    need(n);
    std::vector<uint8_t> v(b.begin() + off, b.begin() + off + n);
    off += n;
    return v;
  }
};

}  // namespace

std::vector<uint8_t> serialize(const PackedModel& m) {
  if (m.tensors.size() > 0xffff) throw std::invalid_argument("too many tensors");
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kVersion);
  put_u16(out, static_cast<uint16_t>(m.tensors.size()));
  for (const auto& t : m.tensors) {
    if (t.name.size() > 0xffff) throw std::invalid_argument("tensor name too long");
    if (t.shape.empty() || t.shape.size() > 255) throw std::invalid_argument("bad tensor rank");
    put_u16(out, static_cast<uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put_u8(out, static_cast<uint8_t>(t.dtype));
    put_u8(out, static_cast<uint8_t>(t.shape.size()));
    for (int d : t.shape) {
      if (d <= 0) throw std::invalid_argument("non-positive dimension");
      put_u32(out, static_cast<uint32_t>(d));
    }
    if (t.dtype == PackedDtype::packed) {
      if (t.bit_width < 2 || t.bit_width > 16) throw std::invalid_argument("bad bit width");
      if (static_cast<int64_t>(t.payload.size()) != payload_bytes(t.bit_width, t.numel()))
        throw std::invalid_argument("payload size mismatch");
      put_u8(out, static_cast<uint8_t>(t.bit_width));
      put_i16(out, t.n1);
      put_i16(out, t.n2);
      out.insert(out.end(), t.payload.begin(), t.payload.end());
    } else {
      if (static_cast<int64_t>(t.values.size()) != t.numel())
        throw std::invalid_argument("value count mismatch");
      for (float v : t.values) put_f32(out, v);
    }
  }
  return out;
}

PackedModel deserialize(const std::vector<uint8_t>& bytes) {
  Cursor c{bytes};
  c.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw BadMagicError("bad magic bytes");
  c.off = 4;
  const uint16_t version = c.u16();
  if (version != kVersion)
    throw BadVersionError("unsupported version " + std::to_string(version));
  const uint16_t count = c.u16();
  PackedModel m;
  m.tensors.reserve(count);
  for (uint16_t ti = 0; ti < count; ++ti) {
    PackedTensor t;
    const uint16_t name_len = c.u16();
    t.name = c.str(name_len);
    const uint8_t dtype = c.u8();
    if (dtype > 1) throw PackFormatError("unknown dtype byte");
    t.dtype = static_cast<PackedDtype>(dtype);
    const uint8_t rank = c.u8();
    if (rank == 0) throw PackFormatError("zero-rank tensor");
    int64_t n = 1;
    for (int r = 0; r < rank; ++r) {
      const uint32_t d = c.u32();
      if (d == 0) throw PackFormatError("zero dimension");
      t.shape.push_back(static_cast<int>(d));
      n *= d;
      if (n > kMaxTensorElems) throw PackFormatError("tensor too large");
    }
    if (t.dtype == PackedDtype::packed) {
      t.bit_width = c.u8();
      if (t.bit_width < 2 || t.bit_width > 16) throw PackFormatError("bad bit width");
      t.n1 = c.i16();
      t.n2 = c.i16();
      if (t.n1 - t.n2 + 1 != (1 << (t.bit_width - 1)) - 1)
        throw PackFormatError("level count does not match bit width");
      t.payload = c.bytes(static_cast<size_t>(payload_bytes(t.bit_width, n)));
      const int64_t used_bits = static_cast<int64_t>(t.bit_width) * n;
      for (int64_t bit = used_bits; bit < static_cast<int64_t>(t.payload.size()) * 8; ++bit)
        if ((t.payload[bit >> 3] >> (bit & 7)) & 1u)
          throw PackFormatError("nonzero pad bits");
    } else {
      t.values.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) t.values[static_cast<size_t>(i)] = c.f32();
    }
    m.tensors.push_back(std::move(t));
  }
  if (c.off != bytes.size()) throw PackFormatError("trailing bytes after last tensor");
  return m;
}

void save_packed(const std::string& path, const PackedModel& m) {
  const std::vector<uint8_t> bytes = serialize(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

PackedModel load_packed(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

void load_into_model(ModelGraph& model, const PackedModel& pm) {
  size_t matched = 0;
  for (auto& layer : model.layers) {
    for (auto& par : layer.params) {
      const PackedTensor* t = pm.find(par.name);
      if (!t) throw std::runtime_error("missing tensor: " + par.name);
      if (t->shape != par.value.shape)
        throw std::runtime_error("shape mismatch for tensor: " + par.name);
      par.value.data = tensor_values(*t);
      ++matched;
    }
  }
  if (matched != pm.tensors.size())
    throw std::runtime_error("file contains tensors unknown to the model");
}

MemoryReport memory_report(const PackedModel& m) {
  MemoryReport r;
  int64_t float_bits = 0, packed_bits = 0;
  for (const auto& t : m.tensors) {
    const int64_t n = t.numel();
    r.whole_model_float_bytes += 4 * n;
    if (t.dtype == PackedDtype::packed) {
      r.float_bytes += 4 * n;
      r.packed_bytes += static_cast<int64_t>(t.payload.size());
      r.whole_model_bytes += static_cast<int64_t>(t.payload.size());
      float_bits += 32 * n;
      packed_bits += static_cast<int64_t>(t.bit_width) * n;
    } else {
      r.whole_model_bytes += 4 * n;
    }
  }
  // Bit-level ratio: byte padding adds at most 7 bits per tensor and would
  // otherwise perturb the 32/b figure.
  r.reduction_ratio = packed_bits > 0
                          ? static_cast<double>(float_bits) / static_cast<double>(packed_bits)
                          : 1.0;
  r.whole_model_ratio = r.whole_model_bytes > 0
                            ? static_cast<double>(r.whole_model_float_bytes) /
                                  static_cast<double>(r.whole_model_bytes)
                            : 1.0;
  return r;
}

ShiftAddNet prepare_shiftadd(const ModelGraph& arch, const PackedModel& pm) {
  ShiftAddNet net;
  net.input_shape = arch.input_shape;
  int64_t zero_codes = 0, total_codes = 0;
  for (const auto& layer : arch.layers) {
    net.specs.push_back(layer.spec);
    std::vector<SaParam> lp;
    for (const auto& par : layer.params) {
      const PackedTensor* t = pm.find(par.name);
      if (!t) throw std::runtime_error("missing tensor: " + par.name);
      if (t->shape != par.value.shape)
        throw std::runtime_error("shape mismatch for tensor: " + par.name);
      SaParam sp;
      sp.shape = t->shape;
      if (par.quantizable) {
        if (t->dtype != PackedDtype::packed) throw std::runtime_error("requires quantized model");
        sp.is_packed = true;
        const LevelSet ls = t->level_set();
        const std::vector<QuantCode> codes = unpack_codes(*t);
        sp.sign.resize(codes.size());
        sp.expo.resize(codes.size());
        for (size_t i = 0; i < codes.size(); ++i) {
          total_codes += 1;
          if (codes[i].magnitude_index == 0) {
            sp.sign[i] = 0;
            sp.expo[i] = 0;
            zero_codes += 1;
          } else {
            sp.sign[i] = codes[i].sign;
            sp.expo[i] = static_cast<int16_t>(ls.n1 - (codes[i].magnitude_index - 1));
          }
        }
      } else {
        sp.values = tensor_values(*t);
      }
      lp.push_back(std::move(sp));
    }
    net.params.push_back(std::move(lp));
  }
  net.zero_skip_rate =
      total_codes > 0 ? static_cast<double>(zero_codes) / static_cast<double>(total_codes) : 0.0;
  return net;
}

namespace {

// These loops mirror the multiply kernels term for term; only the product is
// replaced by an exact power-of-two scaling. Zero codes contribute nothing,
// which matches adding a zero product.

void sa_dense(const Tensor& x2d, const SaParam& W, const SaParam& b, Tensor& y) {
  const int R = x2d.dim(0), I = x2d.dim(1), U = W.shape[0];
  y = Tensor({R, U});
  for (int r = 0; r < R; ++r) {
    const float* xrow = x2d.data.data() + static_cast<int64_t>(r) * I;
    for (int u = 0; u < U; ++u) {
      double acc = static_cast<double>(b.values[u]);
      const int64_t base = static_cast<int64_t>(u) * I;
      for (int i = 0; i < I; ++i) {
        const int8_t s = W.sign[base + i];
        if (!s) continue;
        const double c = std::ldexp(static_cast<double>(xrow[i]), W.expo[base + i]);
        acc += (s > 0) ? c : -c;
      }
      y.data[static_cast<int64_t>(r) * U + u] = static_cast<float>(acc);
    }
  }
}

void sa_conv2d(const Tensor& x, const SaParam& W, const SaParam& b, Tensor& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), Wd = x.dim(3);
  const int OC = W.shape[0], K = W.shape[2];
  const int OH = H - K + 1, OW = Wd - K + 1;
  y = Tensor({N, OC, OH, OW});
  for (int n = 0; n < N; ++n) {
    for (int oc = 0; oc < OC; ++oc) {
      const double bias = static_cast<double>(b.values[oc]);
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          double acc = bias;
          for (int ic = 0; ic < C; ++ic) {
            for (int ky = 0; ky < K; ++ky) {
              const float* xrow =
                  x.data.data() + (((static_cast<int64_t>(n) * C + ic) * H + oy + ky) * Wd + ox);
              const int64_t wbase = ((static_cast<int64_t>(oc) * C + ic) * K + ky) * K;
              for (int kx = 0; kx < K; ++kx) {
                const int8_t s = W.sign[wbase + kx];
                if (!s) continue;
                const double c = std::ldexp(static_cast<double>(xrow[kx]), W.expo[wbase + kx]);
                acc += (s > 0) ? c : -c;
              }
            }
          }
          y.data[((static_cast<int64_t>(n) * OC + oc) * OH + oy) * OW + ox] =
              static_cast<float>(acc);
        }
      }
    }
  }
}

void sa_rnn_direction(const Tensor& x, const SaParam& Wx, const SaParam& Wh,
                      const SaParam& b, bool reverse, Tensor& h) {
  const int N = x.dim(0), Tn = x.dim(1), F = x.dim(2);
  const int H = Wx.shape[0];
  h = Tensor({N, Tn, H});
  for (int n = 0; n < N; ++n) {
    for (int step = 0; step < Tn; ++step) {
      const int t = reverse ? Tn - 1 - step : step;
      const int tprev = reverse ? t + 1 : t - 1;
      const float* xrow = x.data.data() + (static_cast<int64_t>(n) * Tn + t) * F;
      const float* hprev =
          (step == 0) ? nullptr : h.data.data() + (static_cast<int64_t>(n) * Tn + tprev) * H;
      float* hrow = h.data.data() + (static_cast<int64_t>(n) * Tn + t) * H;
      for (int j = 0; j < H; ++j) {
        double acc = static_cast<double>(b.values[j]);
        const int64_t xb = static_cast<int64_t>(j) * F;
        for (int f = 0; f < F; ++f) {
          const int8_t s = Wx.sign[xb + f];
          if (!s) continue;
          const double c = std::ldexp(static_cast<double>(xrow[f]), Wx.expo[xb + f]);
          acc += (s > 0) ? c : -c;
        }
        if (hprev) {
          const int64_t hb = static_cast<int64_t>(j) * H;
          for (int k = 0; k < H; ++k) {
            const int8_t s = Wh.sign[hb + k];
            if (!s) continue;
            const double c = std::ldexp(static_cast<double>(hprev[k]), Wh.expo[hb + k]);
            acc += (s > 0) ? c : -c;
          }
        }
        hrow[j] = std::tanh(static_cast<float>(acc));
      }
    }
  }
}

Tensor sa_as_2d(const Tensor& x) {
  switch (x.rank()) {
    case 2: return x;
    case 3: return x.reshaped({x.dim(0) * x.dim(1), x.dim(2)});
    case 4: return x.reshaped({x.dim(0), static_cast<int>(x.numel() / x.dim(0))});
    default: throw std::invalid_argument("dense: unsupported input rank");
  }
}

}  // namespace

Tensor shiftadd_forward(const ShiftAddNet& net, const Tensor& x) {
  Tensor cur = x;
  for (size_t i = 0; i < net.specs.size(); ++i) {
    const LayerSpec& spec = net.specs[i];
    Tensor out;
    switch (spec.kind) {
      case LayerKind::dense: {
        const Tensor x2d = sa_as_2d(cur);
        Tensor y2d;
        sa_dense(x2d, net.params[i][0], net.params[i][1], y2d);
        out = (cur.rank() == 3) ? y2d.reshaped({cur.dim(0), cur.dim(1), spec.units})
                                : std::move(y2d);
        break;
      }
      case LayerKind::conv2d:
        sa_conv2d(cur, net.params[i][0], net.params[i][1], out);
        break;
      case LayerKind::relu:
        kern::relu_forward(cur, out);
        break;
      case LayerKind::maxpool2x2: {
        std::vector<int64_t> argmax;
        kern::maxpool2x2_forward(cur, out, argmax);
        break;
      }
      case LayerKind::upsample2x2:
        kern::upsample2x2_forward(cur, out);
        break;
      case LayerKind::pad2d:
        kern::pad2d_forward(cur, spec.pad, out);
        break;
      case LayerKind::birnn: {
        Tensor hf, hb;
        sa_rnn_direction(cur, net.params[i][0], net.params[i][1], net.params[i][2], false, hf);
        sa_rnn_direction(cur, net.params[i][3], net.params[i][4], net.params[i][5], true, hb);
        const int N = cur.dim(0), Tn = cur.dim(1), H = net.params[i][0].shape[0];
        out = Tensor({N, Tn, 2 * H});
        for (int n = 0; n < N; ++n)
          for (int t = 0; t < Tn; ++t) {
            const int64_t src = (static_cast<int64_t>(n) * Tn + t) * H;
            const int64_t dst = (static_cast<int64_t>(n) * Tn + t) * 2 * H;
            std::memcpy(out.data.data() + dst, hf.data.data() + src, sizeof(float) * H);
            std::memcpy(out.data.data() + dst + H, hb.data.data() + src, sizeof(float) * H);
          }
        break;
      }
      case LayerKind::softmax_output:
        kern::softmax_forward(cur, out);
        break;
    }
    cur = std::move(out);
  }
  return cur;
}

BenchReport bench(const ModelGraph& arch, const PackedModel& pm, const Tensor& batch,
                  int repetitions) {
  if (repetitions < 1) throw std::invalid_argument("bench: repetitions must be >= 1");
  ModelGraph mul = arch;
  load_into_model(mul, pm);
  const ShiftAddNet net = prepare_shiftadd(arch, pm);
  auto median_ms = [&](auto&& run) {
    std::vector<double> ms(static_cast<size_t>(repetitions));
    for (int r = 0; r < repetitions; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      run();
      const auto t1 = std::chrono::steady_clock::now();
      ms[static_cast<size_t>(r)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    std::sort(ms.begin(), ms.end());
    return ms[ms.size() / 2];
  };
  Workspace ws;
  BenchReport rep;
  rep.repetitions = repetitions;
  rep.multiply_ms = median_ms([&] { forward(mul, batch, ws); });
  rep.shiftadd_ms = median_ms([&] { shiftadd_forward(net, batch); });
  rep.speedup = rep.shiftadd_ms > 0.0 ? rep.multiply_ms / rep.shiftadd_ms : 0.0;
  rep.zero_skip_rate = net.zero_skip_rate;
  return rep;
}

}  // namespace sqw
