#include "sqw/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace sqw {

namespace {

float clamp01(double v) { return static_cast<float>(std::min(1.0, std::max(0.0, v))); }

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    return u * u + v * v <= 1.0;
  }
};

}  // namespace

Dataset generate_seg(const SegParams& p, uint64_t seed) {
  if (p.image_size < 16 || p.count <= 0) throw std::invalid_argument("bad seg params");
  Rng rng(seed);
  const int S = p.image_size;
  Dataset ds;
  ds.inputs = Tensor({p.count, 1, S, S});
  ds.labels.assign(static_cast<size_t>(p.count) * S * S, 0);
  ds.sites_per_sample = static_cast<int64_t>(S) * S;
  ds.num_classes = 2;
  for (int n = 0; n < p.count; ++n) {
    const bool hard = rng.uniform() < p.hard_fraction;
    const double contrast = hard ? p.hard_contrast : p.easy_contrast;
    const double rmin = hard ? S / 12.0 : S / 8.0;
    const double rmax = hard ? S / 8.0 : S / 4.0;
    const int blobs = 1 + static_cast<int>(rng.next_below(3));
    std::vector<Ellipse> shapes;
    for (int k = 0; k < blobs; ++k) {
      Ellipse e;
      e.cx = rng.uniform(S * 0.25, S * 0.75);
      e.cy = rng.uniform(S * 0.25, S * 0.75);
      e.a = rng.uniform(rmin, rmax);
      e.b = rng.uniform(rmin, rmax);
      const double t = rng.uniform(0.0, 3.14159265358979323846);
      e.cos_t = std::cos(t);
      e.sin_t = std::sin(t);
      shapes.push_back(e);
    }
    const double phase_x = rng.uniform(0.0, 6.28);
    const double phase_y = rng.uniform(0.0, 6.28);
    float* img = ds.inputs.data.data() + static_cast<int64_t>(n) * S * S;
    int32_t* lab = ds.labels.data() + static_cast<int64_t>(n) * S * S;
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        bool inside = false;
        for (const auto& e : shapes)
          if (e.contains(x + 0.5, y + 0.5)) {
            inside = true;
            break;
          }
        const double texture =
            0.05 * std::sin(0.9 * x + phase_x) * std::sin(0.9 * y + phase_y);
        double v = 0.35 + (inside ? contrast : 0.0) + (inside ? texture : -texture * 0.5);
        v += rng.normal(0.0, p.noise);
        img[y * S + x] = clamp01(v);
        lab[y * S + x] = inside ? 1 : 0;
      }
    }
  }
  return ds;
}

namespace {

// Glyph painters on an S x S canvas, value 1 inside the glyph.
void paint_glyph(int cls, int S, double cx, double cy, double r, std::vector<float>& img) {
  auto at = [&](int x, int y) -> float& { return img[static_cast<size_t>(y) * S + x]; };
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      bool on = false;
      switch (cls) {
        case 0:  // filled square
          on = std::abs(dx) <= r && std::abs(dy) <= r;
          break;
        case 1:  // disk
          on = dx * dx + dy * dy <= r * r;
          break;
        case 2:  // filled triangle, apex up
          on = dy >= -r && dy <= r && std::abs(dx) <= (dy + r) * 0.6;
          break;
        case 3:  // plus
          on = (std::abs(dx) <= r * 0.35 && std::abs(dy) <= r) ||
               (std::abs(dy) <= r * 0.35 && std::abs(dx) <= r);
          break;
        case 4: {  // ring
          const double d = std::sqrt(dx * dx + dy * dy);
          on = d <= r && d >= r - 1.6;
          break;
        }
        case 5:  // horizontal bar
          on = std::abs(dy) <= r * 0.35 && std::abs(dx) <= r;
          break;
        case 6:  // vertical bar
          on = std::abs(dx) <= r * 0.35 && std::abs(dy) <= r;
          break;
        case 7:  // X
          on = (std::abs(dx - dy) <= 1.2 || std::abs(dx + dy) <= 1.2) &&
               std::abs(dx) <= r && std::abs(dy) <= r;
          break;
        default:
          break;
      }
      if (on) at(x, y) = 1.0f;
    }
  }
}

}  // namespace

Dataset generate_cls(const ClsParams& p, uint64_t seed) {
  if (p.num_classes < 2 || p.num_classes > 8 || p.count <= 0 || p.image_size < 12)
    throw std::invalid_argument("bad cls params");
  Rng rng(seed);
  const int S = p.image_size;
  Dataset ds;
  ds.inputs = Tensor({p.count, 1, S, S});
  ds.labels.assign(p.count, 0);
  ds.sites_per_sample = 1;
  ds.num_classes = p.num_classes;
  std::vector<float> canvas(static_cast<size_t>(S) * S);
  for (int n = 0; n < p.count; ++n) {
    const int cls = static_cast<int>(rng.next_below(static_cast<uint64_t>(p.num_classes)));
    std::fill(canvas.begin(), canvas.end(), 0.0f);
    const double cx = S / 2.0 + rng.uniform(-double(p.max_shift), double(p.max_shift));
    const double cy = S / 2.0 + rng.uniform(-double(p.max_shift), double(p.max_shift));
    const double r = rng.uniform(S * 0.22, S * 0.34);
    paint_glyph(cls, S, cx, cy, r, canvas);
    float* img = ds.inputs.data.data() + static_cast<int64_t>(n) * S * S;
    for (int i = 0; i < S * S; ++i)
      img[i] = clamp01(static_cast<double>(canvas[static_cast<size_t>(i)]) * 0.8 + 0.1 +
                       rng.normal(0.0, p.noise));
    ds.labels[static_cast<size_t>(n)] = cls;
  }
  return ds;
}

Dataset generate_asr(const AsrParams& p, uint64_t seed) {
  if (p.num_classes < 2 || p.seq_len <= 0 || p.feat_dim <= 0 || p.count <= 0 ||
      p.min_run <= 0 || p.max_run < p.min_run)
    throw std::invalid_argument("bad asr params");
  Rng rng(seed);
  // Emitter means come from a dedicated stream so sequence sampling does not
  // disturb them when count changes.
  Rng mean_rng = rng.fork(1);
  std::vector<std::vector<double>> means(static_cast<size_t>(p.num_classes));
  for (auto& m : means) {
    m.resize(static_cast<size_t>(p.feat_dim));
    for (auto& v : m) v = mean_rng.normal(0.0, p.class_sep);
  }
  Dataset ds;
  ds.inputs = Tensor({p.count, p.seq_len, p.feat_dim});
  ds.labels.assign(static_cast<size_t>(p.count) * p.seq_len, 0);
  ds.sites_per_sample = p.seq_len;
  ds.num_classes = p.num_classes;
  for (int n = 0; n < p.count; ++n) {
    int t = 0;
    while (t < p.seq_len) {
      const int cls = static_cast<int>(rng.next_below(static_cast<uint64_t>(p.num_classes)));
      const int run = p.min_run +
                      static_cast<int>(rng.next_below(static_cast<uint64_t>(p.max_run - p.min_run + 1)));
      for (int k = 0; k < run && t < p.seq_len; ++k, ++t) {
        ds.labels[static_cast<size_t>(n) * p.seq_len + t] = cls;
        float* frame =
            ds.inputs.data.data() + (static_cast<int64_t>(n) * p.seq_len + t) * p.feat_dim;
        for (int f = 0; f < p.feat_dim; ++f)
          frame[f] = static_cast<float>(means[static_cast<size_t>(cls)][static_cast<size_t>(f)] +
                                        rng.normal(0.0, p.noise));
      }
    }
  }
  return ds;
}

namespace {

uint32_t read_be32(std::istream& f, const std::string& path) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw std::runtime_error("truncated IDX file: " + path);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) | (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_be32(std::ostream& f, uint32_t v) {
  const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8), uint8_t(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Tensor read_idx_images(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open IDX file: " + path);
  const uint32_t magic = read_be32(f, path);
  if (magic != 0x00000803u) throw std::runtime_error("bad IDX image magic in " + path);
  const uint32_t n = read_be32(f, path);
  const uint32_t h = read_be32(f, path);
  const uint32_t w = read_be32(f, path);
  if (n == 0 || h == 0 || w == 0) throw std::runtime_error("empty IDX image file: " + path);
  const int64_t count = static_cast<int64_t>(n) * h * w;
  std::vector<uint8_t> raw(static_cast<size_t>(count));
  f.read(reinterpret_cast<char*>(raw.data()), count);
  if (!f) throw std::runtime_error("truncated IDX file: " + path);
  Tensor t({static_cast<int>(n), 1, static_cast<int>(h), static_cast<int>(w)});
  for (int64_t i = 0; i < count; ++i)
    t.data[i] = static_cast<float>(raw[static_cast<size_t>(i)]) / 255.0f;
  return t;
}

std::vector<int32_t> read_idx_labels(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open IDX file: " + path);
  const uint32_t magic = read_be32(f, path);
  if (magic != 0x00000801u) throw std::runtime_error("bad IDX label magic in " + path);
  const uint32_t n = read_be32(f, path);
  std::vector<uint8_t> raw(n);
  f.read(reinterpret_cast<char*>(raw.data()), n);
  if (!f) throw std::runtime_error("truncated IDX file: " + path);
  return std::vector<int32_t>(raw.begin(), raw.end());
}

void write_idx_images(const std::string& path, const Tensor& images01) {
  if (images01.rank() != 4 || images01.dim(1) != 1)
    throw std::invalid_argument("write_idx_images expects [N,1,H,W]");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_be32(f, 0x00000803u);
  write_be32(f, static_cast<uint32_t>(images01.dim(0)));
  write_be32(f, static_cast<uint32_t>(images01.dim(2)));
  write_be32(f, static_cast<uint32_t>(images01.dim(3)));
  for (float v : images01.data) {
    const double scaled = std::min(1.0, std::max(0.0, static_cast<double>(v))) * 255.0;
    const uint8_t b = static_cast<uint8_t>(std::lround(scaled));
    f.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

void write_idx_labels(const std::string& path, const std::vector<int32_t>& labels) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  write_be32(f, 0x00000801u);
  write_be32(f, static_cast<uint32_t>(labels.size()));
  for (int32_t v : labels) {
    if (v < 0 || v > 255) throw std::invalid_argument("IDX labels must fit in a byte");
    const uint8_t b = static_cast<uint8_t>(v);
    f.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  Dataset ds;
  ds.inputs = read_idx_images(images_path);
  ds.labels = read_idx_labels(labels_path);
  if (static_cast<int64_t>(ds.labels.size()) != ds.inputs.dim(0))
    throw std::runtime_error("IDX image/label count mismatch");
  ds.sites_per_sample = 1;
  int32_t max_label = 0;
  for (int32_t v : ds.labels) max_label = std::max(max_label, v);
  ds.num_classes = max_label + 1;
  return ds;
}

Dataset subset(const Dataset& ds, const std::vector<int64_t>& idx) {
  Dataset out;
  std::vector<int> shape = ds.inputs.shape;
  shape[0] = static_cast<int>(idx.size());
  out.inputs = Tensor(shape);
  out.labels.resize(idx.size() * ds.sites_per_sample);
  out.sites_per_sample = ds.sites_per_sample;
  out.num_classes = ds.num_classes;
  const int64_t per = ds.size() > 0 ? ds.inputs.numel() / ds.size() : 0;
  for (size_t r = 0; r < idx.size(); ++r) {
    const int64_t n = idx[r];
    if (n < 0 || n >= ds.size()) throw std::out_of_range("subset: sample index");
    std::memcpy(out.inputs.data.data() + static_cast<int64_t>(r) * per,
                ds.inputs.data.data() + n * per, sizeof(float) * static_cast<size_t>(per));
    std::memcpy(out.labels.data() + static_cast<int64_t>(r) * ds.sites_per_sample,
                ds.labels.data() + n * ds.sites_per_sample,
                sizeof(int32_t) * static_cast<size_t>(ds.sites_per_sample));
  }
  return out;
}

void append_samples(Dataset& dst, const Dataset& src, const std::vector<int64_t>& idx) {
  if (dst.size() == 0 && dst.inputs.rank() == 0) {
    dst = subset(src, idx);
    return;
  }
  if (dst.sites_per_sample != src.sites_per_sample || dst.num_classes != src.num_classes)
    throw std::invalid_argument("append_samples: incompatible datasets");
  std::vector<int> dshape = dst.inputs.shape, sshape = src.inputs.shape;
  dshape[0] = sshape[0] = 0;
  if (dshape != sshape) throw std::invalid_argument("append_samples: shape mismatch");
  Dataset added = subset(src, idx);
  dst.inputs.data.insert(dst.inputs.data.end(), added.inputs.data.begin(),
                         added.inputs.data.end());
  dst.inputs.shape[0] += static_cast<int>(idx.size());
  dst.labels.insert(dst.labels.end(), added.labels.begin(), added.labels.end());
}

}  // namespace sqw
