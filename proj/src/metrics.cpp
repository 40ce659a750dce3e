#include "sqw/metrics.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

namespace sqw {

double metric_dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                   bool* both_empty) {
  if (pred.size() != truth.size()) throw std::invalid_argument("dice: mask size mismatch");
  int64_t inter = 0, a = 0, b = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    a += p;
    b += t;
    inter += (p && t);
  }
  if (both_empty) *both_empty = (a + b == 0);
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::vector<int> connected_components(const std::vector<uint8_t>& mask, int h, int w,
                                      int* count) {
  if (static_cast<size_t>(h) * w != mask.size())
    throw std::invalid_argument("connected_components: size mismatch");
  std::vector<int> ids(mask.size(), -1);
  std::vector<int> stack;
  int next = 0;
  for (int start = 0; start < h * w; ++start) {
    if (!mask[static_cast<size_t>(start)] || ids[static_cast<size_t>(start)] >= 0) continue;
    stack.assign(1, start);
    ids[static_cast<size_t>(start)] = next;
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      const int cy = cur / w, cx = cur % w;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int ny = cy + dy, nx = cx + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int ni = ny * w + nx;
          if (mask[static_cast<size_t>(ni)] && ids[static_cast<size_t>(ni)] < 0) {
            ids[static_cast<size_t>(ni)] = next;
            stack.push_back(ni);
          }
        }
      }
    }
    ++next;
  }
  if (count) *count = next;
  return ids;
}

double metric_object_f1(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                        int h, int w) {
  if (pred.size() != truth.size()) throw std::invalid_argument("object_f1: mask size mismatch");
  int np = 0, nt = 0;
  const std::vector<int> pid = connected_components(pred, h, w, &np);
  const std::vector<int> tid = connected_components(truth, h, w, &nt);
  if (np == 0 && nt == 0) return 1.0;
  if (np == 0 || nt == 0) return 0.0;
  std::vector<int64_t> psize(static_cast<size_t>(np), 0), tsize(static_cast<size_t>(nt), 0);
  std::vector<int64_t> inter(static_cast<size_t>(np) * nt, 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    if (pid[i] >= 0) psize[static_cast<size_t>(pid[i])] += 1;
    if (tid[i] >= 0) tsize[static_cast<size_t>(tid[i])] += 1;
    if (pid[i] >= 0 && tid[i] >= 0)
      inter[static_cast<size_t>(pid[i]) * nt + tid[i]] += 1;
  }
  // (IoU, pred id, truth id), best first; ids break exact ties.
  std::vector<std::tuple<double, int, int>> pairs;
  for (int p = 0; p < np; ++p) {
    for (int t = 0; t < nt; ++t) {
      const int64_t in = inter[static_cast<size_t>(p) * nt + t];
      if (in == 0) continue;
      const double iou =
          static_cast<double>(in) / static_cast<double>(psize[static_cast<size_t>(p)] +
                                                        tsize[static_cast<size_t>(t)] - in);
      if (iou > 0.5) pairs.emplace_back(iou, p, t);
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<uint8_t> pused(static_cast<size_t>(np), 0), tused(static_cast<size_t>(nt), 0);
  int tp = 0;
  for (const auto& [iou, p, t] : pairs) {
    (void)iou;
    if (pused[static_cast<size_t>(p)] || tused[static_cast<size_t>(t)]) continue;
    pused[static_cast<size_t>(p)] = tused[static_cast<size_t>(t)] = 1;
    ++tp;
  }
  const int fp = np - tp, fn = nt - tp;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

double seg_avg(double dice, double object_f1) { return 0.5 * (dice + object_f1); }

static double mis_percent(const std::vector<int32_t>& preds, const std::vector<int32_t>& labels) {
  if (preds.empty()) throw std::invalid_argument("error metric: empty input");
  if (preds.size() != labels.size())
    throw std::invalid_argument("error metric: length mismatch");
  int64_t mis = 0;
  for (size_t i = 0; i < preds.size(); ++i) mis += (preds[i] != labels[i]);
  return 100.0 * static_cast<double>(mis) / static_cast<double>(preds.size());
}

double metric_top1_error(const std::vector<int32_t>& preds, const std::vector<int32_t>& labels) {
  return mis_percent(preds, labels);
}

double metric_frame_error_rate(const std::vector<int32_t>& preds,
                               const std::vector<int32_t>& labels) {
  return mis_percent(preds, labels);
}

}  // namespace sqw
