#pragma once

#include <cstdint>
#include <vector>

namespace sqw {

// Overlap of two binary masks in [0,1]: 2|A∩B| / (|A|+|B|). Two empty masks
// score 1.0; *both_empty flags that case when requested.
double metric_dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                   bool* both_empty = nullptr);

// 8-connectivity components of mask == 1. Returns per-pixel component ids
// (-1 = background); *count receives the component count.
std::vector<int> connected_components(const std::vector<uint8_t>& mask, int h, int w,
                                      int* count);

// Object-level detection F1 in [0,1]: components matched greedily by
// descending IoU, a match counts when IoU > 0.5. No objects on either side
// scores 1.0.
double metric_object_f1(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                        int h, int w);

// Arithmetic mean of dice and object F1.
double seg_avg(double dice, double object_f1);

// Misclassification percentages in [0,100].
double metric_top1_error(const std::vector<int32_t>& preds, const std::vector<int32_t>& labels);
double metric_frame_error_rate(const std::vector<int32_t>& preds,
                               const std::vector<int32_t>& labels);

}  // namespace sqw
