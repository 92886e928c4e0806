#pragma once

#include <cstdint>

#include "upr/tensor.hpp"

namespace upr {

// Forward warping by average splatting. Every source pixel is distributed
// over the four integer positions around (x + flow_x, y + flow_y) with
// bilinear weights; accumulated values are divided by accumulated weights
// (denominator guard 1e-6). Targets that receive no weight stay 0.
// flow: (n, 2, h, w), channel 0 horizontal, channel 1 vertical, pixels.
// Differentiable w.r.t. source and flow.
template <typename T>
TensorT<T> forward_warp_avg(const TensorT<T>& source, const TensorT<T>& flow);

// The accumulated-weight denominator of forward_warp_avg: (n, 1, h, w).
// Zero entries mark holes. Differentiable w.r.t. flow.
template <typename T>
TensorT<T> splat_weight_map(const TensorT<T>& flow);

// Partial correlation volume: channel (dy+r)*(2r+1)+(dx+r) holds
// (1/C) * sum_c f0[c, y, x] * f1[c, y+dy, x+dx] for |dy|,|dx| <= r.
// Entries referencing out-of-bounds positions are exactly 0.
template <typename T>
TensorT<T> correlation_volume(const TensorT<T>& feat0, const TensorT<T>& feat1, std::int64_t radius);

} // namespace upr
