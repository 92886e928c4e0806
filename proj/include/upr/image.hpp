#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "upr/tensor.hpp"

namespace upr {

// Frames are (n, 3, h, w) RGB tensors with values in [0,1] at ingestion and
// emission; intermediate estimates may leave the range. Flow fields are
// (n, 2, h, w): channel 0 horizontal, channel 1 vertical displacement in
// pixels at the field's own resolution.

// Reads an 8- or 16-bit gray/RGB PNG into a (1,3,h,w) tensor in [0,1].
TensorF load_png(const std::string& path);

// Writes a (1,3,h,w) tensor as RGB PNG, clamping to [0,1] and quantizing to
// the requested bit depth (8 or 16).
void save_png(const TensorF& frame, const std::string& path, int bit_depth = 8);

// Image pyramid, level 0 = input, level l = factor-2 box downsample of
// level l-1 (ceil sizes). Requires the coarsest level to keep its shorter
// side >= 16 px.
std::vector<TensorF> build_pyramid(const TensorF& frame, int levels);

// Bilinear resize of a flow field with displacement values rescaled by the
// resolution ratio (horizontal by width ratio, vertical by height ratio).
template <typename T>
TensorT<T> resize_flow(const TensorT<T>& flow, std::int64_t out_h, std::int64_t out_w);

// x2 spatial upsample with values doubled.
template <typename T>
TensorT<T> upsample_flow_2x(const TensorT<T>& flow);

// Elementwise time scaling; factor must lie in [0,1].
template <typename T>
TensorT<T> scale_flow_time(const TensorT<T>& flow, T factor);

// Reflect-pads bottom/right so both spatial dims are multiples of m.
struct PadInfo {
    std::int64_t orig_h = 0, orig_w = 0;
    std::int64_t pad_h = 0, pad_w = 0;
};
TensorF pad_to_multiple(const TensorF& frame, std::int64_t m, PadInfo& info);

} // namespace upr
