#pragma once

#include <cstdint>

#include "upr/tensor.hpp"

namespace upr {

struct ConvSpec {
    std::int64_t in_channels = 0;
    std::int64_t out_channels = 0;
    std::int64_t kh = 3, kw = 3;
    std::int64_t sh = 1, sw = 1;
    std::int64_t ph = 0, pw = 0;
    bool transposed = false;
};

// Output spatial size for the given input size under this spec.
std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p);
std::int64_t tconv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p);
Shape4 conv_out_shape(const Shape4& in, const ConvSpec& spec);

// Direct 2-D convolution. weights: (out_channels, in_channels, kh, kw),
// bias: (1, out_channels, 1, 1). Differentiable w.r.t. input, weights, bias.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                  const ConvSpec& spec);

// Transposed convolution (fractionally strided). weights:
// (in_channels, out_channels, kh, kw), bias: (1, out_channels, 1, 1).
template <typename T>
TensorT<T> transpose_conv2d(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                            const ConvSpec& spec);

template <typename T> TensorT<T> leaky_relu(const TensorT<T>& x, T slope);
// Output clamped to the open interval (0,1).
template <typename T> TensorT<T> sigmoid(const TensorT<T>& x);

enum class ActKind { LeakyRelu, Sigmoid };
template <typename T> TensorT<T> activation(const TensorT<T>& x, ActKind kind, T slope = T(0.1));

// Bilinear resample with half-pixel-center alignment and edge clamping.
// Exactly preserves constant inputs (lerp form).
template <typename T> TensorT<T> bilinear_resize(const TensorT<T>& x, std::int64_t out_h, std::int64_t out_w);

// Factor-2 box downsample; odd trailing row/column averaged over the
// available samples (ceil output sizes).
template <typename T> TensorT<T> avg_pool2(const TensorT<T>& x);

} // namespace upr
