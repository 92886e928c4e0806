#pragma once

#include "upr/tensor.hpp"

namespace upr {

struct LossReport {
    double charbonnier = 0.0;
    double census = 0.0;
    double total = 0.0;
};

// Differentiable training loss terms; each is a 1x1x1x1 scalar tensor.
template <typename T>
struct LossTerms {
    TensorT<T> charbonnier;
    TensorT<T> census;
    TensorT<T> total;

    LossReport report() const {
        return {static_cast<double>(charbonnier.data()[0]), static_cast<double>(census.data()[0]),
                static_cast<double>(total.data()[0])};
    }
};

// Mean over all elements of ((pred-gt)^2 + eps^2)^0.5 with eps = 1e-3.
template <typename T>
TensorT<T> charbonnier_loss(const TensorT<T>& pred, const TensorT<T>& gt);

// Soft census loss: 7x7 census transform on grayscale, per-neighbor soft
// binarization d = delta / sqrt(delta^2 + 0.0081), soft Hamming distance
// h = sum_i (dd_i)^2 / (0.1 + (dd_i)^2), Charbonnier-penalized
// (sqrt(h^2 + eps^2) - eps form, exactly zero at h = 0) and averaged over
// valid non-border pixels. Requires images >= 7x7.
template <typename T>
TensorT<T> census_loss(const TensorT<T>& pred, const TensorT<T>& gt);

// Charbonnier + census (the training objective).
template <typename T>
LossTerms<T> training_loss(const TensorT<T>& pred, const TensorT<T>& gt);

// Peak signal-to-noise ratio on [0,1] frames; identical inputs (and any
// MSE below the cap) report 99 dB.
double psnr(const TensorF& pred, const TensorF& gt);

// Single-scale SSIM, 11x11 Gaussian window sigma 1.5, C1=0.01^2, C2=0.03^2,
// averaged over valid window positions and channels.
double ssim(const TensorF& pred, const TensorF& gt);

} // namespace upr
