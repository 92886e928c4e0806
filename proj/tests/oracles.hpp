#pragma once

// Naive reference implementations used as independent oracles. These
// deliberately use the simplest possible loop structure and share no code
// with the library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "upr/tensor.hpp"

namespace oracle {

using upr::Shape4;

// Direct sextuple-loop convolution.
template <typename T>
upr::TensorT<T> conv2d(const upr::TensorT<T>& in, const upr::TensorT<T>& w, const upr::TensorT<T>& b,
                       std::int64_t sh, std::int64_t sw, std::int64_t ph, std::int64_t pw) {
    const Shape4 is = in.shape();
    const Shape4 ws = w.shape();
    const std::int64_t oh = (is.h + 2 * ph - ws.h) / sh + 1;
    const std::int64_t ow = (is.w + 2 * pw - ws.w) / sw + 1;
    auto out = upr::TensorT<T>::zeros({is.n, ws.n, oh, ow});
    for (std::int64_t n = 0; n < is.n; ++n)
        for (std::int64_t oc = 0; oc < ws.n; ++oc)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    double acc = b.at(0, oc, 0, 0);
                    for (std::int64_t ic = 0; ic < is.c; ++ic)
                        for (std::int64_t ky = 0; ky < ws.h; ++ky)
                            for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                                const std::int64_t iy = oy * sh - ph + ky;
                                const std::int64_t ix = ox * sw - pw + kx;
                                if (iy < 0 || iy >= is.h || ix < 0 || ix >= is.w) continue;
                                acc += static_cast<double>(in.at(n, ic, iy, ix)) *
                                       static_cast<double>(w.at(oc, ic, ky, kx));
                            }
                    out.at(n, oc, oy, ox) = static_cast<T>(acc);
                }
    return out;
}

// Scatter-accumulate transposed convolution; w is (ic, oc, kh, kw).
template <typename T>
upr::TensorT<T> tconv2d(const upr::TensorT<T>& in, const upr::TensorT<T>& w, const upr::TensorT<T>& b,
                        std::int64_t sh, std::int64_t sw, std::int64_t ph, std::int64_t pw) {
    const Shape4 is = in.shape();
    const Shape4 ws = w.shape();
    const std::int64_t oh = (is.h - 1) * sh - 2 * ph + ws.h;
    const std::int64_t ow = (is.w - 1) * sw - 2 * pw + ws.w;
    auto out = upr::TensorT<T>::zeros({is.n, ws.c, oh, ow});
    for (std::int64_t n = 0; n < is.n; ++n)
        for (std::int64_t oc = 0; oc < ws.c; ++oc)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) out.at(n, oc, oy, ox) = b.at(0, oc, 0, 0);
    for (std::int64_t n = 0; n < is.n; ++n)
        for (std::int64_t ic = 0; ic < is.c; ++ic)
            for (std::int64_t iy = 0; iy < is.h; ++iy)
                for (std::int64_t ix = 0; ix < is.w; ++ix)
                    for (std::int64_t oc = 0; oc < ws.c; ++oc)
                        for (std::int64_t ky = 0; ky < ws.h; ++ky)
                            for (std::int64_t kx = 0; kx < ws.w; ++kx) {
                                const std::int64_t oy = iy * sh - ph + ky;
                                const std::int64_t ox = ix * sw - pw + kx;
                                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
                                out.at(n, oc, oy, ox) += in.at(n, ic, iy, ix) * w.at(ic, oc, ky, kx);
                            }
    return out;
}

// Quintuple-loop correlation volume.
template <typename T>
upr::TensorT<T> correlation(const upr::TensorT<T>& f0, const upr::TensorT<T>& f1, std::int64_t r) {
    const Shape4 s = f0.shape();
    const std::int64_t side = 2 * r + 1;
    auto out = upr::TensorT<T>::zeros({s.n, side * side, s.h, s.w});
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t dy = -r; dy <= r; ++dy)
            for (std::int64_t dx = -r; dx <= r; ++dx)
                for (std::int64_t y = 0; y < s.h; ++y)
                    for (std::int64_t x = 0; x < s.w; ++x) {
                        const std::int64_t y2 = y + dy, x2 = x + dx;
                        if (y2 < 0 || y2 >= s.h || x2 < 0 || x2 >= s.w) continue;
                        double acc = 0.0;
                        for (std::int64_t c = 0; c < s.c; ++c)
                            acc += static_cast<double>(f0.at(n, c, y, x)) *
                                   static_cast<double>(f1.at(n, c, y2, x2));
                        out.at(n, (dy + r) * side + (dx + r), y, x) =
                            static_cast<T>(acc / static_cast<double>(s.c));
                    }
    return out;
}

// Per-pixel average splat with the same 1e-6 denominator guard.
template <typename T>
upr::TensorT<T> forward_warp(const upr::TensorT<T>& src, const upr::TensorT<T>& flow) {
    const Shape4 s = src.shape();
    auto num = upr::TensorT<T>::zeros(s);
    auto wsum = upr::TensorT<T>::zeros({s.n, 1, s.h, s.w});
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t y = 0; y < s.h; ++y)
            for (std::int64_t x = 0; x < s.w; ++x) {
                const double zx = x + static_cast<double>(flow.at(n, 0, y, x));
                const double zy = y + static_cast<double>(flow.at(n, 1, y, x));
                const std::int64_t x0 = static_cast<std::int64_t>(std::floor(zx));
                const std::int64_t y0 = static_cast<std::int64_t>(std::floor(zy));
                const double ax = zx - std::floor(zx), ay = zy - std::floor(zy);
                const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
                const std::int64_t qx[4] = {x0, x0 + 1, x0, x0 + 1};
                const std::int64_t qy[4] = {y0, y0, y0 + 1, y0 + 1};
                for (int k = 0; k < 4; ++k) {
                    if (qx[k] < 0 || qx[k] >= s.w || qy[k] < 0 || qy[k] >= s.h) continue;
                    wsum.at(n, 0, qy[k], qx[k]) += static_cast<T>(ws[k]);
                    for (std::int64_t c = 0; c < s.c; ++c)
                        num.at(n, c, qy[k], qx[k]) += static_cast<T>(ws[k]) * src.at(n, c, y, x);
                }
            }
    auto out = upr::TensorT<T>::zeros(s);
    for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
            for (std::int64_t y = 0; y < s.h; ++y)
                for (std::int64_t x = 0; x < s.w; ++x)
                    out.at(n, c, y, x) =
                        num.at(n, c, y, x) / std::max(wsum.at(n, 0, y, x), static_cast<T>(1e-6));
    return out;
}

// Closed-form bilinear sample at half-pixel centers with edge clamping.
template <typename T>
T bilinear_at(const upr::TensorT<T>& img, std::int64_t n, std::int64_t c, double out_y, double out_x,
              std::int64_t out_h, std::int64_t out_w) {
    const Shape4 s = img.shape();
    const double sy = (out_y + 0.5) * (static_cast<double>(s.h) / out_h) - 0.5;
    const double sx = (out_x + 0.5) * (static_cast<double>(s.w) / out_w) - 0.5;
    const double cy = std::clamp(sy, 0.0, static_cast<double>(s.h - 1));
    const double cx = std::clamp(sx, 0.0, static_cast<double>(s.w - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(cy));
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(cx));
    const std::int64_t y1 = std::min(y0 + 1, s.h - 1);
    const std::int64_t x1 = std::min(x0 + 1, s.w - 1);
    const double fy = cy - y0, fx = cx - x0;
    const double v = (1 - fy) * ((1 - fx) * img.at(n, c, y0, x0) + fx * img.at(n, c, y0, x1)) +
                     fy * ((1 - fx) * img.at(n, c, y1, x0) + fx * img.at(n, c, y1, x1));
    return static_cast<T>(v);
}

// Relative max deviation between two same-shape tensors.
template <typename T>
double rel_err(const upr::TensorT<T>& a, const upr::TensorT<T>& b) {
    double worst = 0.0;
    const T* pa = a.data();
    const T* pb = b.data();
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = std::abs(static_cast<double>(pa[i]) - static_cast<double>(pb[i]));
        const double scale = std::max({1.0, std::abs(static_cast<double>(pa[i])),
                                       std::abs(static_cast<double>(pb[i]))});
        worst = std::max(worst, d / scale);
    }
    return worst;
}

} // namespace oracle
