#include "upr/warp.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "upr/threading.hpp"

namespace upr {

namespace {

constexpr double kSplatEps = 1e-6;

template <typename T>
void check_flow(const char* op, const TensorT<T>& flow) {
    const Shape4& fs = flow.shape();
    if (fs.c != 2) {
        throw ShapeError(std::string(op) + ": flow must have 2 channels, got " + std::to_string(fs.c));
    }
    if (!all_finite(flow)) {
        throw NumericError(std::string(op) + ": flow contains non-finite values");
    }
}

// Accumulates one batch item's splat numerator (channels planes) and weight
// plane over the source-row range [y_begin, y_end).
template <typename T>
void splat_accumulate(const T* src, const T* fx, const T* fy, std::int64_t channels, std::int64_t h,
                      std::int64_t w, std::int64_t y_begin, std::int64_t y_end, T* num, T* wsum) {
    for (std::int64_t y = y_begin; y < y_end; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const std::int64_t p = y * w + x;
            const T zx = static_cast<T>(x) + fx[p];
            const T zy = static_cast<T>(y) + fy[p];
            const T fxf = std::floor(zx);
            const T fyf = std::floor(zy);
            const std::int64_t x0 = static_cast<std::int64_t>(fxf);
            const std::int64_t y0 = static_cast<std::int64_t>(fyf);
            const T ax = zx - fxf;
            const T ay = zy - fyf;
            const T w00 = (T(1) - ax) * (T(1) - ay);
            const T w10 = ax * (T(1) - ay);
            const T w01 = (T(1) - ax) * ay;
            const T w11 = ax * ay;
            const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
            const T ws[4] = {w00, w10, w01, w11};
            for (int k = 0; k < 4; ++k) {
                if (xs[k] < 0 || xs[k] >= w || ys[k] < 0 || ys[k] >= h) continue;
                const std::int64_t q = ys[k] * w + xs[k];
                wsum[q] += ws[k];
                if (src) {
                    for (std::int64_t c = 0; c < channels; ++c) num[c * h * w + q] += ws[k] * src[c * h * w + p];
                }
            }
        }
    }
}

// Deterministic parallel splat: fixed row slices into per-slice buffers,
// merged in slice order. Slice count equals the configured thread count,
// so results are bit-stable for a fixed (input, threads) pair.
template <typename T>
void splat_batch(const T* src, const T* fx, const T* fy, std::int64_t channels, std::int64_t h, std::int64_t w,
                 T* num, T* wsum) {
    const int slices = std::min<std::int64_t>(num_threads(), h);
    if (slices <= 1) {
        splat_accumulate(src, fx, fy, channels, h, w, 0, h, num, wsum);
        return;
    }
    const std::int64_t plane = h * w;
    const std::int64_t buf_sz = (src ? channels * plane : 0) + plane;
    std::vector<T> buffers(static_cast<std::size_t>(buf_sz) * slices, T(0));
    const std::int64_t rows_per = (h + slices - 1) / slices;
    parallel_for(slices, [&](std::int64_t s0, std::int64_t s1) {
        for (std::int64_t s = s0; s < s1; ++s) {
            T* buf = buffers.data() + buf_sz * s;
            T* bnum = src ? buf : nullptr;
            T* bw = buf + (src ? channels * plane : 0);
            const std::int64_t yb = std::min(h, rows_per * s);
            const std::int64_t ye = std::min(h, yb + rows_per);
            splat_accumulate(src, fx, fy, channels, h, w, yb, ye, bnum, bw);
        }
    });
    for (int s = 0; s < slices; ++s) {
        const T* buf = buffers.data() + buf_sz * s;
        if (src) {
            for (std::int64_t i = 0; i < channels * plane; ++i) num[i] += buf[i];
        }
        const T* bw = buf + (src ? channels * plane : 0);
        for (std::int64_t i = 0; i < plane; ++i) wsum[i] += bw[i];
    }
}

} // namespace

template <typename T>
TensorT<T> forward_warp_avg(const TensorT<T>& source, const TensorT<T>& flow) {
    const Shape4& ss = source.shape();
    const Shape4& fs = flow.shape();
    if (ss.n != fs.n || ss.h != fs.h || ss.w != fs.w) {
        throw ShapeError("forward_warp_avg: source " + ss.str() + " and flow " + fs.str() +
                         " disagree on batch or spatial dimensions");
    }
    check_flow("forward_warp_avg", flow);

    const std::int64_t plane = ss.h * ss.w;
    TensorT<T> num = TensorT<T>::zeros(ss);
    TensorT<T> wsum = TensorT<T>::zeros({ss.n, 1, ss.h, ss.w});
    for (std::int64_t n = 0; n < ss.n; ++n) {
        splat_batch(source.data() + n * ss.c * plane, flow.data() + n * 2 * plane,
                    flow.data() + (n * 2 + 1) * plane, ss.c, ss.h, ss.w, num.data() + n * ss.c * plane,
                    wsum.data() + n * plane);
    }
    TensorT<T> out = TensorT<T>::zeros(ss);
    {
        const T* pn = num.data();
        const T* pw = wsum.data();
        T* po = out.data();
        for (std::int64_t n = 0; n < ss.n; ++n) {
            for (std::int64_t c = 0; c < ss.c; ++c) {
                const T* nplane = pn + (n * ss.c + c) * plane;
                T* oplane = po + (n * ss.c + c) * plane;
                const T* wplane = pw + n * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    oplane[i] = nplane[i] / std::max(wplane[i], static_cast<T>(kSplatEps));
                }
            }
        }
    }

    attach_node<T>(out, {source, flow},
                   [ssrc = source.storage(), sflow = flow.storage(), snum = num.storage(),
                    swsum = wsum.storage(), ss](detail::Storage<T>& self) {
                       const T eps = static_cast<T>(kSplatEps);
                       const std::int64_t plane = ss.h * ss.w;
                       const T* g = self.grad.data();
                       const T* num = snum->data.data();
                       const T* wsum = swsum->data.data();
                       const T* src = ssrc->data.data();
                       T* gsrc = nullptr;
                       T* gflow = nullptr;
                       if (ssrc->requires_grad) {
                           ssrc->ensure_grad();
                           gsrc = ssrc->grad.data();
                       }
                       if (sflow->requires_grad) {
                           sflow->ensure_grad();
                           gflow = sflow->grad.data();
                       }
                       // Per-target factors: gnum = g / D; gw = dL/dW(q).
                       std::vector<T> gnum(static_cast<std::size_t>(ss.n * ss.c * plane));
                       std::vector<T> gw(static_cast<std::size_t>(ss.n * plane), T(0));
                       for (std::int64_t n = 0; n < ss.n; ++n) {
                           const T* wplane = wsum + n * plane;
                           T* gwp = gw.data() + n * plane;
                           for (std::int64_t c = 0; c < ss.c; ++c) {
                               const std::int64_t off = (n * ss.c + c) * plane;
                               for (std::int64_t i = 0; i < plane; ++i) {
                                   const T d = std::max(wplane[i], eps);
                                   gnum[off + i] = g[off + i] / d;
                                   if (wplane[i] > eps) gwp[i] -= g[off + i] * num[off + i] / (d * d);
                               }
                           }
                       }
                       // Gather per source pixel; disjoint writes, parallel-safe.
                       const T* flow = sflow->data.data();
                       parallel_for(ss.n * ss.h, [&](std::int64_t r0, std::int64_t r1) {
                           for (std::int64_t r = r0; r < r1; ++r) {
                               const std::int64_t n = r / ss.h, y = r % ss.h;
                               const T* fx = flow + n * 2 * plane;
                               const T* fy = flow + (n * 2 + 1) * plane;
                               for (std::int64_t x = 0; x < ss.w; ++x) {
                                   const std::int64_t p = y * ss.w + x;
                                   const T zx = static_cast<T>(x) + fx[p];
                                   const T zy = static_cast<T>(y) + fy[p];
                                   const T fxf = std::floor(zx);
                                   const T fyf = std::floor(zy);
                                   const std::int64_t x0 = static_cast<std::int64_t>(fxf);
                                   const std::int64_t y0 = static_cast<std::int64_t>(fyf);
                                   const T ax = zx - fxf;
                                   const T ay = zy - fyf;
                                   const T wcorner[4] = {(T(1) - ax) * (T(1) - ay), ax * (T(1) - ay),
                                                         (T(1) - ax) * ay, ax * ay};
                                   const T dwdx[4] = {-(T(1) - ay), T(1) - ay, -ay, ay};
                                   const T dwdy[4] = {-(T(1) - ax), -ax, T(1) - ax, ax};
                                   const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
                                   const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
                                   T gzx = T(0), gzy = T(0);
                                   for (int k = 0; k < 4; ++k) {
                                       if (xs[k] < 0 || xs[k] >= ss.w || ys[k] < 0 || ys[k] >= ss.h) continue;
                                       const std::int64_t q = ys[k] * ss.w + xs[k];
                                       T gw_corner = gw[n * plane + q];
                                       for (std::int64_t c = 0; c < ss.c; ++c) {
                                           const std::int64_t off = (n * ss.c + c) * plane;
                                           const T gn = gnum[off + q];
                                           if (gsrc) gsrc[off + p] += wcorner[k] * gn;
                                           gw_corner += gn * src[off + p];
                                       }
                                       gzx += gw_corner * dwdx[k];
                                       gzy += gw_corner * dwdy[k];
                                   }
                                   if (gflow) {
                                       gflow[n * 2 * plane + p] += gzx;
                                       gflow[(n * 2 + 1) * plane + p] += gzy;
                                   }
                               }
                           }
                       });
                   });
    return out;
}

template <typename T>
TensorT<T> splat_weight_map(const TensorT<T>& flow) {
    check_flow("splat_weight_map", flow);
    const Shape4& fs = flow.shape();
    const std::int64_t plane = fs.h * fs.w;
    TensorT<T> out = TensorT<T>::zeros({fs.n, 1, fs.h, fs.w});
    for (std::int64_t n = 0; n < fs.n; ++n) {
        splat_batch<T>(nullptr, flow.data() + n * 2 * plane, flow.data() + (n * 2 + 1) * plane, 0, fs.h, fs.w,
                       nullptr, out.data() + n * plane);
    }
    attach_node<T>(out, {flow}, [sflow = flow.storage(), fs](detail::Storage<T>& self) {
        if (!sflow->requires_grad) return;
        sflow->ensure_grad();
        const std::int64_t plane = fs.h * fs.w;
        const T* g = self.grad.data();
        const T* flow = sflow->data.data();
        T* gflow = sflow->grad.data();
        parallel_for(fs.n * fs.h, [&](std::int64_t r0, std::int64_t r1) {
            for (std::int64_t r = r0; r < r1; ++r) {
                const std::int64_t n = r / fs.h, y = r % fs.h;
                const T* fx = flow + n * 2 * plane;
                const T* fy = flow + (n * 2 + 1) * plane;
                const T* gq = g + n * plane;
                for (std::int64_t x = 0; x < fs.w; ++x) {
                    const std::int64_t p = y * fs.w + x;
                    const T zx = static_cast<T>(x) + fx[p];
                    const T zy = static_cast<T>(y) + fy[p];
                    const T fxf = std::floor(zx);
                    const T fyf = std::floor(zy);
                    const std::int64_t x0 = static_cast<std::int64_t>(fxf);
                    const std::int64_t y0 = static_cast<std::int64_t>(fyf);
                    const T ax = zx - fxf;
                    const T ay = zy - fyf;
                    const T dwdx[4] = {-(T(1) - ay), T(1) - ay, -ay, ay};
                    const T dwdy[4] = {-(T(1) - ax), -ax, T(1) - ax, ax};
                    const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
                    const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
                    T gzx = T(0), gzy = T(0);
                    for (int k = 0; k < 4; ++k) {
                        if (xs[k] < 0 || xs[k] >= fs.w || ys[k] < 0 || ys[k] >= fs.h) continue;
                        const T gv = gq[ys[k] * fs.w + xs[k]];
                        gzx += gv * dwdx[k];
                        gzy += gv * dwdy[k];
                    }
                    gflow[n * 2 * plane + p] += gzx;
                    gflow[(n * 2 + 1) * plane + p] += gzy;
                }
            }
        });
    });
    return out;
}

template <typename T>
TensorT<T> correlation_volume(const TensorT<T>& feat0, const TensorT<T>& feat1, std::int64_t radius) {
    check_same_shape("correlation_volume", feat0, feat1);
    if (radius < 0) throw ShapeError("correlation_volume: radius must be >= 0");
    const Shape4& s = feat0.shape();
    const std::int64_t side = 2 * radius + 1;
    const std::int64_t kn = side * side;
    const std::int64_t plane = s.h * s.w;
    TensorT<T> out = TensorT<T>::zeros({s.n, kn, s.h, s.w});
    const T inv_c = static_cast<T>(1.0 / static_cast<double>(s.c));
    const T* p0 = feat0.data();
    const T* p1 = feat1.data();
    T* po = out.data();
    parallel_for(s.n * kn, [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
            const std::int64_t n = t / kn, k = t % kn;
            const std::int64_t dy = k / side - radius;
            const std::int64_t dx = k % side - radius;
            T* oplane = po + (n * kn + k) * plane;
            const std::int64_t yb = std::max<std::int64_t>(0, -dy);
            const std::int64_t ye = std::min(s.h, s.h - dy);
            const std::int64_t xb = std::max<std::int64_t>(0, -dx);
            const std::int64_t xe = std::min(s.w, s.w - dx);
            for (std::int64_t c = 0; c < s.c; ++c) {
                const T* f0p = p0 + (n * s.c + c) * plane;
                const T* f1p = p1 + (n * s.c + c) * plane;
                for (std::int64_t y = yb; y < ye; ++y) {
                    const T* r0 = f0p + y * s.w;
                    const T* r1 = f1p + (y + dy) * s.w + dx;
                    T* orow = oplane + y * s.w;
                    for (std::int64_t x = xb; x < xe; ++x) orow[x] += r0[x] * r1[x];
                }
            }
            for (std::int64_t i = 0; i < plane; ++i) oplane[i] *= inv_c;
        }
    });
    attach_node<T>(out, {feat0, feat1},
                   [s0 = feat0.storage(), s1 = feat1.storage(), radius, s, kn, side,
                    plane](detail::Storage<T>& self) {
                       const T inv_c = static_cast<T>(1.0 / static_cast<double>(s.c));
                       const T* g = self.grad.data();
                       const T* p0 = s0->data.data();
                       const T* p1 = s1->data.data();
                       T* g0 = nullptr;
                       T* g1 = nullptr;
                       if (s0->requires_grad) {
                           s0->ensure_grad();
                           g0 = s0->grad.data();
                       }
                       if (s1->requires_grad) {
                           s1->ensure_grad();
                           g1 = s1->grad.data();
                       }
                       parallel_for(s.n * s.c, [&](std::int64_t t0, std::int64_t t1) {
                           for (std::int64_t t = t0; t < t1; ++t) {
                               const std::int64_t n = t / s.c, c = t % s.c;
                               const T* f0p = p0 + (n * s.c + c) * plane;
                               const T* f1p = p1 + (n * s.c + c) * plane;
                               T* g0p = g0 ? g0 + (n * s.c + c) * plane : nullptr;
                               T* g1p = g1 ? g1 + (n * s.c + c) * plane : nullptr;
                               for (std::int64_t k = 0; k < kn; ++k) {
                                   const std::int64_t dy = k / side - radius;
                                   const std::int64_t dx = k % side - radius;
                                   const T* gplane = g + (n * kn + k) * plane;
                                   const std::int64_t yb = std::max<std::int64_t>(0, -dy);
                                   const std::int64_t ye = std::min(s.h, s.h - dy);
                                   const std::int64_t xb = std::max<std::int64_t>(0, -dx);
                                   const std::int64_t xe = std::min(s.w, s.w - dx);
                                   for (std::int64_t y = yb; y < ye; ++y) {
                                       const T* grow = gplane + y * s.w;
                                       const T* r0 = f0p + y * s.w;
                                       const T* r1 = f1p + (y + dy) * s.w + dx;
                                       if (g0p) {
                                           T* gr0 = g0p + y * s.w;
                                           for (std::int64_t x = xb; x < xe; ++x)
                                               gr0[x] += inv_c * grow[x] * r1[x];
                                       }
                                       if (g1p) {
                                           T* gr1 = g1p + (y + dy) * s.w + dx;
                                           for (std::int64_t x = xb; x < xe; ++x)
                                               gr1[x] += inv_c * grow[x] * r0[x];
                                       }
                                   }
                               }
                           }
                       });
                   });
    return out;
}

#define UPR_INSTANTIATE(T)                                                                                  \
    template TensorT<T> forward_warp_avg<T>(const TensorT<T>&, const TensorT<T>&);                          \
    template TensorT<T> splat_weight_map<T>(const TensorT<T>&);                                             \
    template TensorT<T> correlation_volume<T>(const TensorT<T>&, const TensorT<T>&, std::int64_t);

UPR_INSTANTIATE(float)
UPR_INSTANTIATE(double)

#undef UPR_INSTANTIATE

} // namespace upr
