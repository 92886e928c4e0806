#include "upr/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "upr/threading.hpp"

namespace upr {

std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
    return (in + 2 * p - k) / s + 1;
}

std::int64_t tconv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
    return (in - 1) * s - 2 * p + k;
}

Shape4 conv_out_shape(const Shape4& in, const ConvSpec& spec) {
    if (spec.transposed) {
        return {in.n, spec.out_channels, tconv_out_dim(in.h, spec.kh, spec.sh, spec.ph),
                tconv_out_dim(in.w, spec.kw, spec.sw, spec.pw)};
    }
    return {in.n, spec.out_channels, conv_out_dim(in.h, spec.kh, spec.sh, spec.ph),
            conv_out_dim(in.w, spec.kw, spec.sw, spec.pw)};
}

namespace {

// First output index whose source index k + ox*s - p is >= 0.
inline std::int64_t first_valid(std::int64_t p, std::int64_t k, std::int64_t s) {
    const std::int64_t a = p - k;
    return a <= 0 ? 0 : (a + s - 1) / s;
}
// One past the last output index whose source index stays < limit.
inline std::int64_t last_valid(std::int64_t limit, std::int64_t p, std::int64_t k, std::int64_t s,
                               std::int64_t count) {
    const std::int64_t b = limit - 1 - k + p;
    if (b < 0) return 0;
    return std::min(count, b / s + 1);
}

template <typename T>
void check_conv_args(const char* op, const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                     const ConvSpec& spec, bool transposed) {
    const Shape4& is = input.shape();
    const Shape4& ws = weights.shape();
    const std::int64_t w_first = transposed ? spec.in_channels : spec.out_channels;
    const std::int64_t w_second = transposed ? spec.out_channels : spec.in_channels;
    if (is.c != spec.in_channels) {
        throw ShapeError(std::string(op) + ": input has " + std::to_string(is.c) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    }
    if (ws.n != w_first || ws.c != w_second || ws.h != spec.kh || ws.w != spec.kw) {
        throw ShapeError(std::string(op) + ": weight shape " + ws.str() + " does not match spec (" +
                         std::to_string(w_first) + "," + std::to_string(w_second) + "," + std::to_string(spec.kh) +
                         "," + std::to_string(spec.kw) + ")");
    }
    const Shape4& bs = bias.shape();
    if (bs.c != spec.out_channels || bs.n != 1 || bs.h != 1 || bs.w != 1) {
        throw ShapeError(std::string(op) + ": bias shape " + bs.str() + " must be (1," +
                         std::to_string(spec.out_channels) + ",1,1)");
    }
    if (spec.sh < 1 || spec.sw < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
}

// out[n,oc] += sum_{ic,ky,kx} w[oc,ic,ky,kx] * in[n,ic,oy*sh-ph+ky, ox*sw-pw+kx]
template <typename T>
void conv_forward_kernel(const T* in, const T* w, const T* b, T* out, Shape4 is, Shape4 os, const ConvSpec& sp) {
    const std::int64_t ic_n = sp.in_channels, oc_n = sp.out_channels;
    parallel_for(os.n * oc_n, [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
            const std::int64_t n = t / oc_n, oc = t % oc_n;
            T* oplane = out + (n * oc_n + oc) * os.h * os.w;
            std::fill(oplane, oplane + os.h * os.w, b[oc]);
            for (std::int64_t ic = 0; ic < ic_n; ++ic) {
                const T* iplane = in + (n * ic_n + ic) * is.h * is.w;
                const T* wk = w + (oc * ic_n + ic) * sp.kh * sp.kw;
                for (std::int64_t ky = 0; ky < sp.kh; ++ky) {
                    for (std::int64_t oy = 0; oy < os.h; ++oy) {
                        const std::int64_t iy = oy * sp.sh - sp.ph + ky;
                        if (iy < 0 || iy >= is.h) continue;
                        const T* irow = iplane + iy * is.w;
                        T* orow = oplane + oy * os.w;
                        for (std::int64_t kx = 0; kx < sp.kw; ++kx) {
                            const T wv = wk[ky * sp.kw + kx];
                            const std::int64_t x0 = first_valid(sp.pw, kx, sp.sw);
                            const std::int64_t x1 = last_valid(is.w, sp.pw, kx, sp.sw, os.w);
                            const T* ip = irow - sp.pw + kx;
                            if (sp.sw == 1) {
                                for (std::int64_t ox = x0; ox < x1; ++ox) orow[ox] += wv * ip[ox];
                            } else {
                                for (std::int64_t ox = x0; ox < x1; ++ox) orow[ox] += wv * ip[ox * sp.sw];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void conv_backward_input_kernel(const T* gout, const T* w, T* gin, Shape4 is, Shape4 os, const ConvSpec& sp) {
    const std::int64_t ic_n = sp.in_channels, oc_n = sp.out_channels;
    parallel_for(is.n * ic_n, [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
            const std::int64_t n = t / ic_n, ic = t % ic_n;
            T* gplane = gin + (n * ic_n + ic) * is.h * is.w;
            for (std::int64_t oc = 0; oc < oc_n; ++oc) {
                const T* goplane = gout + (n * oc_n + oc) * os.h * os.w;
                const T* wk = w + (oc * ic_n + ic) * sp.kh * sp.kw;
                for (std::int64_t ky = 0; ky < sp.kh; ++ky) {
                    for (std::int64_t oy = 0; oy < os.h; ++oy) {
                        const std::int64_t iy = oy * sp.sh - sp.ph + ky;
                        if (iy < 0 || iy >= is.h) continue;
                        T* grow = gplane + iy * is.w;
                        const T* gorow = goplane + oy * os.w;
                        for (std::int64_t kx = 0; kx < sp.kw; ++kx) {
                            const T wv = wk[ky * sp.kw + kx];
                            const std::int64_t x0 = first_valid(sp.pw, kx, sp.sw);
                            const std::int64_t x1 = last_valid(is.w, sp.pw, kx, sp.sw, os.w);
                            T* gp = grow - sp.pw + kx;
                            if (sp.sw == 1) {
                                for (std::int64_t ox = x0; ox < x1; ++ox) gp[ox] += wv * gorow[ox];
                            } else {
                                for (std::int64_t ox = x0; ox < x1; ++ox) gp[ox * sp.sw] += wv * gorow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void conv_backward_weight_kernel(const T* in, const T* gout, T* gw, T* gb, Shape4 is, Shape4 os,
                                 const ConvSpec& sp) {
    const std::int64_t ic_n = sp.in_channels, oc_n = sp.out_channels;
    parallel_for(oc_n, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t oc = c0; oc < c1; ++oc) {
            double bias_acc = 0.0;
            for (std::int64_t n = 0; n < os.n; ++n) {
                const T* goplane = gout + (n * oc_n + oc) * os.h * os.w;
                for (std::int64_t i = 0; i < os.h * os.w; ++i) bias_acc += static_cast<double>(goplane[i]);
            }
            gb[oc] += static_cast<T>(bias_acc);
            for (std::int64_t ic = 0; ic < ic_n; ++ic) {
                T* gwk = gw + (oc * ic_n + ic) * sp.kh * sp.kw;
                for (std::int64_t ky = 0; ky < sp.kh; ++ky) {
                    for (std::int64_t kx = 0; kx < sp.kw; ++kx) {
                        const std::int64_t x0 = first_valid(sp.pw, kx, sp.sw);
                        const std::int64_t x1 = last_valid(is.w, sp.pw, kx, sp.sw, os.w);
                        double acc = 0.0;
                        for (std::int64_t n = 0; n < os.n; ++n) {
                            const T* iplane = in + (n * ic_n + ic) * is.h * is.w;
                            const T* goplane = gout + (n * oc_n + oc) * os.h * os.w;
                            for (std::int64_t oy = 0; oy < os.h; ++oy) {
                                const std::int64_t iy = oy * sp.sh - sp.ph + ky;
                                if (iy < 0 || iy >= is.h) continue;
                                const T* irow = iplane + iy * is.w - sp.pw + kx;
                                const T* gorow = goplane + oy * os.w;
                                if (sp.sw == 1) {
                                    T racc = T(0);
                                    for (std::int64_t ox = x0; ox < x1; ++ox) racc += gorow[ox] * irow[ox];
                                    acc += static_cast<double>(racc);
                                } else {
                                    T racc = T(0);
                                    for (std::int64_t ox = x0; ox < x1; ++ox) racc += gorow[ox] * irow[ox * sp.sw];
                                    acc += static_cast<double>(racc);
                                }
                            }
                        }
                        gwk[ky * sp.kw + kx] += static_cast<T>(acc);
                    }
                }
            }
        }
    });
}

} // namespace

template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                  const ConvSpec& spec) {
    if (spec.transposed) throw ShapeError("conv2d: spec marked transposed; use transpose_conv2d");
    check_conv_args("conv2d", input, weights, bias, spec, false);
    const Shape4 is = input.shape();
    const Shape4 os = conv_out_shape(is, spec);
    if (os.h < 1 || os.w < 1) {
        throw ShapeError("conv2d: output size " + os.str() + " degenerate for input " + is.str());
    }
    TensorT<T> out = TensorT<T>::zeros(os);
    conv_forward_kernel(input.data(), weights.data(), bias.data(), out.data(), is, os, spec);
    attach_node<T>(out, {input, weights, bias},
                   [si = input.storage(), sw = weights.storage(), sb = bias.storage(), spec, is,
                    os](detail::Storage<T>& self) {
                       const T* g = self.grad.data();
                       if (si->requires_grad) {
                           si->ensure_grad();
                           conv_backward_input_kernel(g, sw->data.data(), si->grad.data(), is, os, spec);
                       }
                       if (sw->requires_grad || sb->requires_grad) {
                           sw->ensure_grad();
                           sb->ensure_grad();
                           conv_backward_weight_kernel(si->data.data(), g, sw->grad.data(), sb->grad.data(), is,
                                                       os, spec);
                       }
                   });
    return out;
}

namespace {

// Scatter form: every input pixel contributes a kh*kw patch to the output.
// Parallel over (n, oc): each task owns its output plane.
template <typename T>
void tconv_forward_kernel(const T* in, const T* w, const T* b, T* out, Shape4 is, Shape4 os, const ConvSpec& sp) {
    const std::int64_t ic_n = sp.in_channels, oc_n = sp.out_channels;
    parallel_for(os.n * oc_n, [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
            const std::int64_t n = t / oc_n, oc = t % oc_n;
            T* oplane = out + (n * oc_n + oc) * os.h * os.w;
            std::fill(oplane, oplane + os.h * os.w, b[oc]);
            for (std::int64_t ic = 0; ic < ic_n; ++ic) {
                const T* iplane = in + (n * ic_n + ic) * is.h * is.w;
                const T* wk = w + (ic * oc_n + oc) * sp.kh * sp.kw;
                for (std::int64_t ky = 0; ky < sp.kh; ++ky) {
                    for (std::int64_t iy = 0; iy < is.h; ++iy) {
                        const std::int64_t oy = iy * sp.sh - sp.ph + ky;
                        if (oy < 0 || oy >= os.h) continue;
                        const T* irow = iplane + iy * is.w;
                        T* orow = oplane + oy * os.w;
                        for (std::int64_t kx = 0; kx < sp.kw; ++kx) {
                            const T wv = wk[ky * sp.kw + kx];
                            const std::int64_t x0 = first_valid(sp.pw, kx, sp.sw);
                            const std::int64_t x1 = last_valid(os.w, sp.pw, kx, sp.sw, is.w);
                            T* op = orow - sp.pw + kx;
                            for (std::int64_t ix = x0; ix < x1; ++ix) op[ix * sp.sw] += wv * irow[ix];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void tconv_backward_input_kernel(const T* gout, const T* w, T* gin, Shape4 is, Shape4 os, const ConvSpec& sp) {
    const std::int64_t ic_n = sp.in_channels, oc_n = sp.out_channels;
    parallel_for(is.n * ic_n, [&](std::int64_t t0, std::int64_t t1) {
        for (std::int64_t t = t0; t < t1; ++t) {
            const std::int64_t n = t / ic_n, ic = t % ic_n;
            T* gplane = gin + (n * ic_n + ic) * is.h * is.w;
            for (std::int64_t oc = 0; oc < oc_n; ++oc) {
                const T* goplane = gout + (n * oc_n + oc) * os.h * os.w;
                const T* wk = w + (ic * oc_n + oc) * sp.kh * sp.kw;
                for (std::int64_t ky = 0; ky < sp.kh; ++ky) {
                    for (std::int64_t iy = 0; iy < is.h; ++iy) {
                        const std::int64_t oy = iy * sp.sh - sp.ph + ky;
                        if (oy < 0 || oy >= os.h) continue;
                        T* grow = gplane + iy * is.w;
                        const T* gorow = goplane + oy * os.w;
                        for (std::int64_t kx = 0; kx < sp.kw; ++kx) {
                            const T wv = wk[ky * sp.kw + kx];
                            const std::int64_t x0 = first_valid(sp.pw, kx, sp.sw);
                            const std::int64_t x1 = last_valid(os.w, sp.pw, kx, sp.sw, is.w);
                            const T* gop = gorow - sp.pw + kx;
                            for (std::int64_t ix = x0; ix < x1; ++ix) grow[ix] += wv * gop[ix * sp.sw];
                        }
                    }
                }
            }
        }
    });
}

template <typename T>
void tconv_backward_weight_kernel(const T* in, const T* gout, T* gw, T* gb, Shape4 is, Shape4 os,
                                  const ConvSpec& sp) {
    const std::int64_t ic_n = sp.in_channels, oc_n = sp.out_channels;
    parallel_for(oc_n, [&](std::int64_t c0, std::int64_t c1) {
        for (std::int64_t oc = c0; oc < c1; ++oc) {
            double bias_acc = 0.0;
            for (std::int64_t n = 0; n < os.n; ++n) {
                const T* goplane = gout + (n * oc_n + oc) * os.h * os.w;
                for (std::int64_t i = 0; i < os.h * os.w; ++i) bias_acc += static_cast<double>(goplane[i]);
            }
            gb[oc] += static_cast<T>(bias_acc);
            for (std::int64_t ic = 0; ic < ic_n; ++ic) {
                T* gwk = gw + (ic * oc_n + oc) * sp.kh * sp.kw;
                for (std::int64_t ky = 0; ky < sp.kh; ++ky) {
                    for (std::int64_t kx = 0; kx < sp.kw; ++kx) {
                        const std::int64_t x0 = first_valid(sp.pw, kx, sp.sw);
                        const std::int64_t x1 = last_valid(os.w, sp.pw, kx, sp.sw, is.w);
                        double acc = 0.0;
                        for (std::int64_t n = 0; n < os.n; ++n) {
                            const T* iplane = in + (n * ic_n + ic) * is.h * is.w;
                            const T* goplane = gout + (n * oc_n + oc) * os.h * os.w;
                            for (std::int64_t iy = 0; iy < is.h; ++iy) {
                                const std::int64_t oy = iy * sp.sh - sp.ph + ky;
                                if (oy < 0 || oy >= os.h) continue;
                                const T* irow = iplane + iy * is.w;
                                const T* gop = goplane + oy * os.w - sp.pw + kx;
                                T racc = T(0);
                                for (std::int64_t ix = x0; ix < x1; ++ix) racc += irow[ix] * gop[ix * sp.sw];
                                acc += static_cast<double>(racc);
                            }
                        }
                        gwk[ky * sp.kw + kx] += static_cast<T>(acc);
                    }
                }
            }
        }
    });
}

} // namespace

template <typename T>
TensorT<T> transpose_conv2d(const TensorT<T>& input, const TensorT<T>& weights, const TensorT<T>& bias,
                            const ConvSpec& spec) {
    if (!spec.transposed) throw ShapeError("transpose_conv2d: spec not marked transposed");
    check_conv_args("transpose_conv2d", input, weights, bias, spec, true);
    const Shape4 is = input.shape();
    const Shape4 os = conv_out_shape(is, spec);
    if (os.h < 1 || os.w < 1) {
        throw ShapeError("transpose_conv2d: output size " + os.str() + " degenerate for input " + is.str());
    }
    TensorT<T> out = TensorT<T>::zeros(os);
    tconv_forward_kernel(input.data(), weights.data(), bias.data(), out.data(), is, os, spec);
    attach_node<T>(out, {input, weights, bias},
                   [si = input.storage(), sw = weights.storage(), sb = bias.storage(), spec, is,
                    os](detail::Storage<T>& self) {
                       const T* g = self.grad.data();
                       if (si->requires_grad) {
                           si->ensure_grad();
                           tconv_backward_input_kernel(g, sw->data.data(), si->grad.data(), is, os, spec);
                       }
                       if (sw->requires_grad || sb->requires_grad) {
                           sw->ensure_grad();
                           sb->ensure_grad();
                           tconv_backward_weight_kernel(si->data.data(), g, sw->grad.data(), sb->grad.data(), is,
                                                        os, spec);
                       }
                   });
    return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& x, T slope) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] >= T(0) ? px[i] : slope * px[i];
    attach_node<T>(out, {x}, [sx = x.storage(), slope](detail::Storage<T>& self) {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        const T* g = self.grad.data();
        const T* px = sx->data.data();
        T* gx = sx->grad.data();
        const std::int64_t n = static_cast<std::int64_t>(self.grad.size());
        for (std::int64_t i = 0; i < n; ++i) gx[i] += (px[i] >= T(0) ? T(1) : slope) * g[i];
    });
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& x) {
    TensorT<T> out = TensorT<T>::zeros(x.shape());
    const T* px = x.data();
    T* po = out.data();
    const std::int64_t n = x.numel();
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    for (std::int64_t i = 0; i < n; ++i) {
        const T v = T(1) / (T(1) + std::exp(-px[i]));
        po[i] = std::min(std::max(v, lo), hi);
    }
    attach_node<T>(out, {x}, [sx = x.storage(), so = out.storage()](detail::Storage<T>& self) {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        const T* g = self.grad.data();
        const T* po = so->data.data();
        T* gx = sx->grad.data();
        const std::int64_t n = static_cast<std::int64_t>(self.grad.size());
        for (std::int64_t i = 0; i < n; ++i) gx[i] += po[i] * (T(1) - po[i]) * g[i];
    });
    return out;
}

template <typename T>
TensorT<T> activation(const TensorT<T>& x, ActKind kind, T slope) {
    return kind == ActKind::LeakyRelu ? leaky_relu(x, slope) : sigmoid(x);
}

namespace {

struct ResizeAxis {
    std::vector<std::int64_t> i0, i1;
    std::vector<double> frac;
};

ResizeAxis resize_axis(std::int64_t in, std::int64_t out) {
    ResizeAxis ax;
    ax.i0.resize(out);
    ax.i1.resize(out);
    ax.frac.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        double f = std::floor(src);
        std::int64_t lo = static_cast<std::int64_t>(f);
        double w = src - f;
        if (lo < 0) {
            lo = 0;
            w = 0.0;
        }
        std::int64_t hi = lo + 1;
        if (hi > in - 1) {
            hi = in - 1;
            lo = hi;
            w = 0.0;
        }
        ax.i0[o] = lo;
        ax.i1[o] = hi;
        ax.frac[o] = w;
    }
    return ax;
}

} // namespace

template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& x, std::int64_t out_h, std::int64_t out_w) {
    const Shape4& s = x.shape();
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: target size must be >= 1");
    TensorT<T> out = TensorT<T>::zeros({s.n, s.c, out_h, out_w});
    const ResizeAxis ay = resize_axis(s.h, out_h);
    const ResizeAxis axx = resize_axis(s.w, out_w);
    const T* px = x.data();
    T* po = out.data();
    parallel_for(s.n * s.c, [&](std::int64_t p0, std::int64_t p1) {
        for (std::int64_t nc = p0; nc < p1; ++nc) {
            const T* plane = px + nc * s.h * s.w;
            T* oplane = po + nc * out_h * out_w;
            for (std::int64_t oy = 0; oy < out_h; ++oy) {
                const T* r0 = plane + ay.i0[oy] * s.w;
                const T* r1 = plane + ay.i1[oy] * s.w;
                const T wy = static_cast<T>(ay.frac[oy]);
                T* orow = oplane + oy * out_w;
                for (std::int64_t ox = 0; ox < out_w; ++ox) {
                    const std::int64_t x0 = axx.i0[ox], x1 = axx.i1[ox];
                    const T wx = static_cast<T>(axx.frac[ox]);
                    const T a = r0[x0] + wx * (r0[x1] - r0[x0]);
                    const T b = r1[x0] + wx * (r1[x1] - r1[x0]);
                    orow[ox] = a + wy * (b - a);
                }
            }
        }
    });
    attach_node<T>(out, {x}, [sx = x.storage(), ay, axx, out_h, out_w](detail::Storage<T>& self) {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        const Shape4& s = sx->shape;
        const T* g = self.grad.data();
        T* gx = sx->grad.data();
        parallel_for(s.n * s.c, [&](std::int64_t p0, std::int64_t p1) {
            for (std::int64_t nc = p0; nc < p1; ++nc) {
                T* gplane = gx + nc * s.h * s.w;
                const T* gs = g + nc * out_h * out_w;
                for (std::int64_t oy = 0; oy < out_h; ++oy) {
                    const std::int64_t y0 = ay.i0[oy], y1 = ay.i1[oy];
                    const T wy = static_cast<T>(ay.frac[oy]);
                    for (std::int64_t ox = 0; ox < out_w; ++ox) {
                        const std::int64_t x0 = axx.i0[ox], x1 = axx.i1[ox];
                        const T wx = static_cast<T>(axx.frac[ox]);
                        const T gv = gs[oy * out_w + ox];
                        gplane[y0 * s.w + x0] += (T(1) - wy) * (T(1) - wx) * gv;
                        gplane[y0 * s.w + x1] += (T(1) - wy) * wx * gv;
                        gplane[y1 * s.w + x0] += wy * (T(1) - wx) * gv;
                        gplane[y1 * s.w + x1] += wy * wx * gv;
                    }
                }
            }
        });
    });
    return out;
}

template <typename T>
TensorT<T> avg_pool2(const TensorT<T>& x) {
    const Shape4& s = x.shape();
    const std::int64_t oh = (s.h + 1) / 2, ow = (s.w + 1) / 2;
    TensorT<T> out = TensorT<T>::zeros({s.n, s.c, oh, ow});
    const T* px = x.data();
    T* po = out.data();
    parallel_for(s.n * s.c, [&](std::int64_t p0, std::int64_t p1) {
        for (std::int64_t nc = p0; nc < p1; ++nc) {
            const T* plane = px + nc * s.h * s.w;
            T* oplane = po + nc * oh * ow;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                const std::int64_t y1 = std::min(2 * oy + 1, s.h - 1);
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    const std::int64_t x1 = std::min(2 * ox + 1, s.w - 1);
                    const std::int64_t count = (y1 - 2 * oy + 1) * (x1 - 2 * ox + 1);
                    T acc = T(0);
                    for (std::int64_t y = 2 * oy; y <= y1; ++y)
                        for (std::int64_t xx = 2 * ox; xx <= x1; ++xx) acc += plane[y * s.w + xx];
                    oplane[oy * ow + ox] = acc / static_cast<T>(count);
                }
            }
        }
    });
    attach_node<T>(out, {x}, [sx = x.storage(), oh, ow](detail::Storage<T>& self) {
        if (!sx->requires_grad) return;
        sx->ensure_grad();
        const Shape4& s = sx->shape;
        const T* g = self.grad.data();
        T* gx = sx->grad.data();
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            T* gplane = gx + nc * s.h * s.w;
            const T* gs = g + nc * oh * ow;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
                const std::int64_t y1 = std::min(2 * oy + 1, s.h - 1);
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    const std::int64_t x1 = std::min(2 * ox + 1, s.w - 1);
                    const T share = gs[oy * ow + ox] / static_cast<T>((y1 - 2 * oy + 1) * (x1 - 2 * ox + 1));
                    for (std::int64_t y = 2 * oy; y <= y1; ++y)
                        for (std::int64_t xx = 2 * ox; xx <= x1; ++xx) gplane[y * s.w + xx] += share;
                }
            }
        }
    });
    return out;
}

#define UPR_INSTANTIATE(T)                                                                                  \
    template TensorT<T> conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&, const ConvSpec&); \
    template TensorT<T> transpose_conv2d<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,        \
                                            const ConvSpec&);                                               \
    template TensorT<T> leaky_relu<T>(const TensorT<T>&, T);                                                \
    template TensorT<T> sigmoid<T>(const TensorT<T>&);                                                      \
    template TensorT<T> activation<T>(const TensorT<T>&, ActKind, T);                                       \
    template TensorT<T> bilinear_resize<T>(const TensorT<T>&, std::int64_t, std::int64_t);                  \
    template TensorT<T> avg_pool2<T>(const TensorT<T>&);

UPR_INSTANTIATE(float)
UPR_INSTANTIATE(double)

#undef UPR_INSTANTIATE

} // namespace upr
