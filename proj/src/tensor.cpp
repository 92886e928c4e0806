#include "upr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace upr {

std::string Shape4::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

namespace {
bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

template <typename T>
TensorT<T> TensorT<T>::zeros(Shape4 s, bool requires_grad) {
    auto st = std::make_shared<detail::Storage<T>>();
    st->shape = s;
    st->data.assign(static_cast<std::size_t>(s.numel()), T(0));
    st->requires_grad = requires_grad;
    return wrap(std::move(st));
}

template <typename T>
TensorT<T> TensorT<T>::full(Shape4 s, T value, bool requires_grad) {
    TensorT t = zeros(s, requires_grad);
    std::fill(t.st_->data.begin(), t.st_->data.end(), value);
    return t;
}

template <typename T>
TensorT<T> TensorT<T>::from_vector(Shape4 s, std::vector<T> values, bool requires_grad) {
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
        throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " + s.str());
    }
    auto st = std::make_shared<detail::Storage<T>>();
    st->shape = s;
    st->data = std::move(values);
    st->requires_grad = requires_grad;
    return wrap(std::move(st));
}

template <typename T>
T& TensorT<T>::at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    const Shape4& s = st_->shape;
    return st_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
}

template <typename T>
T TensorT<T>::at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    const Shape4& s = st_->shape;
    return st_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + y) * s.w + x)];
}

template <typename T>
TensorT<T>& TensorT<T>::set_requires_grad(bool rg) {
    st_->requires_grad = rg;
    return *this;
}

template <typename T>
void TensorT<T>::zero_grad() {
    std::fill(st_->grad.begin(), st_->grad.end(), T(0));
}

template <typename T>
TensorT<T> TensorT<T>::clone_detached() const {
    auto st = std::make_shared<detail::Storage<T>>();
    st->shape = st_->shape;
    st->data = st_->data;
    return wrap(std::move(st));
}

template <typename T>
void TensorT<T>::backward(const TensorT& seed, bool retain_graph) const {
    using Node = detail::Storage<T>;
    Node* root = st_.get();
    if (seed.defined()) {
        if (!(seed.shape() == root->shape)) {
            throw ShapeError("backward: seed shape " + seed.shape().str() + " != tensor shape " +
                             root->shape.str());
        }
        root->ensure_grad();
        const T* s = seed.data();
        for (std::size_t i = 0; i < root->grad.size(); ++i) root->grad[i] += s[i];
    } else {
        if (root->grad.empty()) root->grad.assign(root->data.size(), T(1));
        else
            for (auto& g : root->grad) g += T(1);
    }

    // Iterative post-order DFS over parent edges; reversed post-order is a
    // valid topological order (every parent appears after all its children).
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->backward_fn && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
    if (!retain_graph) {
        for (Node* node : topo) {
            node->backward_fn = nullptr;
            node->parents.clear();
        }
    }
}

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    }
}

template <typename T>
void attach_node(TensorT<T>& out, std::initializer_list<TensorT<T>> inputs,
                 std::function<void(detail::Storage<T>&)> fn) {
    if (!grad_enabled()) return;
    bool any = false;
    for (const auto& in : inputs) {
        if (in.defined() && in.requires_grad()) any = true;
    }
    if (!any) return;
    auto st = out.storage();
    st->requires_grad = true;
    for (const auto& in : inputs) {
        if (in.defined()) st->parents.push_back(in.storage());
    }
    st->backward_fn = std::move(fn);
}

namespace {

// Shared scaffolding for same-shape elementwise ops.
template <typename T, typename Fwd, typename Bwd>
TensorT<T> binary_op(const char* name, const TensorT<T>& a, const TensorT<T>& b, Fwd fwd, Bwd bwd) {
    check_same_shape(name, a, b);
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    attach_node<T>(out, {a, b}, [sa = a.storage(), sb = b.storage(), bwd](detail::Storage<T>& self) {
        const T* g = self.grad.data();
        const std::int64_t n = static_cast<std::int64_t>(self.grad.size());
        T* ga = nullptr;
        T* gb = nullptr;
        if (sa->requires_grad) {
            sa->ensure_grad();
            ga = sa->grad.data();
        }
        if (sb->requires_grad) {
            sb->ensure_grad();
            gb = sb->grad.data();
        }
        const T* pa = sa->data.data();
        const T* pb = sb->data.data();
        for (std::int64_t i = 0; i < n; ++i) bwd(pa[i], pb[i], g[i], ga ? &ga[i] : nullptr, gb ? &gb[i] : nullptr);
    });
    return out;
}

template <typename T, typename Fwd, typename Bwd>
TensorT<T> unary_op(const TensorT<T>& a, Fwd fwd, Bwd bwd) {
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
    attach_node<T>(out, {a}, [sa = a.storage(), so = out.storage(), bwd](detail::Storage<T>& self) {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        const T* g = self.grad.data();
        const T* pa = sa->data.data();
        const T* po = so->data.data();
        T* ga = sa->grad.data();
        const std::int64_t n = static_cast<std::int64_t>(self.grad.size());
        for (std::int64_t i = 0; i < n; ++i) ga[i] += bwd(pa[i], po[i]) * g[i];
    });
    return out;
}

} // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; },
        [](T, T, T g, T* ga, T* gb) {
            if (ga) *ga += g;
            if (gb) *gb += g;
        });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; },
        [](T, T, T g, T* ga, T* gb) {
            if (ga) *ga += g;
            if (gb) *gb -= g;
        });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T>(
        "mul", a, b, [](T x, T y) { return x * y; },
        [](T x, T y, T g, T* ga, T* gb) {
            if (ga) *ga += y * g;
            if (gb) *gb += x * g;
        });
}

template <typename T>
TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; },
        [](T x, T y, T g, T* ga, T* gb) {
            if (ga) *ga += g / y;
            if (gb) *gb -= x / (y * y) * g;
        });
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    return unary_op<T>(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    return unary_op<T>(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
TensorT<T> sqrt_elem(const TensorT<T>& a) {
    return unary_op<T>(a, [](T x) { return std::sqrt(x); },
                       [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
TensorT<T> clamp_min(const TensorT<T>& a, T lo) {
    return unary_op<T>(a, [lo](T x) { return x > lo ? x : lo; },
                       [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <typename T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
    return unary_op<T>(a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
                       [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}

template <typename T>
TensorT<T> sum(const TensorT<T>& a) {
    TensorT<T> out = TensorT<T>::zeros({1, 1, 1, 1});
    const T* pa = a.data();
    // Pairwise-ish accumulation in double keeps large reductions accurate.
    double acc = 0.0;
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(pa[i]);
    out.data()[0] = static_cast<T>(acc);
    attach_node<T>(out, {a}, [sa = a.storage()](detail::Storage<T>& self) {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        const T g = self.grad[0];
        for (auto& v : sa->grad) v += g;
    });
    return out;
}

template <typename T>
TensorT<T> mean(const TensorT<T>& a) {
    const std::int64_t n = a.numel();
    TensorT<T> s = sum(a);
    return mul_scalar(s, static_cast<T>(1.0 / static_cast<double>(n)));
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    Shape4 s0 = parts[0].shape();
    std::int64_t ctotal = 0;
    for (const auto& p : parts) {
        const Shape4& s = p.shape();
        if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
            throw ShapeError("concat_channels: incompatible shape " + s.str() + " vs " + s0.str());
        }
        ctotal += s.c;
    }
    TensorT<T> out = TensorT<T>::zeros({s0.n, ctotal, s0.h, s0.w});
    const std::int64_t plane = s0.h * s0.w;
    T* po = out.data();
    for (std::int64_t n = 0; n < s0.n; ++n) {
        std::int64_t coff = 0;
        for (const auto& p : parts) {
            const std::int64_t pc = p.shape().c;
            const T* src = p.data() + n * pc * plane;
            std::copy(src, src + pc * plane, po + (n * ctotal + coff) * plane);
            coff += pc;
        }
    }
    // attach_node only accepts initializer lists; build the node by hand.
    if (grad_enabled()) {
        bool any = false;
        for (const auto& p : parts)
            if (p.requires_grad()) any = true;
        if (any) {
            auto st = out.storage();
            st->requires_grad = true;
            std::vector<std::shared_ptr<detail::Storage<T>>> srcs;
            for (const auto& p : parts) {
                st->parents.push_back(p.storage());
                srcs.push_back(p.storage());
            }
            st->backward_fn = [srcs, ctotal, plane](detail::Storage<T>& self) {
                const T* g = self.grad.data();
                const std::int64_t nb = self.shape.n;
                for (std::int64_t n = 0; n < nb; ++n) {
                    std::int64_t coff = 0;
                    for (const auto& sp : srcs) {
                        const std::int64_t pc = sp->shape.c;
                        if (sp->requires_grad) {
                            sp->ensure_grad();
                            T* gp = sp->grad.data() + n * pc * plane;
                            const T* gs = g + (n * ctotal + coff) * plane;
                            for (std::int64_t i = 0; i < pc * plane; ++i) gp[i] += gs[i];
                        }
                        coff += pc;
                    }
                }
            };
        }
    }
    return out;
}

template <typename T>
TensorT<T> narrow_channels(const TensorT<T>& a, std::int64_t c0, std::int64_t len) {
    const Shape4& s = a.shape();
    if (c0 < 0 || len <= 0 || c0 + len > s.c) {
        throw ShapeError("narrow_channels: range [" + std::to_string(c0) + "," + std::to_string(c0 + len) +
                         ") outside channel count " + std::to_string(s.c));
    }
    TensorT<T> out = TensorT<T>::zeros({s.n, len, s.h, s.w});
    const std::int64_t plane = s.h * s.w;
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t n = 0; n < s.n; ++n) {
        const T* src = pa + (n * s.c + c0) * plane;
        std::copy(src, src + len * plane, po + n * len * plane);
    }
    attach_node<T>(out, {a}, [sa = a.storage(), c0, len, plane](detail::Storage<T>& self) {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        const Shape4& s = sa->shape;
        const T* g = self.grad.data();
        for (std::int64_t n = 0; n < s.n; ++n) {
            T* gp = sa->grad.data() + (n * s.c + c0) * plane;
            const T* gs = g + n * len * plane;
            for (std::int64_t i = 0; i < len * plane; ++i) gp[i] += gs[i];
        }
    });
    return out;
}

template <typename T>
TensorT<T> repeat_channels(const TensorT<T>& a, std::int64_t times) {
    const Shape4& s = a.shape();
    TensorT<T> out = TensorT<T>::zeros({s.n, s.c * times, s.h, s.w});
    const std::int64_t plane = s.h * s.w;
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t r = 0; r < times; ++r) {
            const T* src = pa + n * s.c * plane;
            std::copy(src, src + s.c * plane, po + ((n * times + r) * s.c) * plane);
        }
    }
    attach_node<T>(out, {a}, [sa = a.storage(), times, plane](detail::Storage<T>& self) {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        const Shape4& s = sa->shape;
        const T* g = self.grad.data();
        for (std::int64_t n = 0; n < s.n; ++n) {
            T* gp = sa->grad.data() + n * s.c * plane;
            for (std::int64_t r = 0; r < times; ++r) {
                const T* gs = g + ((n * times + r) * s.c) * plane;
                for (std::int64_t i = 0; i < s.c * plane; ++i) gp[i] += gs[i];
            }
        }
    });
    return out;
}

template <typename T>
TensorT<T> narrow_spatial(const TensorT<T>& a, std::int64_t y0, std::int64_t h, std::int64_t x0, std::int64_t w) {
    const Shape4& s = a.shape();
    if (y0 < 0 || h <= 0 || y0 + h > s.h || x0 < 0 || w <= 0 || x0 + w > s.w) {
        throw ShapeError("narrow_spatial: window " + std::to_string(h) + "x" + std::to_string(w) + "+" +
                         std::to_string(y0) + "+" + std::to_string(x0) + " outside " + s.str());
    }
    TensorT<T> out = TensorT<T>::zeros({s.n, s.c, h, w});
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const T* src = pa + nc * s.h * s.w;
        T* dst = po + nc * h * w;
        for (std::int64_t y = 0; y < h; ++y) {
            std::copy(src + (y0 + y) * s.w + x0, src + (y0 + y) * s.w + x0 + w, dst + y * w);
        }
    }
    attach_node<T>(out, {a}, [sa = a.storage(), y0, x0, h, w](detail::Storage<T>& self) {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        const Shape4& s = sa->shape;
        const T* g = self.grad.data();
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            T* gp = sa->grad.data() + nc * s.h * s.w;
            const T* gs = g + nc * h * w;
            for (std::int64_t y = 0; y < h; ++y) {
                for (std::int64_t x = 0; x < w; ++x) gp[(y0 + y) * s.w + x0 + x] += gs[y * w + x];
            }
        }
    });
    return out;
}

namespace {
// Index into [0, n) mirrored without repeating the border sample.
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * (n - 1);
    std::int64_t m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}
} // namespace

template <typename T>
TensorT<T> reflect_pad(const TensorT<T>& a, std::int64_t top, std::int64_t bottom, std::int64_t left,
                       std::int64_t right) {
    const Shape4& s = a.shape();
    if (top >= s.h || bottom >= s.h || left >= s.w || right >= s.w) {
        throw ShapeError("reflect_pad: padding (" + std::to_string(top) + "," + std::to_string(bottom) + "," +
                         std::to_string(left) + "," + std::to_string(right) + ") too large for " + s.str());
    }
    const std::int64_t oh = s.h + top + bottom;
    const std::int64_t ow = s.w + left + right;
    TensorT<T> out = TensorT<T>::zeros({s.n, s.c, oh, ow});
    const T* pa = a.data();
    T* po = out.data();
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        const T* src = pa + nc * s.h * s.w;
        T* dst = po + nc * oh * ow;
        for (std::int64_t y = 0; y < oh; ++y) {
            const std::int64_t sy = reflect_index(y - top, s.h);
            for (std::int64_t x = 0; x < ow; ++x) {
                dst[y * ow + x] = src[sy * s.w + reflect_index(x - left, s.w)];
            }
        }
    }
    attach_node<T>(out, {a}, [sa = a.storage(), top, left, oh, ow](detail::Storage<T>& self) {
        if (!sa->requires_grad) return;
        sa->ensure_grad();
        const Shape4& s = sa->shape;
        const T* g = self.grad.data();
        for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
            T* gp = sa->grad.data() + nc * s.h * s.w;
            const T* gs = g + nc * oh * ow;
            for (std::int64_t y = 0; y < oh; ++y) {
                const std::int64_t sy = reflect_index(y - top, s.h);
                for (std::int64_t x = 0; x < ow; ++x) {
                    gp[sy * s.w + reflect_index(x - left, s.w)] += gs[y * ow + x];
                }
            }
        }
    });
    return out;
}

template <typename T>
bool all_finite(const TensorT<T>& a) {
    const T* p = a.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

template class TensorT<float>;
template class TensorT<double>;

#define UPR_INSTANTIATE(T)                                                                                  \
    template void check_same_shape<T>(const char*, const TensorT<T>&, const TensorT<T>&);                   \
    template void attach_node<T>(TensorT<T>&, std::initializer_list<TensorT<T>>,                            \
                                 std::function<void(detail::Storage<T>&)>);                                 \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                                       \
    template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                                       \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                                       \
    template TensorT<T> div<T>(const TensorT<T>&, const TensorT<T>&);                                       \
    template TensorT<T> add_scalar<T>(const TensorT<T>&, T);                                                \
    template TensorT<T> mul_scalar<T>(const TensorT<T>&, T);                                                \
    template TensorT<T> sqrt_elem<T>(const TensorT<T>&);                                                    \
    template TensorT<T> clamp_min<T>(const TensorT<T>&, T);                                                 \
    template TensorT<T> clamp<T>(const TensorT<T>&, T, T);                                                  \
    template TensorT<T> sum<T>(const TensorT<T>&);                                                          \
    template TensorT<T> mean<T>(const TensorT<T>&);                                                         \
    template TensorT<T> concat_channels<T>(const std::vector<TensorT<T>>&);                                 \
    template TensorT<T> narrow_channels<T>(const TensorT<T>&, std::int64_t, std::int64_t);                  \
    template TensorT<T> repeat_channels<T>(const TensorT<T>&, std::int64_t);                                \
    template TensorT<T> narrow_spatial<T>(const TensorT<T>&, std::int64_t, std::int64_t, std::int64_t,     \
                                          std::int64_t);                                                    \
    template TensorT<T> reflect_pad<T>(const TensorT<T>&, std::int64_t, std::int64_t, std::int64_t,        \
                                       std::int64_t);                                                       \
    template bool all_finite<T>(const TensorT<T>&);

UPR_INSTANTIATE(float)
UPR_INSTANTIATE(double)

#undef UPR_INSTANTIATE

} // namespace upr
