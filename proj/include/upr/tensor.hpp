#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "upr/errors.hpp"

namespace upr {

struct Shape4 {
    std::int64_t n = 0, c = 0, h = 0, w = 0;

    std::int64_t numel() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

namespace detail {

template <typename T>
struct Storage {
    Shape4 shape;
    std::vector<T> data;
    std::vector<T> grad; // allocated on first accumulation
    bool requires_grad = false;
    std::string label;

    // Graph edges; empty for leaves and no-grad results.
    std::vector<std::shared_ptr<Storage>> parents;
    std::function<void(Storage&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
    void accumulate_grad(const T* g) {
        ensure_grad();
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
    }
};

} // namespace detail

// Whether newly created ops record backward edges. Scoped off during
// inference via NoGradGuard.
bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
    NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
    ~NoGradGuard() { set_grad_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Dense (batch, channels, height, width) tensor with optional reverse-mode
// differentiation. Value-semantic handle sharing the underlying storage.
template <typename T>
class TensorT {
public:
    using Scalar = T;

    TensorT() = default;

    static TensorT zeros(Shape4 s, bool requires_grad = false);
    static TensorT full(Shape4 s, T value, bool requires_grad = false);
    static TensorT from_vector(Shape4 s, std::vector<T> values, bool requires_grad = false);

    bool defined() const { return st_ != nullptr; }
    const Shape4& shape() const { return st_->shape; }
    std::int64_t numel() const { return st_->shape.numel(); }

    T* data() { return st_->data.data(); }
    const T* data() const { return st_->data.data(); }
    std::span<const T> values() const { return {st_->data.data(), st_->data.size()}; }

    T& at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x);
    T at(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const;

    bool requires_grad() const { return st_->requires_grad; }
    TensorT& set_requires_grad(bool rg);

    // Gradient accumulated by backward(); empty span until first use.
    std::span<const T> grad() const { return {st_->grad.data(), st_->grad.size()}; }
    T* grad_data() { return st_->grad.data(); }
    bool has_grad() const { return !st_->grad.empty(); }
    void zero_grad();

    // Reverse pass from this tensor. Seed defaults to ones; when provided it
    // must match this tensor's shape. Releases the graph unless retain.
    void backward(const TensorT& seed = {}, bool retain_graph = false) const;

    TensorT& set_label(std::string label) {
        st_->label = std::move(label);
        return *this;
    }
    const std::string& label() const { return st_->label; }

    // Deep copy of values; no graph, no grad.
    TensorT clone_detached() const;

    std::shared_ptr<detail::Storage<T>> storage() const { return st_; }
    static TensorT wrap(std::shared_ptr<detail::Storage<T>> st) {
        TensorT t;
        t.st_ = std::move(st);
        return t;
    }

private:
    std::shared_ptr<detail::Storage<T>> st_;
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b);

// Builds a graph node: out.parents = inputs that require grad tracking,
// out.backward_fn = fn. No-op when grads are disabled or no input needs them.
template <typename T>
void attach_node(TensorT<T>& out, std::initializer_list<TensorT<T>> inputs,
                 std::function<void(detail::Storage<T>&)> fn);

// ---- elementwise ----
template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> div(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> add_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> mul_scalar(const TensorT<T>& a, T s);
template <typename T> TensorT<T> sqrt_elem(const TensorT<T>& a);
// max(x, lo); gradient passes where x > lo
template <typename T> TensorT<T> clamp_min(const TensorT<T>& a, T lo);
// min(max(x, lo), hi); gradient passes inside the range
template <typename T> TensorT<T> clamp(const TensorT<T>& a, T lo, T hi);

// ---- reductions (output shape 1x1x1x1) ----
template <typename T> TensorT<T> sum(const TensorT<T>& a);
template <typename T> TensorT<T> mean(const TensorT<T>& a);

// ---- layout ----
template <typename T> TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts);
template <typename T> TensorT<T> narrow_channels(const TensorT<T>& a, std::int64_t c0, std::int64_t len);
template <typename T> TensorT<T> repeat_channels(const TensorT<T>& a, std::int64_t times);
template <typename T>
TensorT<T> narrow_spatial(const TensorT<T>& a, std::int64_t y0, std::int64_t h, std::int64_t x0, std::int64_t w);
// Mirror padding without edge repetition (abcb|abcd|cbab style).
template <typename T>
TensorT<T> reflect_pad(const TensorT<T>& a, std::int64_t top, std::int64_t bottom, std::int64_t left,
                       std::int64_t right);

// ---- diagnostics ----
template <typename T> bool all_finite(const TensorT<T>& a);

extern template class TensorT<float>;
extern template class TensorT<double>;

} // namespace upr
