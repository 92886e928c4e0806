#include "upr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace upr {

double GradCheckReport::worst() const {
    double m = 0.0;
    for (double e : max_rel_err) m = std::max(m, e);
    return m;
}

namespace {

double dot(const TensorD& a, const TensorD& b) {
    const double* pa = a.data();
    const double* pb = b.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) acc += pa[i] * pb[i];
    return acc;
}

} // namespace

GradCheckReport gradcheck(const std::string& op,
                          const std::function<TensorD(const std::vector<TensorD>&)>& fn,
                          std::vector<TensorD> inputs, double step) {
    for (auto& in : inputs) {
        in.set_requires_grad(true);
        in.zero_grad();
    }

    TensorD out = fn(inputs);
    if (!all_finite(out)) throw NumericError("gradcheck(" + op + "): forward produced non-finite values");

    std::mt19937 rng(0x5eed);
    TensorD seed = uniform_tensor(out.shape(), -1.0, 1.0, rng);
    out.backward(seed);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto& in : inputs) {
        std::span<const double> g = in.grad();
        analytic.emplace_back(g.begin(), g.end());
        if (analytic.back().empty()) analytic.back().assign(static_cast<std::size_t>(in.numel()), 0.0);
    }

    GradCheckReport report{op, std::vector<double>(inputs.size(), 0.0)};
    NoGradGuard no_grad;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        double* vals = inputs[a].data();
        for (std::int64_t i = 0; i < inputs[a].numel(); ++i) {
            const double saved = vals[i];
            vals[i] = saved + step;
            TensorD hi = fn(inputs);
            vals[i] = saved - step;
            TensorD lo = fn(inputs);
            vals[i] = saved;
            if (!all_finite(hi) || !all_finite(lo)) {
                throw NumericError("gradcheck(" + op + "): non-finite value while probing argument " +
                                   std::to_string(a));
            }
            const double numeric = (dot(hi, seed) - dot(lo, seed)) / (2.0 * step);
            const double an = analytic[a][static_cast<std::size_t>(i)];
            const double err = std::abs(an - numeric) / std::max({1.0, std::abs(an), std::abs(numeric)});
            report.max_rel_err[a] = std::max(report.max_rel_err[a], err);
        }
    }
    return report;
}

TensorD uniform_tensor(Shape4 s, double lo, double hi, std::mt19937& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (auto& x : v) x = dist(rng);
    return TensorD::from_vector(s, std::move(v));
}

TensorT<float> uniform_tensor_f(Shape4 s, float lo, float hi, std::mt19937& rng) {
    std::uniform_real_distribution<float> dist(lo, hi);
    std::vector<float> v(static_cast<std::size_t>(s.numel()));
    for (auto& x : v) x = dist(rng);
    return TensorT<float>::from_vector(s, std::move(v));
}

TensorD smooth_flow(Shape4 spatial, double max_mag, std::mt19937& rng) {
    Shape4 s{spatial.n, 2, spatial.h, spatial.w};
    std::uniform_int_distribution<int> whole(-static_cast<int>(max_mag), static_cast<int>(max_mag));
    std::uniform_real_distribution<double> frac(0.2, 0.8);
    std::vector<double> v(static_cast<std::size_t>(s.numel()));
    for (auto& x : v) x = static_cast<double>(whole(rng)) + frac(rng);
    return TensorD::from_vector(s, std::move(v));
}

} // namespace upr
