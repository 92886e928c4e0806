#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "upr/tensor.hpp"

namespace upr {

struct GradCheckReport {
    std::string op;
    // Max of |analytic - numeric| / max(1, |analytic|, |numeric|) per argument.
    std::vector<double> max_rel_err;

    double worst() const;
    bool ok(double tol) const { return worst() < tol; }
};

// Compares reverse-mode gradients of fn against central finite differences
// (default step 1e-4, suited to unit-scale f64 inputs). The probe scalar is
// <fn(inputs), seed> with a fixed random seed tensor. Throws NumericError
// naming `op` if any probe produces non-finite values.
GradCheckReport gradcheck(const std::string& op,
                          const std::function<TensorD(const std::vector<TensorD>&)>& fn,
                          std::vector<TensorD> inputs, double step = 1e-4);

// Uniform random tensor helpers for probe construction.
TensorD uniform_tensor(Shape4 s, double lo, double hi, std::mt19937& rng);
TensorT<float> uniform_tensor_f(Shape4 s, float lo, float hi, std::mt19937& rng);

// Flow whose fractional parts stay in [0.2, 0.8]: keeps finite-difference
// probes away from the bilinear-weight kinks at integer displacements.
TensorD smooth_flow(Shape4 spatial, double max_mag, std::mt19937& rng);

} // namespace upr
