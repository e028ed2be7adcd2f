#ifndef ASBD_GRADCHECK_HPP
#define ASBD_GRADCHECK_HPP

#include "asbd/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace asbd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Index coordinates = 0;
};

// Compares backward() against central differences (f(x+h) - f(x-h)) / 2h for
// every coordinate of every listed tensor. Relative error per coordinate is
// |a - n| / max(1e-8, |a| + |n|). `loss` must rebuild its graph on each call
// from the current parameter values.
template <typename Scalar>
GradCheckResult grad_check(const std::function<Tensor<Scalar>()>& loss, const ParameterList<Scalar>& params,
                           double h);

// Single-input form: f is evaluated at x.
template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f, Tensor<Scalar> x, double h);

struct GradCheckCase {
  std::string name;
  GradCheckResult result;
};

// Every differentiable primitive plus the attention, residual and full
// encoder-decoder joint-loss compositions, on small random inputs drawn from
// Rng(seed). Each case is a well-scaled scalar loss (random linear
// read-out of the op's output where the op is not scalar already).
template <typename Scalar>
std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed, double h);

std::vector<std::string> gradcheck_case_names();

}  // namespace asbd

#endif  // ASBD_GRADCHECK_HPP
