#include "asbd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace asbd {

template <typename Scalar>
GradCheckResult grad_check(const std::function<Tensor<Scalar>()>& loss, const ParameterList<Scalar>& params,
                           double h) {
  std::vector<typename Tensor<Scalar>::Array> analytic;
  {
    std::vector<bool> saved;
    for (const auto& p : params) {
      saved.push_back(p.tensor.requires_grad());
      Tensor<Scalar> t = p.tensor;
      t.set_requires_grad(true);
      t.zero_grad();
    }
    Tape<Scalar> tape;
    {
      TapeScope<Scalar> scope(tape);
      const Tensor<Scalar> out = loss();
      tape.backward(out);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      analytic.push_back(params[i].tensor.grad());
      Tensor<Scalar> t = params[i].tensor;
      t.set_requires_grad(saved[i]);
    }
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<Scalar> t = params[pi].tensor;
    auto& values = t.mutable_values();
    for (Index i = 0; i < values.size(); ++i) {
      const Scalar original = values[i];
      values[i] = static_cast<Scalar>(original + h);
      const double plus = static_cast<double>(loss().item());
      values[i] = static_cast<Scalar>(original - h);
      const double minus = static_cast<double>(loss().item());
      values[i] = original;

      const double numeric = (plus - minus) / (2.0 * h);
      const double a = static_cast<double>(analytic[pi][i]);
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++result.coordinates;
      if (rel > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = std::max(result.max_rel_error, rel);
        result.worst_parameter = params[pi].name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

template <typename Scalar>
double grad_check(const std::function<Tensor<Scalar>(const Tensor<Scalar>&)>& f, Tensor<Scalar> x, double h) {
  const ParameterList<Scalar> params{{"x", x}};
  return grad_check<Scalar>([&] { return f(x); }, params, h).max_rel_error;
}

template GradCheckResult grad_check<float>(const std::function<Tensor<float>()>&, const ParameterList<float>&,
                                           double);
template GradCheckResult grad_check<double>(const std::function<Tensor<double>()>&, const ParameterList<double>&,
                                            double);
template double grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&, Tensor<float>, double);
template double grad_check<double>(const std::function<Tensor<double>(const Tensor<double>&)>&, Tensor<double>,
                                   double);

}  // namespace asbd
