#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sgcdet/autodiff.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

// Central finite-difference check. `build` receives a tape plus one Var per
// input tensor and returns a scalar loss Var; it is re-invoked on fresh tapes
// for every probe, so it must be a pure function of the tape and inputs.
// Returns max over all input coordinates of |analytic - numeric| / max(1, |numeric|).
template <typename Build>
double finite_diff_gradcheck(Build&& build, std::vector<Tensor> inputs, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("finite_diff_gradcheck: eps must lie in [1e-7, 1e-3]");

  auto eval = [&](Tape& tape) -> Var {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.input(t));
    Var loss = build(tape, vars);
    if (tape.len(loss) != 1)
      throw std::invalid_argument("finite_diff_gradcheck: build must return a scalar");
    return loss;
  };

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back(tape.input(t));
    Var loss = build(tape, vars);
    if (tape.len(loss) != 1)
      throw std::invalid_argument("finite_diff_gradcheck: build must return a scalar");
    tape.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i) {
      const double* g = tape.grad_data(vars[i]);
      analytic[i].assign(g, g + inputs[i].size());
    }
  }

  double max_err = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t j = 0; j < inputs[i].size(); ++j) {
      const double keep = inputs[i].data[j];
      inputs[i].data[j] = keep + eps;
      double fp;
      {
        Tape tape;
        fp = tape.scalar(eval(tape));
      }
      inputs[i].data[j] = keep - eps;
      double fm;
      {
        Tape tape;
        fm = tape.scalar(eval(tape));
      }
      inputs[i].data[j] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[i][j] - numeric) / std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace sgcdet
