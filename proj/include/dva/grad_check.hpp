#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "dva/tape.hpp"

namespace dva {

// A builder takes a flat parameter vector, emits the computation onto the
// tape and reports which leaves correspond to which slice of the flat vector.
struct BuiltProgram {
  NodeId output;
  std::vector<NodeId> params;  // leaves, concatenated in flat order
};

struct GradCheckReport {
  double max_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;

  bool ok(double tol) const { return max_err <= tol; }
};

// Compares reverse-mode gradients against central finite differences of the
// rebuilt program. Error per parameter is |analytic - numeric| divided by
// max(|analytic|, 1e-12).
template <class Builder>
GradCheckReport grad_check(Builder&& build, std::span<const double> theta, double h = 1e-5) {
  Tape tape;
  BuiltProgram prog = build(tape, theta);
  tape.backward(prog.output);

  std::vector<double> analytic;
  analytic.reserve(theta.size());
  for (NodeId p : prog.params) {
    auto g = tape.grad_span(p);
    analytic.insert(analytic.end(), g.begin(), g.end());
  }
  if (analytic.size() != theta.size())
    throw std::invalid_argument("grad_check: builder params do not cover theta");

  std::vector<double> point(theta.begin(), theta.end());
  GradCheckReport rep;
  for (std::size_t j = 0; j < point.size(); ++j) {
    const double keep = point[j];
    point[j] = keep + h;
    Tape tp;
    const double fp = tp.value(build(tp, std::span<const double>(point)).output);
    point[j] = keep - h;
    Tape tm;
    const double fm = tm.value(build(tm, std::span<const double>(point)).output);
    point[j] = keep;

    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[j];
    const double err = std::fabs(a - numeric) / std::max(std::fabs(a), 1e-12);
    if (err >= rep.max_err) {
      rep.max_err = err;
      rep.worst_index = j;
      rep.analytic_at_worst = a;
      rep.numeric_at_worst = numeric;
    }
  }
  return rep;
}

}  // namespace dva
