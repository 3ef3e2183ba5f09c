#pragma once

#include <functional>

#include "keymem/matrix.hpp"

namespace keymem {

// Central finite-difference check of an analytic gradient. Returns the max
// over coordinates of
//     |central - analytic| / (max(|central|, |analytic|) + floor),
// so a result <= rtol certifies |central - analytic| <= rtol * (magnitude +
// floor) per coordinate: relative agreement for well-scaled gradients with a
// floor * rtol absolute allowance where the difference quotient is all
// rounding noise. Throws std::runtime_error, naming the coordinate, if f
// returns a non-finite value.
double finite_diff_check(const std::function<double(const Vec&)>& f, const Vec& analytic_grad,
                         const Vec& point, double step = 1e-5, double floor = 1e-6);

}  // namespace keymem
