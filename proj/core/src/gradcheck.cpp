#include "keymem/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace keymem {

double finite_diff_check(const std::function<double(const Vec&)>& f, const Vec& analytic_grad,
                         const Vec& point, double step, double floor) {
    if (!(step > 0.0) || !(floor > 0.0)) {
        throw std::invalid_argument("finite_diff_check: step and floor must be positive");
    }
    if (analytic_grad.size() != point.size()) {
        throw std::invalid_argument("finite_diff_check: gradient/point length mismatch");
    }
    Vec x = point;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + step;
        const double f_plus = f(x);
        x[i] = orig - step;
        const double f_minus = f(x);
        x[i] = orig;
        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            throw std::runtime_error("finite_diff_check: non-finite function value at coordinate " +
                                     std::to_string(i));
        }
        const double central = (f_plus - f_minus) / (2.0 * step);
        const double denom =
            std::max(std::abs(central), std::abs(analytic_grad[i])) + floor;
        max_rel = std::max(max_rel, std::abs(central - analytic_grad[i]) / denom);
    }
    return max_rel;
}

}  // namespace keymem
