#include "coulpimc/spline.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

namespace coulpimc {

CubicSpline::CubicSpline(std::vector<double> x, std::vector<double> y)
    : x_(std::move(x)), y_(std::move(y)) {
    const size_t n = x_.size();
    if (n < 2 || y_.size() != n)
        throw std::runtime_error("CubicSpline: need >= 2 nodes and matching sizes");
    for (size_t i = 1; i < n; ++i)
        if (!(x_[i] > x_[i - 1]))
            throw std::runtime_error("CubicSpline: abscissae must be strictly increasing");

    y2_.assign(n, 0.0);
    std::vector<double> u(n, 0.0);
    for (size_t i = 1; i + 1 < n; ++i) {
        const double sig = (x_[i] - x_[i - 1]) / (x_[i + 1] - x_[i - 1]);
        const double p = sig * y2_[i - 1] + 2.0;
        y2_[i] = (sig - 1.0) / p;
        const double dy1 = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
        const double dy0 = (y_[i] - y_[i - 1]) / (x_[i] - x_[i - 1]);
        u[i] = (6.0 * (dy1 - dy0) / (x_[i + 1] - x_[i - 1]) - sig * u[i - 1]) / p;
    }
    for (size_t k = n - 1; k-- > 1;)
        y2_[k] = y2_[k] * y2_[k + 1] + u[k];
    y2_[0] = y2_[n - 1] = 0.0;
}

size_t CubicSpline::interval(double x) const {
    if (x <= x_.front()) return 0;
    if (x >= x_.back()) return x_.size() - 2;
    const auto it = std::upper_bound(x_.begin(), x_.end(), x);
    return static_cast<size_t>(it - x_.begin()) - 1;
}

double CubicSpline::eval_at(size_t i, double x) const {
    const double h = x_[i + 1] - x_[i];
    const double a = (x_[i + 1] - x) / h;
    const double b = 1.0 - a;
    return a * y_[i] + b * y_[i + 1] +
           ((a * a * a - a) * y2_[i] + (b * b * b - b) * y2_[i + 1]) * h * h / 6.0;
}

double CubicSpline::deriv_at(size_t i, double x) const {
    const double h = x_[i + 1] - x_[i];
    const double a = (x_[i + 1] - x) / h;
    const double b = 1.0 - a;
    return (y_[i + 1] - y_[i]) / h -
           (3.0 * a * a - 1.0) / 6.0 * h * y2_[i] +
           (3.0 * b * b - 1.0) / 6.0 * h * y2_[i + 1];
}

double CubicSpline::eval(double x) const {
    const double xc = std::clamp(x, x_.front(), x_.back());
    return eval_at(interval(xc), xc);
}

double CubicSpline::deriv(double x) const {
    const double xc = std::clamp(x, x_.front(), x_.back());
    return deriv_at(interval(xc), xc);
}

} // namespace coulpimc
