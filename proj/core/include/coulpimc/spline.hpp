#pragma once

#include <cstddef>
#include <vector>

namespace coulpimc {

// Natural cubic spline over a strictly increasing abscissa set.
// Evaluation outside the range clamps to the end values (the callers that
// need different boundary behavior check the range themselves first).
class CubicSpline {
public:
    CubicSpline() = default;
    CubicSpline(std::vector<double> x, std::vector<double> y);

    double eval(double x) const;
    double deriv(double x) const;

    // Fast path when the caller already knows the interval index i with
    // x_[i] <= x <= x_[i+1] (e.g. log-uniform grids with O(1) lookup).
    double eval_at(size_t i, double x) const;
    double deriv_at(size_t i, double x) const;

    bool empty() const { return x_.empty(); }
    size_t size() const { return x_.size(); }
    const std::vector<double>& xs() const { return x_; }
    const std::vector<double>& ys() const { return y_; }
    double x_front() const { return x_.front(); }
    double x_back() const { return x_.back(); }

private:
    size_t interval(double x) const;

    std::vector<double> x_, y_, y2_;
};

} // namespace coulpimc
