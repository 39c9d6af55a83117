#pragma once

// Monotone piecewise cubic Hermite interpolation (Fritsch-Carlson slopes).
// Written out here because boost 1.74's pchip header fails to compile under
// C++20 (unqualified isnan).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace superou {

class Pchip {
 public:
  Pchip() = default;
  Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const std::size_t n = x_.size();
    if (n < 2 || y_.size() != n) throw std::invalid_argument("Pchip: need at least two matching points");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1])) throw std::invalid_argument("Pchip: abscissas must increase strictly");
    std::vector<double> h(n - 1), del(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) {
      h[i] = x_[i + 1] - x_[i];
      del[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    d_.assign(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (del[i - 1] * del[i] > 0.0) {
        const double w1 = 2.0 * h[i] + h[i - 1], w2 = h[i] + 2.0 * h[i - 1];
        d_[i] = (w1 + w2) / (w1 / del[i - 1] + w2 / del[i]);
      }
    }
    d_[0] = end_slope(h[0], h.size() > 1 ? h[1] : h[0], del[0], del.size() > 1 ? del[1] : del[0]);
    d_[n - 1] = end_slope(h[n - 2], n > 2 ? h[n - 3] : h[n - 2], del[n - 2], n > 2 ? del[n - 3] : del[n - 2]);
  }

  double operator()(double x) const {
    std::size_t i;
    if (x <= x_.front()) i = 0;
    else if (x >= x_.back()) i = x_.size() - 2;
    else i = static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double s = (x - x_[i]) / h;
    const double s2 = s * s, s3 = s2 * s;
    return (2 * s3 - 3 * s2 + 1) * y_[i] + (s3 - 2 * s2 + s) * h * d_[i] + (-2 * s3 + 3 * s2) * y_[i + 1] +
           (s3 - s2) * h * d_[i + 1];
  }

  double front() const { return x_.front(); }
  double back() const { return x_.back(); }

 private:
  // three-point one-sided slope, limited to keep monotonicity
  static double end_slope(double h0, double h1, double del0, double del1) {
    double d = ((2 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if (d * del0 <= 0.0) d = 0.0;
    else if (del0 * del1 <= 0.0 && std::fabs(d) > std::fabs(3 * del0)) d = 3 * del0;
    return d;
  }

  std::vector<double> x_, y_, d_;
};

}  // namespace superou
