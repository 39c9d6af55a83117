#pragma once

#include <cstddef>
#include <vector>

namespace superou {

struct Rule1D {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule on [a, b].
Rule1D gauss_legendre(std::size_t n, double a = -1.0, double b = 1.0);

/// n-point Gauss-Hermite rule for the weight exp(-u^2) on the real line
/// (physicists' convention; weights sum to sqrt(pi)).
Rule1D gauss_hermite(std::size_t n);

/// Composite Gauss-Legendre rule: `panels` equal panels on [a, b], `order`
/// points each. Nodes are returned in increasing order.
Rule1D composite_gauss_legendre(std::size_t panels, std::size_t order, double a, double b);

}  // namespace superou
