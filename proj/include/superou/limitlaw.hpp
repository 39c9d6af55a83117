#pragma once

// Limit laws of the normalized functionals X_t(f): the exponents Z_t f,
// m_t[f], m[f] and the scalar (1+beta)-stable laws they define.
//
// Test functions are real; their coefficient vectors must have zero imaginary
// part. Spatial integrals <g, phi> are Gauss-Hermite sums over `nodes` points
// per axis; 0 picks max(2M + 2, 128) because the integrands |T_u f|^{1+beta}
// are only C^1 at the zeros of f.

#include <cstdint>

#include "superou/error.hpp"
#include "superou/mechanism.hpp"
#include "superou/ou_spectral.hpp"

namespace superou {

class Philox;

/// (-i r)^{1+beta} for real r.
cplx neg_i_pow(double r, double beta);

// Scalar (1+beta)-stable law with exponent
//   m(theta) = |theta|^{1+beta} (A e^{-i s pi (1+beta)/2} + B e^{i s pi (1+beta)/2}),  s = sgn theta,
// i.e. scale^{1+beta} = (A+B) sin(pi beta/2), skew = (A-B)/(A+B).
struct StableLaw {
  double beta = 0.5;
  double A = 0.0, B = 0.0;

  static StableLaw from_parts(double beta, double A, double B);
  /// The law whose exponent at theta = 1 is m1 (Re m1 < 0).
  static StableLaw from_exponent(double beta, cplx m1);

  double index() const { return 1.0 + beta; }
  double scale() const;
  double skew() const;
  cplx exponent(double theta) const;
  cplx char_fn(double theta) const { return std::exp(exponent(theta)); }
  /// Law of the negated variable (A and B swapped).
  StableLaw negated() const { return from_parts(beta, B, A); }
};

/// exp(-scale^a |theta|^a (1 - i skew sgn(theta) tan(pi a / 2))), a = index.
cplx stable_cf_standard(double index, double scale, double skew, double theta);

cplx char_fn_eval(const StableLaw& law, double theta);

/// Chambers-Mallows-Stuck draw with characteristic function law.char_fn.
double stable_sample(const StableLaw& law, Philox& rng);

struct LimitOptions {
  int nodes = 0;          // Gauss-Hermite nodes per axis
  int panels_per_unit = 64;  // Gauss-Legendre panels per unit time
  int order = 4;          // points per panel
};

/// Z_t f = int_0^t P^a_{t-s}(eta (-i P^a_s f)^{1+beta}) ds as nodal values on
/// the grid of order c.max_order(). Warns when the outer-shell energy of the
/// re-projection exceeds 1e-4 of the total.
GridFunction z_t(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                 Diagnostics* diag = nullptr, const LimitOptions& opt = {});

/// <Z_t f, phi> without the re-projection.
cplx z_t_mean(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
              const LimitOptions& opt = {});

/// m_t[f] = eta int_0^t <(-i T_u f)^{1+beta}, phi> du.
cplx m_t_functional(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t,
                    const LimitOptions& opt = {});

/// m[f]: the integral over [0, inf) when f has no critical part, else the
/// Cesaro limit eta <(-i f_c)^{1+beta}, phi>.
cplx m_functional(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                  const LimitOptions& opt = {});

/// (A, B) from the positive and negative parts of T_u f, packaged as a law.
/// Throws DomainError when f mixes a critical part with any other part.
StableLaw decompose_to_stable(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                              const LimitOptions& opt = {});

/// <Z_1(theta f), phi>.
cplx unit_interval_limit_exponent(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                                  double theta, const LimitOptions& opt = {});

struct SeriesIdentity {
  cplx lhs, rhs;
  double gap = 0.0;
  int terms = 0;
};

/// sum_k <Z_1 T_k f~, phi> with f~ = e^{alpha(beta~ - 1)} f against m[f], for
/// f in the small-rate class.
SeriesIdentity series_identity_check(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c,
                                     const LimitOptions& opt = {});

}  // namespace superou
