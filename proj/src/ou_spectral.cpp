#include "superou/ou_spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "superou/quadrature.hpp"
#include "superou/rng.hpp"

namespace superou {

void OUParams::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw DomainError("ou: sigma must be > 0");
  if (!(b > 0.0) || !std::isfinite(b)) throw DomainError("ou: b must be > 0");
  if (d < 1 || d > 3) throw DomainError("ou: d must be 1, 2 or 3");
}

int MultiIndex::order() const {
  int s = 0;
  for (int v : p) s += v;
  return s;
}

double phi_density(const OUParams& params, std::span<const double> x) {
  const double k = params.b / (params.sigma * params.sigma);
  double r2 = 0.0;
  for (double v : x) r2 += v * v;
  return std::pow(k / std::numbers::pi, 0.5 * params.d) * std::exp(-k * r2);
}

double hermite_H(int n, double u) {
  if (n < 0) throw DomainError("hermite_H: negative degree");
  double h0 = 1.0;
  if (n == 0) return h0;
  double h1 = 2.0 * u;
  for (int k = 1; k < n; ++k) {
    const double h2 = 2.0 * u * h1 - 2.0 * k * h0;
    h0 = h1;
    h1 = h2;
  }
  return h1;
}

double hermite_H(const MultiIndex& p, std::span<const double> x) {
  double v = 1.0;
  for (std::size_t k = 0; k < p.p.size(); ++k) v *= hermite_H(p.p[k], x[k]);
  return v;
}

void phi_row(int M, double u, double* out) {
  out[0] = 1.0;
  if (M == 0) return;
  out[1] = std::numbers::sqrt2 * u;
  for (int p = 1; p < M; ++p) {
    out[p + 1] = std::sqrt(2.0 / (p + 1.0)) * u * out[p] - std::sqrt(p / (p + 1.0)) * out[p - 1];
  }
}

double phi_p(const OUParams& params, const MultiIndex& p, std::span<const double> x) {
  const double s = std::sqrt(params.b) / params.sigma;
  double v = 1.0;
  std::vector<double> row;
  for (std::size_t k = 0; k < p.p.size(); ++k) {
    row.resize(p.p[k] + 1);
    phi_row(p.p[k], s * x[k], row.data());
    v *= row.back();
  }
  return v;
}

HermiteCoeffs::HermiteCoeffs(int d, int max_order) : d_(d), M_(max_order) {
  if (d < 1 || max_order < 0) throw DomainError("HermiteCoeffs: bad shape");
  std::size_t n = 1;
  for (int k = 0; k < d; ++k) n *= static_cast<std::size_t>(max_order + 1);
  c_.assign(n, cplx(0.0, 0.0));
  order_.resize(n);
  for (std::size_t f = 0; f < n; ++f) {
    std::size_t r = f;
    int s = 0;
    for (int k = 0; k < d; ++k) {
      s += static_cast<int>(r % (max_order + 1));
      r /= (max_order + 1);
    }
    order_[f] = s;
  }
}

HermiteCoeffs HermiteCoeffs::basis(int d, int max_order, const MultiIndex& p, cplx value) {
  HermiteCoeffs c(d, max_order);
  c.at(p) = value;
  return c;
}

std::size_t HermiteCoeffs::flat_index(const MultiIndex& p) const {
  if (p.dim() != d_) throw DomainError("HermiteCoeffs: index dimension mismatch");
  std::size_t f = 0, stride = 1;
  for (int k = 0; k < d_; ++k) {
    if (p.p[k] < 0 || p.p[k] > M_) throw DomainError("HermiteCoeffs: index beyond max order");
    f += stride * static_cast<std::size_t>(p.p[k]);
    stride *= static_cast<std::size_t>(M_ + 1);
  }
  return f;
}

MultiIndex HermiteCoeffs::index_at(std::size_t flat) const {
  MultiIndex p;
  p.p.resize(d_);
  for (int k = 0; k < d_; ++k) {
    p.p[k] = static_cast<int>(flat % (M_ + 1));
    flat /= (M_ + 1);
  }
  return p;
}

cplx& HermiteCoeffs::at(const MultiIndex& p) { return c_[flat_index(p)]; }

cplx HermiteCoeffs::at(const MultiIndex& p) const {
  for (int v : p.p)
    if (v > M_) return {0.0, 0.0};
  return c_[flat_index(p)];
}

double HermiteCoeffs::max_abs() const {
  double m = 0.0;
  for (const cplx& v : c_) m = std::max(m, std::abs(v));
  return m;
}

HermiteCoeffs& HermiteCoeffs::operator+=(const HermiteCoeffs& o) {
  if (o.d_ != d_ || o.M_ != M_) throw DomainError("HermiteCoeffs: shape mismatch");
  for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += o.c_[i];
  return *this;
}

HermiteCoeffs& HermiteCoeffs::operator-=(const HermiteCoeffs& o) {
  if (o.d_ != d_ || o.M_ != M_) throw DomainError("HermiteCoeffs: shape mismatch");
  for (std::size_t i = 0; i < c_.size(); ++i) c_[i] -= o.c_[i];
  return *this;
}

HermiteCoeffs& HermiteCoeffs::operator*=(cplx s) {
  for (cplx& v : c_) v *= s;
  return *this;
}

HermiteCoeffs HermiteCoeffs::resized(int max_order) const {
  HermiteCoeffs out(d_, max_order);
  for (std::size_t f = 0; f < c_.size(); ++f) {
    if (c_[f] == cplx(0.0, 0.0)) continue;
    const MultiIndex p = index_at(f);
    bool inside = true;
    for (int v : p.p) inside = inside && v <= max_order;
    if (inside) out.at(p) = c_[f];
  }
  return out;
}

QuadratureGrid::QuadratureGrid(const OUParams& params, int nodes_per_axis) : params_(params), n_(nodes_per_axis) {
  params.validate();
  if (nodes_per_axis < 1) throw DomainError("QuadratureGrid: need at least one node");
  const Rule1D gh = gauss_hermite(static_cast<std::size_t>(nodes_per_axis));
  const double scale = params.sigma / std::sqrt(params.b);
  x1_.resize(n_);
  w1_.resize(n_);
  for (int j = 0; j < n_; ++j) {
    x1_[j] = scale * gh.nodes[j];
    w1_[j] = gh.weights[j] / std::sqrt(std::numbers::pi);
  }
  std::size_t total = 1;
  for (int k = 0; k < params.d; ++k) total *= static_cast<std::size_t>(n_);
  coords_.resize(total * params.d);
  weights_.resize(total);
  for (std::size_t j = 0; j < total; ++j) {
    std::size_t r = j;
    double w = 1.0;
    for (int k = 0; k < params.d; ++k) {
      const std::size_t i = r % n_;
      r /= n_;
      coords_[j * params.d + k] = x1_[i];
      w *= w1_[i];
    }
    weights_[j] = w;
  }
}

SpectralSpace::SpectralSpace(const OUParams& params, int max_order, int nodes_per_axis)
    : grid_(params, nodes_per_axis > 0 ? nodes_per_axis : std::max(2 * max_order + 2, 24)), M_(max_order) {
  if (max_order < 0) throw DomainError("SpectralSpace: negative order");
  const int nq = grid_.nodes_per_axis();
  const int m1 = M_ + 1;
  analysis_.resize(static_cast<std::size_t>(m1) * nq);
  synthesis_.resize(static_cast<std::size_t>(m1) * nq);
  const double s = std::sqrt(params.b) / params.sigma;
  std::vector<double> row(m1);
  for (int j = 0; j < nq; ++j) {
    phi_row(M_, s * grid_.axis_nodes()[j], row.data());
    for (int p = 0; p < m1; ++p) {
      analysis_[static_cast<std::size_t>(p) * nq + j] = grid_.axis_weights()[j] * row[p];
      synthesis_[static_cast<std::size_t>(j) * m1 + p] = row[p];
    }
  }
}

std::size_t SpectralSpace::num_coeffs() const {
  std::size_t n = 1;
  for (int k = 0; k < dim(); ++k) n *= static_cast<std::size_t>(M_ + 1);
  return n;
}

// One-dimensional transforms applied along each axis in turn. Axis 0 varies
// fastest in both the nodal and the coefficient layouts.
std::vector<cplx> SpectralSpace::apply_axes(const std::vector<cplx>& in, bool forward) const {
  const int d = dim();
  const std::size_t nq = static_cast<std::size_t>(grid_.nodes_per_axis());
  const std::size_t m1 = static_cast<std::size_t>(M_ + 1);
  const std::size_t n_in = forward ? nq : m1, n_out = forward ? m1 : nq;
  const std::vector<double>& mat = forward ? analysis_ : synthesis_;  // n_out x n_in
  std::vector<std::size_t> shape(d, n_in);
  std::vector<cplx> cur = in, next;
  for (int axis = 0; axis < d; ++axis) {
    std::size_t inner = 1, outer = 1;
    for (int k = 0; k < axis; ++k) inner *= shape[k];
    for (int k = axis + 1; k < d; ++k) outer *= shape[k];
    next.assign(inner * n_out * outer, cplx(0.0, 0.0));
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t r = 0; r < n_out; ++r) {
        const double* mrow = mat.data() + r * n_in;
        for (std::size_t i = 0; i < inner; ++i) {
          cplx acc(0.0, 0.0);
          const cplx* src = cur.data() + o * n_in * inner + i;
          for (std::size_t c = 0; c < n_in; ++c) acc += mrow[c] * src[c * inner];
          next[o * n_out * inner + r * inner + i] = acc;
        }
      }
    }
    shape[axis] = n_out;
    cur.swap(next);
  }
  return cur;
}

HermiteCoeffs SpectralSpace::to_coeffs(const std::vector<cplx>& nodal) const {
  if (nodal.size() != num_nodes()) throw DomainError("to_coeffs: nodal size mismatch");
  HermiteCoeffs c(dim(), M_);
  c.data() = apply_axes(nodal, true);
  return c;
}

std::vector<cplx> SpectralSpace::to_nodal(const HermiteCoeffs& c) const {
  if (c.dim() != dim()) throw DomainError("to_nodal: dimension mismatch");
  if (c.max_order() != M_) return apply_axes(c.resized(M_).data(), false);
  return apply_axes(c.data(), false);
}

cplx SpectralSpace::evaluate(const HermiteCoeffs& c, std::span<const double> x) const {
  const int d = c.dim();
  const int m1 = c.max_order() + 1;
  const double s = std::sqrt(params().b) / params().sigma;
  std::vector<double> rows(static_cast<std::size_t>(d) * m1);
  for (int k = 0; k < d; ++k) phi_row(c.max_order(), s * x[k], rows.data() + k * m1);
  cplx acc(0.0, 0.0);
  for (std::size_t f = 0; f < c.size(); ++f) {
    if (c[f] == cplx(0.0, 0.0)) continue;
    std::size_t r = f;
    double v = 1.0;
    for (int k = 0; k < d; ++k) {
      v *= rows[k * m1 + r % m1];
      r /= m1;
    }
    acc += c[f] * v;
  }
  return acc;
}

double GridFunction::sup_abs() const {
  double m = 0.0;
  for (const cplx& v : values) m = std::max(m, std::abs(v));
  return m;
}

HermiteCoeffs project(const OUParams& params, const std::function<cplx(std::span<const double>)>& f,
                      int max_order, Diagnostics* diag, int nodes_per_axis) {
  const SpectralSpace space(params, max_order, nodes_per_axis);
  std::vector<cplx> nodal(space.num_nodes());
  for (std::size_t j = 0; j < nodal.size(); ++j) nodal[j] = f(space.grid().node(j));
  HermiteCoeffs c = space.to_coeffs(nodal);
  if (diag) {
    double total = 0.0, shell = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      const double e = std::norm(c[k]);
      total += e;
      const MultiIndex p = c.index_at(k);
      if (std::find(p.p.begin(), p.p.end(), max_order) != p.p.end()) shell += e;
    }
    warn_if(diag, total > 0.0 && shell > 1e-6 * total,
            "project: outermost Hermite shell carries " + std::to_string(shell / total) + " of the energy");
  }
  return c;
}

int order_kappa(const HermiteCoeffs& c) {
  const double tol = 1e-12 * c.max_abs();
  if (!(c.max_abs() > 0.0)) return kOrderInfinite;
  int best = kOrderInfinite;
  for (std::size_t f = 0; f < c.size(); ++f) {
    if (std::abs(c[f]) > tol) best = std::min(best, c.order_at(f));
  }
  return best;
}

HermiteCoeffs pt_apply(const OUParams& params, const HermiteCoeffs& c, double t) {
  if (t < 0.0) throw DomainError("pt_apply: negative time");
  HermiteCoeffs out = c;
  for (std::size_t f = 0; f < out.size(); ++f) out[f] *= std::exp(-params.b * c.order_at(f) * t);
  return out;
}

HermiteCoeffs palpha_apply(const OUParams& params, double alpha, const HermiteCoeffs& c, double t) {
  if (t < 0.0) throw DomainError("palpha_apply: negative time");
  HermiteCoeffs out = c;
  for (std::size_t f = 0; f < out.size(); ++f) out[f] *= std::exp((alpha - params.b * c.order_at(f)) * t);
  return out;
}

double spectral_gap(const OUParams& params, const BranchingMechanism& mech, int order) {
  const double ab = mech.alpha() * mech.beta_tilde();
  const double g = std::fabs(order * params.b - ab);
  return g <= 1e-9 * std::max(1.0, ab) ? 0.0 : g;
}

HermiteCoeffs Tt_apply(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c, double t) {
  if (t < 0.0) throw DomainError("Tt_apply: negative time");
  HermiteCoeffs out = c;
  for (std::size_t f = 0; f < out.size(); ++f) out[f] *= std::exp(-spectral_gap(params, mech, c.order_at(f)) * t);
  return out;
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::Cs: return "Cs";
    case Regime::Cc: return "Cc";
    case Regime::Cl: return "Cl";
    case Regime::Mixed: return "Mixed";
  }
  return "?";
}

RegimeSplit regime_classify(const OUParams& params, const BranchingMechanism& mech, const HermiteCoeffs& c) {
  if (c.is_zero()) throw DomainError("regime_classify: zero function");
  RegimeSplit s;
  s.small = s.critical = s.large = HermiteCoeffs(c.dim(), c.max_order());
  const double ab = mech.alpha() * mech.beta_tilde();
  bool has_s = false, has_c = false, has_l = false;
  const double tol = 1e-12 * c.max_abs();  // same zero test as order_kappa
  for (std::size_t f = 0; f < c.size(); ++f) {
    if (std::abs(c[f]) <= tol) continue;
    const int k = c.order_at(f);
    if (spectral_gap(params, mech, k) == 0.0) {
      s.critical[f] = c[f];
      has_c = true;
    } else if (k * params.b > ab) {
      s.small[f] = c[f];
      has_s = true;
    } else {
      s.large[f] = c[f];
      has_l = true;
    }
  }
  const int n = int(has_s) + int(has_c) + int(has_l);
  if (n > 1) s.cls = Regime::Mixed;
  else if (has_s) s.cls = Regime::Cs;
  else if (has_c) s.cls = Regime::Cc;
  else s.cls = Regime::Cl;
  return s;
}

void ou_transition_sample(const OUParams& params, std::span<double> x, double dt, Philox& rng) {
  if (!(dt > 0.0)) throw DomainError("ou_transition_sample: dt must be > 0");
  const double decay = std::exp(-params.b * dt);
  const double sd = std::sqrt(params.stationary_variance() * -std::expm1(-2.0 * params.b * dt));
  for (double& v : x) v = v * decay + sd * rng.normal();
}

}  // namespace superou
