#include "poolerc/spline_basis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "poolerc/error.hpp"

namespace poolerc {

void KnotSet::validate() const {
  if (!(std::isfinite(lower) && std::isfinite(upper)) || !(lower < upper)) {
    throw ConfigError("knots: boundary must satisfy lower < upper (got " +
                      std::to_string(lower) + ", " + std::to_string(upper) + ")");
  }
  double prev = lower;
  for (double k : interior) {
    if (!(k > prev) || !(k < upper)) {
      throw ConfigError("knots: interior knots must be strictly increasing and "
                        "strictly inside the boundary");
    }
    prev = k;
  }
}

double empirical_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

KnotSet quantile_knots(std::span<const double> values, int n_interior) {
  if (values.empty()) throw DomainError("quantile_knots: no values");
  if (n_interior < 0) throw DomainError("quantile_knots: negative knot count");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  KnotSet knots;
  knots.lower = sorted.front();
  knots.upper = sorted.back();
  if (n_interior > 0 && !(knots.lower < knots.upper)) {
    throw DegenerateKnotsError("quantile_knots: all values identical");
  }
  for (int k = 1; k <= n_interior; ++k) {
    const double q = empirical_quantile(sorted, static_cast<double>(k) / (n_interior + 1));
    if (q > knots.lower && q < knots.upper &&
        (knots.interior.empty() || q > knots.interior.back())) {
      knots.interior.push_back(q);
    }
  }
  return knots;
}

std::vector<double> augmented_knots(const KnotSet& knots, int multiplicity) {
  std::vector<double> full;
  full.reserve(knots.interior.size() + 2 * static_cast<std::size_t>(multiplicity));
  full.insert(full.end(), static_cast<std::size_t>(multiplicity), knots.lower);
  full.insert(full.end(), knots.interior.begin(), knots.interior.end());
  full.insert(full.end(), static_cast<std::size_t>(multiplicity), knots.upper);
  return full;
}

namespace {

// Span index s with U[s] <= x < U[s+1]; x == upper maps to the last span.
int find_span(double x, int degree, std::span<const double> u) {
  const int n_basis = static_cast<int>(u.size()) - degree - 1;
  if (x >= u[static_cast<std::size_t>(n_basis)]) return n_basis - 1;
  int lo = degree;
  int hi = n_basis;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (x < u[static_cast<std::size_t>(mid)]) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return lo;
}

void check_in_domain(double x, const KnotSet& knots) {
  if (!(x >= knots.lower && x <= knots.upper)) {
    throw DomainError("bspline_basis: x = " + std::to_string(x) +
                      " outside [" + std::to_string(knots.lower) + ", " +
                      std::to_string(knots.upper) + "]");
  }
}

}  // namespace

int bspline_nonzero(double x, int degree, std::span<const double> u,
                    std::span<double> out) {
  const int span = find_span(x, degree, u);
  std::vector<double> left(static_cast<std::size_t>(degree) + 1);
  std::vector<double> right(static_cast<std::size_t>(degree) + 1);
  out[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - u[static_cast<std::size_t>(span + 1 - j)];
    right[j] = u[static_cast<std::size_t>(span + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double temp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
  return span - degree;
}

Eigen::MatrixXd bspline_derivatives(double x, int degree, const KnotSet& knots,
                                    int n_deriv) {
  knots.validate();
  check_in_domain(x, knots);
  const std::vector<double> u = augmented_knots(knots, degree + 1);
  const int n_basis = knots.n_interior() + degree + 1;
  const int p = degree;
  const int span = find_span(x, p, u);

  Eigen::MatrixXd ndu(p + 1, p + 1);
  std::vector<double> left(p + 1), right(p + 1);
  ndu(0, 0) = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - u[span + 1 - j];
    right[j] = u[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu(j, r) = right[r + 1] + left[j - r];
      const double temp = ndu(r, j - 1) / ndu(j, r);
      ndu(r, j) = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu(j, j) = saved;
  }

  const int nd = std::min(n_deriv, p);
  Eigen::MatrixXd ders = Eigen::MatrixXd::Zero(nd + 1, p + 1);
  for (int j = 0; j <= p; ++j) ders(0, j) = ndu(j, p);

  Eigen::MatrixXd a(2, p + 1);
  for (int r = 0; r <= p; ++r) {
    int s1 = 0;
    int s2 = 1;
    a.setZero();
    a(0, 0) = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = p - k;
      if (r >= k) {
        a(s2, 0) = a(s1, 0) / ndu(pk + 1, rk);
        d = a(s2, 0) * ndu(rk, pk);
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a(s2, j) = (a(s1, j) - a(s1, j - 1)) / ndu(pk + 1, rk + j);
        d += a(s2, j) * ndu(rk + j, pk);
      }
      if (r <= pk) {
        a(s2, k) = -a(s1, k - 1) / ndu(pk + 1, r);
        d += a(s2, k) * ndu(r, pk);
      }
      ders(k, r) = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= nd; ++k) {
    ders.row(k) *= factor;
    factor *= (p - k);
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_deriv + 1, n_basis);
  out.block(0, span - p, nd + 1, p + 1) = ders;
  return out;
}

BasisMatrix bspline_basis(std::span<const double> x, int degree,
                          const KnotSet& knots) {
  if (degree < 0) throw ConfigError("bspline_basis: negative degree");
  knots.validate();
  const std::vector<double> u = augmented_knots(knots, degree + 1);
  const int n_basis = knots.n_interior() + degree + 1;
  BasisMatrix result;
  result.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), n_basis);
  result.knots = knots;
  result.kind = BasisKind::BSpline;
  result.degree = degree;
  std::vector<double> local(static_cast<std::size_t>(degree) + 1);
  for (std::size_t r = 0; r < x.size(); ++r) {
    check_in_domain(x[r], knots);
    const int first = bspline_nonzero(x[r], degree, u, local);
    for (int j = 0; j <= degree; ++j) {
      result.values(static_cast<Eigen::Index>(r), first + j) = local[j];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Natural cubic splines

NaturalCubicBasis::NaturalCubicBasis(KnotSet knots, int df,
                                     std::span<const double> centering_grid)
    : knots_(std::move(knots)), df_(df) {
  if (df < 1) throw ConfigError("natural cubic spline: df must be >= 1");
  knots_.validate();
  if (knots_.n_interior() != df - 1) {
    throw ConfigError("natural cubic spline: df = " + std::to_string(df) +
                      " requires " + std::to_string(df - 1) +
                      " interior knots, got " + std::to_string(knots_.n_interior()));
  }
  const int n_bspline = knots_.n_interior() + 4;

  // Second derivatives at the boundaries, intercept column dropped.
  const Eigen::MatrixXd d_lo = bspline_derivatives(knots_.lower, 3, knots_, 2);
  const Eigen::MatrixXd d_hi = bspline_derivatives(knots_.upper, 3, knots_, 2);
  Eigen::MatrixXd constraint(n_bspline - 1, 2);
  constraint.col(0) = d_lo.row(2).tail(n_bspline - 1).transpose();
  constraint.col(1) = d_hi.row(2).tail(n_bspline - 1).transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(constraint);
  const Eigen::MatrixXd q = qr.householderQ() *
                            Eigen::MatrixXd::Identity(n_bspline - 1, n_bspline - 1);
  projection_ = q.rightCols(n_bspline - 3);

  lower_value_ = d_lo.row(0).tail(n_bspline - 1) * projection_;
  lower_slope_ = d_lo.row(1).tail(n_bspline - 1) * projection_;
  upper_value_ = d_hi.row(0).tail(n_bspline - 1) * projection_;
  upper_slope_ = d_hi.row(1).tail(n_bspline - 1) * projection_;

  center_ = Eigen::RowVectorXd::Zero(df_);
  if (!centering_grid.empty()) {
    for (double x : centering_grid) center_ += raw_row(x);
    center_ /= static_cast<double>(centering_grid.size());
  }
}

Eigen::RowVectorXd NaturalCubicBasis::raw_row(double x) const {
  if (x < knots_.lower) return lower_value_ + (x - knots_.lower) * lower_slope_;
  if (x > knots_.upper) return upper_value_ + (x - knots_.upper) * upper_slope_;
  const std::vector<double> u = augmented_knots(knots_, 4);
  double local[4];
  const int first = bspline_nonzero(x, 3, u, local);
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(df_);
  for (int j = 0; j < 4; ++j) {
    const int col = first + j - 1;  // intercept column removed
    if (col >= 0) row += local[j] * projection_.row(col);
  }
  return row;
}

Eigen::MatrixXd NaturalCubicBasis::evaluate_uncentered(std::span<const double> x) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.size()), df_);
  for (std::size_t r = 0; r < x.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = raw_row(x[r]);
  }
  return out;
}

Eigen::MatrixXd NaturalCubicBasis::evaluate(std::span<const double> x) const {
  Eigen::MatrixXd out = evaluate_uncentered(x);
  out.rowwise() -= center_;
  return out;
}

BasisMatrix natural_cubic_centered(std::span<const double> x, int df,
                                   const KnotSet& knots) {
  NaturalCubicBasis basis(knots, df, x);
  BasisMatrix result;
  result.values = basis.evaluate(x);
  result.knots = knots;
  result.kind = BasisKind::NaturalCubicCentered;
  result.degree = 3;
  return result;
}

// ---------------------------------------------------------------------------
// I-splines
//
// The I-spline of order k attached to M-spline i is the tail sum of the
// degree-k B-splines with index >= i on the same knots (k+1 boundary repeats).
// The tail sum starting at index 0 is identically 1 and is dropped.

ISplineBasis::ISplineBasis(KnotSet knots, int order)
    : knots_(std::move(knots)), order_(order) {
  if (order < 1) throw ConfigError("I-spline order must be >= 1");
  knots_.validate();
  n_basis_ = knots_.n_interior() + order_;
  full_knots_ = augmented_knots(knots_, order_ + 1);
}

void ISplineBasis::evaluate_row(double x, std::span<double> out) const {
  if (x <= knots_.lower) {
    std::fill(out.begin(), out.begin() + n_basis_, 0.0);
    return;
  }
  if (x >= knots_.upper) {
    std::fill(out.begin(), out.begin() + n_basis_, 1.0);
    return;
  }
  const int degree = order_;
  std::vector<double> local(static_cast<std::size_t>(degree) + 1);
  const int first = bspline_nonzero(x, degree, full_knots_, local);
  // B-spline m has value local[m - first] for m in [first, first + degree].
  double tail = 0.0;
  for (int m = n_basis_; m >= 1; --m) {
    if (m >= first && m <= first + degree) tail += local[static_cast<std::size_t>(m - first)];
    // Entries beyond the local support contribute 0; entries below it see the
    // full local sum, which is 1 up to rounding.
    out[static_cast<std::size_t>(m - 1)] = std::clamp(tail, 0.0, 1.0);
  }
  // Everything left of the support is exactly 1.
  for (int m = 1; m <= first && m <= n_basis_; ++m) out[static_cast<std::size_t>(m - 1)] = 1.0;
}

Eigen::RowVectorXd ISplineBasis::row(double x) const {
  Eigen::RowVectorXd r(n_basis_);
  evaluate_row(x, std::span<double>(r.data(), static_cast<std::size_t>(n_basis_)));
  return r;
}

Eigen::MatrixXd ISplineBasis::evaluate(std::span<const double> x) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(x.size()), n_basis_);
  for (std::size_t r = 0; r < x.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = row(x[r]);
  }
  return out;
}

BasisMatrix ispline_basis(std::span<const double> x, int order,
                          const KnotSet& knots) {
  ISplineBasis basis(knots, order);
  BasisMatrix result;
  result.values = basis.evaluate(x);
  result.knots = knots;
  result.kind = BasisKind::ISpline;
  result.degree = order;
  return result;
}

}  // namespace poolerc
