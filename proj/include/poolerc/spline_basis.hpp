#pragma once

// Spline bases shared by the exposure and outcome models.
//
//  - B-splines of arbitrary degree (Cox-de Boor), boundary knots repeated
//    degree+1 times. No extrapolation.
//  - Natural cubic splines with the intercept column removed and columns
//    centered over a construction grid. Linear beyond the boundary knots.
//  - I-splines (integrated, normalized M-splines; Ramsay 1988). Monotone,
//    valued in [0, 1], clamped to 0 / 1 outside the boundary knots.

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace poolerc {

struct KnotSet {
  double lower = 0.0;
  double upper = 1.0;
  std::vector<double> interior;

  // Throws ConfigError unless lower < upper and the interior knots are
  // strictly increasing inside (lower, upper).
  void validate() const;
  int n_interior() const { return static_cast<int>(interior.size()); }
};

enum class BasisKind { BSpline, NaturalCubicCentered, ISpline };

struct BasisMatrix {
  Eigen::MatrixXd values;  // n_points x n_basis
  KnotSet knots;
  BasisKind kind = BasisKind::BSpline;
  int degree = 3;  // degree for B-splines / natural splines, order for I-splines

  Eigen::Index n_points() const { return values.rows(); }
  Eigen::Index n_basis() const { return values.cols(); }
};

// Linear-interpolation quantile (order statistics, type 7).
double empirical_quantile(std::span<const double> sorted, double p);

// Boundary = (min, max); interior = quantiles at k/(n_interior+1),
// deduplicated and kept strictly inside the boundary.
KnotSet quantile_knots(std::span<const double> values, int n_interior);

// Full knot vector with the boundary knots repeated `multiplicity` times.
std::vector<double> augmented_knots(const KnotSet& knots, int multiplicity);

// Nonzero B-spline values at x: writes degree+1 values into `out` and returns
// the index of the first basis function they correspond to. x must lie in
// [lower, upper].
int bspline_nonzero(double x, int degree, std::span<const double> full_knots,
                    std::span<double> out);

// Derivatives of every B-spline basis function at x, up to order n_deriv.
// Result is (n_deriv + 1) x n_basis.
Eigen::MatrixXd bspline_derivatives(double x, int degree, const KnotSet& knots,
                                    int n_deriv);

BasisMatrix bspline_basis(std::span<const double> x, int degree,
                          const KnotSet& knots);

// Natural cubic spline with df columns (df - 1 interior knots) and the
// intercept removed. Column means over `centering_grid` are subtracted.
class NaturalCubicBasis {
 public:
  NaturalCubicBasis(KnotSet knots, int df, std::span<const double> centering_grid);

  int df() const { return df_; }
  const KnotSet& knots() const { return knots_; }
  const Eigen::RowVectorXd& column_means() const { return center_; }

  Eigen::MatrixXd evaluate(std::span<const double> x) const;
  // Same basis without centering.
  Eigen::MatrixXd evaluate_uncentered(std::span<const double> x) const;

 private:
  Eigen::RowVectorXd raw_row(double x) const;

  KnotSet knots_;
  int df_;
  Eigen::MatrixXd projection_;  // (n_bspline - 1) x df
  Eigen::RowVectorXd lower_value_, lower_slope_, upper_value_, upper_slope_;
  Eigen::RowVectorXd center_;
};

// Centers over x itself.
BasisMatrix natural_cubic_centered(std::span<const double> x, int df,
                                   const KnotSet& knots);

class ISplineBasis {
 public:
  ISplineBasis(KnotSet knots, int order);

  int order() const { return order_; }
  int size() const { return n_basis_; }
  const KnotSet& knots() const { return knots_; }

  void evaluate_row(double x, std::span<double> out) const;
  Eigen::RowVectorXd row(double x) const;
  Eigen::MatrixXd evaluate(std::span<const double> x) const;

 private:
  KnotSet knots_;
  int order_;
  int n_basis_;
  std::vector<double> full_knots_;
};

BasisMatrix ispline_basis(std::span<const double> x, int order,
                          const KnotSet& knots);

}  // namespace poolerc
