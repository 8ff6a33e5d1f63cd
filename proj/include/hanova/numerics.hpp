#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "hanova/error.hpp"
#include "hanova/rng.hpp"

namespace hanova {

// Singular values below this fraction of the largest count as zero.
inline constexpr double kRankTolerance = 1e-9;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Solves A x = b for square, nonsingular A. Throws SingularMatrix.
template <typename DerivedA, typename DerivedB>
VectorX<typename DerivedA::Scalar> solve_linear(const Eigen::MatrixBase<DerivedA>& a,
                                                const Eigen::MatrixBase<DerivedB>& b) {
    using Scalar = typename DerivedA::Scalar;
    if (a.rows() != a.cols() || a.rows() != b.size())
        throw InvalidParameter("solve_linear: dimension mismatch");
    if (a.rows() == 0) return VectorX<Scalar>();
    Eigen::FullPivLU<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> lu(a);
    lu.setThreshold(Scalar(kRankTolerance));
    if (lu.rank() < a.rows()) throw SingularMatrix();
    return lu.solve(b);
}

// Projects beta onto the null space of C: [I - C'(CC')^{-1}C] beta.
// A C with zero rows leaves beta unchanged. Throws RankDeficientConstraints.
template <typename DerivedB, typename DerivedC>
VectorX<typename DerivedB::Scalar> project_constrained(const Eigen::MatrixBase<DerivedB>& beta,
                                                       const Eigen::MatrixBase<DerivedC>& c) {
    using Scalar = typename DerivedB::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    if (c.rows() == 0) return beta;
    if (c.cols() != beta.size())
        throw InvalidParameter("project_constrained: constraint width does not match beta");
    if (c.rows() > c.cols()) throw RankDeficientConstraints();
    const Matrix gram = c * c.transpose();
    Eigen::FullPivLU<Matrix> lu(gram);
    lu.setThreshold(Scalar(kRankTolerance));
    if (lu.rank() < c.rows()) throw RankDeficientConstraints();
    const VectorX<Scalar> weights = lu.solve(c * beta);
    return beta - c.transpose() * weights;
}

// Empirical quantile with linear interpolation between order statistics
// (position p * (n - 1) in the sorted sample).
template <typename Derived>
typename Derived::Scalar quantile(const Eigen::DenseBase<Derived>& values, double p) {
    using Scalar = typename Derived::Scalar;
    std::vector<Scalar> sorted;
    sorted.reserve(static_cast<std::size_t>(values.size()));
    for (Eigen::Index i = 0; i < values.size(); ++i) sorted.push_back(values.derived().coeff(i));
    if (sorted.empty()) throw InvalidParameter("quantile of an empty sample");
    std::sort(sorted.begin(), sorted.end());
    const double h = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + Scalar(h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// Median plus the 50% and 95% central intervals.
struct Quantiles {
    double q025 = 0.0;
    double q25 = 0.0;
    double q50 = 0.0;
    double q75 = 0.0;
    double q975 = 0.0;
};

Quantiles summarize(const Eigen::Ref<const Eigen::VectorXd>& values);

double sample_uniform(double lo, double hi, RngStream& rng);
double sample_normal(double mean, double sd, RngStream& rng);
// Marsaglia-Tsang squeeze/rejection, boosted for shape < 1.
double sample_gamma(double shape, double scale, RngStream& rng);
double sample_chisq(double df, RngStream& rng);
// nu * s0sq / chi^2_nu
double sample_scaled_inv_chisq(double nu, double s0sq, RngStream& rng);

double log_beta(double a, double b);
// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);
// P(F_{df1, df2} > f).
double f_upper_tail(double f, double df1, double df2);

}  // namespace hanova
