#include "hanova/numerics.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace hanova {

Quantiles summarize(const Eigen::Ref<const Eigen::VectorXd>& values) {
    const Eigen::VectorXd v = values;
    return {quantile(v, 0.025), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75),
            quantile(v, 0.975)};
}

double sample_uniform(double lo, double hi, RngStream& rng) {
    if (!(lo <= hi)) throw InvalidParameter("uniform: lower bound exceeds upper bound");
    return lo + (hi - lo) * rng.uniform();
}

double sample_normal(double mean, double sd, RngStream& rng) {
    if (!(sd >= 0.0)) throw InvalidParameter("normal: sd must be nonnegative");
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    if (sd == 0.0) return mean;
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double sample_gamma(double shape, double scale, RngStream& rng) {
    if (!(shape > 0.0) || !(scale > 0.0) || !std::isfinite(shape))
        throw InvalidParameter("gamma: shape and scale must be positive");
    if (shape < 1.0) {
        const double boost = std::pow(rng.uniform(), 1.0 / shape);
        return sample_gamma(shape + 1.0, scale, rng) * boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
        const double x = sample_normal(0.0, 1.0, rng);
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = rng.uniform();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
}

double sample_chisq(double df, RngStream& rng) {
    if (!(df > 0.0)) throw InvalidParameter("chi-square: df must be positive");
    return sample_gamma(0.5 * df, 2.0, rng);
}

double sample_scaled_inv_chisq(double nu, double s0sq, RngStream& rng) {
    if (!(nu > 0.0)) throw InvalidParameter("scaled inverse chi-square: nu must be positive");
    if (!(s0sq >= 0.0)) throw InvalidParameter("scaled inverse chi-square: scale must be nonnegative");
    return nu * s0sq / sample_chisq(nu, rng);
}

double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr double kTiny = 1e-300;
    constexpr double kEps = 1e-15;
    constexpr int kMaxIter = 100000;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::fabs(delta - 1.0) < kEps) return h;
    }
    throw NumericalFailure("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidParameter("incomplete beta: a, b must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw InvalidParameter("incomplete beta: x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
    if (x < (a + 1.0) / (a + b + 2.0))
        return std::exp(log_front) * beta_continued_fraction(a, b, x) / a;
    return 1.0 - std::exp(log_front) * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double f_upper_tail(double f, double df1, double df2) {
    if (!(df1 > 0.0) || !(df2 > 0.0)) throw InvalidParameter("F tail: df must be positive");
    if (std::isnan(f) || f < 0.0) throw InvalidParameter("F tail: statistic must be nonnegative");
    if (f == 0.0) return 1.0;
    if (std::isinf(f)) return 0.0;
    const double x = df2 / (df2 + df1 * f);
    return incomplete_beta(0.5 * df2, 0.5 * df1, x);
}

}  // namespace hanova
