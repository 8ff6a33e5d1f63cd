#include "hanova/classical.hpp"

#include <cmath>
#include <limits>

#include "hanova/error.hpp"
#include "hanova/parallel.hpp"

namespace hanova {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tags separating the two simulation stages.
constexpr std::uint64_t kSigmaStream = 0x5151;
constexpr std::uint64_t kFiniteStream = 0xF1F1;

}  // namespace

BatchEstimates sweep_effects(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y) {
    if (y.size() != design.n) throw DimensionMismatch("response length does not match design");
    const double n = static_cast<double>(design.n);
    BatchEstimates est;
    est.residual = design.residual;
    est.grand_mean = y.mean();
    Eigen::VectorXd r = y.array() - est.grand_mean;

    const int M = design.M();
    est.beta.resize(static_cast<std::size_t>(M));
    for (int m : design.sweep_order) {
        const Batch& b = design.batch(m);
        Eigen::VectorXd sums = design.cell_sums(m, r);
        for (Index j = 0; j < b.J; ++j) sums[j] /= static_cast<double>(b.cell_count[j]);
        r -= design.expand(m, sums);
        est.beta[m] = std::move(sums);
    }

    est.ss.resize(M);
    est.ss_coef.resize(M);
    est.ms.resize(M);
    est.v.resize(M);
    for (int m = 0; m < M; ++m) {
        const Batch& b = design.batch(m);
        const Eigen::VectorXd& beta = est.beta[m];
        double ss = 0.0;
        for (Index j = 0; j < b.J; ++j) ss += static_cast<double>(b.cell_count[j]) * beta[j] * beta[j];
        est.ss[m] = ss;
        est.ss_coef[m] = n / static_cast<double>(b.J) * beta.squaredNorm();
        const auto df = static_cast<double>(b.df);
        est.ms[m] = b.df > 0 ? ss / df : kNaN;
        est.v[m] = b.df > 0 ? beta.squaredNorm() / df : kNaN;
    }
    return est;
}

BatchEstimates fit_effects(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y) {
    const BalanceReport& report = design.balance;
    if (!report.balanced)
        throw BalanceError("design is unbalanced: cell '" + report.offending_cell + "' of batch '" +
                           report.offending_batch + "' has " +
                           std::to_string(report.offending_count) + " observations, expected " +
                           std::to_string(report.expected_count) +
                           "; use the Bayesian method for unbalanced data");
    if (!report.orthogonal) {
        if (!report.complete_crossing) throw EmptyCell(report.orthogonality_issue);
        throw BalanceError(report.orthogonality_issue);
    }
    return sweep_effects(design, y);
}

ClassicalTable make_table(const std::vector<SourceSums>& sources, int residual) {
    if (residual < 0 || residual >= static_cast<int>(sources.size()))
        throw InvalidParameter("classical table needs a residual row");
    ClassicalTable table;
    table.residual = residual;
    for (const auto& src : sources) {
        TableRow row;
        row.source = src.source;
        row.df = src.df;
        row.ss = src.ss;
        row.ms = src.df > 0 ? src.ss / static_cast<double>(src.df) : kNaN;
        table.rows.push_back(row);
    }
    const TableRow& res = table.rows[residual];
    for (int m = 0; m < static_cast<int>(table.rows.size()); ++m) {
        TableRow& row = table.rows[m];
        if (m == residual || row.df <= 0 || res.df <= 0) continue;
        row.tested = true;
        if (row.ms == 0.0) {
            row.f = 0.0;
            row.p = 1.0;
        } else if (res.ms == 0.0) {
            row.f = std::numeric_limits<double>::infinity();
            row.p = 0.0;
        } else {
            row.f = row.ms / res.ms;
            row.p = f_upper_tail(row.f, static_cast<double>(row.df), static_cast<double>(res.df));
        }
    }
    return table;
}

ClassicalTable anova_table(const BatchEstimates& estimates, const DesignModel& design) {
    std::vector<SourceSums> sources;
    for (int m = 0; m < design.M(); ++m)
        sources.push_back({design.batch(m).label, design.batch(m).df, estimates.ss[m]});
    return make_table(sources, design.residual);
}

Eigen::MatrixXd ev_matrix(const DesignModel& design) {
    const int M = design.M();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(M, M);
    for (int m = 0; m < M; ++m) {
        a(m, m) = 1.0;
        const Batch& b = design.batch(m);
        for (int k : b.containers)
            a(m, k) = static_cast<double>(b.J) / static_cast<double>(design.batch(k).J);
    }
    return a;
}

MomentsEstimate estimate_sigma_moments(const Eigen::Ref<const Eigen::VectorXd>& v,
                                       const Eigen::Ref<const Eigen::MatrixXd>& a) {
    const Index M = v.size();
    if (a.rows() != M || a.cols() != M) throw InvalidParameter("moments: A must be M x M");
    MomentsEstimate out;
    out.sigma2 = Eigen::VectorXd::Zero(M);
    out.excess = Eigen::VectorXd::Constant(M, kNaN);
    std::vector<bool> done(static_cast<std::size_t>(M), false);
    Index remaining = M;
    while (remaining > 0) {
        bool progressed = false;
        for (Index m = 0; m < M; ++m) {
            if (done[m]) continue;
            bool ready = true;
            for (Index k = 0; k < M; ++k)
                if (k != m && a(m, k) != 0.0 && !done[k]) ready = false;
            if (!ready) continue;
            done[m] = true;
            --remaining;
            progressed = true;
            if (std::isnan(v[m])) continue;
            if (a(m, m) == 0.0) throw SingularMatrix();
            double expected = 0.0;
            for (Index k = 0; k < M; ++k)
                if (k != m) expected += a(m, k) * out.sigma2[k];
            out.excess[m] = (v[m] - expected) / a(m, m);
            out.sigma2[m] = std::max(0.0, out.excess[m]);
        }
        if (!progressed) throw SingularMatrix();
    }
    return out;
}

SigmaSimulation simulate_sigma_intervals(const Eigen::Ref<const Eigen::VectorXd>& v,
                                         const Eigen::Ref<const Eigen::MatrixXd>& a,
                                         const DesignModel& design, int n_draws,
                                         const RngStream& rng, unsigned threads,
                                         const ChiSquareSource& chi_square) {
    if (n_draws < 1) throw ConfigError("number of simulation draws must be at least 1");
    const int M = design.M();
    const Eigen::VectorXd v_fixed = v;
    const Eigen::MatrixXd a_fixed = a;
    SigmaSimulation sim;
    sim.sigma2.resize(n_draws, M);
    parallel_for(static_cast<std::size_t>(n_draws), threads, [&](std::size_t d) {
        RngStream stream = rng.split(d);
        Eigen::VectorXd scaled = v_fixed;
        for (int m = 0; m < M; ++m) {
            const double df = static_cast<double>(design.batch(m).df);
            if (std::isnan(scaled[m]) || df <= 0.0) continue;
            const double chi = chi_square ? chi_square(df, stream) : sample_chisq(df, stream);
            scaled[m] *= df / chi;
        }
        sim.sigma2.row(static_cast<Index>(d)) = estimate_sigma_moments(scaled, a_fixed).sigma2;
    });
    for (int m = 0; m < M; ++m) sim.sigma.push_back(summarize(sim.sigma2.col(m).cwiseSqrt()));
    return sim;
}

FinitePopulation infer_finite_population(const Eigen::Ref<const Eigen::MatrixXd>& sigma2_draws,
                                         const DesignModel& design,
                                         const BatchEstimates& estimates, const RngStream& rng,
                                         unsigned threads) {
    const int M = design.M();
    if (sigma2_draws.cols() != M) throw InvalidParameter("sigma draws must have one column per batch");
    const Index draws = sigma2_draws.rows();
    FinitePopulation out;
    out.s.resize(draws, M);
    const Eigen::MatrixXd a = ev_matrix(design);
    parallel_for(static_cast<std::size_t>(draws), threads, [&](std::size_t d) {
        RngStream stream = rng.split(d);
        const Eigen::VectorXd sigma2 = sigma2_draws.row(static_cast<Index>(d)).transpose();
        for (int m = 0; m < M; ++m) {
            const Batch& b = design.batch(m);
            if (b.df <= 0) {
                out.s(static_cast<Index>(d), m) = 0.0;
                continue;
            }
            // Per-coefficient sampling noise from the batches below m.
            double noise = 0.0;
            for (int k : b.containers) noise += a(m, k) * sigma2[k];
            const double var = sigma2[m];
            const double shrink = var == 0.0 ? 1.0 : noise / (noise + var);
            const double sd = std::sqrt(shrink * var);
            Eigen::VectorXd beta(b.J);
            for (Index j = 0; j < b.J; ++j)
                beta[j] = sample_normal((1.0 - shrink) * estimates.beta[m][j], sd, stream);
            out.s(static_cast<Index>(d), m) = design.finite_population_sd(m, beta);
        }
    });
    for (int m = 0; m < M; ++m) out.intervals.push_back(summarize(out.s.col(m)));
    return out;
}

MomentsResult run_moments(const DesignModel& design, const BatchEstimates& estimates, int n_draws,
                          std::uint64_t seed, unsigned threads) {
    MomentsResult result;
    result.v = estimates.v;
    result.a = ev_matrix(design);
    for (int m = 0; m < design.M(); ++m)
        if (design.batch(m).df <= 0)
            result.warnings.push_back("batch '" + design.batch(m).label +
                                      "' has no degrees of freedom; its variance is not estimable "
                                      "and is reported as zero");
    result.estimate = estimate_sigma_moments(result.v, result.a);
    const RngStream base(seed);
    result.sigma = simulate_sigma_intervals(result.v, result.a, design, n_draws,
                                            base.split(kSigmaStream), threads);
    result.s = infer_finite_population(result.sigma.sigma2, design, estimates,
                                       base.split(kFiniteStream), threads);
    return result;
}

VCSummary summarize_moments(const MomentsResult& result, const DesignModel& design) {
    VCSummary summary;
    summary.point_origin = "moments";
    for (int m = 0; m < design.M(); ++m) {
        const Batch& b = design.batch(m);
        VCRow row;
        row.label = b.label;
        row.J = b.J;
        row.df = b.df;
        row.s_point = std::sqrt(result.estimate.sigma2[m]);
        row.s = result.s.intervals[m];
        row.has_sigma = true;
        row.sigma_point = row.s_point;
        row.sigma = result.sigma.sigma[m];
        summary.rows.push_back(row);
    }
    return summary;
}

}  // namespace hanova
