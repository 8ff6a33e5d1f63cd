#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "hanova/design.hpp"
#include "hanova/numerics.hpp"
#include "hanova/rng.hpp"
#include "hanova/summary.hpp"

namespace hanova {

// Least-squares effect estimates for every batch of a balanced design.
struct BatchEstimates {
    double grand_mean = 0.0;
    std::vector<Eigen::VectorXd> beta;  // per batch, satisfies C_m beta = 0
    Eigen::VectorXd ss;                 // sum over observations of the pulled coefficient squared
    Eigen::VectorXd ss_coef;            // (n / J_m) * sum_j beta_j^2
    Eigen::VectorXd ms;                 // SS / df (NaN when df = 0)
    Eigen::VectorXd v;                  // sum_j beta_j^2 / df (NaN when df = 0)
    int residual = -1;
};

// Sequential sweep: grand mean first, then each batch after its ancestors,
// taking cell means of the running residual. Throws BalanceError / EmptyCell
// unless the design is balanced and orthogonally crossed.
BatchEstimates fit_effects(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y);

// Same sweep without the balance gate; only approximate for unbalanced data.
// Used to seed the sampler.
BatchEstimates sweep_effects(const DesignModel& design, const Eigen::Ref<const Eigen::VectorXd>& y);

struct TableRow {
    std::string source;
    Index df = 0;
    double ss = 0.0;
    double ms = 0.0;
    double f = 0.0;
    double p = 1.0;
    bool tested = false;  // false for the residual row and df = 0 rows
};

struct ClassicalTable {
    std::vector<TableRow> rows;
    int residual = -1;
};

struct SourceSums {
    std::string source;
    Index df;
    double ss;
};

// MS = SS/df; F = MS / MS_residual; p = P(F_{df, df_res} > F).
ClassicalTable make_table(const std::vector<SourceSums>& sources, int residual);
ClassicalTable anova_table(const BatchEstimates& estimates, const DesignModel& design);

// Row m: A_mm = 1, A_mk = J_m / J_k for k in I(m), else 0.
Eigen::MatrixXd ev_matrix(const DesignModel& design);

struct MomentsEstimate {
    Eigen::VectorXd sigma2;  // truncated estimates, >= 0
    Eigen::VectorXd excess;  // V_m - EV_m before truncation (NaN for excluded rows)
};

// Solves A sigma2 = V from the bottom of the containment order upwards,
// truncating each component at zero before it feeds the rows above.
// Rows with NaN in V (df = 0) are excluded and reported as zero.
// Throws SingularMatrix when A has no containment-respecting order.
MomentsEstimate estimate_sigma_moments(const Eigen::Ref<const Eigen::VectorXd>& v,
                                       const Eigen::Ref<const Eigen::MatrixXd>& a);

// Draws chi^2_df; replaceable in tests.
using ChiSquareSource = std::function<double(double df, RngStream& rng)>;

struct SigmaSimulation {
    Eigen::MatrixXd sigma2;          // draws x M
    std::vector<Quantiles> sigma;    // per batch, on the sd scale
};

// Each draw scales V_m by df_m / chi^2_{df_m}, re-solves the moments system
// with truncation, and keeps the result. Draw d uses rng.split(d).
SigmaSimulation simulate_sigma_intervals(const Eigen::Ref<const Eigen::VectorXd>& v,
                                         const Eigen::Ref<const Eigen::MatrixXd>& a,
                                         const DesignModel& design, int n_draws,
                                         const RngStream& rng, unsigned threads = 1,
                                         const ChiSquareSource& chi_square = {});

struct FinitePopulation {
    Eigen::MatrixXd s;            // draws x M
    std::vector<Quantiles> intervals;
};

// For each sigma draw, draws every batch's coefficients from their normal
// conditional given the estimates and evaluates the finite-population sd.
FinitePopulation infer_finite_population(const Eigen::Ref<const Eigen::MatrixXd>& sigma2_draws,
                                         const DesignModel& design,
                                         const BatchEstimates& estimates, const RngStream& rng,
                                         unsigned threads = 1);

struct MomentsResult {
    Eigen::VectorXd v;
    Eigen::MatrixXd a;
    MomentsEstimate estimate;
    SigmaSimulation sigma;
    FinitePopulation s;
    std::vector<std::string> warnings;
};

// Full moments pipeline: V, A, truncated estimates, sigma simulation and
// finite-population inference. Streams derive from `seed`.
MomentsResult run_moments(const DesignModel& design, const BatchEstimates& estimates,
                          int n_draws, std::uint64_t seed, unsigned threads = 1);

VCSummary summarize_moments(const MomentsResult& result, const DesignModel& design);

}  // namespace hanova
