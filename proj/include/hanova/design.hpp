#pragma once

#include <Eigen/Dense>
#include <string>
#include <string_view>
#include <vector>

#include "hanova/formula.hpp"

namespace hanova {

using Index = Eigen::Index;

struct Factor {
    std::string name;
    std::vector<int> levels;               // per observation, 0-based
    std::vector<std::string> level_names;  // levels[i] indexes this
};

struct Dataset {
    Eigen::VectorXd y;
    std::vector<Factor> factors;

    Index n() const { return y.size(); }
    const Factor& factor(std::string_view name) const;  // throws UnknownFactor
    std::vector<std::string> factor_names() const;
    // Throws DimensionMismatch / InvalidParameter on broken invariants.
    void validate() const;
};

// Convenience for tests and generators: factors given as level-index columns.
Dataset make_dataset(Eigen::VectorXd y,
                     const std::vector<std::pair<std::string, std::vector<int>>>& columns);

// Index of the implicit grand-mean row in APIs that accept a batch index.
inline constexpr int kGrandMean = -1;

struct Batch {
    std::string label;
    std::vector<std::string> factors;  // empty for the synthetic residual
    bool synthetic = false;
    Index J = 0;
    Index df = 0;
    std::vector<Index> cell_of;     // j_i: coefficient pulled by observation i
    std::vector<Index> cell_count;  // observations per coefficient
    std::vector<std::vector<int>> cell_levels;  // level tuple per coefficient
    std::vector<int> ancestors;     // batches whose span lies strictly inside this one, by J
    std::vector<std::vector<Index>> ancestor_cells;  // per ancestor: containing cell of each j
    std::vector<int> containers;    // I(m): batches whose span contains this one
    bool balanced = false;

    std::string cell_label(const Dataset& data, Index j) const;
};

struct BalanceReport {
    struct BatchCounts {
        Index min_count = 0;
        Index max_count = 0;
    };
    std::vector<BatchCounts> batches;
    bool balanced = false;      // equal replication within every batch
    bool orthogonal = false;    // every pair of batches crosses proportionally
    bool complete_crossing = true;  // no crossed pair of cells is unobserved
    std::string offending_batch;
    std::string offending_cell;
    Index offending_count = 0;
    Index expected_count = 0;
    std::string orthogonality_issue;
};

struct DesignModel {
    Index n = 0;
    std::vector<Batch> batches;
    int residual = -1;
    std::vector<int> sweep_order;  // every batch after all of its ancestors
    BalanceReport balance;
    // Dense C_m (orthonormal rows) per batch; only filled for non-orthogonal designs.
    std::vector<Eigen::MatrixXd> constraints;

    int M() const { return static_cast<int>(batches.size()); }
    const Batch& batch(int m) const { return batches.at(static_cast<std::size_t>(m)); }
    int find(std::string_view label) const;  // -1 when absent

    // X_m * coef, an n-vector.
    Eigen::VectorXd expand(int m, const Eigen::Ref<const Eigen::VectorXd>& coef) const;
    // X_m' * v, a J_m vector of per-cell sums.
    Eigen::VectorXd cell_sums(int m, const Eigen::Ref<const Eigen::VectorXd>& v) const;
    // Dense n x J_m 0/1 indicator matrix.
    Eigen::MatrixXd indicator(int m) const;
    // [I - C'(CC')^{-1}C] beta for batch m: removes the component lying in
    // the span of the batch's ancestors and the grand mean.
    Eigen::VectorXd project_identifiable(int m, const Eigen::Ref<const Eigen::VectorXd>& beta) const;
    // Finite-population standard deviation of a coefficient vector.
    double finite_population_sd(int m, const Eigen::Ref<const Eigen::VectorXd>& beta) const;
};

// Builds indicator structure, degrees of freedom, containment and balance.
// Appends a synthetic per-observation residual batch when no batch has one
// coefficient per observation. Throws DesignError (and subclasses),
// UnknownFactor.
DesignModel build_design(const std::vector<Term>& batches, const Dataset& data,
                         const std::vector<AliasDecl>& aliases = {});

// df_m = J_m - rank of the ancestor span; 1 for kGrandMean.
Index effective_df(const DesignModel& design, int m);

// Orthonormal basis (rows) of the ancestor span of batch m, expressed in the
// batch's coefficient coordinates, computed by SVD. Independent of the
// combinatorial route used for orthogonal designs.
Eigen::MatrixXd constraint_matrix(const DesignModel& design, int m);

// containment[m] = I(m), sorted.
std::vector<std::vector<int>> containment_order(const DesignModel& design);

BalanceReport check_balance(const DesignModel& design);

}  // namespace hanova
