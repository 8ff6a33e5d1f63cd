#include "hanova/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "hanova/error.hpp"
#include "hanova/numerics.hpp"

namespace hanova {

const Factor& Dataset::factor(std::string_view name) const {
    for (const auto& f : factors)
        if (f.name == name) return f;
    throw UnknownFactor(std::string(name));
}

std::vector<std::string> Dataset::factor_names() const {
    std::vector<std::string> out;
    out.reserve(factors.size());
    for (const auto& f : factors) out.push_back(f.name);
    return out;
}

void Dataset::validate() const {
    if (n() < 1) throw DimensionMismatch("dataset has no observations");
    for (Index i = 0; i < n(); ++i)
        if (!std::isfinite(y[i]))
            throw InvalidParameter("response " + std::to_string(i + 1) + " is not finite");
    for (const auto& f : factors) {
        if (static_cast<Index>(f.levels.size()) != n())
            throw DimensionMismatch("factor '" + f.name + "' has " +
                                    std::to_string(f.levels.size()) + " entries, expected " +
                                    std::to_string(n()));
        const int count = static_cast<int>(f.level_names.size());
        for (int level : f.levels)
            if (level < 0 || level >= count)
                throw InvalidParameter("factor '" + f.name + "' has a level index out of range");
    }
}

Dataset make_dataset(Eigen::VectorXd y,
                     const std::vector<std::pair<std::string, std::vector<int>>>& columns) {
    Dataset data;
    data.y = std::move(y);
    for (const auto& [name, levels] : columns) {
        Factor f;
        f.name = name;
        f.levels = levels;
        const int top = levels.empty() ? -1 : *std::max_element(levels.begin(), levels.end());
        for (int l = 0; l <= top; ++l) f.level_names.push_back(std::to_string(l + 1));
        data.factors.push_back(std::move(f));
    }
    data.validate();
    return data;
}

std::string Batch::cell_label(const Dataset& data, Index j) const {
    if (factors.empty()) return std::to_string(j + 1);
    std::string out;
    for (std::size_t f = 0; f < factors.size(); ++f) {
        if (f > 0) out += ':';
        const Factor& factor = data.factor(factors[f]);
        out += factor.level_names.at(static_cast<std::size_t>(cell_levels.at(j).at(f)));
    }
    return out;
}

int DesignModel::find(std::string_view label) const {
    for (int m = 0; m < M(); ++m)
        if (batches[m].label == label) return m;
    return -1;
}

Eigen::VectorXd DesignModel::expand(int m, const Eigen::Ref<const Eigen::VectorXd>& coef) const {
    const Batch& b = batch(m);
    Eigen::VectorXd out(n);
    for (Index i = 0; i < n; ++i) out[i] = coef[b.cell_of[i]];
    return out;
}

Eigen::VectorXd DesignModel::cell_sums(int m, const Eigen::Ref<const Eigen::VectorXd>& v) const {
    const Batch& b = batch(m);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(b.J);
    for (Index i = 0; i < n; ++i) out[b.cell_of[i]] += v[i];
    return out;
}

Eigen::MatrixXd DesignModel::indicator(int m) const {
    const Batch& b = batch(m);
    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, b.J);
    for (Index i = 0; i < n; ++i) x(i, b.cell_of[i]) = 1.0;
    return x;
}

namespace {

struct Partition {
    std::vector<Index> cell_of;
    std::vector<Index> count;
    std::vector<std::vector<int>> levels;
    Index J = 0;
};

Partition partition_by(const Dataset& data, const std::vector<std::string>& factors) {
    const Index n = data.n();
    std::vector<const Factor*> cols;
    std::vector<std::uint64_t> radix;
    std::uint64_t span = 1;
    for (const auto& name : factors) {
        const Factor& f = data.factor(name);
        cols.push_back(&f);
        const auto size = static_cast<std::uint64_t>(std::max<std::size_t>(f.level_names.size(), 1));
        if (span > (std::uint64_t{1} << 62) / size)
            throw DesignError("too many level combinations for term '" + factors.front() + "...'");
        radix.push_back(size);
        span *= size;
    }
    std::vector<std::uint64_t> key(static_cast<std::size_t>(n), 0);
    for (Index i = 0; i < n; ++i) {
        std::uint64_t k = 0;
        for (std::size_t f = 0; f < cols.size(); ++f)
            k = k * radix[f] + static_cast<std::uint64_t>(cols[f]->levels[i]);
        key[i] = k;
    }
    std::vector<std::uint64_t> unique = key;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

    Partition p;
    p.J = static_cast<Index>(unique.size());
    p.cell_of.resize(static_cast<std::size_t>(n));
    p.count.assign(unique.size(), 0);
    for (Index i = 0; i < n; ++i) {
        const auto j = std::lower_bound(unique.begin(), unique.end(), key[i]) - unique.begin();
        p.cell_of[i] = j;
        ++p.count[j];
    }
    p.levels.resize(unique.size());
    for (std::size_t j = 0; j < unique.size(); ++j) {
        std::vector<int> tuple(cols.size());
        std::uint64_t k = unique[j];
        for (std::size_t f = cols.size(); f-- > 0;) {
            tuple[f] = static_cast<int>(k % radix[f]);
            k /= radix[f];
        }
        p.levels[j] = std::move(tuple);
    }
    return p;
}

Partition per_observation(Index n) {
    Partition p;
    p.J = n;
    p.cell_of.resize(static_cast<std::size_t>(n));
    std::iota(p.cell_of.begin(), p.cell_of.end(), Index{0});
    p.count.assign(static_cast<std::size_t>(n), 1);
    p.levels.assign(static_cast<std::size_t>(n), {});
    return p;
}

// True when every cell of `fine` lies inside a single cell of `coarse`.
bool refines(const std::vector<Index>& fine, Index fine_cells, const std::vector<Index>& coarse) {
    std::vector<Index> parent(static_cast<std::size_t>(fine_cells), -1);
    for (std::size_t i = 0; i < fine.size(); ++i) {
        Index& p = parent[fine[i]];
        if (p < 0)
            p = coarse[i];
        else if (p != coarse[i])
            return false;
    }
    return true;
}

// Relabels cells in first-appearance order so equal partitions compare equal.
std::vector<Index> canonical(const std::vector<Index>& cell_of, Index cells) {
    std::vector<Index> relabel(static_cast<std::size_t>(cells), -1);
    std::vector<Index> out(cell_of.size());
    Index next = 0;
    for (std::size_t i = 0; i < cell_of.size(); ++i) {
        Index& r = relabel[cell_of[i]];
        if (r < 0) r = next++;
        out[i] = r;
    }
    return out;
}

std::uint64_t hash_cells(const std::vector<Index>& cells) {
    std::uint64_t h = 0x84222325cbf29ce4ull;
    for (Index c : cells) h = splitmix64(h ^ static_cast<std::uint64_t>(c));
    return h;
}

class UnionFind {
public:
    explicit UnionFind(Index size) : parent_(static_cast<std::size_t>(size)) {
        std::iota(parent_.begin(), parent_.end(), Index{0});
    }
    Index root(Index x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(Index a, Index b) {
        a = root(a);
        b = root(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<Index> parent_;
};

// Finest partition coarser than both batches: connected components of the
// bipartite cell graph. span(X_a) ∩ span(X_b) is exactly its indicator span.
std::vector<Index> join_cells(const Batch& a, const Batch& b, Index* components) {
    UnionFind uf(a.J + b.J);
    for (std::size_t i = 0; i < a.cell_of.size(); ++i) uf.unite(a.cell_of[i], a.J + b.cell_of[i]);
    std::vector<Index> comp(a.cell_of.size());
    for (std::size_t i = 0; i < a.cell_of.size(); ++i) comp[i] = uf.root(a.cell_of[i]);
    std::vector<Index> roots = comp;
    std::sort(roots.begin(), roots.end());
    roots.erase(std::unique(roots.begin(), roots.end()), roots.end());
    *components = static_cast<Index>(roots.size());
    for (auto& c : comp) c = std::lower_bound(roots.begin(), roots.end(), c) - roots.begin();
    return comp;
}

struct CrossingCheck {
    bool proportional = true;
    bool all_pairs_seen = true;
};

// Orthogonal crossing within each join component C: n_ab * n_C == n_a * n_b
// for every pair of cells a, b in C (including unobserved pairs).
CrossingCheck check_crossing(const Batch& a, const Batch& b, const std::vector<Index>& comp,
                             Index components) {
    CrossingCheck result;
    std::vector<Index> comp_size(static_cast<std::size_t>(components), 0);
    std::vector<Index> cells_a(static_cast<std::size_t>(components), 0);
    std::vector<Index> cells_b(static_cast<std::size_t>(components), 0);
    std::vector<Index> comp_of_a(static_cast<std::size_t>(a.J), -1);
    std::vector<Index> comp_of_b(static_cast<std::size_t>(b.J), -1);
    for (std::size_t i = 0; i < comp.size(); ++i) {
        ++comp_size[comp[i]];
        if (comp_of_a[a.cell_of[i]] < 0) {
            comp_of_a[a.cell_of[i]] = comp[i];
            ++cells_a[comp[i]];
        }
        if (comp_of_b[b.cell_of[i]] < 0) {
            comp_of_b[b.cell_of[i]] = comp[i];
            ++cells_b[comp[i]];
        }
    }
    std::unordered_map<std::uint64_t, Index> pair_count;
    pair_count.reserve(comp.size());
    for (std::size_t i = 0; i < comp.size(); ++i)
        ++pair_count[static_cast<std::uint64_t>(a.cell_of[i]) * static_cast<std::uint64_t>(b.J) +
                     static_cast<std::uint64_t>(b.cell_of[i])];
    std::vector<Index> pairs_seen(static_cast<std::size_t>(components), 0);
    for (const auto& [key, count] : pair_count) {
        const auto ia = static_cast<Index>(key / static_cast<std::uint64_t>(b.J));
        const auto ib = static_cast<Index>(key % static_cast<std::uint64_t>(b.J));
        const Index c = comp_of_a[ia];
        ++pairs_seen[c];
        if (count * comp_size[c] != a.cell_count[ia] * b.cell_count[ib]) result.proportional = false;
    }
    for (Index c = 0; c < components; ++c)
        if (pairs_seen[c] != cells_a[c] * cells_b[c]) {
            result.proportional = false;
            result.all_pairs_seen = false;
        }
    return result;
}

// Maps each cell of batch m to the containing cell of ancestor k.
std::vector<Index> coarse_map(const Batch& m, const Batch& k) {
    std::vector<Index> map(static_cast<std::size_t>(m.J), 0);
    for (std::size_t i = 0; i < m.cell_of.size(); ++i) map[m.cell_of[i]] = k.cell_of[i];
    return map;
}

}  // namespace

Eigen::MatrixXd constraint_matrix(const DesignModel& design, int m) {
    if (m == kGrandMean) return Eigen::MatrixXd(0, 1);
    const Batch& b = design.batch(m);
    constexpr Index kDenseLimit = 6000;
    if (b.J > kDenseLimit)
        throw DesignError("batch '" + b.label + "' has too many coefficients (" +
                          std::to_string(b.J) + ") for dense constraint computation");
    Index cols = 1;
    for (int k : b.ancestors) cols += design.batch(k).J;
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(b.J, cols);
    basis.col(0).setOnes();
    Index offset = 1;
    for (std::size_t a = 0; a < b.ancestors.size(); ++a) {
        const std::vector<Index>& map = b.ancestor_cells[a];
        for (Index j = 0; j < b.J; ++j) basis(j, offset + map[j]) = 1.0;
        offset += design.batch(b.ancestors[a]).J;
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(basis, Eigen::ComputeThinU);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double cutoff = kRankTolerance * (sv.size() > 0 ? sv[0] : 0.0);
    Index rank = 0;
    while (rank < sv.size() && sv[rank] > cutoff) ++rank;
    return svd.matrixU().leftCols(rank).transpose();
}

DesignModel build_design(const std::vector<Term>& terms, const Dataset& data,
                         const std::vector<AliasDecl>& aliases) {
    data.validate();
    DesignModel design;
    design.n = data.n();
    const Index n = design.n;

    for (const auto& term : terms) {
        if (term.factors.empty()) throw DesignError("term with no factors");
        Partition p = partition_by(data, term.factors);
        Batch b;
        b.label = term.label();
        b.factors = term.factors;
        b.J = p.J;
        b.cell_of = std::move(p.cell_of);
        b.cell_count = std::move(p.count);
        b.cell_levels = std::move(p.levels);
        if (term.explicit_residual && b.J != n)
            throw DesignError("error term '" + b.label + "' must have one cell per observation (has " +
                              std::to_string(b.J) + " cells for " + std::to_string(n) +
                              " observations)");
        design.batches.push_back(std::move(b));
    }
    for (int m = 0; m < design.M(); ++m)
        if (design.batches[m].J == n) {
            design.residual = m;
            break;
        }
    if (design.residual < 0) {
        Partition p = per_observation(n);
        Batch b;
        b.label = "residual";
        b.synthetic = true;
        b.J = n;
        b.cell_of = std::move(p.cell_of);
        b.cell_count = std::move(p.count);
        b.cell_levels = std::move(p.levels);
        design.batches.push_back(std::move(b));
        design.residual = design.M() - 1;
    }
    const int M = design.M();

    // Identical partitions would make containment cyclic.
    std::unordered_map<std::uint64_t, std::vector<int>> by_hash;
    std::vector<std::vector<Index>> canon(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
        const Batch& b = design.batches[m];
        canon[m] = canonical(b.cell_of, b.J);
        if (b.J == 1) continue;
        auto& bucket = by_hash[hash_cells(canon[m])];
        for (int other : bucket)
            if (canon[other] == canon[m])
                throw DesignError("batches '" + design.batches[other].label + "' and '" + b.label +
                                  "' have identical cells");
        bucket.push_back(m);
    }

    for (int m = 0; m < M; ++m) {
        Batch& bm = design.batches[m];
        for (int k = 0; k < M; ++k) {
            if (k == m) continue;
            const Batch& bk = design.batches[k];
            if (bk.J > bm.J && refines(bk.cell_of, bk.J, bm.cell_of)) bm.containers.push_back(k);
            if (bk.J < bm.J && refines(bm.cell_of, bm.J, bk.cell_of)) bm.ancestors.push_back(k);
        }
        std::stable_sort(bm.ancestors.begin(), bm.ancestors.end(), [&](int a, int b) {
            return design.batches[a].J < design.batches[b].J;
        });
        for (int k : bm.ancestors) bm.ancestor_cells.push_back(coarse_map(bm, design.batches[k]));
    }
    design.sweep_order.resize(static_cast<std::size_t>(M));
    std::iota(design.sweep_order.begin(), design.sweep_order.end(), 0);
    std::stable_sort(design.sweep_order.begin(), design.sweep_order.end(),
                     [&](int a, int b) { return design.batches[a].J < design.batches[b].J; });

    for (const auto& alias : aliases) {
        const Partition coarse = partition_by(data, alias.coarse.factors);
        const Partition fine = partition_by(data, alias.fine.factors);
        if (!refines(fine.cell_of, fine.J, coarse.cell_of))
            throw DesignError("declared alias " + alias.coarse.label() + " = " + alias.fine.label() +
                              " is contradicted by the data: some cell of '" + alias.fine.label() +
                              "' spans several levels of '" + alias.coarse.label() + "'");
    }

    BalanceReport& report = design.balance;
    report.balanced = true;
    report.orthogonal = true;
    for (int m = 0; m < M; ++m) {
        Batch& b = design.batches[m];
        const auto [lo, hi] = std::minmax_element(b.cell_count.begin(), b.cell_count.end());
        report.batches.push_back({*lo, *hi});
        b.balanced = *lo == *hi;
        if (!b.balanced && report.balanced) {
            report.balanced = false;
            const Index j = std::find_if(b.cell_count.begin(), b.cell_count.end(),
                                         [&](Index c) { return c != b.cell_count.front(); }) -
                            b.cell_count.begin();
            report.offending_batch = b.label;
            report.offending_cell = b.cell_label(data, j);
            report.offending_count = b.cell_count[j];
            report.expected_count = b.cell_count.front();
        }
    }

    // Pairwise intersections must be spanned by a common ancestor (or the
    // grand mean); otherwise degrees of freedom are not well defined.
    for (int m = 0; m < M; ++m) {
        for (int k = m + 1; k < M; ++k) {
            const Batch& a = design.batches[m];
            const Batch& b = design.batches[k];
            const bool nested =
                std::find(a.containers.begin(), a.containers.end(), k) != a.containers.end() ||
                std::find(b.containers.begin(), b.containers.end(), m) != b.containers.end();
            if (nested || a.J == 1 || b.J == 1) continue;
            Index components = 0;
            const std::vector<Index> comp = join_cells(a, b, &components);
            if (components > 1) {
                bool found = false;
                auto it = by_hash.find(hash_cells(comp));
                if (it != by_hash.end())
                    for (int c : it->second)
                        if (canon[c] == comp) found = true;
                if (!found)
                    throw DesignError("batches '" + a.label + "' and '" + b.label +
                                      "' overlap in a subspace that no other batch accounts for "
                                      "(partial aliasing); add their common margin as a term");
            }
            const CrossingCheck crossing = check_crossing(a, b, comp, components);
            if (!crossing.proportional && report.orthogonal) {
                report.orthogonal = false;
                report.complete_crossing = crossing.all_pairs_seen;
                report.orthogonality_issue =
                    "batches '" + a.label + "' and '" + b.label + "' are not orthogonally crossed" +
                    (crossing.all_pairs_seen ? "" : " (some combinations of cells are unobserved)");
            }
        }
    }

    const bool sweepable = report.orthogonal && report.balanced;
    if (sweepable) {
        for (int m : design.sweep_order) {
            Batch& b = design.batches[m];
            Index df = b.J - 1;
            for (int k : b.ancestors) df -= design.batches[k].df;
            b.df = df;
        }
    } else {
        design.constraints.resize(static_cast<std::size_t>(M));
        for (int m = 0; m < M; ++m) {
            design.constraints[m] = constraint_matrix(design, m);
            design.batches[m].df = design.batches[m].J - design.constraints[m].rows();
        }
    }

    Index total = 1;
    for (const auto& b : design.batches) total += b.df;
    if (total != n)
        throw DesignError("degrees of freedom do not add up (" + std::to_string(total) + " vs " +
                          std::to_string(n) + " observations): batches are partially aliased");
    return design;
}

Eigen::VectorXd DesignModel::project_identifiable(int m,
                                                  const Eigen::Ref<const Eigen::VectorXd>& beta) const {
    if (!constraints.empty()) return project_constrained(beta, constraints.at(m));
    const Batch& b = batch(m);
    Eigen::VectorXd r = beta.array() - beta.mean();
    Eigen::VectorXd sums, counts;
    for (std::size_t a = 0; a < b.ancestors.size(); ++a) {
        const Batch& bk = batch(b.ancestors[a]);
        const std::vector<Index>& map = b.ancestor_cells[a];
        sums.setZero(bk.J);
        counts.setZero(bk.J);
        for (Index j = 0; j < b.J; ++j) {
            sums[map[j]] += r[j];
            counts[map[j]] += 1.0;
        }
        for (Index j = 0; j < b.J; ++j) r[j] -= sums[map[j]] / counts[map[j]];
    }
    return r;
}

double DesignModel::finite_population_sd(int m, const Eigen::Ref<const Eigen::VectorXd>& beta) const {
    const Index df = batch(m).df;
    if (df <= 0) return 0.0;
    return std::sqrt(project_identifiable(m, beta).squaredNorm() / static_cast<double>(df));
}

Index effective_df(const DesignModel& design, int m) {
    if (m == kGrandMean) return 1;
    return design.batch(m).df;
}

std::vector<std::vector<int>> containment_order(const DesignModel& design) {
    std::vector<std::vector<int>> out;
    for (const auto& b : design.batches) {
        auto c = b.containers;
        std::sort(c.begin(), c.end());
        out.push_back(std::move(c));
    }
    return out;
}

BalanceReport check_balance(const DesignModel& design) { return design.balance; }

}  // namespace hanova
