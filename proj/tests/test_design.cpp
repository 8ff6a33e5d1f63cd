#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <random>

#include "fixtures.hpp"
#include "hanova/error.hpp"

using namespace hanova;

namespace {

std::vector<Index> js(const DesignModel& d) {
    std::vector<Index> out;
    for (const auto& b : d.batches) out.push_back(b.J);
    return out;
}

std::vector<Index> dfs(const DesignModel& d) {
    std::vector<Index> out;
    for (const auto& b : d.batches) out.push_back(b.df);
    return out;
}

std::vector<std::string> container_labels(const DesignModel& d, int m) {
    std::vector<std::string> out;
    for (int k : d.batch(m).containers) out.push_back(d.batch(k).label);
    std::sort(out.begin(), out.end());
    return out;
}

Index dense_rank(const Eigen::MatrixXd& x) {
    if (x.cols() == 0) return 0;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-9);
    return qr.rank();
}

// Oracle: df_m = rank([1, X_k for ancestors k, X_m]) - rank([1, X_k ...]),
// with ancestors found by dense column-space containment.
Index dense_df(const DesignModel& d, int m) {
    const Eigen::MatrixXd xm = d.indicator(m);
    Eigen::MatrixXd base = Eigen::MatrixXd::Ones(d.n, 1);
    for (int k = 0; k < d.M(); ++k) {
        if (k == m) continue;
        const Eigen::MatrixXd xk = d.indicator(k);
        Eigen::MatrixXd both(d.n, xm.cols() + xk.cols());
        both << xm, xk;
        // k lies inside m when adding X_k does not grow X_m's rank, and the
        // spans differ.
        if (dense_rank(both) == dense_rank(xm) && dense_rank(xk) < dense_rank(xm)) {
            Eigen::MatrixXd grown(d.n, base.cols() + xk.cols());
            grown << base, xk;
            base = grown;
        }
    }
    Eigen::MatrixXd full(d.n, base.cols() + xm.cols());
    full << base, xm;
    return dense_rank(full) - dense_rank(base);
}

}  // namespace

TEST_CASE("nested machines design") {
    const Dataset data = fixtures::nested_machines();
    const DesignModel d = fixtures::design_for(fixtures::kNestedModel, data);
    CHECK(js(d) == std::vector<Index>{4, 20, 120});
    CHECK(dfs(d) == std::vector<Index>{3, 16, 100});
    CHECK(d.residual == 2);
    CHECK(container_labels(d, 0) == std::vector<std::string>{"trt:machine", "trt:machine:meas"});
    CHECK(container_labels(d, 1) == std::vector<std::string>{"trt:machine:meas"});
    CHECK(d.batch(2).containers.empty());
    CHECK(d.balance.balanced);
}

TEST_CASE("split-plot Latin square design") {
    const Dataset data = fixtures::split_plot_layout();
    const DesignModel d = fixtures::design_for(fixtures::kSplitPlotModel, data);
    CHECK(js(d) == std::vector<Index>{5, 5, 5, 25, 2, 10, 10, 10, 50});
    CHECK(dfs(d) == std::vector<Index>{4, 4, 4, 12, 1, 4, 4, 4, 12});
    const auto trt = container_labels(d, d.find("trt"));
    for (const char* label : {"row:col", "trt:sub", "row:col:sub"})
        CHECK(std::find(trt.begin(), trt.end(), label) != trt.end());
    // Treatment is aliased inside plots, so row:col has trt among its ancestors.
    const Batch& plot = d.batch(d.find("row:col"));
    CHECK(std::find(plot.ancestors.begin(), plot.ancestors.end(), d.find("trt")) != plot.ancestors.end());
    CHECK(container_labels(d, d.find("row")) ==
          std::vector<std::string>{"row:col", "row:col:sub", "row:sub"});
    CHECK(d.balance.balanced);
    CHECK(d.balance.orthogonal);
}

TEST_CASE("declared aliases are checked against the data") {
    const Dataset data = fixtures::split_plot_layout();
    const ModelSpec good = parse_model(std::string(fixtures::kSplitPlotModel) + "; alias(trt = row:col)");
    CHECK_NOTHROW(build_design(expand_terms(good, data.factor_names()), data, good.aliases));
    const ModelSpec bad = parse_model(std::string(fixtures::kSplitPlotModel) + "; alias(trt = row:sub)");
    CHECK_THROWS_AS(build_design(expand_terms(bad, data.factor_names()), data, bad.aliases), DesignError);
}

TEST_CASE("single-level factor has no degrees of freedom") {
    const Dataset data = make_dataset(Eigen::Vector3d(1, 2, 3), {{"a", {0, 0, 0}}});
    const DesignModel d = fixtures::design_for("y ~ a", data);
    REQUIRE(d.M() == 2);
    CHECK(d.batch(0).J == 1);
    CHECK(d.batch(0).df == 0);
    CHECK(d.batch(1).synthetic);
    CHECK(d.batch(1).df == 2);
    CHECK(effective_df(d, kGrandMean) == 1);
}

TEST_CASE("crossed factors do not contain each other") {
    std::vector<int> a, b;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            for (int r = 0; r < 2; ++r) {
                a.push_back(i);
                b.push_back(j);
            }
    const Dataset data = make_dataset(Eigen::VectorXd::Zero(24), {{"a", a}, {"b", b}});
    const DesignModel d = fixtures::design_for("y ~ a*b", data);
    REQUIRE(d.M() == 4);
    CHECK(container_labels(d, 0) == std::vector<std::string>{"a:b", "residual"});
    CHECK(dfs(d) == std::vector<Index>{2, 3, 6, 12});
}

TEST_CASE("balance report") {
    const DesignModel web = fixtures::design_for(fixtures::kWebModel, fixtures::web_factorial());
    CHECK(web.balance.balanced);
    CHECK(fixtures::design_for("y ~ g", fixtures::one_way_layout(3, 2)).balance.balanced);

    const Dataset uneven = make_dataset(Eigen::VectorXd::Zero(5), {{"g", {0, 0, 1, 1, 1}}});
    const DesignModel d = fixtures::design_for("y ~ g", uneven);
    CHECK_FALSE(d.balance.balanced);
    CHECK(d.balance.offending_batch == "g");
    CHECK_FALSE(d.balance.offending_cell.empty());
    CHECK(d.balance.batches[0].min_count == 2);
    CHECK(d.balance.batches[0].max_count == 3);
    CHECK(check_balance(d).balanced == d.balance.balanced);
}

TEST_CASE("web factorial degrees of freedom") {
    const auto start = std::chrono::steady_clock::now();
    const DesignModel d = fixtures::design_for(fixtures::kWebModel, fixtures::web_factorial());
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    CHECK(dfs(d) == std::vector<Index>{3, 44, 1, 24, 1, 132, 3, 72, 3, 44, 1056, 44, 24, 1, 24, 132,
                                       3168, 132, 72, 3, 72, 1056, 44, 1056, 24, 3168, 132, 3168,
                                       72, 1056, 3168});
    CHECK(d.n == 18000);
    CHECK(d.batch(d.residual).label == "to:from:company:hour:week");
    CHECK(seconds < 5.0);
}

TEST_CASE("indicator rows each pull one coefficient") {
    const DesignModel d = fixtures::design_for(fixtures::kSplitPlotModel, fixtures::split_plot_layout());
    for (int m = 0; m < d.M(); ++m) {
        const Eigen::MatrixXd x = d.indicator(m);
        CHECK((x.rowwise().sum().array() == 1.0).all());
        CHECK((x.array() == 0.0 || x.array() == 1.0).all());
    }
}

TEST_CASE("degenerate designs are rejected") {
    std::vector<int> a{0, 0, 1, 1, 2, 2, 0, 0, 1, 1, 2, 2};
    std::vector<int> b{0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
    std::vector<int> c{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1};
    const Dataset data = make_dataset(Eigen::VectorXd::Zero(12), {{"a", a}, {"b", b}, {"c", c}, {"a2", a}});
    // a:b and a:c overlap in the span of a, which is not a batch.
    CHECK_THROWS_AS(fixtures::design_for("y ~ a:b + a:c", data), DesignError);
    // Two batches with the same cells.
    CHECK_THROWS_AS(fixtures::design_for("y ~ a + a2", data), DesignError);
    // error() must index single observations.
    CHECK_THROWS_AS(fixtures::design_for("y ~ a + error(a:b)", data), DesignError);
    CHECK_THROWS_AS(fixtures::design_for("y ~ q", data), UnknownFactor);
    CHECK_NOTHROW(fixtures::design_for("y ~ a*b*c", data));
}

TEST_CASE("explicit per-observation residual term") {
    const Dataset data = fixtures::nested_machines();
    const DesignModel d = fixtures::design_for("y ~ trt + trt:machine + error(trt:machine:meas)", data);
    CHECK(d.M() == 3);
    CHECK(d.residual == 2);
    CHECK_FALSE(d.batch(2).synthetic);
}

// Hand-rolled generator: crossed factors with random level counts, random
// replication per cell (possibly unbalanced) and a hierarchically closed
// subset of interaction terms.
struct RandomDesign {
    Dataset data;
    std::string model;
};

RandomDesign random_design(std::mt19937_64& gen, bool balanced) {
    std::uniform_int_distribution<int> factors(1, 3), levels(2, 4), reps(1, 3);
    const int F = factors(gen);
    std::vector<int> L(F);
    for (auto& l : L) l = levels(gen);
    const int fixed_reps = reps(gen) + 1;
    std::vector<std::vector<int>> cols(F);
    int cells = 1;
    for (int l : L) cells *= l;
    for (int cell = 0; cell < cells; ++cell) {
        const int r = balanced ? fixed_reps : reps(gen);
        for (int k = 0; k < r; ++k) {
            int rest = cell;
            for (int f = 0; f < F; ++f) {
                cols[f].push_back(rest % L[f]);
                rest /= L[f];
            }
        }
    }
    const std::vector<std::string> names{"a", "b", "c"};
    fixtures::Columns columns;
    for (int f = 0; f < F; ++f) columns.emplace_back(names[f], cols[f]);
    RandomDesign out{make_dataset(Eigen::VectorXd::Zero(static_cast<Index>(cols[0].size())), columns), "y ~ "};
    // Main effects always; each higher interaction kept with probability 1/2
    // only when all of its sub-interactions are kept.
    std::vector<int> kept;
    for (int mask = 1; mask < (1 << F); ++mask) {
        bool closed = true;
        for (int f = 0; f < F; ++f)
            if ((mask & (1 << f)) && mask != (1 << f))
                closed = closed && std::find(kept.begin(), kept.end(), mask ^ (1 << f)) != kept.end();
        const bool main = __builtin_popcount(static_cast<unsigned>(mask)) == 1;
        if (main || (closed && gen() % 2 == 0)) kept.push_back(mask);
    }
    std::stable_sort(kept.begin(), kept.end(), [](int x, int y) {
        return __builtin_popcount(static_cast<unsigned>(x)) < __builtin_popcount(static_cast<unsigned>(y));
    });
    for (std::size_t t = 0; t < kept.size(); ++t) {
        if (t) out.model += " + ";
        bool first = true;
        for (int f = 0; f < F; ++f)
            if (kept[t] & (1 << f)) {
                out.model += (first ? "" : ":") + names[f];
                first = false;
            }
    }
    return out;
}

TEST_CASE("degrees of freedom agree with dense rank computations") {
    std::mt19937_64 gen(123);
    for (int trial = 0; trial < 60; ++trial) {
        const RandomDesign rd = random_design(gen, trial % 2 == 0);
        CAPTURE(rd.model);
        const DesignModel d = fixtures::design_for(rd.model.c_str(), rd.data);
        Index total = 1;
        for (int m = 0; m < d.M(); ++m) {
            CHECK(d.batch(m).df == dense_df(d, m));
            // Independent numeric route through the SVD constraint basis.
            CHECK(d.batch(m).df == d.batch(m).J - constraint_matrix(d, m).rows());
            total += d.batch(m).df;
        }
        CHECK(total == d.n);
    }
}

TEST_CASE("containment does not depend on term order") {
    const Dataset data = fixtures::split_plot_layout();
    const DesignModel forward = fixtures::design_for(fixtures::kSplitPlotModel, data);
    const DesignModel shuffled = fixtures::design_for(
        "y ~ row:col:sub + trt:sub + sub + row:col + trt + col:sub + row + row:sub + col", data);
    for (int m = 0; m < forward.M(); ++m) {
        const int k = shuffled.find(forward.batch(m).label);
        REQUIRE(k >= 0);
        CHECK(container_labels(forward, m) == container_labels(shuffled, k));
        CHECK(forward.batch(m).df == shuffled.batch(k).df);
    }
    // Antisymmetry and transitivity.
    for (int m = 0; m < forward.M(); ++m)
        for (int k : forward.batch(m).containers) {
            const auto& back = forward.batch(k).containers;
            CHECK(std::find(back.begin(), back.end(), m) == back.end());
            for (int l : back) {
                const auto& mine = forward.batch(m).containers;
                CHECK(std::find(mine.begin(), mine.end(), l) != mine.end());
            }
        }
}

TEST_CASE("identifiable projection: sweep route matches dense constraints") {
    std::mt19937_64 gen(9);
    std::normal_distribution<double> z;
    for (const char* model : {fixtures::kSplitPlotModel, fixtures::kNestedModel}) {
        const Dataset data = std::string(model) == fixtures::kNestedModel ? fixtures::nested_machines()
                                                                          : fixtures::split_plot_layout();
        const DesignModel d = fixtures::design_for(model, data);
        for (int m = 0; m < d.M(); ++m) {
            Eigen::VectorXd beta(d.batch(m).J);
            for (auto& b : beta) b = z(gen);
            const Eigen::VectorXd fast = d.project_identifiable(m, beta);
            const Eigen::VectorXd dense = project_constrained(beta, constraint_matrix(d, m));
            CHECK((fast - dense).norm() < 1e-9);
            CHECK((d.project_identifiable(m, fast) - fast).norm() < 1e-12);
        }
    }
}

TEST_CASE("finite-population sd of a constrained batch") {
    const DesignModel d = fixtures::design_for("y ~ g", fixtures::one_way_example());
    // sqrt(((-4)^2 + 0 + 4^2) / 2)
    CHECK(d.finite_population_sd(0, Eigen::Vector3d(-4, 0, 4)) == doctest::Approx(4.0));
    // Adding a constant is removed by the projection.
    CHECK(d.finite_population_sd(0, Eigen::Vector3d(6, 10, 14)) == doctest::Approx(4.0));
}
