#pragma once

// Shared datasets for the test binaries.

#include <string>
#include <utility>
#include <vector>

#include "hanova/design.hpp"
#include "hanova/formula.hpp"
#include "hanova/numerics.hpp"
#include "hanova/rng.hpp"

namespace fixtures {

using hanova::Dataset;
using Columns = std::vector<std::pair<std::string, std::vector<int>>>;

// Groups A:(1,3), B:(5,7), C:(9,11).
inline Dataset one_way_example() {
    Eigen::VectorXd y(6);
    y << 1, 3, 5, 7, 9, 11;
    return hanova::make_dataset(y, {{"g", {0, 0, 1, 1, 2, 2}}});
}

// Balanced one-way layout with `groups` x `reps` observations, response 0.
inline Dataset one_way_layout(int groups, int reps) {
    std::vector<int> g;
    for (int j = 0; j < groups; ++j)
        for (int r = 0; r < reps; ++r) g.push_back(j);
    return hanova::make_dataset(Eigen::VectorXd::Zero(groups * reps), {{"g", g}});
}

inline void simulate_one_way(Dataset& data, int groups, int reps, double sigma_group,
                             double sigma_noise, hanova::RngStream& rng) {
    for (int j = 0; j < groups; ++j) {
        const double effect = hanova::sample_normal(0.0, sigma_group, rng);
        for (int r = 0; r < reps; ++r)
            data.y[j * reps + r] = 10.0 + effect + hanova::sample_normal(0.0, sigma_noise, rng);
    }
}

// 4 treatments x 5 machines per treatment x 6 measurements per machine.
// Machine labels repeat across treatments.
inline Dataset nested_machines() {
    std::vector<int> trt, machine, meas;
    for (int t = 0; t < 4; ++t)
        for (int m = 0; m < 5; ++m)
            for (int k = 0; k < 6; ++k) {
                trt.push_back(t);
                machine.push_back(m);
                meas.push_back(k);
            }
    Eigen::VectorXd y = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(trt.size()));
    return hanova::make_dataset(y, {{"trt", trt}, {"machine", machine}, {"meas", meas}});
}

inline const char* kNestedModel = "y ~ trt + trt:machine + trt:machine:meas";

// 5x5 Latin square of whole plots (treatment (row + col) mod 5) with each
// plot split into 2 subplots.
inline Dataset split_plot_layout() {
    std::vector<int> row, col, trt, sub;
    for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 5; ++c)
            for (int s = 0; s < 2; ++s) {
                row.push_back(r);
                col.push_back(c);
                trt.push_back((r + c) % 5);
                sub.push_back(s);
            }
    Eigen::VectorXd y = Eigen::VectorXd::Zero(50);
    return hanova::make_dataset(y, {{"row", row}, {"col", col}, {"trt", trt}, {"sub", sub}});
}

inline const char* kSplitPlotModel =
    "y ~ row + col + trt + row:col + sub + row:sub + col:sub + trt:sub + row:col:sub";

// Fixed effects for rows, columns, treatments, subplots and the
// treatment-by-subplot interaction; random plot and subplot errors.
inline void simulate_split_plot(Dataset& data, double sigma_plot, double sigma_sub,
                                hanova::RngStream& rng) {
    const std::vector<int>& row = data.factor("row").levels;
    const std::vector<int>& col = data.factor("col").levels;
    const std::vector<int>& trt = data.factor("trt").levels;
    const std::vector<int>& sub = data.factor("sub").levels;
    const double row_eff[5] = {1.0, -0.5, 0.3, -1.2, 0.4};
    const double col_eff[5] = {0.2, 0.8, -0.6, -0.1, -0.3};
    const double trt_eff[5] = {-2.0, -1.0, 0.0, 1.0, 2.0};
    const double sub_eff[2] = {-0.75, 0.75};
    double plot_eff[5][5];
    for (auto& r : plot_eff)
        for (double& p : r) p = hanova::sample_normal(0.0, sigma_plot, rng);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const int t = trt[i], s = sub[i];
        const double inter = (s == 0 ? 0.5 : -0.5) * (t - 2) * 0.3;
        data.y[i] = 20.0 + row_eff[row[i]] + col_eff[col[i]] + trt_eff[t] + sub_eff[s] + inter +
                    plot_eff[row[i]][col[i]] + hanova::sample_normal(0.0, sigma_sub, rng);
    }
}

// Full 4 x 45 x 2 x 25 x 2 factorial without replication.
inline Dataset web_factorial() {
    const int sizes[5] = {4, 45, 2, 25, 2};
    const char* names[5] = {"to", "from", "company", "hour", "week"};
    int total = 1;
    for (int s : sizes) total *= s;
    std::vector<std::vector<int>> cols(5);
    for (int i = 0; i < total; ++i) {
        int rest = i;
        for (int f = 4; f >= 0; --f) {
            cols[f].push_back(rest % sizes[f]);
            rest /= sizes[f];
        }
    }
    Columns columns;
    for (int f = 0; f < 5; ++f) columns.emplace_back(names[f], cols[f]);
    hanova::RngStream rng(2024);
    Eigen::VectorXd y(total);
    for (int i = 0; i < total; ++i) y[i] = hanova::sample_normal(0.0, 1.0, rng);
    return hanova::make_dataset(y, columns);
}

inline const char* kWebModel = "y ~ to*from*company*hour*week";

inline hanova::DesignModel design_for(const char* model, const Dataset& data) {
    const hanova::ModelSpec spec = hanova::parse_model(model);
    return hanova::build_design(hanova::expand_terms(spec, data.factor_names()), data, spec.aliases);
}

}  // namespace fixtures
