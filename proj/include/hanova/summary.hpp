#pragma once

#include <string>
#include <vector>

#include "hanova/numerics.hpp"

namespace hanova {

// One row of the variance-component display.
struct VCRow {
    std::string label;
    Eigen::Index J = 0;
    Eigen::Index df = 0;
    double s_point = 0.0;      // point estimate of the finite-population sd
    Quantiles s;               // intervals for s_m
    bool has_sigma = false;
    double sigma_point = 0.0;  // point estimate of the superpopulation sd
    Quantiles sigma;
};

struct VCSummary {
    // "moments" (truncated method-of-moments estimate) or "posterior" (median).
    std::string point_origin;
    std::vector<VCRow> rows;

    // Smallest "nice" axis maximum covering every point and 97.5% quantile.
    double scale_max() const;
};

}  // namespace hanova
