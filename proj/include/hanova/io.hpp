#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hanova/bayes.hpp"
#include "hanova/classical.hpp"
#include "hanova/design.hpp"
#include "hanova/summary.hpp"

namespace hanova {

// Reads a headed CSV. The response column is parsed as real; factor columns
// are categorical labels mapped to level indices in first-appearance order,
// even when they look numeric. Double-quoted fields with "" escapes are
// accepted. Throws EmptyFile, MissingColumn, UnparseableValue.
Dataset read_csv(const std::string& path, const std::string& response,
                 const std::vector<std::string>& factors);
Dataset parse_csv(const std::string& text, const std::string& response,
                  const std::vector<std::string>& factors, const std::string& origin = "<memory>");

// Fixed-width Source/Df/SS/MS/F/p table, two decimals. The residual row and
// untested rows leave F and p blank.
std::string render_classical_table(const ClassicalTable& table);

enum class DisplayFormat { text, svg };
enum class DisplayQuantity { finite, super };

// One row per batch: label, df and an axis from 0 to scale_max() with a thin
// bar for the 95% interval, a thick bar for the 50% interval and a point
// glyph, drawn in that order. Text mode uses a 60-character axis.
std::string render_vc_display(const VCSummary& summary, DisplayFormat format,
                              DisplayQuantity quantity = DisplayQuantity::finite);

inline constexpr int kTextAxisWidth = 60;

// Everything the exporters need from one run.
struct RunResult {
    std::string model;
    std::string method;  // classical | moments | bayes | all
    std::uint64_t seed = 0;
    std::vector<std::string> labels;
    std::vector<Index> J;
    std::vector<Index> df;
    std::optional<ClassicalTable> table;
    std::optional<VCSummary> moments;
    std::optional<VCSummary> posterior;
    int moment_draws = 0;
    std::optional<ChainConfig> chain;
    std::optional<Diagnostics> diagnostics;
    std::vector<std::string> warnings;

    // Posterior when present, else the moments summary.
    const VCSummary* primary_summary() const;
};

// %.10g text of x; "null" for non-finite values.
std::string format_number(double x);

// Keys in fixed order: model, batches, method, seed, draws_meta. Batch
// entries carry sigma/s only when a variance-component method ran.
std::string write_json(const RunResult& result);
std::string write_csv(const RunResult& result);
std::string render_text(const RunResult& result);

}  // namespace hanova
