#include "hanova/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "hanova/error.hpp"

namespace hanova {

namespace {

std::string printf_string(const char* fmt, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, x);
    return buf;
}

// Splits one CSV record starting at `pos`; advances past the line break.
std::vector<std::string> next_record(const std::string& text, std::size_t& pos) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    while (pos < text.size()) {
        const char c = text[pos++];
        if (quoted) {
            if (c == '"') {
                if (pos < text.size() && text[pos] == '"') {
                    field += '"';
                    ++pos;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c == '\n' || c == '\r') {
            if (c == '\r' && pos < text.size() && text[pos] == '\n') ++pos;
            break;
        } else {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

bool blank_record(const std::vector<std::string>& fields) {
    return fields.size() == 1 && trim(fields[0]).empty();
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& response,
                  const std::vector<std::string>& factors, const std::string& origin) {
    std::size_t pos = 0;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) throw EmptyFile(origin);
    std::vector<std::string> header = next_record(text, pos);
    for (auto& h : header) h = trim(h);

    auto column = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw MissingColumn(name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ycol = column(response);
    std::vector<std::size_t> fcols;
    for (const auto& f : factors) fcols.push_back(column(f));

    std::vector<double> y;
    std::vector<Factor> out(factors.size());
    std::vector<std::unordered_map<std::string, int>> lookup(factors.size());
    for (std::size_t k = 0; k < factors.size(); ++k) out[k].name = factors[k];

    std::size_t row = 0;
    while (pos < text.size()) {
        const std::vector<std::string> fields = next_record(text, pos);
        if (blank_record(fields)) continue;
        ++row;
        auto cell = [&](std::size_t col, const std::string& name) {
            if (col >= fields.size()) throw UnparseableValue(row, name, "");
            return trim(fields[col]);
        };
        const std::string ytext = cell(ycol, response);
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(ytext.data(), ytext.data() + ytext.size(), value);
        if (ytext.empty() || ec != std::errc() || ptr != ytext.data() + ytext.size() ||
            !std::isfinite(value))
            throw UnparseableValue(row, response, ytext);
        y.push_back(value);
        for (std::size_t k = 0; k < factors.size(); ++k) {
            const std::string label = cell(fcols[k], factors[k]);
            if (label.empty()) throw UnparseableValue(row, factors[k], label);
            auto [it, inserted] = lookup[k].emplace(label, static_cast<int>(out[k].level_names.size()));
            if (inserted) out[k].level_names.push_back(label);
            out[k].levels.push_back(it->second);
        }
    }
    if (y.empty()) throw EmptyFile(origin);

    Dataset data;
    data.y = Eigen::Map<Eigen::VectorXd>(y.data(), static_cast<Index>(y.size()));
    data.factors = std::move(out);
    data.validate();
    return data;
}

Dataset read_csv(const std::string& path, const std::string& response,
                 const std::vector<std::string>& factors) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open data file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_csv(buffer.str(), response, factors, path);
}

std::string render_classical_table(const ClassicalTable& table) {
    std::size_t label_width = 6;
    for (const auto& row : table.rows) label_width = std::max(label_width, row.source.size());
    auto two = [](double x) {
        if (std::isnan(x)) return std::string("-");
        if (std::isinf(x)) return std::string(x > 0 ? "inf" : "-inf");
        return printf_string("%.2f", x);
    };
    std::ostringstream out;
    char line[512];
    std::snprintf(line, sizeof line, "%-*s %6s %12s %12s %10s %6s\n", static_cast<int>(label_width),
                  "Source", "Df", "SS", "MS", "F", "p");
    out << line;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const TableRow& row = table.rows[i];
        const bool show_test = row.tested && static_cast<int>(i) != table.residual;
        std::snprintf(line, sizeof line, "%-*s %6lld %12s %12s %10s %6s", static_cast<int>(label_width),
                      row.source.c_str(), static_cast<long long>(row.df), two(row.ss).c_str(),
                      two(row.ms).c_str(), show_test ? two(row.f).c_str() : "",
                      show_test ? two(row.p).c_str() : "");
        std::string text = line;
        text.erase(text.find_last_not_of(' ') + 1);
        out << text << '\n';
    }
    return out.str();
}

double VCSummary::scale_max() const {
    double top = 0.0;
    auto take = [&](double x) {
        if (std::isfinite(x)) top = std::max(top, x);
    };
    for (const auto& row : rows) {
        take(row.s_point);
        take(row.s.q975);
        if (row.has_sigma) {
            take(row.sigma_point);
            take(row.sigma.q975);
        }
    }
    if (top <= 0.0) return 1.0;
    const double magnitude = std::pow(10.0, std::floor(std::log10(top)));
    for (double step : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (step * magnitude >= top) return step * magnitude;
    return 10.0 * magnitude;
}

namespace {

struct Glyphs {
    double point;
    Quantiles q;
};

Glyphs pick(const VCRow& row, DisplayQuantity quantity) {
    if (quantity == DisplayQuantity::super && row.has_sigma) return {row.sigma_point, row.sigma};
    return {row.s_point, row.s};
}

std::string render_text_display(const VCSummary& summary, DisplayQuantity quantity) {
    const double scale = summary.scale_max();
    std::size_t label_width = 6;
    for (const auto& row : summary.rows) label_width = std::max(label_width, row.label.size());
    const int last = kTextAxisWidth - 1;
    auto column = [&](double x) {
        const double c = std::round(std::clamp(x / scale, 0.0, 1.0) * last);
        return static_cast<int>(c);
    };
    std::ostringstream out;
    char line[512];
    const std::string top = printf_string("%g", scale);
    std::string axis(kTextAxisWidth, ' ');
    axis[0] = '0';
    axis.replace(static_cast<std::size_t>(kTextAxisWidth) - top.size(), top.size(), top);
    std::snprintf(line, sizeof line, "%-*s %6s  %s\n", static_cast<int>(label_width), "Source",
                  "Df", axis.c_str());
    out << line;
    for (const auto& row : summary.rows) {
        const Glyphs g = pick(row, quantity);
        std::string bar(kTextAxisWidth, ' ');
        auto fill = [&](double lo, double hi, char c) {
            if (!std::isfinite(lo) || !std::isfinite(hi)) return;
            for (int i = column(lo); i <= column(hi); ++i) bar[static_cast<std::size_t>(i)] = c;
        };
        fill(g.q.q025, g.q.q975, '-');
        fill(g.q.q25, g.q.q75, '=');
        if (std::isfinite(g.point)) bar[static_cast<std::size_t>(column(g.point))] = 'o';
        std::snprintf(line, sizeof line, "%-*s %6lld |%s|", static_cast<int>(label_width),
                      row.label.c_str(), static_cast<long long>(row.df), bar.c_str());
        out << line << '\n';
    }
    return out.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string render_svg_display(const VCSummary& summary, DisplayQuantity quantity) {
    const double scale = summary.scale_max();
    std::size_t label_chars = 6;
    for (const auto& row : summary.rows) label_chars = std::max(label_chars, row.label.size());
    const double label_w = 7.0 * static_cast<double>(label_chars) + 10.0;
    const double df_w = 50.0;
    const double axis_x = label_w + df_w;
    const double axis_w = 400.0;
    const double row_h = 18.0;
    const double top = 30.0;
    const double width = axis_x + axis_w + 20.0;
    const double height = top + row_h * static_cast<double>(summary.rows.size()) + 10.0;
    auto fmt = [](double v) { return printf_string("%.2f", v); };
    auto xpos = [&](double v) { return axis_x + std::clamp(v / scale, 0.0, 1.0) * axis_w; };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width) << "\" height=\""
        << fmt(height) << "\" font-family=\"monospace\" font-size=\"11\">\n";
    out << "<text x=\"0.00\" y=\"14.00\">Source</text>\n";
    out << "<text x=\"" << fmt(label_w) << "\" y=\"14.00\">df</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double v = scale * t / 4.0;
        const double x = xpos(v);
        out << "<line x1=\"" << fmt(x) << "\" y1=\"18.00\" x2=\"" << fmt(x) << "\" y2=\""
            << fmt(height - 10.0) << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
        out << "<text x=\"" << fmt(x) << "\" y=\"14.00\" text-anchor=\"middle\">"
            << printf_string("%g", v) << "</text>\n";
    }
    for (std::size_t i = 0; i < summary.rows.size(); ++i) {
        const VCRow& row = summary.rows[i];
        const Glyphs g = pick(row, quantity);
        const double y = top + row_h * static_cast<double>(i) + row_h / 2.0;
        out << "<text x=\"0.00\" y=\"" << fmt(y + 4.0) << "\">" << xml_escape(row.label)
            << "</text>\n";
        out << "<text x=\"" << fmt(label_w) << "\" y=\"" << fmt(y + 4.0) << "\">" << row.df
            << "</text>\n";
        auto segment = [&](double lo, double hi, const char* stroke_width) {
            if (!std::isfinite(lo) || !std::isfinite(hi)) return;
            out << "<line x1=\"" << fmt(xpos(lo)) << "\" y1=\"" << fmt(y) << "\" x2=\""
                << fmt(xpos(hi)) << "\" y2=\"" << fmt(y) << "\" stroke=\"black\" stroke-width=\""
                << stroke_width << "\"/>\n";
        };
        segment(g.q.q025, g.q.q975, "1");
        segment(g.q.q25, g.q.q75, "4");
        if (std::isfinite(g.point))
            out << "<circle cx=\"" << fmt(xpos(g.point)) << "\" cy=\"" << fmt(y)
                << "\" r=\"3\" fill=\"white\" stroke=\"black\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

}  // namespace

std::string render_vc_display(const VCSummary& summary, DisplayFormat format,
                              DisplayQuantity quantity) {
    return format == DisplayFormat::svg ? render_svg_display(summary, quantity)
                                        : render_text_display(summary, quantity);
}

const VCSummary* RunResult::primary_summary() const {
    if (posterior) return &*posterior;
    if (moments) return &*moments;
    return nullptr;
}

std::string format_number(double x) {
    if (!std::isfinite(x)) return "null";
    return printf_string("%.10g", x);
}

namespace {

using Json = nlohmann::ordered_json;

Json number(double x) {
    if (!std::isfinite(x)) return nullptr;
    return std::stod(printf_string("%.10g", x));
}

Json interval(double est, const Quantiles& q) {
    Json j;
    j["est"] = number(est);
    j["q025"] = number(q.q025);
    j["q25"] = number(q.q25);
    j["q75"] = number(q.q75);
    j["q975"] = number(q.q975);
    return j;
}

Json vc_fields(const VCRow& row) {
    Json j;
    j["sigma"] = interval(row.sigma_point, row.sigma);
    j["s"] = interval(row.s_point, row.s);
    return j;
}

Json number_array(const Eigen::VectorXd& v) {
    Json arr = Json::array();
    for (Index i = 0; i < v.size(); ++i) arr.push_back(number(v[i]));
    return arr;
}

}  // namespace

std::string write_json(const RunResult& result) {
    Json root;
    root["model"] = result.model;
    Json batches = Json::array();
    const VCSummary* vc = result.primary_summary();
    for (std::size_t m = 0; m < result.labels.size(); ++m) {
        Json b;
        b["label"] = result.labels[m];
        b["J"] = result.J[m];
        b["df"] = result.df[m];
        if (result.table) {
            const TableRow& row = result.table->rows[m];
            b["ss"] = number(row.ss);
            b["ms"] = number(row.ms);
            b["f"] = row.tested ? number(row.f) : Json(nullptr);
            b["p"] = row.tested ? number(row.p) : Json(nullptr);
        } else {
            b["ss"] = b["ms"] = b["f"] = b["p"] = nullptr;
        }
        if (vc) {
            const Json fields = vc_fields(vc->rows[m]);
            b["sigma"] = fields["sigma"];
            b["s"] = fields["s"];
        }
        batches.push_back(std::move(b));
    }
    root["batches"] = std::move(batches);
    root["method"] = result.method;
    root["point_origin"] = vc ? Json(vc->point_origin) : Json(nullptr);
    root["seed"] = result.seed;

    Json meta;
    if (result.moments) meta["moment_draws"] = result.moment_draws;
    if (result.chain) {
        const ChainConfig& c = *result.chain;
        meta["chains"] = c.chains;
        meta["iters"] = c.iters;
        meta["warmup"] = c.warmup;
        meta["thin"] = c.thin;
        meta["px"] = c.px;
        meta["sigma_max"] = number(c.options.sigma_max);
    }
    if (result.diagnostics) {
        meta["rhat"] = number_array(result.diagnostics->rhat);
        meta["ess"] = number_array(result.diagnostics->ess);
    }
    root["draws_meta"] = meta.is_null() ? Json(nullptr) : meta;

    if (result.moments && result.posterior) {
        Json moments;
        moments["point_origin"] = result.moments->point_origin;
        Json rows = Json::array();
        for (const auto& row : result.moments->rows) {
            Json r;
            r["label"] = row.label;
            const Json fields = vc_fields(row);
            r["sigma"] = fields["sigma"];
            r["s"] = fields["s"];
            rows.push_back(std::move(r));
        }
        moments["batches"] = std::move(rows);
        root["moments"] = std::move(moments);
    }
    root["warnings"] = result.warnings;
    try {
        return root.dump(2) + "\n";
    } catch (const nlohmann::json::exception& e) {
        throw SerializationError(std::string("cannot serialize results: ") + e.what());
    }
}

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_number(double x) { return std::isfinite(x) ? printf_string("%.10g", x) : ""; }

}  // namespace

std::string write_csv(const RunResult& result) {
    std::ostringstream out;
    out << "label,J,df,ss,ms,f,p,origin,sigma_est,sigma_q025,sigma_q25,sigma_q50,sigma_q75,"
           "sigma_q975,s_est,s_q025,s_q25,s_q50,s_q75,s_q975\n";
    std::vector<const VCSummary*> summaries;
    if (result.moments) summaries.push_back(&*result.moments);
    if (result.posterior) summaries.push_back(&*result.posterior);
    if (summaries.empty()) summaries.push_back(nullptr);
    for (const VCSummary* vc : summaries) {
        for (std::size_t m = 0; m < result.labels.size(); ++m) {
            out << csv_field(result.labels[m]) << ',' << result.J[m] << ',' << result.df[m];
            if (result.table) {
                const TableRow& row = result.table->rows[m];
                out << ',' << csv_number(row.ss) << ',' << csv_number(row.ms) << ','
                    << (row.tested ? csv_number(row.f) : "") << ','
                    << (row.tested ? csv_number(row.p) : "");
            } else {
                out << ",,,,";
            }
            if (vc) {
                const VCRow& row = vc->rows[m];
                out << ',' << vc->point_origin;
                for (const auto& [est, q] : {std::pair{row.sigma_point, row.sigma},
                                             std::pair{row.s_point, row.s}})
                    out << ',' << csv_number(est) << ',' << csv_number(q.q025) << ','
                        << csv_number(q.q25) << ',' << csv_number(q.q50) << ','
                        << csv_number(q.q75) << ',' << csv_number(q.q975);
            } else {
                out << ",classical,,,,,,,,,,,,";
            }
            out << '\n';
        }
    }
    return out.str();
}

std::string render_text(const RunResult& result) {
    std::ostringstream out;
    out << "Model: " << result.model << "\n";
    out << "Method: " << result.method << "  seed: " << result.seed << "\n";
    if (result.table) out << "\n" << render_classical_table(*result.table);
    auto display = [&](const VCSummary& vc, const char* title) {
        const char* origin = vc.point_origin == "posterior" ? "posterior median"
                                                            : "moments estimate";
        out << "\n" << title << " finite-population sd (o = " << origin
            << ", = 50% interval, - 95% interval)\n";
        out << render_vc_display(vc, DisplayFormat::text, DisplayQuantity::finite);
        out << "\n" << title << " superpopulation sd\n";
        out << render_vc_display(vc, DisplayFormat::text, DisplayQuantity::super);
    };
    if (result.moments) display(*result.moments, "Moments:");
    if (result.posterior) display(*result.posterior, "Bayes:");
    if (result.diagnostics) {
        out << "\nConvergence (sigma): ";
        double worst = 1.0;
        for (Index i = 0; i < result.diagnostics->rhat.size(); ++i)
            if (std::isfinite(result.diagnostics->rhat[i]))
                worst = std::max(worst, result.diagnostics->rhat[i]);
        out << "max R-hat " << printf_string("%.3f", worst) << "\n";
    }
    for (const auto& w : result.warnings) out << "warning: " << w << "\n";
    return out.str();
}

}  // namespace hanova
