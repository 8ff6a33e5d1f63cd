#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fixtures.hpp"
#include "hanova/error.hpp"
#include "hanova/io.hpp"
#include "hanova/run.hpp"

using namespace hanova;

namespace {

std::string one_way_csv() { return "y,g\n1,A\n3,A\n5,B\n7,B\n9,C\n11,C\n"; }

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) out.push_back(line);
    return out;
}

std::vector<std::string> words(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

RunConfig config_for(const std::string& model, const std::string& method) {
    RunConfig c;
    c.model = model;
    c.method = method;
    c.draws = 400;
    c.iters = 600;
    c.warmup = 300;
    c.chains = 2;
    c.seed = 17;
    return c;
}

VCSummary single_row(double point, Quantiles q) {
    VCSummary s;
    s.point_origin = "moments";
    VCRow row;
    row.label = "a";
    row.df = 3;
    row.s_point = point;
    row.s = q;
    s.rows.push_back(row);
    return s;
}

std::string bar_of(const std::string& display_line) {
    const auto open = display_line.find('|');
    return display_line.substr(open + 1, kTextAxisWidth);
}

}  // namespace

TEST_CASE("small CSV") {
    const Dataset d = parse_csv("y,a\n1.5,x\n2,y\n-3e1,x\n", "y", {"a"});
    CHECK(d.n() == 3);
    CHECK(d.y[2] == -30.0);
    CHECK(d.factor("a").levels == std::vector<int>{0, 1, 0});
    CHECK(d.factor("a").level_names == std::vector<std::string>{"x", "y"});
}

TEST_CASE("numeric-looking factor labels stay categorical") {
    const Dataset d = parse_csv("a,y\n10,1\n2,2\n10,3\n", "y", {"a"});
    CHECK(d.factor("a").levels == std::vector<int>{0, 1, 0});
    CHECK(d.factor("a").level_names == std::vector<std::string>{"10", "2"});
}

TEST_CASE("quoted fields and line endings") {
    const Dataset d = parse_csv("\"y\",\"a\"\r\n1,\"p, q\"\r\n2,\"say \"\"hi\"\"\"\r\n\r\n", "y", {"a"});
    CHECK(d.n() == 2);
    CHECK(d.factor("a").level_names == std::vector<std::string>{"p, q", "say \"hi\""});
}

TEST_CASE("CSV errors") {
    try {
        parse_csv("y,a\n1,x\n,y\n", "y", {"a"});
        FAIL("expected UnparseableValue");
    } catch (const UnparseableValue& e) {
        CHECK(std::string(e.what()).find('2') != std::string::npos);
    }
    CHECK_THROWS_AS(parse_csv("y,a\n1,x\nabc,y\n", "y", {"a"}), UnparseableValue);
    CHECK_THROWS_AS(parse_csv("y,a\n1,x\n2\n", "y", {"a"}), UnparseableValue);
    CHECK_THROWS_AS(parse_csv("y,a\n1,x\n", "y", {"b"}), MissingColumn);
    CHECK_THROWS_AS(parse_csv("y,a\n1,x\n", "z", {"a"}), MissingColumn);
    CHECK_THROWS_AS(parse_csv("", "y", {}), EmptyFile);
    CHECK_THROWS_AS(parse_csv("y,a\n", "y", {"a"}), EmptyFile);
    CHECK_THROWS_AS(read_csv("/nonexistent/file.csv", "y", {"a"}), InputError);
}

TEST_CASE("full-factorial file ingests quickly") {
    const Dataset web = fixtures::web_factorial();
    std::ostringstream out;
    out << "to,from,company,hour,week,y\n";
    for (Index i = 0; i < web.n(); ++i) {
        for (const auto& f : web.factors) out << f.level_names[f.levels[i]] << ',';
        out << format_number(web.y[i]) << '\n';
    }
    const auto path = std::filesystem::temp_directory_path() / "hanova_web_ingest.csv";
    std::ofstream(path) << out.str();
    const auto start = std::chrono::steady_clock::now();
    const Dataset d = read_csv(path.string(), "y", {"to", "from", "company", "hour", "week"});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::filesystem::remove(path);
    CHECK(d.n() == 4 * 45 * 2 * 25 * 2);
    CHECK(d.factor("from").level_names.size() == 45);
    CHECK(seconds < 1.0);
}

TEST_CASE("classical table rendering") {
    const Dataset data = parse_csv(one_way_csv(), "y", {"g"});
    const DesignModel d = fixtures::design_for("y ~ g", data);
    const std::vector<std::string> lines = lines_of(render_classical_table(anova_table(fit_effects(d, data.y), d)));
    REQUIRE(lines.size() == 3);
    CHECK(words(lines[0]) == std::vector<std::string>{"Source", "Df", "SS", "MS", "F", "p"});
    CHECK(words(lines[1]) == std::vector<std::string>{"g", "2", "64.00", "32.00", "16.00", "0.03"});
    CHECK(words(lines[2]) == std::vector<std::string>{"residual", "3", "6.00", "2.00"});
    // Columns line up with the header.
    CHECK(lines[1].size() == lines[0].size());
}

TEST_CASE("printed web row re-renders from its sums of squares") {
    const ClassicalTable table = make_table({{"to", 3, 31193.62}, {"residual", 3168, 1235.54}}, 1);
    const std::vector<std::string> w = words(lines_of(render_classical_table(table))[1]);
    REQUIRE(w.size() == 6);
    CHECK(w[0] == "to");
    CHECK(w[1] == "3");
    CHECK(w[2] == "31193.62");
    CHECK(w[3] == "10397.87");
    CHECK(std::fabs(std::stod(w[4]) / 26660.68 - 1.0) < 0.005);
    CHECK(w[5] == "0.00");
}

TEST_CASE("response-only model renders the residual row alone") {
    const Dataset data = parse_csv(one_way_csv(), "y", {"g"});
    const DesignModel d = fixtures::design_for("y ~ 1", data);
    const std::vector<std::string> lines = lines_of(render_classical_table(anova_table(fit_effects(d, data.y), d)));
    REQUIRE(lines.size() == 2);
    CHECK(words(lines[1]) == std::vector<std::string>{"residual", "5", "70.00", "14.00"});
}

TEST_CASE("display of a zero row") {
    const VCSummary s = single_row(0.0, Quantiles{0, 0, 0, 0, 0});
    CHECK(s.scale_max() == 1.0);
    const std::vector<std::string> lines = lines_of(render_vc_display(s, DisplayFormat::text));
    REQUIRE(lines.size() == 2);
    const std::string bar = bar_of(lines[1]);
    CHECK(bar[0] == 'o');
    CHECK(bar.find_first_not_of(' ', 1) == std::string::npos);
    CHECK(render_vc_display(s, DisplayFormat::svg).find("cx=\"") != std::string::npos);
}

TEST_CASE("point outside the thick bar is drawn where it falls") {
    const VCSummary s = single_row(0.5, Quantiles{0.2, 2.0, 3.0, 4.0, 6.0});
    CHECK(s.scale_max() == 10.0);
    const std::string bar = bar_of(lines_of(render_vc_display(s, DisplayFormat::text))[1]);
    const auto point = bar.find('o');
    const auto thick_lo = bar.find('=');
    const auto thick_hi = bar.rfind('=');
    REQUIRE(point != std::string::npos);
    CHECK(point < thick_lo);
    CHECK(point == 3);  // round(0.05 * 59)
    CHECK(bar[1] == '-');
    CHECK(thick_hi == 24);  // round(0.4 * 59)
    CHECK(bar.rfind('-') == 35);  // round(0.6 * 59)

    // SVG: the circle sits left of the thick segment.
    const std::string svg = render_vc_display(s, DisplayFormat::svg);
    const auto cx = svg.find("cx=\"");
    const double circle_x = std::stod(svg.substr(cx + 4));
    const auto thick = svg.find("stroke-width=\"4\"");
    const auto x1 = svg.rfind("x1=\"", thick);
    CHECK(circle_x < std::stod(svg.substr(x1 + 4)));
}

TEST_CASE("scale covers every upper quantile") {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
        VCSummary s;
        const int rows = 1 + trial % 6;
        const double magnitude = std::pow(10.0, -4 + 8 * u(gen));
        for (int r = 0; r < rows; ++r) {
            double q[5];
            for (double& v : q) v = magnitude * u(gen);
            std::sort(q, q + 5);
            VCRow row;
            row.label = "b" + std::to_string(r);
            row.s_point = q[2];
            row.s = Quantiles{q[0], q[1], q[2], q[3], q[4]};
            row.has_sigma = true;
            row.sigma_point = q[2] * 1.5;
            row.sigma = Quantiles{q[0], q[1], q[2], q[3] * 1.5, q[4] * 1.5};
            s.rows.push_back(row);
        }
        const double top = s.scale_max();
        for (const auto& row : s.rows) {
            CHECK(top >= row.s.q975);
            CHECK(top >= row.sigma.q975);
            CHECK(top >= row.sigma_point);
        }
        // Within one nice step of the data.
        double largest = 0.0;
        for (const auto& row : s.rows) largest = std::max(largest, row.sigma.q975);
        CHECK(top <= 2.5 * largest);
    }
}

TEST_CASE("web-shaped run lists every batch in source order") {
    const Dataset web = fixtures::web_factorial();
    RunConfig config = config_for(fixtures::kWebModel, "moments");
    config.draws = 50;
    const RunResult result = run_fit(config, web);
    const ModelSpec spec = parse_model(fixtures::kWebModel);
    const std::vector<Term> terms = expand_terms(spec, web.factor_names());
    REQUIRE(terms.size() == 31);
    const std::vector<std::string> lines =
        lines_of(render_vc_display(*result.moments, DisplayFormat::text));
    REQUIRE(lines.size() == 32);
    for (std::size_t i = 0; i < terms.size(); ++i) CHECK(words(lines[i + 1])[0] == terms[i].label());
    CHECK(words(lines[1])[0] == "to");
    CHECK(words(lines[31])[0] == "to:from:company:hour:week");
}

TEST_CASE("classical JSON omits variance components") {
    const Dataset data = parse_csv(one_way_csv(), "y", {"g"});
    const RunResult result = run_fit(config_for("y ~ g", "classical"), data);
    const nlohmann::json j = nlohmann::json::parse(write_json(result));
    CHECK(j["method"] == "classical");
    REQUIRE(j["batches"].size() == 2);
    for (const auto& b : j["batches"]) {
        CHECK_FALSE(b.contains("sigma"));
        CHECK_FALSE(b.contains("s"));
    }
    CHECK(j["batches"][0]["ss"] == 64.0);
    CHECK(j["batches"][0]["f"] == 16.0);
    CHECK(j["batches"][1]["f"].is_null());
    CHECK(j["draws_meta"].is_null());
}

TEST_CASE("JSON key order and moments estimates") {
    const Dataset data = parse_csv(one_way_csv(), "y", {"g"});
    const std::string text = write_json(run_fit(config_for("y ~ g", "moments"), data));
    const auto pos = [&](const char* key) { return text.find(std::string("\"") + key + "\""); };
    CHECK(pos("model") < pos("batches"));
    CHECK(pos("batches") < pos("method"));
    CHECK(pos("method") < pos("seed"));
    CHECK(pos("seed") < pos("draws_meta"));
    CHECK(pos("label") < pos("J"));
    CHECK(pos("p") < pos("sigma"));
    CHECK(text.find("\"est\": 3.872983346") != std::string::npos);
    CHECK(text.find("\"est\": 1.414213562") != std::string::npos);
    const nlohmann::json j = nlohmann::json::parse(text);
    CHECK(j["point_origin"] == "moments");
    CHECK(j["batches"][0]["sigma"]["est"].get<double>() == doctest::Approx(std::sqrt(15.0)).epsilon(1e-9));
}

TEST_CASE("same seed, same bytes") {
    Dataset data = fixtures::split_plot_layout();
    RngStream sim(8);
    fixtures::simulate_split_plot(data, 4.0, 1.0, sim);
    for (const char* method : {"moments", "bayes", "all"}) {
        CAPTURE(method);
        RunConfig config = config_for(fixtures::kSplitPlotModel, method);
        const RunResult a = run_fit(config, data);
        const RunResult b = run_fit(config, data);
        CHECK(write_json(a) == write_json(b));
        CHECK(render(a, "svg") == render(b, "svg"));
        CHECK(write_csv(a) == write_csv(b));
        config.threads = 4;
        CHECK(write_json(run_fit(config, data)) == write_json(a));
        config.threads = 1;
        config.seed = 18;
        CHECK(write_json(run_fit(config, data)) != write_json(a));
    }
}

TEST_CASE("formats agree on the underlying numbers") {
    Dataset data = fixtures::one_way_layout(6, 5);
    RngStream sim(9);
    fixtures::simulate_one_way(data, 6, 5, 2.0, 1.0, sim);
    const RunResult result = run_fit(config_for("y ~ g", "all"), data);
    const nlohmann::json j = nlohmann::json::parse(write_json(result));
    const VCSummary& post = *result.posterior;
    for (std::size_t m = 0; m < post.rows.size(); ++m) {
        const auto& s = j["batches"][m]["s"];
        CHECK(s["est"].get<double>() == doctest::Approx(post.rows[m].s_point).epsilon(1e-9));
        CHECK(s["q975"].get<double>() == doctest::Approx(post.rows[m].s.q975).epsilon(1e-9));
        CHECK(j["batches"][m]["ms"].get<double>() ==
              doctest::Approx(result.table->rows[m].ms).epsilon(1e-9));
    }
    CHECK(j["moments"]["batches"][0]["sigma"]["est"].get<double>() ==
          doctest::Approx(result.moments->rows[0].sigma_point).epsilon(1e-9));

    // CSV: the posterior rows follow the moments rows.
    const std::vector<std::string> lines = lines_of(write_csv(result));
    REQUIRE(lines.size() == 1 + 2 * post.rows.size());
    const std::string& first_posterior = lines[1 + post.rows.size()];
    CHECK(first_posterior.find(",posterior,") != std::string::npos);
    std::vector<std::string> fields;
    std::stringstream ss(first_posterior);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    CHECK(std::stod(fields[14]) == doctest::Approx(post.rows[0].s_point).epsilon(1e-9));

    // Text: the table prints MS to two decimals.
    const std::string text = render(result, "text");
    char ms[32];
    std::snprintf(ms, sizeof ms, "%.2f", result.table->rows[0].ms);
    CHECK(text.find(ms) != std::string::npos);
}

TEST_CASE("run configuration errors") {
    const Dataset data = parse_csv(one_way_csv(), "y", {"g"});
    RunConfig bad = config_for("y ~ g", "anova");
    CHECK_THROWS_AS(run_fit(bad, data), ConfigError);
    bad = config_for("y ~ g", "moments");
    bad.draws = 0;
    CHECK_THROWS_AS(run_fit(bad, data), ConfigError);
    bad = config_for("y ~ g", "bayes");
    bad.warmup = bad.iters;
    CHECK_THROWS_AS(run_fit(bad, data), ConfigError);
    bad = config_for("y ~ g", "all");
    bad.format = "xml";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK_THROWS_AS(run_fit(config_for("y ~ g +", "all"), data), InputError);
    CHECK_THROWS_AS(run_fit(config_for("y ~ h", "all"), data), InputError);
}

TEST_CASE("unbalanced data skips the classical engines under all") {
    const Dataset data = parse_csv("y,g\n1,A\n3,A\n4,A\n5,B\n7,B\n9,C\n11,C\n", "y", {"g"});
    const RunResult result = run_fit(config_for("y ~ g", "all"), data);
    CHECK_FALSE(result.table.has_value());
    CHECK_FALSE(result.moments.has_value());
    CHECK(result.posterior.has_value());
    CHECK_FALSE(result.warnings.empty());
    CHECK_THROWS_AS(run_fit(config_for("y ~ g", "classical"), data), DesignError);
}
