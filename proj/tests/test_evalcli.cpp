#include "doctest.h"
#include "daedse/evalcli.hpp"

#include <filesystem>
#include <fstream>

using namespace dse;
namespace fs = std::filesystem;

namespace {

std::string data(const std::string& f) { return std::string(DAEDSE_DATA_DIR) + "/" + f; }

std::string cache_dir() { return std::string(DAEDSE_BINARY_DIR) + "/test_gain_cache"; }

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("daedse_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

std::string short_scenario(const std::string& observers, const std::string& extra = "")
{
    return R"({"name": "short", "case": ")" + data("case9.m") + R"(", "pmus": [4, 6],
      "observers": )" + observers + R"(,
      "fault": {"bus": 4, "from": 4, "to": 5, "t_fault": 2.0},
      "noise": {"process": "gaussian", "measurement": "gaussian", "meas_var": 1e-4},
      "inputs": {"profile": "regulated"},
      "t_end": 6.0, "seeds": [1, 2])" + extra + "}";
}

}  // namespace

TEST_CASE("rmse of a zero error is zero")
{
    CHECK(rmse(Mat::Zero(5, 11)) == 0.0);
}

TEST_CASE("rmse divides by k_f and sums k_f + 1 terms")
{
    Mat e(1, 2);
    e << 1.0, 1.0;
    CHECK(rmse(e) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
    Mat f(2, 3);
    f << 1, 2, 2, 0, 0, 3;
    CHECK(rmse(f) == doctest::Approx(std::sqrt(9.0 / 2) + std::sqrt(9.0 / 2)).epsilon(1e-15));
}

TEST_CASE("rmse needs a non-empty series")
{
    CHECK_THROWS_AS(rmse(Mat(0, 0)), Error);
    CHECK_THROWS_AS(rmse(Mat::Ones(3, 1)), Error);
}

TEST_CASE("error norm series has one entry per sample")
{
    Mat e(2, 3);
    e << 3, 0, 1, 4, 0, 1;
    const Vec s = error_norm_series(e);
    REQUIRE(s.size() == 3);
    CHECK(s(0) == 5.0);
    CHECK(s(1) == 0.0);
    CHECK(s(2) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("scenario parser rejects malformed input")
{
    auto kind_of = [](const std::string& text) {
        try {
            parse_scenario(text, ".");
        } catch (const Error& e) {
            return int(e.kind());
        }
        return 0;
    };
    const int cfg = int(ErrorKind::config);
    CHECK(kind_of("{") == cfg);
    CHECK(kind_of(short_scenario("[]", R"(, "bogus": 1)")) == cfg);
    CHECK(kind_of(short_scenario(R"([{"kind": "p9"}])")) == cfg);
    CHECK(kind_of(short_scenario(R"([{"kind": "p1", "gamma": 1}])")) == cfg);
    CHECK(kind_of(short_scenario("[]", R"(, "dt": 0.1, "T": 0.05)")) == cfg);
    CHECK(kind_of(short_scenario("[]", R"(, "pmus": [])")) == cfg);
    CHECK(kind_of(short_scenario("[]", R"(, "t_end": "long")")) == cfg);
    CHECK(kind_of(short_scenario(R"([{"name": "a", "kind": "p1"}, {"name": "a", "kind": "p2"}])")) == cfg);
    CHECK(kind_of(short_scenario(R"([{"kind": "two_stage", "pi": true}])")) == cfg);
    CHECK(kind_of(short_scenario("[]")) == 0);
}

TEST_CASE("relative paths resolve against the scenario directory")
{
    const Scenario s = parse_scenario(R"({"case": "../data/case9.m", "pmus": [4, 6]})", "/x/scenarios");
    CHECK(s.case_path == "/x/data/case9.m");
    CHECK(s.seeds.size() == 5);
}

TEST_CASE("scenario hash tracks configuration changes")
{
    const Scenario a = parse_scenario(short_scenario("[]"), ".");
    Scenario b = a;
    CHECK(scenario_hash(a) == scenario_hash(b));
    b.noise.meas_var = 2e-4;
    CHECK(scenario_hash(a) != scenario_hash(b));
}

TEST_CASE("plant-only scenario still writes plots")
{
    const fs::path out = scratch("plant_only");
    Scenario s = parse_scenario(short_scenario("[]", R"(, "plot_states": ["omega_g1"])"), ".");
    s.seeds = {3};
    RunOptions o;
    o.out_dir = out.string();
    const MetricsReport r = run_scenario(s, o);
    CHECK(r.observers.empty());
    CHECK(r.t.size() == 121);
    CHECK(fs::exists(out / "state_omega_g1.svg"));
    CHECK(fs::exists(out / "metrics.json"));
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(slurp(out / "state_omega_g1.svg").find("<polyline") != std::string::npos);
}

TEST_CASE("unknown plot state is a configuration error")
{
    Scenario s = parse_scenario(short_scenario("[]", R"(, "plot_states": ["omega_g9"])"), ".");
    CHECK_THROWS_AS(run_scenario(s, {}), Error);
}

TEST_CASE("identical configuration gives byte-identical reports")
{
    Scenario s = parse_scenario(short_scenario(R"([{"name": "hinf", "kind": "p2", "gamma_scale": 0.5},
                                                   {"name": "lav_kf", "kind": "two_stage"}])"),
                                ".");
    RunOptions o;
    o.cache_dir = cache_dir();
    o.jobs = 2;
    o.out_dir = scratch("det_a").string();
    const MetricsReport a = run_scenario(s, o);
    o.out_dir = scratch("det_b").string();
    o.jobs = 1;
    const MetricsReport b = run_scenario(s, o);
    CHECK(report_json(a) == report_json(b));
    CHECK(report_text(a) == report_text(b));
    for (const char* f : {"metrics.json", "metrics.txt", "error_norm.csv", "trajectory_seed1.csv", "trajectory_seed2.csv"})
        CHECK_MESSAGE(slurp(fs::path(o.out_dir) / f) == slurp(fs::temp_directory_path() / "daedse_test_det_a" / f), f);
    CHECK(a.at("hinf").rmse.size() == 2);
    CHECK(a.at("hinf").error_norm.size() == a.t.size());
    CHECK(a.at("hinf").rmse_mean >= 0.0);
}

TEST_CASE("parallel_for visits every index once and rethrows")
{
    std::vector<int> hits(100, 0);
    parallel_for(100, 4, [&](int i) { ++hits[i]; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK_THROWS_AS(parallel_for(10, 3, [](int i) {
                        if (i == 7) throw config_error("seven");
                    }),
                    Error);
}

TEST_CASE("svg plot survives constant and empty series")
{
    const std::string s = svg_plot("t", "y", {{"flat", {0, 1, 2}, {1, 1, 1}}, {"empty", {}, {}}});
    CHECK(s.rfind("<svg", 0) == 0);
    CHECK(s.find("nan") == std::string::npos);
    CHECK(s.find("flat") != std::string::npos);
}

TEST_CASE("RMSE over seeds has relative spread below 20% for Gaussian noise")
{
    Scenario s = parse_scenario(short_scenario(R"([{"name": "hinf", "kind": "p2", "gamma_scale": 0.5}])",
                                               R"(, "t_end": 20.0)"),
                                ".");
    s.fault.t_fault = 10.0;
    s.seeds = {1, 2, 3, 4, 5};
    RunOptions o;
    o.cache_dir = cache_dir();
    o.jobs = 5;
    const MetricsReport r = run_scenario(s, o);
    const auto& v = r.at("hinf").rmse;
    const double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
    const double mean = r.at("hinf").rmse_mean;
    CHECK((hi - lo) / mean < 0.2);
}
