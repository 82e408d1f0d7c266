#pragma once

#include "daedse/daecheck.hpp"
#include "daedse/twostage.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dse {

// One estimator in a scenario. kind: admissibility | p1 | p2 | p3 | hinf | two_stage.
struct ObserverSpec {
    std::string name;
    std::string kind = "p2";
    bool pi = false;             // augment with B_nu = B_u, Psi = psi I
    double gamma_scale = -1.0;   // Gamma = s I (Gamma_xi for PI); < 0 selects 0.5 (0.1 for PI)
    double gamma_level = 1.0;    // hinf only
    double c1 = 1.0, c2 = 1.0;   // p3
    double psi = 0.0;
    Formulation formulation = Formulation::automatic;
    KfOptions kf;                // two_stage
    bool kf_meas_var_set = false;
};

struct Scenario {
    std::string name;
    std::string case_path, companion_path;  // resolved against the scenario directory
    std::vector<int> pmus;
    std::vector<ObserverSpec> observers;
    FaultEvent fault;
    NoiseSpec noise;        // seed ignored; see seeds
    InputProfile input;
    bool known_inputs = true;  // false: observers get u0
    LoadModel load = LoadModel::constant_impedance;
    double t_end = 60.0, dt = 1e-3, T = 0.05;
    double start_frac = 0.1;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<std::string> plot_states;
    void validate() const;
};

// Strict JSON reader: unknown keys and wrong types are configuration errors.
Scenario parse_scenario(const std::string& json_text, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);
// Canonical JSON of the resolved scenario; its hash identifies a run.
std::string scenario_canonical(const Scenario& s);
std::string scenario_hash(const Scenario& s);

// sum_i sqrt((1 / k_f) sum_{k=0..k_f} e_i[k]^2) over the columns k = 0..k_f.
double rmse(const Mat& E);
Vec error_norm_series(const Mat& E);

struct ModelBundle {
    NetworkCase net;
    OperatingPoint op;
    DescriptorModel model;
};
ModelBundle load_bundle(const std::string& case_path, const std::string& companion, const std::vector<int>& pmus);

struct DesignedObserver {
    ObserverSpec spec;
    ObserverGain gain;         // empty for two_stage
    AugmentedModel augmented;  // PI only
    std::string hash;
    bool from_cache = false;
};

// Synthesizes (or loads from cache_dir/<hash>.gain) the gain for one spec.
DesignedObserver design_observer(const DescriptorModel& m, const ObserverSpec& spec, const std::string& cache_dir);

struct ObserverMetrics {
    std::string name, kind, formulation;
    double kappa = NAN, gamma = NAN;
    std::vector<double> rmse;             // per seed
    std::vector<double> mean_error_norm;  // per seed, time average of ||e||
    std::vector<double> error_norm;       // first seed, k_f + 1 samples
    double rmse_mean = 0.0, error_norm_mean = 0.0;
    double synth_seconds = 0.0;
    std::vector<double> run_seconds;  // per seed
    bool from_cache = false;
    std::vector<std::string> notes;
};

struct MetricsReport {
    std::string scenario, hash;
    std::vector<int> pmus;
    std::vector<std::uint64_t> seeds;
    std::string pencil;  // structural summary
    std::vector<double> t;
    std::vector<ObserverMetrics> observers;
    double plant_max_residual = 0.0;
    std::vector<double> plant_seconds;
    std::vector<std::string> events;

    const ObserverMetrics& at(const std::string& name) const;
};

struct RunOptions {
    std::string out_dir;    // empty: no files
    std::string cache_dir;  // empty: no gain cache
    int jobs = 1;
    bool trajectories = true;  // CSV per seed
};

MetricsReport run_scenario(const Scenario& s, const RunOptions& opt);

// Metrics without wall times, so identical configurations give identical text.
std::string report_text(const MetricsReport& r);
std::string report_json(const MetricsReport& r);
std::string timing_json(const MetricsReport& r);

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
};
// Self-contained SVG line chart.
std::string svg_plot(const std::string& title, const std::string& ylabel, const std::vector<PlotSeries>& series);

// Variants of a base scenario differing in PMU set; run as independent jobs.
struct SweepVariant {
    std::string name;
    std::vector<int> pmus;
};
struct SweepSpec {
    Scenario base;
    std::vector<SweepVariant> variants;
};
SweepSpec load_sweep(const std::string& path);
std::vector<MetricsReport> run_sweep(const SweepSpec& s, const RunOptions& opt);
std::string sweep_table(const SweepSpec& s, const std::vector<MetricsReport>& reports);

// Runs fn(i) for i in [0, n) on up to jobs threads; rethrows the first error.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace dse
