#pragma once

#include "daedse/linmodel.hpp"
#include "daedse/synth.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dse {

// Three-phase fault on a line. Bus ids are original ids; clearing times are
// offsets from t_fault.
struct FaultEvent {
    bool enabled = false;
    int bus = 0;
    int from = 0, to = 0;
    double t_fault = 0.0;
    double t_clear_near = 0.05;
    double t_clear_remote = 0.2;
    cplx admittance{1e4, 0.0};
    void validate() const;
};

enum class ProcessNoise { none, gaussian };
// Load representation in the nonlinear plant. constant_impedance fixes each
// load admittance at its operating-point voltage.
enum class LoadModel { constant_impedance, constant_power };
enum class MeasurementNoise { none, gaussian, cauchy, laplace };

struct NoiseSpec {
    ProcessNoise process = ProcessNoise::none;
    Vec process_var;             // 4G; empty = (scale * max |dx|)^2 from a noise-free rehearsal
    double process_scale = 0.1;
    MeasurementNoise measurement = MeasurementNoise::none;
    double meas_var = 0.0;        // gaussian
    double a = 0.0, b = 5e-4;     // cauchy location, scale
    double m = 0.0, s = 1e-3;     // laplace location, scale
    std::uint64_t seed = 1;
    void validate() const;
};

// Plant inputs u = (T_M, E_fd) per generator, around u_ref = u0 (+ step for
// t >= t_step). "steady" applies u_ref. "regulated" adds sampled PI laws,
// held over each step:
//   T_M  = T_M,ref - max(T_M0, 0.1) (kp df + ki int df),  df = (w - w0) / w0
//   E_fd = E_fd,ref - (ka dV + kai int dV),               dV = |V_t| - |V_t0|
struct InputProfile {
    enum Kind { steady, regulated } kind = steady;
    double kp = 20.0, ki = 50.0;
    double ka = 20.0, kai = 5.0;
    Vec step;  // 2G; empty = none
    double t_step = 0.0;
};

struct SimOptions {
    double t_end = 60.0;
    double dt = 1e-3;
    double dt_obs = 0.0;    // <= 0 means dt
    double t_rec = 0.05;    // recording period, multiple of dt
    double newton_tol = 1e-10;
    int newton_max = 12;
    double min_dt = 1e-6;
    LoadModel load = LoadModel::constant_impedance;
    double low_voltage = 0.7;  // constant-power loads turn to impedance below this |V|
    bool linear_plant = false;
    Vec x_start;  // absolute machine states at t = 0; empty = operating point
};

// Measurements sampled every dt from t = 0, held between samples.
struct MeasurementStream {
    double dt = 0.0;
    Mat Y;  // p x samples, absolute
    Vec at(double t) const;
};

struct PlantRun {
    std::vector<double> t;
    Mat X;   // (4G + 2N) x K, layout order, absolute
    Mat IG;  // 2G x K (empty for the linear plant)
    Mat U;   // 2G x K
    Mat Y;   // p x K
    MeasurementStream stream;
    MeasurementStream inputs;  // u applied over each step, 2G x steps+1
    Vec process_var;
    std::vector<std::string> events;
    double max_residual = 0.0;  // stator and |V| x current-balance residual over accepted steps
    int steps = 0, newton_iterations = 0, factorizations = 0, halvings = 0;
    double seconds = 0.0;
};

struct PlantScenario {
    const NetworkCase* net = nullptr;
    const OperatingPoint* op = nullptr;
    const DescriptorModel* model = nullptr;  // supplies C and the linear plant
    FaultEvent fault;
    NoiseSpec noise;
    InputProfile input;
    SimOptions opt;
};

PlantRun simulate_plant(const PlantScenario& sc);

struct EstimateTrack {
    std::string name;
    Mat X;   // n x K, absolute
    Mat Nu;  // v x K integral states (PI observers)
    double seconds = 0.0;
    std::vector<std::string> notes;
};

// Observer E xh' = A xh + B_u (u - u0) + L (y - y0 - C xh) in deviation
// coordinates on the recording grid of the plant run. sys may be an
// augmented model; the first n_base rows are the plant state.
EstimateTrack simulate_observer(const std::string& name, const DescriptorSystem& sys, const ObserverGain& gain,
                                const DescriptorModel& model, const PlantRun& plant,
                                const std::function<Vec(double)>& u_obs, const Vec& xhat0_dev,
                                const SimOptions& opt);

// Deviation for an observer start: each state of the operating point scaled by
// a uniform factor in [-frac, frac]; rotor speeds start at omega0.
Vec random_initial_deviation(const DescriptorModel& m, std::mt19937_64& rng, double frac = 0.1);

// Independent generator per named stream, so adding consumers leaves the
// other streams untouched.
std::mt19937_64 substream(std::uint64_t seed, const std::string& name);

double cauchy_sample(double a, double b, double R2);
double laplace_sample(double m, double s, double R1);
// Draws per spec.measurement; uniform draws in the open intervals used by the
// inverse transforms.
Vec measurement_noise(const NoiseSpec& spec, int p, std::mt19937_64& rng);

// Trapezoidal stepper for E x' = A x + b(t). Differential rows (range of E)
// use the averaged forcing, algebraic rows are enforced at the step end.
class LinearDaeStepper {
public:
    LinearDaeStepper(const Mat& E, const Mat& A, double h);
    // b_avg: forcing averaged over the step, b_end: forcing at the step end.
    Vec step(const Vec& x, const Vec& b_avg, const Vec& b_end) const;
    // Consistent algebraic part for given differential coordinates.
    Vec consistent(const Vec& x, const Vec& b) const;
    double h() const { return h_; }

private:
    Mat U1t_, U2t_, E1_, A1_, A2_;
    Eigen::PartialPivLU<Mat> lu_, lu0_;
    double h_ = 0.0;
};

struct Estimator {
    std::string name;
    std::function<EstimateTrack(const PlantRun&)> run;
};

struct CosimResult {
    PlantRun plant;
    std::vector<EstimateTrack> estimates;
};

CosimResult cosimulate(const PlantScenario& sc, const std::vector<Estimator>& estimators);

// Columns: t, plant states, measurements, then per estimate its states.
std::string trajectory_csv(const CosimResult& r, const std::vector<std::string>& state_names);

}  // namespace dse
