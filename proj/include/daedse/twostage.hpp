#pragma once

#include "daedse/sim.hpp"

namespace dse {

// min sum |r|  s.t.  y = C v + r, as an LP over (v+, v-, r+, r-) >= 0.
struct LavSolution {
    Vec v, r;
    double objective = 0.0;
    bool optimal = false;
    bool unique = true;  // false when C lacks full column rank (minimum-norm v returned)
    int pivots = 0;
    std::string status;
};

LavSolution solve_lav(const Mat& C, const Vec& y, int max_pivots = 0);

// Forward Euler on the machine rows with bus voltages as exogenous input:
//   x[k+1] = F x[k] + Gv v[k] + Gu du[k],  F = I + T E_D^-1 A1.
// The network rows 0 = A3 x + A4 v give the pseudo-measurement z = -A4 v = A3 x.
struct DiscreteSystem {
    Mat F, Gv, Gu;
    Mat H, Hv;  // A3, A4
    double T = 0.0;
};

DiscreteSystem discretize_forward_euler(const DescriptorModel& m, double T);

struct KfOptions {
    double T = 0.05;
    Vec q;                  // 4G process variances per step; empty = T dt var from the plant noise
    double q_floor = 1e-8;  // added to every process variance
    double meas_var = 0.0;  // PMU noise variance, propagated through the LAV equality
    double r_floor = 1e-8;
    Vec p0;                 // 4G initial variances; empty = (0.1 x0)^2, at least 1e-6
};

struct KfState {
    Vec x;  // 4G deviation
    Mat P;
};

// One update with z = -A4 v and the predict to the next sample.
void kf_update(const DiscreteSystem& d, const Mat& R, KfState& s, const Vec& z);
void kf_predict(const DiscreteSystem& d, const Mat& Q, KfState& s, const Vec& v, const Vec& du);

// LAV then KF at period T on the plant's measurement stream. The track is
// reported on the plant recording grid, holding the latest estimate.
EstimateTrack run_two_stage(const std::string& name, const DescriptorModel& m, const PlantRun& plant,
                            const std::function<Vec(double)>& u_obs, const Vec& xhat0_dev, const KfOptions& opt);

}  // namespace dse
