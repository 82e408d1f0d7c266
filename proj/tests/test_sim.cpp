#include "doctest.h"
#include "daedse/powerflow.hpp"
#include "daedse/sim.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <numeric>

using namespace dse;

namespace {

struct Case9 {
    NetworkCase net = load_case(data_path("case9.m"));
    OperatingPoint op = compute_operating_point(net);
    DescriptorModel m = build_model(net, op, {4, 6});
};

const Case9& case9()
{
    static Case9 c;
    return c;
}

PlantScenario scenario(double t_end)
{
    const Case9& c = case9();
    PlantScenario sc;
    sc.net = &c.net;
    sc.op = &c.op;
    sc.model = &c.m;
    sc.opt.t_end = t_end;
    return sc;
}

FaultEvent fault9()
{
    FaultEvent f;
    f.enabled = true;
    f.bus = 4;
    f.from = 4;
    f.to = 5;
    f.t_fault = 1.0;
    return f;
}

Vec kicked_start(double dd)
{
    Vec x = case9().m.x0.head(12);
    x(4) += dd;
    return x;
}

double max_dev(const Mat& X, const Vec& x0)
{
    double d = 0.0;
    for (Eigen::Index k = 0; k < X.cols(); ++k) d = std::max(d, (X.col(k) - x0).cwiseAbs().maxCoeff());
    return d;
}

const ObserverGain& p2_gain()
{
    static ObserverGain g = [] {
        SynthesisProblem p;
        p.kind = ProblemKind::p2;
        p.formulation = Formulation::reduced;
        p.Gamma = 0.5 * Mat::Identity(30, 30);
        return synthesize(case9().m, p);
    }();
    return g;
}

const AugmentedModel& pi_model()
{
    static AugmentedModel a = augment_unknown_input(case9().m, case9().m.B_u, Mat::Zero(6, 6));
    return a;
}

const ObserverGain& pi_gain()
{
    static ObserverGain g = [] {
        SynthesisProblem p;
        p.kind = ProblemKind::p1;
        p.formulation = Formulation::reduced;
        return synth_pi(pi_model(), p);
    }();
    return g;
}

}  // namespace

TEST_CASE("equilibrium is preserved over 60 s")
{
    const PlantRun r = simulate_plant(scenario(60.0));
    CHECK(r.steps == 60000);
    CHECK(max_dev(r.X, case9().m.x0) <= 1e-8);
    CHECK(r.max_residual <= 1e-8);
    CHECK(r.events.empty());
    for (Eigen::Index k = 0; k < r.U.cols(); ++k) CHECK((r.U.col(k) - case9().m.u0).norm() == 0.0);
}

TEST_CASE("fault scenario keeps the algebraic residual and logs three topology changes")
{
    PlantScenario sc = scenario(12.0);
    sc.fault = fault9();
    sc.input.kind = InputProfile::regulated;
    const PlantRun r = simulate_plant(sc);
    CHECK(r.max_residual <= 1e-8);
    REQUIRE(r.events.size() == 3);
    CHECK(r.events[0].find("t=1.000000") == 0);
    CHECK(r.events[1].find("t=1.050000") == 0);
    CHECK(r.events[2].find("t=1.200000") == 0);
    CHECK(std::is_sorted(r.t.begin(), r.t.end()));
    CHECK(std::adjacent_find(r.t.begin(), r.t.end()) == r.t.end());
    // something happened, and frequency is restored by the regulated inputs
    CHECK(max_dev(r.X, case9().m.x0) > 1e-2);
    const double w0 = case9().op.omega0;
    for (int g = 0; g < 3; ++g) CHECK(std::abs(r.X(4 * g + 1, r.X.cols() - 1) - w0) < 2e-2);
}

TEST_CASE("bolted fault on a line that does not exist is a configuration error")
{
    PlantScenario sc = scenario(1.0);
    sc.fault = fault9();
    sc.fault.to = 7;
    CHECK_THROWS_AS(simulate_plant(sc), Error);
    sc.fault = fault9();
    sc.fault.t_clear_remote = 0.01;
    CHECK_THROWS_AS(simulate_plant(sc), Error);
    sc.fault = fault9();
    sc.fault.bus = 6;
    CHECK_THROWS_AS(simulate_plant(sc), Error);
}

TEST_CASE("invalid noise specs are rejected")
{
    PlantScenario sc = scenario(1.0);
    sc.noise.measurement = MeasurementNoise::cauchy;
    sc.noise.b = 0.0;
    CHECK_THROWS_AS(simulate_plant(sc), Error);
    sc.noise = NoiseSpec();
    sc.noise.measurement = MeasurementNoise::laplace;
    sc.noise.s = -1.0;
    CHECK_THROWS_AS(simulate_plant(sc), Error);
    sc.noise = NoiseSpec();
    sc.noise.meas_var = -1.0;
    CHECK_THROWS_AS(simulate_plant(sc), Error);
}

TEST_CASE("trapezoidal scheme is second order")
{
    auto end_state = [](double dt) {
        PlantScenario sc = scenario(1.0);
        sc.opt.dt = dt;
        sc.opt.t_rec = 1.0;
        sc.opt.x_start = kicked_start(0.2);
        const PlantRun r = simulate_plant(sc);
        return Vec(r.X.col(r.X.cols() - 1));
    };
    const Vec ref = end_state(2.5e-4);
    const double e1 = (end_state(4e-3) - ref).norm();
    const double e2 = (end_state(2e-3) - ref).norm();
    const double e3 = (end_state(1e-3) - ref).norm();
    CHECK(e1 > 0.0);
    CHECK(e1 / e2 > 3.0);
    CHECK(e2 / e3 > 3.0);
}

TEST_CASE("scalar linear DAE step matches the trapezoidal factor")
{
    Mat E = Mat::Zero(2, 2), A(2, 2);
    E(0, 0) = 1.0;
    A << -1.0, 0.0, 1.0, -2.0;
    const double h = 0.1;
    const LinearDaeStepper st(E, A, h);
    Vec x(2);
    x << 1.0, 0.0;
    const Vec b = Vec::Zero(2);
    const Vec x1 = st.step(x, b, b);
    const double f = (1.0 - h / 2) / (1.0 + h / 2);
    CHECK(x1(0) == doctest::Approx(f).epsilon(1e-14));
    CHECK(x1(1) == doctest::Approx(f / 2).epsilon(1e-14));
    const Vec xc = st.consistent(x, b);
    CHECK(xc(1) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("reruns are bit-identical per seed")
{
    PlantScenario sc = scenario(3.0);
    sc.opt.x_start = kicked_start(0.05);
    sc.noise.process = ProcessNoise::gaussian;
    sc.noise.measurement = MeasurementNoise::gaussian;
    sc.noise.meas_var = 1e-4;
    sc.noise.seed = 3;
    const PlantRun a = simulate_plant(sc);
    const PlantRun b = simulate_plant(sc);
    CHECK(a.X == b.X);
    CHECK(a.Y == b.Y);
    CHECK(a.stream.Y == b.stream.Y);
    CHECK(a.process_var == b.process_var);
    CHECK(a.process_var.maxCoeff() > 0.0);
    sc.noise.seed = 4;
    const PlantRun c = simulate_plant(sc);
    CHECK(a.Y != c.Y);
}

TEST_CASE("named substreams are independent and repeatable")
{
    auto a = substream(1, "process");
    auto b = substream(1, "process");
    auto c = substream(1, "measurement");
    auto d = substream(2, "process");
    const auto va = a();
    CHECK(va == b());
    CHECK(va != c());
    CHECK(va != d());
}

TEST_CASE("inverse-transform noise formulas")
{
    CHECK(cauchy_sample(0.0, 5e-4, 0.5) == 0.0);
    CHECK(cauchy_sample(0.3, 5e-4, 0.5) == 0.3);
    CHECK(cauchy_sample(0.0, 1.0, 0.75) == doctest::Approx(1.0));
    CHECK(laplace_sample(0.0, 1e-3, 0.0) == 0.0);
    CHECK(std::abs(laplace_sample(0.0, 1e-3, 1e-12)) < 1e-14);
    CHECK(laplace_sample(0.0, 1.0, 0.25) == doctest::Approx(-std::log(0.5)).epsilon(1e-14));
    CHECK(laplace_sample(0.0, 1.0, -0.25) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
}

TEST_CASE("Laplace moments over 1e6 samples")
{
    NoiseSpec ns;
    ns.measurement = MeasurementNoise::laplace;
    ns.s = 1e-3;
    auto rng = substream(11, "laplace");
    const int n = 1000000;
    const Vec v = measurement_noise(ns, n, rng);
    CHECK(v.allFinite());
    const double mean = v.mean();
    const double sd_mean = std::sqrt(2.0) * ns.s / std::sqrt(double(n));
    CHECK(std::abs(mean) < 3.0 * sd_mean);
    const double mad = v.cwiseAbs().mean();
    CHECK(std::abs(mad - ns.s) < 0.01 * ns.s);
}

TEST_CASE("Cauchy samples have median a and quartiles a -/+ b")
{
    NoiseSpec ns;
    ns.measurement = MeasurementNoise::cauchy;
    ns.a = 0.2;
    ns.b = 5e-4;
    auto rng = substream(5, "cauchy");
    const Vec v = measurement_noise(ns, 200001, rng);
    std::vector<double> s(v.data(), v.data() + v.size());
    std::sort(s.begin(), s.end());
    const double q1 = s[s.size() / 4], med = s[s.size() / 2], q3 = s[3 * s.size() / 4];
    CHECK(std::abs(med - ns.a) < 0.02 * ns.b);
    CHECK(std::abs((q1 - ns.a) + ns.b) < 0.03 * ns.b);
    CHECK(std::abs((q3 - ns.a) - ns.b) < 0.03 * ns.b);
}

TEST_CASE("observer started at the operating point stays there")
{
    const Case9& c = case9();
    const PlantRun r = simulate_plant(scenario(10.0));
    const auto u0 = [&](double) { return c.m.u0; };
    const EstimateTrack tr = simulate_observer("hinf", c.m, p2_gain(), c.m, r, u0, Vec::Zero(30), SimOptions());
    CHECK(max_dev(tr.X, c.m.x0) <= 1e-8);
}

TEST_CASE("observer error decays from a randomized start without noise")
{
    const Case9& c = case9();
    const PlantRun r = simulate_plant(scenario(40.0));
    auto rng = substream(1, "observer start");
    const Vec d0 = random_initial_deviation(c.m, rng);
    for (int g = 0; g < 3; ++g) CHECK(d0(4 * g + 1) == 0.0);
    CHECK(d0.cwiseAbs().maxCoeff() <= 0.1 * c.m.x0.cwiseAbs().maxCoeff());
    const auto u0 = [&](double) { return c.m.u0; };
    const EstimateTrack tr = simulate_observer("hinf", c.m, p2_gain(), c.m, r, u0, d0, SimOptions());
    auto err = [&](double t) {
        const auto k = std::lower_bound(r.t.begin(), r.t.end(), t - 1e-9) - r.t.begin();
        return (tr.X.col(k) - r.X.col(k)).norm();
    };
    const double e0 = d0.norm();
    double prev = err(5.0);
    CHECK(prev < e0);
    for (double t : {10.0, 20.0, 30.0, 40.0}) {
        const double e = err(t);
        CHECK(e <= prev);
        prev = e;
    }
    CHECK(prev < 1e-3 * e0);
}

TEST_CASE("uncertified gains are refused")
{
    const Case9& c = case9();
    PlantScenario sc = scenario(1.0);
    const PlantRun r = simulate_plant(sc);
    ObserverGain g = p2_gain();
    g.cert.stable = false;
    const auto u0 = [&](double) { return c.m.u0; };
    CHECK_THROWS_AS(simulate_observer("bad", c.m, g, c.m, r, u0, Vec::Zero(30), SimOptions()), Error);
}

TEST_CASE("linear plant and observer obey the error dynamics")
{
    const Case9& c = case9();
    PlantScenario sc = scenario(10.0);
    sc.opt.linear_plant = true;
    sc.opt.x_start = kicked_start(0.05);
    const PlantRun r = simulate_plant(sc);
    const auto u0 = [&](double) { return c.m.u0; };
    auto rng = substream(2, "observer start");
    const Vec d0 = random_initial_deviation(c.m, rng);
    const ObserverGain& g = p2_gain();
    const EstimateTrack tr = simulate_observer("hinf", c.m, g, c.m, r, u0, d0, sc.opt);

    // E e' = (A - LC) e integrated on its own
    const LinearDaeStepper st(c.m.E, c.m.A - g.L * c.m.C, sc.opt.dt);
    Vec e = d0 - (r.X.col(0) - c.m.x0);
    const Vec zero = Vec::Zero(30);
    const int every = int(std::llround(sc.opt.t_rec / sc.opt.dt));
    double worst = 0.0;
    for (int k = 0; k < int(std::llround(sc.opt.t_end / sc.opt.dt)); ++k) {
        e = st.step(e, zero, zero);
        if ((k + 1) % every == 0) {
            const int j = (k + 1) / every;
            worst = std::max(worst, (tr.X.col(j) - r.X.col(j) - e).cwiseAbs().maxCoeff());
        }
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("undisturbed plant settles from a perturbed start")
{
    PlantScenario sc = scenario(60.0);
    sc.opt.x_start = kicked_start(0.1);
    sc.opt.t_rec = 1.0;
    const PlantRun r = simulate_plant(sc);
    const Eigen::Index K = r.X.cols();
    const double early = (r.X.col(2) - r.X.col(1)).norm();
    const double late = (r.X.col(K - 1) - r.X.col(K - 2)).norm();
    CHECK(early > 0.0);
    CHECK(late < 0.05 * early);
    CHECK(r.max_residual <= 1e-8);
}

TEST_CASE("PI observer recovers an unknown input step")
{
    const Case9& c = case9();
    const AugmentedModel& a = pi_model();
    REQUIRE(pi_gain().cert.pass());
    Vec step = Vec::Zero(6);
    step(0) = 0.02 * c.m.u0(0);
    step(3) = -0.02 * c.m.u0(3);
    const auto u0 = [&](double) { return c.m.u0; };
    const double tol = 0.05 * c.m.u0.cwiseAbs().maxCoeff();
    for (bool linear : {true, false}) {
        CAPTURE(linear);
        PlantScenario sc = scenario(40.0);
        sc.opt.linear_plant = linear;
        sc.input.kind = InputProfile::regulated;
        sc.input.step = step;
        sc.input.t_step = 2.0;
        const PlantRun r = simulate_plant(sc);
        const EstimateTrack tr = simulate_observer("pi", a, pi_gain(), c.m, r, u0, Vec::Zero(a.n()), sc.opt);
        REQUIRE(tr.Nu.rows() == 6);
        const Vec nu = tr.Nu.col(tr.Nu.cols() - 1);
        const Vec du = r.U.col(r.U.cols() - 1) - c.m.u0;
        CHECK(du.cwiseAbs().maxCoeff() > 0.2 * step.cwiseAbs().maxCoeff());
        CHECK((nu - du).cwiseAbs().maxCoeff() < tol);
    }
}

TEST_CASE("cosimulation with no estimators is a plant-only run")
{
    const CosimResult r = cosimulate(scenario(1.0), {});
    CHECK(r.estimates.empty());
    CHECK(r.plant.steps == 1000);
}

TEST_CASE("cosimulation runs estimators and exports aligned columns")
{
    const Case9& c = case9();
    PlantScenario sc = scenario(2.0);
    sc.noise.measurement = MeasurementNoise::gaussian;
    sc.noise.meas_var = 1e-4;
    const auto u0 = [&](double) { return c.m.u0; };
    std::vector<Estimator> est;
    for (const char* name : {"a", "b"})
        est.push_back({name, [&, name](const PlantRun& p) {
                           return simulate_observer(name, c.m, p2_gain(), c.m, p, u0, Vec::Zero(30), sc.opt);
                       }});
    const CosimResult r1 = cosimulate(sc, est);
    const CosimResult r2 = cosimulate(sc, est);
    REQUIRE(r1.estimates.size() == 2);
    CHECK(r1.estimates[0].name == "a");
    CHECK(r1.estimates[0].X == r1.estimates[1].X);
    CHECK(r1.estimates[0].X == r2.estimates[0].X);

    std::vector<std::string> names(30);
    for (int i = 0; i < 30; ++i) names[i] = "x" + std::to_string(i + 1);
    const std::string csv = trajectory_csv(r1, names);
    const std::string header = csv.substr(0, csv.find('\n'));
    CHECK(std::count(header.begin(), header.end(), ',') == 30 + c.m.p() + 2 * 30);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == int(r1.plant.t.size()) + 1);
}
