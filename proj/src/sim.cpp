#include "daedse/sim.hpp"
#include "daedse/equations.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace dse {

void FaultEvent::validate() const
{
    if (!enabled) return;
    if (!(t_clear_near > 0.0) || t_clear_remote < t_clear_near)
        throw config_error("fault clearing times must satisfy 0 < near <= remote");
    if (t_fault < 0.0) throw config_error("fault time must be non-negative");
    if (std::abs(admittance) == 0.0) throw config_error("fault admittance must be nonzero");
}

void NoiseSpec::validate() const
{
    if (process_var.size() > 0 && process_var.minCoeff() < 0.0) throw config_error("process variances must be >= 0");
    if (process_scale < 0.0) throw config_error("process noise scale must be >= 0");
    if (meas_var < 0.0) throw config_error("measurement variance must be >= 0");
    if (measurement == MeasurementNoise::cauchy && !(b > 0.0)) throw config_error("cauchy scale b must be > 0");
    if (measurement == MeasurementNoise::laplace && !(s > 0.0)) throw config_error("laplace scale s must be > 0");
}

Vec MeasurementStream::at(double t) const
{
    if (Y.cols() == 0) throw config_error("empty measurement stream");
    const Eigen::Index k = std::clamp<Eigen::Index>(Eigen::Index(std::floor(t / dt + 1e-9)), 0, Y.cols() - 1);
    return Y.col(k);
}

std::mt19937_64 substream(std::uint64_t seed, const std::string& name)
{
    const std::uint64_t h = fnv1a(name);
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(h), std::uint32_t(h >> 32)};
    return std::mt19937_64(seq);
}

double cauchy_sample(double a, double b, double R2) { return a + b * std::tan(M_PI * (R2 - 0.5)); }

double laplace_sample(double m, double s, double R1)
{
    const double sg = (R1 > 0) - (R1 < 0);
    return m - s * sg * std::log(1.0 - 2.0 * std::abs(R1));
}

namespace {

// Uniform on (0, 1).
double open_unit(std::mt19937_64& rng)
{
    for (;;) {
        const double u = std::generate_canonical<double, 53>(rng);
        if (u > 0.0) return u;
    }
}

}  // namespace

Vec measurement_noise(const NoiseSpec& spec, int p, std::mt19937_64& rng)
{
    Vec out = Vec::Zero(p);
    switch (spec.measurement) {
    case MeasurementNoise::none:
        break;
    case MeasurementNoise::gaussian: {
        std::normal_distribution<double> nd;
        const double sd = std::sqrt(spec.meas_var);
        for (int i = 0; i < p; ++i) out(i) = sd * nd(rng);
        break;
    }
    case MeasurementNoise::cauchy:
        for (int i = 0; i < p; ++i) out(i) = cauchy_sample(spec.a, spec.b, open_unit(rng));
        break;
    case MeasurementNoise::laplace:
        // R1 = 0.5 - u lies in (-0.5, 0.5); the endpoint 0.5 would give an infinite sample
        for (int i = 0; i < p; ++i) out(i) = laplace_sample(spec.m, spec.s, 0.5 - open_unit(rng));
        break;
    }
    return out;
}

Vec random_initial_deviation(const DescriptorModel& m, std::mt19937_64& rng, double frac)
{
    Vec d(m.n());
    for (int i = 0; i < m.n(); ++i) {
        const double u = 2.0 * std::generate_canonical<double, 53>(rng) - 1.0;
        d(i) = frac * u * m.x0(i);
    }
    for (int g = 0; g < m.G; ++g) d(4 * g + 1) = 0.0;
    return d;
}

LinearDaeStepper::LinearDaeStepper(const Mat& E, const Mat& A, double h) : h_(h)
{
    const int n = int(E.rows());
    Eigen::JacobiSVD<Mat> svd(E, Eigen::ComputeFullU);
    const Vec& sv = svd.singularValues();
    int r = 0;
    const double tol = std::max(1, n) * 1e-13 * (sv.size() ? sv(0) : 0.0);
    while (r < sv.size() && sv(r) > tol) ++r;
    U1t_ = svd.matrixU().leftCols(r).transpose();
    U2t_ = svd.matrixU().rightCols(n - r).transpose();
    E1_ = U1t_ * E;
    A1_ = U1t_ * A;
    A2_ = U2t_ * A;
    Mat M(n, n);
    M << E1_ - 0.5 * h * A1_, A2_;
    lu_.compute(M);
    Mat M0(n, n);
    M0 << E1_, A2_;
    lu0_.compute(M0);
}

Vec LinearDaeStepper::step(const Vec& x, const Vec& b_avg, const Vec& b_end) const
{
    Vec rhs(x.size());
    rhs << E1_ * x + 0.5 * h_ * (A1_ * x) + h_ * (U1t_ * b_avg), -(U2t_ * b_end);
    return lu_.solve(rhs);
}

Vec LinearDaeStepper::consistent(const Vec& x, const Vec& b) const
{
    Vec rhs(x.size());
    rhs << E1_ * x, -(U2t_ * b);
    return lu0_.solve(rhs);
}

namespace {

struct Topology {
    double t;
    std::string label;
    CMat Y;
};

int find_branch(const NetworkCase& c, int a, int b)
{
    for (size_t k = 0; k < c.branches.size(); ++k) {
        const auto& br = c.branches[k];
        if (!br.in_service) continue;
        if ((br.from == a && br.to == b) || (br.from == b && br.to == a)) return int(k);
    }
    return -1;
}

std::vector<Topology> fault_sequence(const NetworkCase& c, const FaultEvent& f)
{
    std::vector<Topology> seq;
    if (!f.enabled) return seq;
    f.validate();
    const int bus = c.internal_id(f.bus);
    const int a = c.internal_id(f.from), b = c.internal_id(f.to);
    if (bus != a && bus != b) throw config_error("faulted bus must be a terminal of the faulted line");
    const int k = find_branch(c, a, b);
    if (k < 0) throw config_error("faulted line not found in service");
    const int remote = bus == a ? b : a;
    const std::string line = std::to_string(f.from) + "-" + std::to_string(f.to);

    NetworkCase faulted = c;
    faulted.buses[bus - 1].shunt += f.admittance;
    NetworkCase near = c;
    near.branches[k].in_service = false;
    near.buses[remote - 1].shunt += cplx(0.0, c.branches[k].b / 2.0);
    NetworkCase cleared = c;
    cleared.branches[k].in_service = false;

    seq.push_back({f.t_fault, "fault on at bus " + std::to_string(f.bus) + " (line " + line + ")",
                   build_admittances(faulted).y_bus});
    seq.push_back({f.t_fault + f.t_clear_near, "line " + line + " opened at bus " + std::to_string(f.bus) +
                   ", fault cleared; charging kept at bus " + std::to_string(c.original_id(remote)),
                   build_admittances(near).y_bus});
    seq.push_back({f.t_fault + f.t_clear_remote,
                   "line " + line + " opened at bus " + std::to_string(c.original_id(remote)),
                   build_admittances(cleared).y_bus});
    return seq;
}

std::string fmt_time(double t)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "t=%.6f", t);
    return buf;
}

class InputRegulator {
public:
    InputRegulator(const InputProfile& p, const Vec& u0, const Vec& v0, double w0)
        : p_(p), u0_(u0), w0_(w0), G_(int(u0.size() / 2))
    {
        if (p.step.size() && p.step.size() != u0.size()) throw config_error("input step must have 2G entries");
        vt0_ = Vec(G_);
        for (int g = 0; g < G_; ++g) vt0_(g) = std::hypot(v0(2 * g), v0(2 * g + 1));
        zf_ = Vec::Zero(G_);
        zv_ = Vec::Zero(G_);
    }

    // Input for the step [t, t + h] starting at state (x, v).
    Vec next(double t, const Vec& x, const Vec& v, double h)
    {
        Vec u = u0_;
        if (p_.step.size() && t >= p_.t_step - 1e-12) u += p_.step;
        if (p_.kind == InputProfile::steady) return u;
        for (int g = 0; g < G_; ++g) {
            const double df = (x(4 * g + 1) - w0_) / w0_;
            const double dv = std::hypot(v(2 * g), v(2 * g + 1)) - vt0_(g);
            u(2 * g) -= std::max(u0_(2 * g), 0.1) * (p_.kp * df + p_.ki * zf_(g));
            u(2 * g + 1) -= p_.ka * dv + p_.kai * zv_(g);
            zf_(g) += h * df;
            zv_(g) += h * dv;
        }
        return u;
    }

private:
    InputProfile p_;
    Vec u0_, vt0_, zf_, zv_;
    double w0_;
    int G_;
};

// Nonlinear plant with the network written as current balance, which has the
// same solutions as the power balance for V != 0 but no spurious root at V = 0.
class Plant {
public:
    Plant(const NetworkCase& c, const OperatingPoint& op, LoadModel load, double low_voltage)
        : eq_(c, build_admittances(c).y_bus), lay_(eq_.layout()), PL_(eq_.pl_of(op)), QL_(eq_.ql_of(op))
    {
        eq_.low_voltage = low_voltage;
        if (load == LoadModel::constant_impedance) {
            const Vec v0 = eq_.v_of(op.v0);
            fixed_ = Vec(lay_.N);
            for (int k = 0; k < lay_.N; ++k) fixed_(k) = v0(2 * k) * v0(2 * k) + v0(2 * k + 1) * v0(2 * k + 1);
        }
        ed_ = eq_.ed_diagonal();
        nx_ = lay_.nx();
        ni_ = 2 * lay_.G;
        nv_ = lay_.nv();
    }

    NetworkEquations& eq() { return eq_; }
    int nx() const { return nx_; }
    int ni() const { return ni_; }
    int nv() const { return nv_; }
    int nz() const { return nx_ + ni_ + nv_; }
    const Vec& ed() const { return ed_; }

    Vec current_balance(const Vec& x, const Vec& ig, const Vec& v) const
    {
        const int N = lay_.N;
        CVec V(N);
        for (int k = 0; k < N; ++k) V(k) = cplx(v(2 * k), v(2 * k + 1));
        // Y in pair order
        const CMat& Y = eq_.ybus();
        Vec out(2 * N);
        for (int k = 0; k < N; ++k) {
            const int b = lay_.v_bus[k] - 1;
            cplx I = 0.0;
            for (int j = 0; j < N; ++j) I += Y(b, lay_.v_bus[j] - 1) * V(j);
            const double vr = v(2 * k), vi = v(2 * k + 1);
            const double d = fixed_.size() ? fixed_(k) : std::max(vr * vr + vi * vi, low2());
            const double nr = PL_(k) * vr + QL_(k) * vi, ni = PL_(k) * vi - QL_(k) * vr;
            out(2 * k) = -I.real() - nr / d;
            out(2 * k + 1) = -I.imag() - ni / d;
        }
        for (int g = 0; g < lay_.G; ++g) {
            const double dl = x(4 * g), id = ig(2 * g), iq = ig(2 * g + 1);
            const double s = std::sin(dl), c = std::cos(dl);
            out(2 * g) += id * s + iq * c;
            out(2 * g + 1) += iq * s - id * c;
        }
        return out;
    }

    void current_jacobian(const Vec& x, const Vec& ig, const Vec& v, Mat& cx, Mat& ci, Mat& cv) const
    {
        const int N = lay_.N, G = lay_.G;
        cx = Mat::Zero(2 * N, nx_);
        ci = Mat::Zero(2 * N, ni_);
        cv = Mat::Zero(2 * N, 2 * N);
        const CMat& Y = eq_.ybus();
        for (int k = 0; k < N; ++k) {
            const int b = lay_.v_bus[k] - 1;
            for (int j = 0; j < N; ++j) {
                const cplx y = Y(b, lay_.v_bus[j] - 1);
                cv(2 * k, 2 * j) = -y.real();
                cv(2 * k, 2 * j + 1) = y.imag();
                cv(2 * k + 1, 2 * j) = -y.imag();
                cv(2 * k + 1, 2 * j + 1) = -y.real();
            }
            const double vr = v(2 * k), vi = v(2 * k + 1), P = PL_(k), Q = QL_(k);
            const double m2 = vr * vr + vi * vi;
            const double nr = P * vr + Q * vi, ni = P * vi - Q * vr;
            if (fixed_.size()) {
                const double l2 = fixed_(k);
                cv(2 * k, 2 * k) -= P / l2;
                cv(2 * k, 2 * k + 1) -= Q / l2;
                cv(2 * k + 1, 2 * k) -= -Q / l2;
                cv(2 * k + 1, 2 * k + 1) -= P / l2;
            } else if (m2 >= low2()) {
                const double d2 = m2 * m2;
                cv(2 * k, 2 * k) -= P / m2 - 2 * nr * vr / d2;
                cv(2 * k, 2 * k + 1) -= Q / m2 - 2 * nr * vi / d2;
                cv(2 * k + 1, 2 * k) -= -Q / m2 - 2 * ni * vr / d2;
                cv(2 * k + 1, 2 * k + 1) -= P / m2 - 2 * ni * vi / d2;
            } else {
                const double l2 = low2();
                cv(2 * k, 2 * k) -= P / l2;
                cv(2 * k, 2 * k + 1) -= Q / l2;
                cv(2 * k + 1, 2 * k) -= -Q / l2;
                cv(2 * k + 1, 2 * k + 1) -= P / l2;
            }
        }
        for (int g = 0; g < G; ++g) {
            const double dl = x(4 * g), id = ig(2 * g), iq = ig(2 * g + 1);
            const double s = std::sin(dl), c = std::cos(dl);
            cx(2 * g, 4 * g) = id * c - iq * s;
            cx(2 * g + 1, 4 * g) = iq * c + id * s;
            ci(2 * g, 2 * g) = s;
            ci(2 * g, 2 * g + 1) = c;
            ci(2 * g + 1, 2 * g) = -c;
            ci(2 * g + 1, 2 * g + 1) = s;
        }
    }

    // Stator residual and the current-balance residual scaled by |V|, which is
    // the power mismatch of the chosen load model.
    double power_residual(const Vec& x, const Vec& ig, const Vec& v) const
    {
        double a = eq_.stator(x, ig, v).cwiseAbs().maxCoeff();
        const Vec cb = current_balance(x, ig, v);
        for (int k = 0; k < lay_.N; ++k)
            a = std::max(a, std::hypot(v(2 * k), v(2 * k + 1)) * std::hypot(cb(2 * k), cb(2 * k + 1)));
        return a;
    }

    // Algebraic residual (stator, current balance) and its Jacobian in (ig, v).
    Vec alg_residual(const Vec& x, const Vec& ig, const Vec& v) const
    {
        Vec r(ni_ + nv_);
        r << eq_.stator(x, ig, v), current_balance(x, ig, v);
        return r;
    }

    Mat full_jacobian(const Vec& x, const Vec& ig, const Vec& v, double h) const
    {
        const auto J = eq_.jacobian(x, ig, v, PL_, QL_);
        Mat cx, ci, cv;
        current_jacobian(x, ig, v, cx, ci, cv);
        Mat M = Mat::Zero(nz(), nz());
        M.block(0, 0, nx_, nx_) = Mat(ed_.asDiagonal()) - 0.5 * h * J.fx;
        M.block(0, nx_, nx_, ni_) = -0.5 * h * J.fi;
        M.block(nx_, 0, ni_, nx_) = J.sx;
        M.block(nx_, nx_, ni_, ni_) = J.si;
        M.block(nx_, nx_ + ni_, ni_, nv_) = J.sv;
        M.block(nx_ + ni_, 0, nv_, nx_) = cx;
        M.block(nx_ + ni_, nx_, nv_, ni_) = ci;
        M.block(nx_ + ni_, nx_ + ni_, nv_, nv_) = cv;
        return M;
    }

    Mat alg_jacobian(const Vec& x, const Vec& ig, const Vec& v) const
    {
        return full_jacobian(x, ig, v, 0.0).bottomRightCorner(ni_ + nv_, ni_ + nv_);
    }

private:
    double low2() const { return eq_.low_voltage > 0 ? eq_.low_voltage * eq_.low_voltage : 0.0; }

    NetworkEquations eq_;
    StateLayout lay_;
    Vec PL_, QL_, ed_;
    Vec fixed_;  // |V0|^2 per pair for constant-impedance loads
    int nx_ = 0, ni_ = 0, nv_ = 0;
};

class NonlinearRun {
public:
    NonlinearRun(const PlantScenario& sc, PlantRun& out)
        : sc_(sc), opt_(sc.opt), out_(out), plant_(*sc.net, *sc.op, sc.opt.load, sc.opt.low_voltage)
    {
        const auto& eq = plant_.eq();
        x_ = sc.opt.x_start.size() ? sc.opt.x_start : eq.x_of(*sc.op);
        if (x_.size() != plant_.nx()) throw config_error("x_start must have 4G entries");
        ig_ = eq.ig_of(*sc.op);
        v_ = eq.v_of(sc.op->v0);
        u0_ = eq.u_of(*sc.op);
    }

    const Vec& x() const { return x_; }
    const Vec& ig() const { return ig_; }
    const Vec& v() const { return v_; }

    void set_ybus(const CMat& Y)
    {
        plant_.eq().set_ybus(Y);
        lu_valid_ = false;
    }

    // Solves the algebraic equations with the machine states held.
    void reinitialize(double t)
    {
        Vec z(plant_.ni() + plant_.nv());
        z << ig_, v_;
        double rn = INFINITY;
        for (int it = 0; it < 60; ++it) {
            const Vec r = plant_.alg_residual(x_, z.head(plant_.ni()), z.tail(plant_.nv()));
            rn = r.cwiseAbs().maxCoeff();
            if (rn <= opt_.newton_tol) break;
            const Mat J = plant_.alg_jacobian(x_, z.head(plant_.ni()), z.tail(plant_.nv()));
            const Vec dz = J.partialPivLu().solve(-r);
            if (!dz.allFinite()) break;
            // backtracking on the residual norm
            double a = 1.0;
            for (int k = 0; k < 30; ++k, a *= 0.5) {
                const Vec zt = z + a * dz;
                const double rt =
                    plant_.alg_residual(x_, zt.head(plant_.ni()), zt.tail(plant_.nv())).cwiseAbs().maxCoeff();
                if (rt < rn || k == 29) {
                    z = zt;
                    break;
                }
            }
        }
        if (!(rn <= opt_.newton_tol))
            throw numerical_error("algebraic re-initialization failed at " + fmt_time(t) +
                                  " (voltage collapse?) residual " + std::to_string(rn));
        ig_ = z.head(plant_.ni());
        v_ = z.tail(plant_.nv());
        lu_valid_ = false;
    }

    // Advances from ta to tb with input u held, halving on Newton failure.
    void advance(double ta, double tb, const Vec& w, const Vec& u)
    {
        if (try_step(ta, tb, w, u)) return;
        const double h = tb - ta;
        if (h / 2 < opt_.min_dt)
            throw numerical_error("Newton failed with step " + std::to_string(h) + " at " + fmt_time(ta));
        ++out_.halvings;
        const double tm = ta + h / 2;
        advance(ta, tm, w, u);
        advance(tm, tb, w, u);
    }

    double residual() const { return plant_.power_residual(x_, ig_, v_); }
    const Vec& u0() const { return u0_; }

private:
    bool try_step(double ta, double tb, const Vec& w, const Vec& u)
    {
        const double h = tb - ta;
        const auto& eq = plant_.eq();
        const Vec& ed = plant_.ed();
        const Vec fa = eq.f(x_, ig_, u);
        Vec z(plant_.nz());
        z << x_, ig_, v_;
        auto residual = [&](const Vec& zz) {
            const Vec x1 = zz.head(plant_.nx()), i1 = zz.segment(plant_.nx(), plant_.ni()),
                      v1 = zz.tail(plant_.nv());
            Vec r(plant_.nz());
            r.head(plant_.nx()) =
                ed.cwiseProduct(x1 - x_) - 0.5 * h * (fa + eq.f(x1, i1, u)) - h * ed.cwiseProduct(w);
            r.tail(plant_.ni() + plant_.nv()) = plant_.alg_residual(x1, i1, v1);
            return r;
        };
        auto refactor = [&](const Vec& zz) {
            lu_.compute(plant_.full_jacobian(zz.head(plant_.nx()), zz.segment(plant_.nx(), plant_.ni()),
                                             zz.tail(plant_.nv()), h));
            lu_h_ = h;
            lu_valid_ = true;
            ++out_.factorizations;
        };
        bool fresh = false;
        if (!lu_valid_ || std::abs(lu_h_ - h) > 1e-9 * h) {
            refactor(z);
            fresh = true;
        }
        double prev = INFINITY;
        for (int it = 0; it < opt_.newton_max; ++it) {
            const Vec r = residual(z);
            const double rn = r.cwiseAbs().maxCoeff();
            if (!std::isfinite(rn)) break;
            if (rn <= opt_.newton_tol) {
                x_ = z.head(plant_.nx());
                ig_ = z.segment(plant_.nx(), plant_.ni());
                v_ = z.tail(plant_.nv());
                return true;
            }
            if (it > 0 && rn > 0.25 * prev && !fresh) {
                refactor(z);
                fresh = true;
            } else {
                fresh = false;
            }
            prev = rn;
            z += lu_.solve(-r);
            ++out_.newton_iterations;
        }
        lu_valid_ = false;
        return false;
    }

    const PlantScenario& sc_;
    const SimOptions& opt_;
    PlantRun& out_;
    Plant plant_;
    Vec x_, ig_, v_, u0_;
    Eigen::PartialPivLU<Mat> lu_;
    bool lu_valid_ = false;
    double lu_h_ = 0.0;
};

int checked_ratio(double a, double b, const char* what)
{
    const double r = a / b;
    const int k = int(std::llround(r));
    if (k < 1 || std::abs(r - k) > 1e-9 * r) throw config_error(std::string(what) + " must be a multiple of dt");
    return k;
}

PlantRun run_plant(const PlantScenario& sc)
{
    const auto t_start = std::chrono::steady_clock::now();
    const SimOptions& opt = sc.opt;
    if (!(opt.dt > 0.0)) throw config_error("dt must be positive");
    const DescriptorModel& m = *sc.model;
    const int nsteps = checked_ratio(opt.t_end, opt.dt, "t_end");
    const int rec_every = checked_ratio(opt.t_rec, opt.dt, "t_rec");
    const double dt_obs = opt.dt_obs > 0 ? opt.dt_obs : opt.dt;
    const int obs_every = checked_ratio(dt_obs, opt.dt, "dt_obs");
    const int nx = 4 * m.G, G = m.G;

    PlantRun out;
    out.process_var = sc.noise.process == ProcessNoise::gaussian ? sc.noise.process_var : Vec::Zero(nx);
    const Vec sd = out.process_var.cwiseSqrt();
    const bool proc = sc.noise.process == ProcessNoise::gaussian && sd.maxCoeff() > 0.0;
    auto rng_w = substream(sc.noise.seed, "process");
    auto rng_y = substream(sc.noise.seed, "measurement");
    std::normal_distribution<double> nd;

    const int K = nsteps / rec_every + 1;
    out.X.resize(m.n(), K);
    out.U.resize(2 * G, K);
    out.Y.resize(m.p(), K);
    out.stream.dt = dt_obs;
    out.stream.Y.resize(m.p(), nsteps / obs_every + 1);
    out.inputs.dt = opt.dt;
    out.inputs.Y.resize(2 * G, nsteps + 1);
    const double w0 = sc.op->omega0;

    auto measure = [&](const Vec& xfull) -> Vec {
        return m.C * xfull + measurement_noise(sc.noise, m.p(), rng_y);
    };

    if (opt.linear_plant) {
        if (sc.fault.enabled) out.events.push_back(fmt_time(sc.fault.t_fault) + " fault ignored by the linear plant");
        LinearDaeStepper st(m.E, m.A, opt.dt);
        Vec xd = Vec::Zero(m.n());
        if (opt.x_start.size()) {
            if (opt.x_start.size() != nx) throw config_error("x_start must have 4G entries");
            xd.head(nx) = opt.x_start - m.x0.head(nx);
        }
        auto forcing = [&](const Vec& u, const Vec& w) {
            Vec b = m.B_u * (u - m.u0);
            b.head(nx) += m.E.topLeftCorner(nx, nx) * w;
            return b;
        };
        InputRegulator reg(sc.input, m.u0, m.x0.tail(m.n() - nx), w0);
        xd = st.consistent(xd, forcing(m.u0, Vec::Zero(nx)));
        auto regulate = [&](double t) {
            const Vec xa = m.x0 + xd;
            return reg.next(t, xa.head(nx), xa.tail(m.n() - nx), opt.dt);
        };
        out.inputs.Y.col(0) = regulate(0.0);
        Vec y = measure(m.x0 + xd);
        out.stream.Y.col(0) = y;
        out.X.col(0) = m.x0 + xd;
        out.U.col(0) = out.inputs.Y.col(0);
        out.Y.col(0) = y;
        out.t.push_back(0.0);
        for (int k = 0; k < nsteps; ++k) {
            const double t1 = (k + 1) * opt.dt;
            Vec w = Vec::Zero(nx);
            if (proc)
                for (int i = 0; i < nx; ++i) w(i) = sd(i) * nd(rng_w);
            const Vec b = forcing(out.inputs.Y.col(k), w);
            xd = st.step(xd, b, b);
            out.inputs.Y.col(k + 1) = regulate(t1);
            ++out.steps;
            if ((k + 1) % obs_every == 0) {
                y = measure(m.x0 + xd);
                out.stream.Y.col((k + 1) / obs_every) = y;
            }
            if ((k + 1) % rec_every == 0) {
                const int j = (k + 1) / rec_every;
                out.X.col(j) = m.x0 + xd;
                out.U.col(j) = out.inputs.Y.col(k + 1);
                out.Y.col(j) = y;
                out.t.push_back(t1);
            }
        }
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        return out;
    }

    NonlinearRun run(sc, out);
    auto topo = fault_sequence(*sc.net, sc.fault);
    size_t next = 0;
    out.IG.resize(2 * G, K);
    auto apply_due = [&](double t) {
        while (next < topo.size() && topo[next].t <= t + 1e-12) {
            run.set_ybus(topo[next].Y);
            run.reinitialize(topo[next].t);
            out.events.push_back(fmt_time(topo[next].t) + " " + topo[next].label);
            ++next;
        }
    };
    auto full_state = [&]() {
        Vec xf(m.n());
        xf << run.x(), run.v();
        return xf;
    };
    run.reinitialize(0.0);
    apply_due(0.0);
    InputRegulator reg(sc.input, run.u0(), run.v(), w0);
    out.inputs.Y.col(0) = reg.next(0.0, run.x(), run.v(), opt.dt);
    out.max_residual = run.residual();
    Vec y = measure(full_state());
    out.stream.Y.col(0) = y;
    out.X.col(0) = full_state();
    out.IG.col(0) = run.ig();
    out.U.col(0) = out.inputs.Y.col(0);
    out.Y.col(0) = y;
    out.t.push_back(0.0);
    for (int k = 0; k < nsteps; ++k) {
        const double t0 = k * opt.dt, t1 = (k + 1) * opt.dt;
        Vec w = Vec::Zero(nx);
        if (proc)
            for (int i = 0; i < nx; ++i) w(i) = sd(i) * nd(rng_w);
        const Vec u = out.inputs.Y.col(k);
        double ta = t0;
        while (next < topo.size() && topo[next].t > ta + 1e-12 && topo[next].t < t1 - 1e-12) {
            run.advance(ta, topo[next].t, w, u);
            ta = topo[next].t;
            apply_due(ta);
        }
        run.advance(ta, t1, w, u);
        apply_due(t1);
        out.inputs.Y.col(k + 1) = reg.next(t1, run.x(), run.v(), opt.dt);
        ++out.steps;
        out.max_residual = std::max(out.max_residual, run.residual());
        if ((k + 1) % obs_every == 0) {
            y = measure(full_state());
            out.stream.Y.col((k + 1) / obs_every) = y;
        }
        if ((k + 1) % rec_every == 0) {
            const int j = (k + 1) / rec_every;
            out.X.col(j) = full_state();
            out.IG.col(j) = run.ig();
            out.U.col(j) = out.inputs.Y.col(k + 1);
            out.Y.col(j) = y;
            out.t.push_back(t1);
        }
    }
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

}  // namespace

PlantRun simulate_plant(const PlantScenario& sc)
{
    if (!sc.net || !sc.op || !sc.model) throw config_error("plant scenario is missing case, operating point or model");
    sc.fault.validate();
    sc.noise.validate();
    if (sc.noise.process == ProcessNoise::gaussian && sc.noise.process_var.size() == 0) {
        PlantScenario quiet = sc;
        quiet.noise.process = ProcessNoise::none;
        quiet.noise.measurement = MeasurementNoise::none;
        const PlantRun r = run_plant(quiet);
        const int nx = 4 * sc.model->G;
        Vec dmax = Vec::Zero(nx);
        for (Eigen::Index k = 0; k < r.X.cols(); ++k)
            dmax = dmax.cwiseMax((r.X.col(k).head(nx) - r.X.col(0).head(nx)).cwiseAbs());
        PlantScenario noisy = sc;
        noisy.noise.process_var = (sc.noise.process_scale * dmax).cwiseAbs2();
        PlantRun out = run_plant(noisy);
        out.events.insert(out.events.begin(), "process noise covariance from a noise-free rehearsal run");
        return out;
    }
    if (sc.noise.process == ProcessNoise::gaussian && sc.noise.process_var.size() != 4 * sc.model->G)
        throw config_error("process variance must have 4G entries");
    return run_plant(sc);
}

EstimateTrack simulate_observer(const std::string& name, const DescriptorSystem& sys, const ObserverGain& gain,
                                const DescriptorModel& model, const PlantRun& plant,
                                const std::function<Vec(double)>& u_obs, const Vec& xhat0_dev,
                                const SimOptions& opt)
{
    const auto t_start = std::chrono::steady_clock::now();
    if (!gain.cert.pass()) throw config_error("observer gain '" + name + "' is not certified");
    const int ns = sys.n(), n = model.n();
    if (gain.L.rows() != ns || gain.L.cols() != sys.p()) throw config_error("gain dimensions do not match the model");
    if (ns < n) throw config_error("observer model smaller than the plant model");
    const Mat Acl = sys.A - gain.L * sys.C;
    LinearDaeStepper st(sys.E, Acl, opt.dt);
    const Vec y0 = model.C * model.x0;
    auto forcing = [&](double t) -> Vec {
        return sys.B_u * (u_obs(t) - model.u0) + gain.L * (plant.stream.at(t) - y0);
    };
    Vec xh = Vec::Zero(ns);
    xh.head(std::min<Eigen::Index>(xhat0_dev.size(), ns)) = xhat0_dev.head(std::min<Eigen::Index>(xhat0_dev.size(), ns));

    EstimateTrack tr;
    tr.name = name;
    const int K = int(plant.t.size());
    tr.X.resize(n, K);
    tr.Nu.resize(ns - n, K);
    tr.X.col(0) = model.x0 + xh.head(n);
    tr.Nu.col(0) = xh.tail(ns - n);
    const double t_end = plant.t.back();
    const int nsteps = int(std::llround(t_end / opt.dt));
    const int rec_every = K > 1 ? int(std::llround((plant.t[1] - plant.t[0]) / opt.dt)) : 1;
    Vec b0 = forcing(0.0);
    for (int k = 0; k < nsteps; ++k) {
        const double t1 = (k + 1) * opt.dt;
        const Vec b1 = forcing(t1);
        xh = st.step(xh, 0.5 * (b0 + b1), b1);
        b0 = b1;
        if ((k + 1) % rec_every == 0) {
            const int j = (k + 1) / rec_every;
            tr.X.col(j) = model.x0 + xh.head(n);
            tr.Nu.col(j) = xh.tail(ns - n);
        }
    }
    if (!tr.X.allFinite()) throw numerical_error("observer '" + name + "' diverged");
    tr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return tr;
}

CosimResult cosimulate(const PlantScenario& sc, const std::vector<Estimator>& estimators)
{
    CosimResult r;
    r.plant = simulate_plant(sc);
    // sequential, so each estimator's wall time is its own
    for (const auto& e : estimators) {
        try {
            r.estimates.push_back(e.run(r.plant));
        } catch (const Error& err) {
            throw Error(err.kind(), "estimator '" + e.name + "': " + err.what());
        }
    }
    return r;
}

std::string trajectory_csv(const CosimResult& r, const std::vector<std::string>& names)
{
    std::ostringstream os;
    os.precision(10);
    const PlantRun& p = r.plant;
    os << "t";
    for (const auto& s : names) os << ',' << s;
    for (Eigen::Index i = 0; i < p.Y.rows(); ++i) os << ",y" << i + 1;
    for (const auto& e : r.estimates) {
        for (const auto& s : names) os << ',' << e.name << ':' << s;
        for (Eigen::Index i = 0; i < e.Nu.rows(); ++i) os << ',' << e.name << ":nu" << i + 1;
    }
    os << '\n';
    for (size_t k = 0; k < p.t.size(); ++k) {
        os << p.t[k];
        for (Eigen::Index i = 0; i < p.X.rows(); ++i) os << ',' << p.X(i, k);
        for (Eigen::Index i = 0; i < p.Y.rows(); ++i) os << ',' << p.Y(i, k);
        for (const auto& e : r.estimates) {
            for (Eigen::Index i = 0; i < e.X.rows(); ++i) os << ',' << e.X(i, k);
            for (Eigen::Index i = 0; i < e.Nu.rows(); ++i) os << ',' << e.Nu(i, k);
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace dse
