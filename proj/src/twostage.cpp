#include "daedse/twostage.hpp"

#include <chrono>

namespace dse {

namespace {

// Dense tableau simplex for min c'z, A z = b >= 0, z >= 0 with a known
// starting basis. Dantzig pricing; Bland's rule while the objective stalls.
struct Tableau {
    Mat T;  // rows 0..m-1 constraints, row m reduced costs; last column rhs
    std::vector<int> basis;
    int m = 0, n = 0;

    void pivot(int r, int j)
    {
        T.row(r) /= T(r, j);
        for (int i = 0; i <= m; ++i)
            if (i != r && T(i, j) != 0.0) T.row(i) -= T(i, j) * T.row(r);
        basis[r] = j;
    }

    int solve(int max_pivots, bool& ok)
    {
        const double scale = std::max(1.0, T.col(n).head(m).cwiseAbs().maxCoeff());
        const double dtol = 1e-11, ptol = 1e-10;
        int pivots = 0, stall = 0;
        double last = T(m, n);
        ok = false;
        while (pivots < max_pivots) {
            const bool bland = stall > m;
            int j = -1;
            double best = -dtol;
            for (int c = 0; c < n; ++c) {
                if (T(m, c) < best) {
                    j = c;
                    if (bland) break;
                    best = T(m, c);
                }
            }
            if (j < 0) {
                ok = true;
                break;
            }
            int r = -1;
            double ratio = INFINITY;
            for (int i = 0; i < m; ++i) {
                if (T(i, j) <= ptol) continue;
                const double q = T(i, n) / T(i, j);
                if (q < ratio - 1e-14 * scale || (q <= ratio + 1e-14 * scale && r >= 0 && basis[i] < basis[r])) {
                    ratio = q;
                    r = i;
                }
            }
            if (r < 0) break;  // unbounded; cannot happen for an L1 objective
            pivot(r, j);
            ++pivots;
            // the reduced-cost row holds -objective
            stall = (T(m, n) > last + 1e-15 * scale) ? 0 : stall + 1;
            last = T(m, n);
        }
        return pivots;
    }
};

}  // namespace

LavSolution solve_lav(const Mat& C, const Vec& y, int max_pivots)
{
    const int p = int(C.rows()), nv = int(C.cols());
    if (y.size() != p) throw config_error("LAV: measurement length does not match C");
    if (p == 0) throw config_error("LAV: no measurements");
    const int n = 2 * nv + 2 * p;
    Tableau tb;
    tb.m = p;
    tb.n = n;
    tb.T = Mat::Zero(p + 1, n + 1);
    tb.basis.resize(p);
    for (int i = 0; i < p; ++i) {
        const double s = y(i) >= 0.0 ? 1.0 : -1.0;
        tb.T.row(i).segment(0, nv) = s * C.row(i);
        tb.T.row(i).segment(nv, nv) = -s * C.row(i);
        tb.T(i, 2 * nv + i) = s;
        tb.T(i, 2 * nv + p + i) = -s;
        tb.T(i, n) = s * y(i);
        tb.basis[i] = s > 0 ? 2 * nv + i : 2 * nv + p + i;
    }
    // reduced costs c - 1'A for the all-residual starting basis
    tb.T.row(p).segment(2 * nv, 2 * p).setOnes();
    for (int i = 0; i < p; ++i) tb.T.row(p) -= tb.T.row(i);

    LavSolution out;
    bool ok = false;
    out.pivots = tb.solve(max_pivots > 0 ? max_pivots : 50 * (p + n), ok);
    out.optimal = ok;
    Vec z = Vec::Zero(n);
    for (int i = 0; i < p; ++i) z(tb.basis[i]) = tb.T(i, n);
    out.v = z.head(nv) - z.segment(nv, nv);

    const RankInfo rk = numerical_rank(C);
    if (rk.rank < nv) {
        // same fitted values, smallest norm
        Eigen::JacobiSVD<Mat> svd(C, Eigen::ComputeFullV);
        const Mat V = svd.matrixV().leftCols(rk.rank);
        out.v = V * (V.transpose() * out.v);
        out.unique = false;
    }
    out.r = y - C * out.v;
    out.objective = out.r.cwiseAbs().sum();
    out.status = ok ? (out.unique ? "optimal" : "optimal, v not unique (minimum-norm representative)")
                    : "pivot limit reached";
    return out;
}

DiscreteSystem discretize_forward_euler(const DescriptorModel& m, double T)
{
    if (!(T > 0.0)) throw config_error("KF period must be positive");
    const RankInfo rk = numerical_rank(m.A4);
    if (rk.rank < m.A4.rows()) throw structural_error("A4 is singular; voltages cannot be eliminated");
    const Vec edinv = m.E_D.diagonal().cwiseInverse();
    const int nd = int(m.E_D.rows());
    DiscreteSystem d;
    d.T = T;
    d.F = Mat::Identity(nd, nd) + T * edinv.asDiagonal() * m.A1;
    d.Gv = T * edinv.asDiagonal() * m.A2;
    d.Gu = T * edinv.asDiagonal() * m.B_D;
    d.H = m.A3;
    d.Hv = m.A4;
    return d;
}

namespace {

void symmetrize_psd(Mat& P)
{
    P = 0.5 * (P + P.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat> es(P);
    if (es.eigenvalues().minCoeff() < 0.0)
        P = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

void kf_update(const DiscreteSystem& d, const Mat& R, KfState& s, const Vec& z)
{
    const Mat& H = d.H;
    const Mat S = H * s.P * H.transpose() + R;
    const Eigen::LDLT<Mat> ldlt(S);
    const Mat K = ldlt.solve(H * s.P).transpose();
    s.x += K * (z - H * s.x);
    const Mat IKH = Mat::Identity(s.P.rows(), s.P.cols()) - K * H;
    s.P = IKH * s.P * IKH.transpose() + K * R * K.transpose();
    symmetrize_psd(s.P);
}

void kf_predict(const DiscreteSystem& d, const Mat& Q, KfState& s, const Vec& v, const Vec& du)
{
    s.x = d.F * s.x + d.Gv * v + d.Gu * du;
    s.P = d.F * s.P * d.F.transpose() + Q;
    symmetrize_psd(s.P);
}

EstimateTrack run_two_stage(const std::string& name, const DescriptorModel& m, const PlantRun& plant,
                            const std::function<Vec(double)>& u_obs, const Vec& xhat0_dev, const KfOptions& opt)
{
    const auto t_start = std::chrono::steady_clock::now();
    if (plant.t.empty()) throw config_error("two-stage: empty plant run");
    const double sdt = plant.stream.dt;
    const int every = int(std::llround(opt.T / sdt));
    if (every < 1 || std::abs(every * sdt - opt.T) > 1e-9 * opt.T)
        throw config_error("KF period must be a multiple of the measurement period");
    const int nd = 4 * m.G, nv = 2 * m.N, n = m.n();
    const DiscreteSystem d = discretize_forward_euler(m, opt.T);
    const Mat Cv = m.C.rightCols(nv);
    const Vec y0 = m.C * m.x0;

    Mat Q = Mat::Zero(nd, nd);
    if (opt.q.size()) {
        if (opt.q.size() != nd) throw config_error("KF process variances must have 4G entries");
        Q.diagonal() = opt.q;
    } else if (plant.process_var.size() == nd) {
        Q.diagonal() = opt.T * sdt * plant.process_var;
    }
    Q.diagonal().array() += opt.q_floor;

    // LAV noise approximated by the least-squares covariance of the PMU noise
    const Mat Sv = opt.meas_var * (Cv.transpose() * Cv).completeOrthogonalDecomposition().pseudoInverse();
    const Mat R = d.Hv * Sv * d.Hv.transpose() + opt.r_floor * Mat::Identity(nv, nv);

    KfState s;
    s.x = xhat0_dev.size() >= nd ? Vec(xhat0_dev.head(nd)) : Vec::Zero(nd);
    if (opt.p0.size()) {
        if (opt.p0.size() != nd) throw config_error("KF initial variances must have 4G entries");
        s.P = Mat(opt.p0.asDiagonal());
    } else {
        s.P = Mat((0.1 * m.x0.head(nd)).cwiseAbs2().cwiseMax(1e-6).asDiagonal());
    }

    EstimateTrack tr;
    tr.name = name;
    const int K = int(plant.t.size());
    tr.X.resize(n, K);
    tr.Nu.resize(0, K);
    const int samples = int(std::floor(plant.t.back() / opt.T + 1e-9)) + 1;
    Vec v = xhat0_dev.size() >= n ? Vec(xhat0_dev.tail(nv)) : Vec::Zero(nv);
    int failures = 0, pivots = 0, rec = 0;
    for (int k = 0; k < samples; ++k) {
        const double t = k * opt.T;
        const LavSolution lav = solve_lav(Cv, plant.stream.at(t) - y0);
        pivots += lav.pivots;
        if (lav.optimal)
            v = lav.v;
        else
            ++failures;
        kf_update(d, R, s, -d.Hv * v);
        Vec xf(n);
        xf << s.x, v;
        while (rec < K && plant.t[rec] < t + opt.T - 1e-9) tr.X.col(rec++) = m.x0 + xf;
        kf_predict(d, Q, s, v, u_obs(t) - m.u0);
    }
    while (rec < K) {
        tr.X.col(rec) = tr.X.col(rec - 1);
        ++rec;
    }
    if (!tr.X.allFinite()) throw numerical_error("two-stage estimator '" + name + "' diverged");
    tr.notes.push_back("LP solves: " + std::to_string(samples) + ", pivots: " + std::to_string(pivots));
    if (failures) tr.notes.push_back("LAV failures (previous voltages held): " + std::to_string(failures));
    tr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return tr;
}

}  // namespace dse
