#include "daedse/synth.hpp"
#include "daedse/daecheck.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace dse {

std::string kind_name(ProblemKind k)
{
    switch (k) {
    case ProblemKind::admissibility: return "admissibility";
    case ProblemKind::p1: return "p1";
    case ProblemKind::hinf: return "hinf";
    case ProblemKind::p2: return "p2";
    case ProblemKind::p3: return "p3";
    }
    return "?";
}

ProblemKind parse_kind(const std::string& s)
{
    for (auto k : {ProblemKind::admissibility, ProblemKind::p1, ProblemKind::hinf, ProblemKind::p2, ProblemKind::p3})
        if (kind_name(k) == s) return k;
    if (s == "luenberger") return ProblemKind::p1;
    throw config_error("unknown synthesis problem '" + s + "'");
}

double default_eps(const DescriptorSystem& sys)
{
    Eigen::BDCSVD<Mat> svd(sys.A);
    return 1e-6 * svd.singularValues()(0);
}

namespace {

bool uses_hinf(ProblemKind k) { return k == ProblemKind::hinf || k == ProblemKind::p2 || k == ProblemKind::p3; }
bool uses_kappa(ProblemKind k) { return k == ProblemKind::p1 || k == ProblemKind::p3; }
bool uses_t(ProblemKind k) { return k == ProblemKind::admissibility || k == ProblemKind::hinf; }
bool gamma_var(ProblemKind k) { return k == ProblemKind::p2 || k == ProblemKind::p3; }

// Margins: the full program imposes the LMI below -kFull*eps, the reduced one
// imposes the projected LMI below -kReduced*eps and leaves room for recovery.
constexpr double kFull = 1.05;
constexpr double kReduced = 2.0;
constexpr double kRecover = 1.5;

Mat gamma_or_zero(const Mat& G, int n)
{
    if (G.size() == 0) return Mat::Zero(n, n);
    if (G.rows() != n || G.cols() != n) throw config_error("performance matrix must be n x n");
    return G;
}

// Problem data in working coordinates (permuted so that E = diag(E1, 0) when reduced).
struct Setup {
    int n = 0, r = 0, p = 0, q = 0, d = 0, k = 0;
    bool hinf = false;
    Mat E, A, C, Bw, Dw, Gam;
    Mat Pi;     // x_work = Pi x
    Mat Eperp;  // (n - r) x n, working coordinates
    Mat Q, R;   // sym(Q' X R) is the X part of the LMI
    Mat U;      // sym(U' Z V), V = [I O]
    Mat C0;     // constant part (Gamma'Gamma in the (1,1) block)
    Mat J;      // coefficient of -gamma
};

bool reducible(const Mat& E, std::vector<int>& perm, int& r)
{
    const int n = int(E.rows());
    std::vector<int> nz, z;
    for (int i = 0; i < n; ++i) {
        const bool row = E.row(i).cwiseAbs().maxCoeff() > 0.0;
        const bool col = E.col(i).cwiseAbs().maxCoeff() > 0.0;
        if (row != col) return false;
        (row ? nz : z).push_back(i);
    }
    r = int(nz.size());
    perm = nz;
    perm.insert(perm.end(), z.begin(), z.end());
    Mat E1(r, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) E1(i, j) = E(nz[i], nz[j]);
    return r == 0 || numerical_rank(E1).rank == r;
}

Setup make_setup(const DescriptorSystem& sys, const Mat& Gamma, bool hinf, bool reduced)
{
    Setup s;
    s.n = sys.n();
    s.p = sys.p();
    s.q = hinf ? sys.q() : 0;
    s.hinf = hinf;
    s.d = s.n + s.q;
    Mat Gam = gamma_or_zero(Gamma, s.n);
    if (reduced) {
        std::vector<int> perm;
        int r = 0;
        if (!reducible(sys.E, perm, r)) throw config_error("reduced formulation needs E = diag(E1, 0) up to permutation");
        s.r = r;
        s.Pi = Mat::Zero(s.n, s.n);
        for (int i = 0; i < s.n; ++i) s.Pi(i, perm[i]) = 1.0;
        s.Eperp = Mat::Zero(s.n - r, s.n);
        s.Eperp.rightCols(s.n - r).setIdentity();
    } else {
        s.r = numerical_rank(sys.E).rank;
        s.Pi = Mat::Identity(s.n, s.n);
        s.Eperp = orthogonal_complement(sys.E, s.r);
    }
    s.E = s.Pi * sys.E * s.Pi.transpose();
    s.A = s.Pi * sys.A * s.Pi.transpose();
    s.C = sys.C * s.Pi.transpose();
    s.Bw = s.Pi * sys.B_w;
    s.Dw = sys.D_w;
    s.Gam = Gam * s.Pi.transpose();
    s.k = s.n - s.r + s.p;

    s.Q = Mat::Zero(s.n, s.d);
    s.R = Mat::Zero(s.n, s.d);
    s.U = Mat::Zero(s.k, s.d);
    s.Q.leftCols(s.n) = s.A;
    s.R.leftCols(s.n) = s.E;
    s.U.topLeftCorner(s.n - s.r, s.n) = s.Eperp * s.A;
    s.U.bottomLeftCorner(s.p, s.n) = -s.C;
    s.C0 = Mat::Zero(s.d, s.d);
    s.J = Mat::Zero(s.d, s.d);
    if (hinf) {
        s.Q.rightCols(s.q) = s.Bw;
        s.U.topRightCorner(s.n - s.r, s.q) = s.Eperp * s.Bw;
        s.U.bottomRightCorner(s.p, s.q) = -s.Dw;
        s.C0.topLeftCorner(s.n, s.n) = s.Gam.transpose() * s.Gam;
        s.J.bottomRightCorner(s.q, s.q).setIdentity();
    }
    return s;
}

struct Layout {
    int nX = 0;
    int zoff = -1, zr = 0, zc = 0;
    int gamma = -1, kappa = -1, t = -1;
    int x(int i, int j) const
    {
        if (i > j) std::swap(i, j);
        return i * nX - i * (i - 1) / 2 + (j - i);
    }
};

struct Program {
    ConeProgram cp;
    Layout lay;
    Mat N;  // projection onto ker U (reduced) or identity
    double xnorm = 0.0;
};

Program assemble(const Setup& s, const SynthesisProblem& prob, bool reduced, double eps)
{
    Program P;
    Layout& L = P.lay;
    const ProblemKind kind = prob.kind;
    L.nX = reduced ? s.r : s.n;
    int m = L.nX * (L.nX + 1) / 2;
    if (!reduced) {
        L.zoff = m;
        L.zr = s.k;
        L.zc = s.n;
        m += s.k * s.n;
    }
    const bool min_kappa = kind == ProblemKind::hinf && prob.min_kappa;
    if (gamma_var(kind)) L.gamma = m++;
    if (uses_kappa(kind) || min_kappa) L.kappa = m++;
    if (uses_t(kind) && !min_kappa) L.t = m++;
    P.cp = ConeProgram(m);

    P.N = reduced ? null_space(s.U) : Mat::Identity(s.d, s.d);
    const Mat& N = P.N;
    const int dd = int(N.cols());
    const double margin = reduced ? kReduced * eps : kFull * eps;
    P.xnorm = kind == ProblemKind::admissibility ? 1.0 : eps;

    Mat C0 = s.C0;
    if (kind == ProblemKind::hinf) C0 -= prob.gamma * s.J;

    if (dd > 0) {
        const int b = P.cp.add_block(dd);
        Mat QN = (s.Q * N).transpose();  // dd x n, column i = N' Q' e_i
        Mat RN = (s.R * N).transpose();
        for (int i = 0; i < L.nX; ++i)
            for (int j = i; j < L.nX; ++j) {
                const int v = L.x(i, j);
                P.cp.add_term(v, b, QN.col(i), RN.col(j), -1.0);
                if (i != j) P.cp.add_term(v, b, QN.col(j), RN.col(i), -1.0);
            }
        if (!reduced) {
            // Z = [Y; W], V = [I O]
            for (int i = 0; i < s.k; ++i) {
                Vec u = s.U.row(i).transpose();
                for (int j = 0; j < s.n; ++j) {
                    Vec vj = Vec::Zero(s.d);
                    vj(j) = 1.0;
                    P.cp.add_term(L.zoff + i * s.n + j, b, u, vj, -1.0);
                }
            }
        }
        if (L.gamma >= 0) P.cp.add_dense(L.gamma, b, N.transpose() * s.J * N);
        Mat F0 = N.transpose() * C0 * N;
        if (L.t >= 0) {
            P.cp.add_dense(L.t, b, Mat::Identity(dd, dd));
        } else {
            F0 += margin * Mat::Identity(dd, dd);
        }
        P.cp.add_constant(b, F0);
    }

    // X >= xnorm I
    {
        const int b = P.cp.add_block(L.nX);
        for (int i = 0; i < L.nX; ++i)
            for (int j = i; j < L.nX; ++j) {
                Vec ei = Vec::Zero(L.nX), ej = Vec::Zero(L.nX);
                ei(i) = 1.0;
                ej(j) = 1.0;
                P.cp.add_term(L.x(i, j), b, ei, ej, i == j ? 0.5 : 1.0);
            }
        P.cp.add_constant(b, P.xnorm * Mat::Identity(L.nX, L.nX));
    }
    if (L.kappa >= 0) {
        // kappa I - E' X E >= 0
        const int b = P.cp.add_block(L.nX);
        Mat Ek = s.E.topLeftCorner(L.nX, L.nX);
        for (int i = 0; i < L.nX; ++i)
            for (int j = i; j < L.nX; ++j)
                P.cp.add_term(L.x(i, j), b, Ek.row(i).transpose(), Ek.row(j).transpose(), i == j ? -0.5 : -1.0);
        P.cp.add_dense(L.kappa, b, Mat::Identity(L.nX, L.nX));
    }
    if (L.gamma >= 0 && reduced) {
        const int b = P.cp.add_block(1);
        P.cp.add_dense(L.gamma, b, Mat::Identity(1, 1));
        P.cp.add_constant(b, Mat::Constant(1, 1, margin));
    }
    if (kind == ProblemKind::admissibility) {
        const int b = P.cp.add_block(1);
        P.cp.add_dense(L.t, b, Mat::Identity(1, 1));
        P.cp.add_constant(b, Mat::Constant(1, 1, -1.0));
    }

    switch (kind) {
    case ProblemKind::admissibility: P.cp.set_cost(L.t, 1.0); break;
    case ProblemKind::hinf: P.cp.set_cost(min_kappa ? L.kappa : L.t, 1.0); break;
    case ProblemKind::p1: P.cp.set_cost(L.kappa, 1.0); break;
    case ProblemKind::p2: P.cp.set_cost(L.gamma, 1.0); break;
    case ProblemKind::p3:
        P.cp.set_cost(L.kappa, prob.c1);
        P.cp.set_cost(L.gamma, prob.c2);
        break;
    }
    return P;
}

Mat unpack_x(const Layout& L, const Vec& x, int n)
{
    Mat X = Mat::Zero(n, n);
    for (int i = 0; i < L.nX; ++i)
        for (int j = i; j < L.nX; ++j) X(i, j) = X(j, i) = x(L.x(i, j));
    return X;
}

// Full LMI in working coordinates.
Mat working_lmi(const Setup& s, const Mat& X, const Mat& Z, double gamma)
{
    Mat M = s.Q.transpose() * X * s.R;
    Mat UZ = s.U.transpose() * Z;  // d x n
    M.leftCols(s.n) += UZ;
    M = (M + M.transpose()).eval();
    M += s.C0 - gamma * s.J;
    return M;
}

double max_eig(const Mat& M)
{
    if (M.size() == 0) return -INFINITY;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

double min_eig(const Mat& M)
{
    if (M.size() == 0) return INFINITY;
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// Central solution of Theta + sym(U' Z V) < 0 with V = [I O] for fixed X, gamma.
Mat recover_z(const Setup& s, const Mat& X, double gamma, double eps)
{
    Mat Theta = working_lmi(s, X, Mat::Zero(s.k, s.n), gamma) + kRecover * eps * Mat::Identity(s.d, s.d);
    Mat UtU = s.U.transpose() * s.U;
    const double scale = std::max(1.0, Theta.norm()) / std::max(1e-300, UtU.norm());
    Mat best;
    double best_norm = INFINITY;
    for (int e = -2; e <= 24; ++e) {
        const double mu = scale * std::pow(10.0, 0.5 * e);
        Mat S = mu * UtU - Theta;
        Eigen::LLT<Mat> llt(S);
        if (llt.info() != Eigen::Success) continue;
        Mat Phi = llt.solve(Mat::Identity(s.d, s.d));
        Mat PhiV = Phi.leftCols(s.n);                   // Phi V'
        Mat VPhiV = PhiV.topRows(s.n);                  // V Phi V'
        Eigen::LLT<Mat> l2(0.5 * (VPhiV + VPhiV.transpose()));
        if (l2.info() != Eigen::Success) continue;
        Mat Z = -mu * s.U * l2.solve(PhiV.transpose()).transpose();
        const double me = max_eig(working_lmi(s, X, Z, gamma));
        if (me <= -kFull * eps) {
            Mat P = X * s.E;
            P.bottomRows(s.n - s.r) += Z.topRows(s.n - s.r);
            Eigen::JacobiSVD<Mat> svd(P);
            const auto& sv = svd.singularValues();
            const double cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
            if (cond > 1e12) continue;
            Mat L = P.transpose().fullPivLu().solve(Z.bottomRows(s.p).transpose());
            if (L.norm() < best_norm) {
                best_norm = L.norm();
                best = Z;
            }
        }
    }
    if (best.size() == 0) throw numerical_error("gain recovery failed: no multiplier gives a strict LMI");
    return best;
}

}  // namespace

ConeProgram build_program(const DescriptorSystem& sys, const SynthesisProblem& prob, bool reduced)
{
    const double eps = prob.eps > 0 ? prob.eps : default_eps(sys);
    Setup s = make_setup(sys, prob.Gamma, uses_hinf(prob.kind), reduced);
    return assemble(s, prob, reduced, eps).cp;
}

RecoveredGain recover_gain(const Mat& X, const Mat& Y, const Mat& W, const Mat& E, const Mat& Eperp)
{
    RecoveredGain g;
    g.P = X * E;
    if (Eperp.rows() > 0) g.P += Eperp.transpose() * Y;
    Eigen::JacobiSVD<Mat> svd(g.P);
    const auto& sv = svd.singularValues();
    g.cond_P = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    if (!(g.cond_P <= 1e12)) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "P is singular or ill-conditioned (cond %.3e)", g.cond_P);
        throw numerical_error(buf);
    }
    g.L = g.P.transpose().fullPivLu().solve(W.transpose());
    return g;
}

Mat lmi_matrix(const DescriptorSystem& sys, const Mat& X, const Mat& Y, const Mat& W, const Mat& Eperp, bool hinf,
               const Mat& Gamma, double gamma)
{
    const int n = sys.n();
    Mat P = X * sys.E;
    if (Eperp.rows() > 0) P += Eperp.transpose() * Y;
    Mat M11 = sys.A.transpose() * P + P.transpose() * sys.A - sys.C.transpose() * W - W.transpose() * sys.C;
    if (!hinf) return M11;
    const int q = sys.q();
    Mat G = gamma_or_zero(Gamma, n);
    Mat M(n + q, n + q);
    Mat M21 = sys.B_w.transpose() * P - sys.D_w.transpose() * W;
    M << M11 + G.transpose() * G, M21.transpose(), M21, -gamma * Mat::Identity(q, q);
    return M;
}

SweepResult hinf_sweep(const Mat& E, const Mat& Acl, const Mat& Bcl, const Mat& Gamma, double wmin, double wmax,
                       int points)
{
    const CMat Ec = E.cast<cplx>(), Ac = Acl.cast<cplx>(), Bc = Bcl.cast<cplx>(), Gc = Gamma.cast<cplx>();
    auto eval = [&](double w) {
        CMat M = cplx(0.0, w) * Ec - Ac;
        Eigen::PartialPivLU<CMat> lu(M);
        CMat H = Gc * lu.solve(Bc);
        Eigen::BDCSVD<CMat> svd(H);
        return svd.singularValues()(0);
    };
    std::vector<double> ws;
    ws.push_back(0.0);
    const double lo = std::log10(wmin), hi = std::log10(wmax);
    for (int i = 0; i < points; ++i) ws.push_back(std::pow(10.0, lo + (hi - lo) * i / (points - 1)));
    for (double w : {1e5, 1e6, 1e7}) ws.push_back(w);
    try {
        for (cplx s : finite_spectrum(E, Acl).finite)
            if (std::abs(s.imag()) > 0) ws.push_back(std::abs(s.imag()));
    } catch (const Error&) {
    }
    std::sort(ws.begin(), ws.end());
    std::vector<double> g(ws.size());
    for (size_t i = 0; i < ws.size(); ++i) g[i] = eval(ws[i]);
    SweepResult out;
    for (size_t i = 0; i < ws.size(); ++i)
        if (g[i] > out.gain) {
            out.gain = g[i];
            out.freq = ws[i];
        }
    // golden-section refinement around local maxima
    for (size_t i = 1; i + 1 < ws.size(); ++i) {
        if (!(g[i] >= g[i - 1] && g[i] >= g[i + 1])) continue;
        double a = ws[i - 1], b = ws[i + 1];
        const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
        double c = b - phi * (b - a), d = a + phi * (b - a);
        double fc = eval(c), fd = eval(d);
        for (int it = 0; it < 60 && (b - a) > 1e-12 * std::max(1.0, b); ++it) {
            if (fc > fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - phi * (b - a);
                fc = eval(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + phi * (b - a);
                fd = eval(d);
            }
        }
        for (auto [w, f] : {std::pair{c, fc}, std::pair{d, fd}})
            if (f > out.gain) {
                out.gain = f;
                out.freq = w;
            }
    }
    return out;
}

std::string Certificate::to_text() const
{
    char buf[1024];
    std::snprintf(buf, sizeof buf,
                  "eps %.6e\nlmi_max_eig %.6e (%s)\nx_min_eig %.6e\nbilinear_max_eig %.6e\n"
                  "max_real %.6e (%s)\nimpulse_free %s\nEtP_sym_err %.3e EtP_min_eig %.3e (%s)\ncond_P %.3e (%s)\n"
                  "sweep_gain %.6e at %.6e rad/s (%s)\ncertified %s\n",
                  eps, lmi_max_eig, lmi_ok ? "ok" : "FAIL", x_min_eig, bilinear_max_eig, max_real,
                  stable ? "ok" : "FAIL", impulse_free ? "yes" : "no", ep_sym_err, ep_min_eig, ep_ok ? "ok" : "FAIL",
                  cond_P, cond_ok ? "ok" : "FAIL", sweep_gain, sweep_freq, hinf_ok ? "ok" : "FAIL",
                  pass() ? "yes" : "no");
    return buf;
}

Certificate certify(const DescriptorSystem& sys, const ObserverGain& g, const Mat& Gamma)
{
    Certificate c;
    c.eps = g.eps;
    const bool hinf = uses_hinf(g.kind);
    const int n = sys.n();
    const Mat Gam = gamma_or_zero(Gamma, n);
    const double gam = hinf ? g.gamma : 0.0;
    Mat M = lmi_matrix(sys, g.X, g.Y, g.W, g.Eperp, hinf, Gam, gam);
    c.lmi_max_eig = max_eig(M);
    c.x_min_eig = min_eig(g.X);
    c.lmi_ok = c.lmi_max_eig <= -g.eps * (1.0 - 1e-9) && c.x_min_eig > 0.0;

    Mat Acl = sys.A - g.L * sys.C;
    Mat Bcl = sys.B_w - g.L * sys.D_w;
    Mat P = g.P;
    Mat B11 = Acl.transpose() * P + P.transpose() * Acl;
    if (hinf) {
        const int q = sys.q();
        Mat BL(n + q, n + q);
        BL << B11 + Gam.transpose() * Gam, P.transpose() * Bcl, Bcl.transpose() * P, -gam * Mat::Identity(q, q);
        c.bilinear_max_eig = max_eig(BL);
    } else {
        c.bilinear_max_eig = max_eig(B11);
    }

    PencilSpectrum sp = finite_spectrum(sys.E, Acl);
    c.max_real = -INFINITY;
    for (cplx s : sp.finite) c.max_real = std::max(c.max_real, s.real());
    c.stable = c.max_real < -1e-6;
    c.impulse_free = impulse_free(sys.E, Acl);

    Mat EP = sys.E.transpose() * P;
    const double ep_norm = std::max(1e-300, EP.norm());
    c.ep_sym_err = (EP - EP.transpose()).norm() / ep_norm;
    c.ep_min_eig = min_eig(EP) / ep_norm;
    c.ep_ok = c.ep_sym_err <= 1e-8 && c.ep_min_eig >= -1e-8;

    Eigen::JacobiSVD<Mat> svd(P);
    const auto& sv = svd.singularValues();
    c.cond_P = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    c.cond_ok = c.cond_P <= 1e12;

    if (hinf) {
        SweepResult sw = hinf_sweep(sys.E, Acl, Bcl, Gam);
        c.sweep_gain = sw.gain;
        c.sweep_freq = sw.freq;
        c.hinf_ok = sw.gain <= std::sqrt(g.gamma) * (1.0 + 1e-6);
    }
    return c;
}

namespace {
ObserverGain synthesize_once(const DescriptorSystem& sys, const SynthesisProblem& prob)
{
    const auto t0 = std::chrono::steady_clock::now();
    const int n = sys.n();
    if (sys.E.rows() != n || sys.E.cols() != n || sys.C.cols() != n) throw config_error("inconsistent model dimensions");
    const bool hinf = uses_hinf(prob.kind);
    if (hinf && (sys.B_w.rows() != n || sys.D_w.rows() != sys.p() || sys.D_w.cols() != sys.q()))
        throw config_error("B_w / D_w dimensions do not match the model");
    if (prob.kind == ProblemKind::p3 && !(prob.c1 > 0 && prob.c2 > 0)) throw config_error("c1, c2 must be positive");
    const double eps = prob.eps > 0 ? prob.eps : default_eps(sys);
    if (!(eps > 0)) throw config_error("strictness margin must be positive");

    bool reduced = false;
    {
        std::vector<int> perm;
        int r = 0;
        const bool can = reducible(sys.E, perm, r);
        const long full_vars = long(n) * (n + 1) / 2 + long(n - r + sys.p()) * n;
        switch (prob.formulation) {
        case Formulation::full: reduced = false; break;
        case Formulation::reduced:
            if (!can) throw config_error("reduced formulation needs E = diag(E1, 0) up to permutation");
            reduced = true;
            break;
        case Formulation::automatic: reduced = can && full_vars > 4000; break;
        }
    }
    if (prob.kind == ProblemKind::hinf && prob.gamma <= kReduced * eps)
        throw infeasible_error("fixed gamma is below the strictness margin");

    Setup s = make_setup(sys, prob.Gamma, hinf, reduced);
    Program prog = assemble(s, prob, reduced, eps);
    InteriorPointSolver solver;
    SdpResult res = solver.solve(prog.cp, prob.sdp);

    ObserverGain g;
    g.kind = prob.kind;
    g.eps = eps;
    g.formulation = reduced ? "reduced" : "full";
    g.status = status_name(res.status);
    g.iterations = res.iterations;

    auto check_phase1 = [&]() {
        SynthesisProblem adm = prob;
        adm.kind = ProblemKind::admissibility;
        Setup sa = make_setup(sys, Mat(), false, reduced);
        Program ap = assemble(sa, adm, reduced, eps);
        SdpResult ar = solver.solve(ap.cp, prob.sdp);
        const double t = ar.x(ap.lay.t);
        if (t >= -1e-9) {
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "admissibility LMI infeasible: smallest achievable max eigenvalue %.3e >= 0 (status %s)", t,
                          status_name(ar.status).c_str());
            throw infeasible_error(buf);
        }
    };

    if (res.status != SdpStatus::optimal && res.status != SdpStatus::near_optimal) {
        check_phase1();
        if (res.status == SdpStatus::numerical_failure || res.primal_infeas > 1e-6 || res.dual_infeas > 1e-6)
            throw numerical_error("SDP solver did not converge (" + g.status + ")");
    }

    const Layout& L = prog.lay;
    Mat Xw = unpack_x(L, res.x, n);
    Mat Zw;
    double tval = L.t >= 0 ? res.x(L.t) : 0.0;
    double gamma = prob.kind == ProblemKind::hinf ? prob.gamma : (L.gamma >= 0 ? res.x(L.gamma) : 0.0);

    if (prob.kind == ProblemKind::admissibility) {
        const double need = reduced ? kReduced : kFull;
        if (tval >= -1e-9) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "admissibility LMI infeasible: smallest achievable max eigenvalue %.3e", tval);
            throw infeasible_error(buf);
        }
        const double alpha = std::max(1.01 * need * eps / -tval, eps);
        Xw *= alpha;
        if (!reduced) res.x.segment(L.zoff, L.zr * L.zc) *= alpha;
    } else if (prob.kind == ProblemKind::hinf && !prob.min_kappa) {
        const double need = reduced ? kReduced : kFull;
        if (tval > -need * eps) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "H-inf LMI infeasible at gamma %.6e (max eigenvalue %.3e)", prob.gamma, tval);
            throw infeasible_error(buf);
        }
    }
    if (reduced) {
        const double x22 = s.r > 0 ? std::max(eps, min_eig(Xw.topLeftCorner(s.r, s.r))) : 1.0;
        Xw.bottomRightCorner(n - s.r, n - s.r) = x22 * Mat::Identity(n - s.r, n - s.r);
        Zw = recover_z(s, Xw, gamma, eps);
    } else {
        Zw.resize(L.zr, L.zc);
        for (int i = 0; i < L.zr; ++i)
            for (int j = 0; j < L.zc; ++j) Zw(i, j) = res.x(L.zoff + i * L.zc + j);
    }

    g.X = s.Pi.transpose() * Xw * s.Pi;
    g.Y = Zw.topRows(n - s.r) * s.Pi;
    g.W = Zw.bottomRows(s.p) * s.Pi;
    g.Eperp = s.Eperp * s.Pi;
    if (hinf) g.gamma = gamma;
    if (L.kappa >= 0) g.kappa = res.x(L.kappa);
    if (L.kappa < 0) {
        Mat EXE = sys.E.transpose() * g.X * sys.E;
        g.kappa = max_eig(EXE);
    }

    // P singular: perturb Y inside the feasible set.
    std::mt19937_64 rng(0x5eed);
    std::normal_distribution<double> nd;
    const Mat Gam = gamma_or_zero(prob.Gamma, n);
    for (int attempt = 0;; ++attempt) {
        try {
            RecoveredGain rg = recover_gain(g.X, g.Y, g.W, sys.E, g.Eperp);
            g.L = rg.L;
            g.P = rg.P;
            break;
        } catch (const Error&) {
            if (attempt >= 5) throw;
            Mat R(g.Y.rows(), g.Y.cols());
            for (Eigen::Index i = 0; i < R.size(); ++i) R(i) = nd(rng);
            double delta = std::max(1e-8, 1e-3 * g.Y.norm()) / std::max(1e-300, R.norm());
            for (int h = 0; h < 40; ++h, delta *= 0.5) {
                Mat Yt = g.Y + delta * R;
                if (max_eig(lmi_matrix(sys, g.X, Yt, g.W, g.Eperp, hinf, Gam, gamma)) <= -eps) {
                    g.Y = Yt;
                    break;
                }
            }
        }
    }
    g.cert = certify(sys, g, Gam);
    g.gamma_opt = g.gamma;
    g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return g;
}

}  // namespace

ObserverGain synthesize(const DescriptorSystem& sys, const SynthesisProblem& prob)
{
    ObserverGain g = synthesize_once(sys, prob);
    if (!gamma_var(prob.kind) || g.cert.stable) return g;
    // The optimum sits on the stability boundary: back off gamma and take the
    // fixed-level solution, which keeps the LMI margin away from it.
    for (double b : {1e-3, 1e-2, 5e-2, 2e-1}) {
        SynthesisProblem h = prob;
        h.kind = ProblemKind::hinf;
        h.min_kappa = true;
        h.gamma = g.gamma_opt * (1.0 + b);
        ObserverGain hg;
        try {
            hg = synthesize_once(sys, h);
        } catch (const Error&) {
            continue;
        }
        if (!hg.cert.pass()) continue;
        hg.kind = prob.kind;
        hg.gamma_opt = g.gamma_opt;
        hg.backoff = b;
        hg.seconds += g.seconds;
        hg.status = g.status + "+backoff";
        hg.cert = certify(sys, hg, gamma_or_zero(prob.Gamma, sys.n()));
        return hg;
    }
    return g;
}

ObserverGain solve_admissibility(const DescriptorSystem& sys, double eps)
{
    SynthesisProblem p;
    p.kind = ProblemKind::admissibility;
    p.eps = eps;
    return synthesize(sys, p);
}

ObserverGain solve_p1(const DescriptorSystem& sys, double eps)
{
    SynthesisProblem p;
    p.kind = ProblemKind::p1;
    p.eps = eps;
    return synthesize(sys, p);
}

ObserverGain solve_hinf(const DescriptorSystem& sys, const Mat& Gamma, double gamma, double eps)
{
    SynthesisProblem p;
    p.kind = ProblemKind::hinf;
    p.Gamma = Gamma;
    p.gamma = gamma;
    p.eps = eps;
    return synthesize(sys, p);
}

ObserverGain solve_p2(const DescriptorSystem& sys, const Mat& Gamma, double eps)
{
    SynthesisProblem p;
    p.kind = ProblemKind::p2;
    p.Gamma = Gamma;
    p.eps = eps;
    return synthesize(sys, p);
}

ObserverGain solve_p3(const DescriptorSystem& sys, const Mat& Gamma, double c1, double c2, double eps)
{
    SynthesisProblem p;
    p.kind = ProblemKind::p3;
    p.Gamma = Gamma;
    p.c1 = c1;
    p.c2 = c2;
    p.eps = eps;
    return synthesize(sys, p);
}

ObserverGain synth_pi(const AugmentedModel& aug, const SynthesisProblem& prob)
{
    DetectabilityReport det = is_detectable(aug.E, aug.A, aug.C);
    if (!det.detectable) {
        std::ostringstream os;
        os << "augmented pair is not detectable: rank deficiency " << det.worst_deficiency << " at "
           << det.tested.size() << " tested eigenvalue(s)";
        if (aug.v > 0) {
            RankVerdict io = i_observability_full(aug.E, aug.A, aug.C);
            os << "; impulse-observability rank " << io.rank << " of " << io.required;
        }
        throw infeasible_error(os.str());
    }
    ObserverGain g = synthesize(aug, prob);
    g.pi = true;
    g.v = aug.v;
    return g;
}

namespace {

template <class C>
auto cert_fields(C& c)
{
    return std::array<std::pair<const char*, decltype(&c.eps)>, 10>{{{"eps", &c.eps},
                                                                     {"lmi_max_eig", &c.lmi_max_eig},
                                                                     {"x_min_eig", &c.x_min_eig},
                                                                     {"bilinear_max_eig", &c.bilinear_max_eig},
                                                                     {"max_real", &c.max_real},
                                                                     {"ep_sym_err", &c.ep_sym_err},
                                                                     {"ep_min_eig", &c.ep_min_eig},
                                                                     {"cond_P", &c.cond_P},
                                                                     {"sweep_gain", &c.sweep_gain},
                                                                     {"sweep_freq", &c.sweep_freq}}};
}

template <class C>
auto cert_flags(C& c)
{
    return std::array<std::pair<const char*, decltype(&c.stable)>, 6>{{{"lmi_ok", &c.lmi_ok},
                                                                      {"stable", &c.stable},
                                                                      {"impulse_free", &c.impulse_free},
                                                                      {"ep_ok", &c.ep_ok},
                                                                      {"cond_ok", &c.cond_ok},
                                                                      {"hinf_ok", &c.hinf_ok}}};
}

}  // namespace

std::string serialize_gain(const ObserverGain& g)
{
    std::ostringstream os;
    os.precision(17);
    os << "observer_gain 1\n";
    os << "kind " << kind_name(g.kind) << "\npi " << (g.pi ? 1 : 0) << "\nv " << g.v << "\n";
    os << "kappa " << g.kappa << "\ngamma " << g.gamma << "\ngamma_opt " << g.gamma_opt << "\nbackoff " << g.backoff
       << "\neps " << g.eps << "\n";
    os << "formulation " << g.formulation << "\nstatus " << g.status << "\niterations " << g.iterations
       << "\nseconds " << g.seconds << "\n";
    os << "certified " << (g.cert.pass() ? 1 : 0) << "\n";
    const Certificate& c = g.cert;
    for (auto [k, v] : cert_fields(c)) os << "cert_" << k << ' ' << *v << "\n";
    for (auto [k, b] : cert_flags(c)) os << "cert_" << k << ' ' << (*b ? 1 : 0) << "\n";
    os << "matrices\n";
    os << export_matrices({{"L", &g.L}, {"X", &g.X}, {"Y", &g.Y}, {"W", &g.W}, {"P", &g.P}, {"Eperp", &g.Eperp}});
    return os.str();
}

ObserverGain parse_gain(const std::string& text)
{
    std::istringstream is(text);
    std::string line;
    ObserverGain g;
    if (!std::getline(is, line) || line.rfind("observer_gain", 0) != 0) throw config_error("not an observer gain file");
    auto num = [](const std::string& v) {
        if (v == "nan" || v == "-nan") return double(NAN);
        return std::stod(v);
    };
    while (std::getline(is, line)) {
        if (line == "matrices") break;
        std::istringstream ls(line);
        std::string key, val;
        ls >> key >> val;
        if (key == "kind") g.kind = parse_kind(val);
        else if (key == "pi") g.pi = val == "1";
        else if (key == "v") g.v = std::stoi(val);
        else if (key == "kappa") g.kappa = num(val);
        else if (key == "gamma") g.gamma = num(val);
        else if (key == "eps") g.eps = num(val);
        else if (key == "gamma_opt") g.gamma_opt = num(val);
        else if (key == "backoff") g.backoff = num(val);
        else if (key == "seconds") g.seconds = num(val);
        else if (key == "formulation") g.formulation = val;
        else if (key == "status") g.status = val;
        else if (key == "iterations") g.iterations = std::stoi(val);
        else if (key.rfind("cert_", 0) == 0) {
            const std::string k = key.substr(5);
            for (auto [name, v] : cert_fields(g.cert))
                if (name == k) *v = num(val);
            for (auto [name, b] : cert_flags(g.cert))
                if (name == k) *b = val == "1";
        }
    }
    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    for (auto& [name, M] : import_matrices(rest)) {
        if (name == "L") g.L = M;
        else if (name == "X") g.X = M;
        else if (name == "Y") g.Y = M;
        else if (name == "W") g.W = M;
        else if (name == "P") g.P = M;
        else if (name == "Eperp") g.Eperp = M;
    }
    if (g.L.size() == 0) throw config_error("observer gain file has no L matrix");
    return g;
}

}  // namespace dse
