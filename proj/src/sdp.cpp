#include "daedse/sdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace dse {

int ConeProgram::add_block(int dim)
{
    if (dim <= 0) throw config_error("cone block dimension must be positive");
    Block b;
    b.dim = dim;
    b.F0 = Mat::Zero(dim, dim);
    blocks_.push_back(std::move(b));
    return int(blocks_.size()) - 1;
}

int ConeProgram::add_var()
{
    c_.conservativeResize(c_.size() + 1);
    c_(c_.size() - 1) = 0.0;
    return int(c_.size()) - 1;
}

void ConeProgram::add_term(int var, int block, const Vec& a, const Vec& b, double coef)
{
    Block& bl = blocks_.at(block);
    if (a.size() != bl.dim || b.size() != bl.dim) throw config_error("cone term dimension mismatch");
    if (coef == 0.0 || a.isZero(0.0) || b.isZero(0.0)) return;
    bl.tvar.push_back(var);
    bl.ta.push_back(a);
    bl.tb.push_back(b);
    bl.tcoef.push_back(coef);
}

void ConeProgram::add_dense(int var, int block, const Mat& M)
{
    Block& bl = blocks_.at(block);
    if (M.rows() != bl.dim || M.cols() != bl.dim) throw config_error("cone dense dimension mismatch");
    bl.dvar.push_back(var);
    bl.dmat.push_back(0.5 * (M + M.transpose()));
}

void ConeProgram::add_constant(int block, const Mat& M)
{
    Block& bl = blocks_.at(block);
    if (M.rows() != bl.dim || M.cols() != bl.dim) throw config_error("cone constant dimension mismatch");
    bl.F0 += 0.5 * (M + M.transpose());
}

Mat ConeProgram::constraint(int var, int block) const
{
    const Block& bl = blocks_.at(block);
    Mat F = Mat::Zero(bl.dim, bl.dim);
    for (size_t t = 0; t < bl.tvar.size(); ++t) {
        if (bl.tvar[t] != var) continue;
        F += bl.tcoef[t] * (bl.ta[t] * bl.tb[t].transpose() + bl.tb[t] * bl.ta[t].transpose());
    }
    for (size_t t = 0; t < bl.dvar.size(); ++t)
        if (bl.dvar[t] == var) F += bl.dmat[t];
    return F;
}

Mat ConeProgram::evaluate(int block, const Vec& x) const
{
    const Block& bl = blocks_.at(block);
    Mat F = -bl.F0;
    for (size_t t = 0; t < bl.tvar.size(); ++t) {
        const double w = bl.tcoef[t] * x(bl.tvar[t]);
        F += w * (bl.ta[t] * bl.tb[t].transpose() + bl.tb[t] * bl.ta[t].transpose());
    }
    for (size_t t = 0; t < bl.dvar.size(); ++t) F += x(bl.dvar[t]) * bl.dmat[t];
    return F;
}

std::string status_name(SdpStatus s)
{
    switch (s) {
    case SdpStatus::optimal: return "optimal";
    case SdpStatus::near_optimal: return "near_optimal";
    case SdpStatus::max_iter: return "max_iter";
    default: return "numerical_failure";
    }
}

namespace {

struct PreparedBlock {
    int dim = 0;
    Mat A, B;  // dim x T
    Vec coef;
    std::vector<int> var;
    std::vector<int> dvar;
    std::vector<Mat> dmat;
    Mat F0;
};

struct Prepared {
    std::vector<PreparedBlock> blocks;
    int m = 0;
    int total_dim = 0;

    std::vector<Mat> apply(const Vec& x) const
    {
        std::vector<Mat> out;
        out.reserve(blocks.size());
        for (const auto& b : blocks) {
            Vec w(b.coef.size());
            for (Eigen::Index t = 0; t < w.size(); ++t) w(t) = b.coef(t) * x(b.var[t]);
            Mat F = b.A * w.asDiagonal() * b.B.transpose();
            F += F.transpose().eval();
            for (size_t t = 0; t < b.dvar.size(); ++t) F += x(b.dvar[t]) * b.dmat[t];
            out.push_back(std::move(F));
        }
        return out;
    }

    // out_i = sum_k tr(F_i[k] T[k]) for symmetric T
    Vec adjoint(const std::vector<Mat>& T) const
    {
        Vec out = Vec::Zero(m);
        for (size_t k = 0; k < blocks.size(); ++k) {
            const auto& b = blocks[k];
            if (b.coef.size() > 0) {
                Mat TB = T[k] * b.B;
                for (Eigen::Index t = 0; t < b.coef.size(); ++t)
                    out(b.var[t]) += 2.0 * b.coef(t) * b.A.col(t).dot(TB.col(t));
            }
            for (size_t t = 0; t < b.dvar.size(); ++t) out(b.dvar[t]) += (b.dmat[t].cwiseProduct(T[k])).sum();
        }
        return out;
    }

    // M_ij = sum_k tr(F_i Z F_j G)
    Mat schur(const std::vector<Mat>& Z, const std::vector<Mat>& G) const
    {
        Mat M = Mat::Zero(m, m);
        for (size_t k = 0; k < blocks.size(); ++k) {
            const auto& b = blocks[k];
            const Eigen::Index T = b.coef.size();
            if (T > 0) {
                Mat ZA = Z[k] * b.A, ZB = Z[k] * b.B, GA = G[k] * b.A, GB = G[k] * b.B;
                Mat AB(b.dim, 2 * T);
                AB << b.A, b.B;
                const Eigen::Index chunk = 256;
                for (Eigen::Index t0 = 0; t0 < T; t0 += chunk) {
                    const Eigen::Index c = std::min(chunk, T - t0);
                    Mat R(b.dim, 4 * c);
                    R << ZA.middleCols(t0, c), ZB.middleCols(t0, c), GA.middleCols(t0, c), GB.middleCols(t0, c);
                    Mat P = AB.transpose() * R;  // 2T x 4c
                    auto Ai = [&](int j) { return P.block(0, j * c, T, c); };
                    auto Bi = [&](int j) { return P.block(T, j * c, T, c); };
                    // j: 0 ZA, 1 ZB, 2 GA, 3 GB
                    Mat K = Bi(0).cwiseProduct(Ai(3)) + Bi(1).cwiseProduct(Ai(2)) + Ai(0).cwiseProduct(Bi(3)) +
                            Ai(1).cwiseProduct(Bi(2));
                    for (Eigen::Index tt = 0; tt < c; ++tt) {
                        const int vt = b.var[t0 + tt];
                        const double ct = b.coef(t0 + tt);
                        for (Eigen::Index s = 0; s < T; ++s) M(b.var[s], vt) += b.coef(s) * ct * K(s, tt);
                    }
                }
            }
            for (size_t i = 0; i < b.dvar.size(); ++i) {
                Mat H = Z[k] * b.dmat[i] * G[k];
                for (Eigen::Index s = 0; s < T; ++s) {
                    const double v =
                        b.coef(s) * (b.B.col(s).dot(H * b.A.col(s)) + b.A.col(s).dot(H * b.B.col(s)));
                    M(b.var[s], b.dvar[i]) += v;
                    M(b.dvar[i], b.var[s]) += v;
                }
                for (size_t j = 0; j < b.dvar.size(); ++j)
                    M(b.dvar[j], b.dvar[i]) += (b.dmat[j].cwiseProduct(H.transpose())).sum();
            }
        }
        return 0.5 * (M + M.transpose());
    }
};

Prepared prepare(const ConeProgram& prog)
{
    Prepared p;
    p.m = prog.nvars();
    for (int k = 0; k < prog.nblocks(); ++k) {
        const auto& bl = prog.block(k);
        PreparedBlock b;
        b.dim = bl.dim;
        const Eigen::Index T = Eigen::Index(bl.tvar.size());
        b.A.resize(bl.dim, T);
        b.B.resize(bl.dim, T);
        b.coef.resize(T);
        for (Eigen::Index t = 0; t < T; ++t) {
            b.A.col(t) = bl.ta[t];
            b.B.col(t) = bl.tb[t];
            b.coef(t) = bl.tcoef[t];
        }
        b.var = bl.tvar;
        b.dvar = bl.dvar;
        b.dmat = bl.dmat;
        b.F0 = bl.F0;
        p.total_dim += bl.dim;
        p.blocks.push_back(std::move(b));
    }
    return p;
}

SdpStatus stalled_status(const SdpResult& r, const SdpOptions& opt)
{
    const double merit = std::max({r.primal_infeas, r.dual_infeas, r.rel_gap});
    return merit < opt.tol_stall ? SdpStatus::near_optimal : SdpStatus::numerical_failure;
}

double fro2(const std::vector<Mat>& v)
{
    double s = 0;
    for (const auto& m : v) s += m.squaredNorm();
    return s;
}

double inner(const std::vector<Mat>& a, const std::vector<Mat>& b)
{
    double s = 0;
    for (size_t k = 0; k < a.size(); ++k) s += a[k].cwiseProduct(b[k]).sum();
    return s;
}

// Largest alpha in (0, cap] keeping X + alpha dX positive definite.
double max_step(const std::vector<Mat>& X, const std::vector<Mat>& dX, double cap)
{
    double alpha = cap;
    for (size_t k = 0; k < X.size(); ++k) {
        Eigen::LLT<Mat> llt(X[k]);
        if (llt.info() != Eigen::Success) return 0.0;
        Mat L = llt.matrixL();
        Mat W = L.triangularView<Eigen::Lower>().solve(dX[k]);
        W = L.triangularView<Eigen::Lower>().solve(W.transpose()).transpose();
        W = 0.5 * (W + W.transpose());
        double lmin;
        if (W.rows() == 1) {
            lmin = W(0, 0);
        } else {
            Eigen::SelfAdjointEigenSolver<Mat> es(W, Eigen::EigenvaluesOnly);
            lmin = es.eigenvalues()(0);
        }
        if (lmin < 0) alpha = std::min(alpha, -1.0 / lmin);
    }
    return alpha;
}

std::vector<Mat> sym(std::vector<Mat> v)
{
    for (auto& m : v) m = 0.5 * (m + m.transpose()).eval();
    return v;
}

}  // namespace

SdpResult InteriorPointSolver::solve(const ConeProgram& prog, const SdpOptions& opt) const
{
    Prepared P = prepare(prog);
    const int m = P.m;
    const size_t nb = P.blocks.size();
    const Vec& c = prog.cost();

    std::vector<Mat> F0(nb);
    double f0norm = 0;
    for (size_t k = 0; k < nb; ++k) {
        F0[k] = P.blocks[k].F0;
        f0norm += F0[k].squaredNorm();
    }
    f0norm = std::sqrt(f0norm);

    // Norms of the constraint matrices (approximate for multi-term vars).
    Vec fnorm = Vec::Zero(m);
    for (const auto& b : P.blocks) {
        for (Eigen::Index t = 0; t < b.coef.size(); ++t) {
            const double na = b.A.col(t).squaredNorm(), nbb = b.B.col(t).squaredNorm(),
                         ab = b.A.col(t).dot(b.B.col(t));
            fnorm(b.var[t]) += b.coef(t) * b.coef(t) * 2.0 * (na * nbb + ab * ab);
        }
        for (size_t t = 0; t < b.dvar.size(); ++t) fnorm(b.dvar[t]) += b.dmat[t].squaredNorm();
    }
    fnorm = fnorm.cwiseSqrt();

    const double ntot = double(P.total_dim);
    double alpha0 = 0, beta0 = f0norm;
    for (int i = 0; i < m; ++i) {
        alpha0 = std::max(alpha0, (1.0 + std::abs(c(i))) / (1.0 + fnorm(i)));
        beta0 = std::max(beta0, fnorm(i));
    }
    alpha0 *= ntot;
    beta0 = (1.0 + beta0) / std::sqrt(ntot);

    Vec x = Vec::Zero(m);
    std::vector<Mat> S(nb), Z(nb);
    for (size_t k = 0; k < nb; ++k) {
        const int d = P.blocks[k].dim;
        S[k] = 10.0 * beta0 * Mat::Identity(d, d);
        Z[k] = 10.0 * alpha0 * Mat::Identity(d, d);
    }

    SdpResult res;
    const double cnorm = c.norm();
    double best_merit = INFINITY, best_seen = INFINITY;
    int stall = 0;
    SdpResult best;
    for (int it = 0; it <= opt.max_iter; ++it) {
        std::vector<Mat> Fx = P.apply(x);
        std::vector<Mat> Rp(nb);
        for (size_t k = 0; k < nb; ++k) Rp[k] = Fx[k] - F0[k] - S[k];
        Vec rd = c - P.adjoint(Z);
        const double pobj = c.dot(x), dobj = inner(F0, Z);
        const double mu = inner(S, Z) / ntot;
        res.primal_infeas = std::sqrt(fro2(Rp)) / (1.0 + f0norm);
        res.dual_infeas = rd.norm() / (1.0 + cnorm);
        res.rel_gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
        res.primal_obj = pobj;
        res.dual_obj = dobj;
        res.iterations = it;
        if (opt.verbose)
            std::fprintf(stderr, "ipm %3d pobj %+.9e dobj %+.9e pinf %.2e dinf %.2e gap %.2e mu %.2e\n", it, pobj,
                         dobj, res.primal_infeas, res.dual_infeas, res.rel_gap, mu);
        const double cgap = ntot * mu / (1.0 + std::abs(pobj) + std::abs(dobj));
        if (res.primal_infeas < opt.tol_feas && res.dual_infeas < opt.tol_feas && res.rel_gap < opt.tol_gap &&
            cgap < opt.tol_gap) {
            res.status = SdpStatus::optimal;
            break;
        }
        const double merit = std::max({res.primal_infeas, res.dual_infeas, res.rel_gap, cgap});
        if (merit < best_seen) {
            best_seen = merit;
            best = res;
            best.x = x;
            best.S = S;
            best.Z = Z;
        }
        if (merit < 0.9 * best_merit) {
            best_merit = merit;
            stall = 0;
        } else if (++stall >= 6) {
            res.status = merit < opt.tol_stall ? SdpStatus::near_optimal : SdpStatus::numerical_failure;
            break;
        }
        if (it == opt.max_iter) {
            res.status = merit < opt.tol_stall ? SdpStatus::near_optimal : SdpStatus::max_iter;
            break;
        }

        std::vector<Mat> G(nb);
        bool ok = true;
        for (size_t k = 0; k < nb; ++k) {
            Eigen::LLT<Mat> llt(S[k]);
            if (llt.info() != Eigen::Success) {
                ok = false;
                break;
            }
            G[k] = llt.solve(Mat::Identity(S[k].rows(), S[k].cols()));
            G[k] = 0.5 * (G[k] + G[k].transpose());
        }
        if (!ok) {
            res.status = stalled_status(res, opt);
            break;
        }
        Mat M = P.schur(Z, G);
        Eigen::LLT<Mat> chol(M);
        const double dmax = std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
        for (double reg = 1e-14; chol.info() != Eigen::Success && reg < 1e-5; reg *= 100.0) {
            Mat Mr = M;
            Mr.diagonal().array() += reg * dmax;
            chol.compute(Mr);
        }
        if (chol.info() != Eigen::Success) {
            res.status = stalled_status(res, opt);
            break;
        }

        auto direction = [&](double target_mu, const std::vector<Mat>* dZa, const std::vector<Mat>* dSa,
                             Vec& dx, std::vector<Mat>& dS, std::vector<Mat>& dZ) {
            std::vector<Mat> T(nb);
            for (size_t k = 0; k < nb; ++k) {
                T[k] = target_mu * G[k] - Z[k] - Z[k] * Rp[k] * G[k];
                if (dZa) T[k] -= (*dZa)[k] * (*dSa)[k] * G[k];
            }
            T = sym(std::move(T));
            Vec rhs = P.adjoint(T) - rd;
            dx = chol.solve(rhs);
            dS = P.apply(dx);
            dZ.resize(nb);
            for (size_t k = 0; k < nb; ++k) {
                dS[k] += Rp[k];
                dZ[k] = target_mu * G[k] - Z[k] - Z[k] * dS[k] * G[k];
                if (dZa) dZ[k] -= (*dZa)[k] * (*dSa)[k] * G[k];
            }
            dZ = sym(std::move(dZ));
        };

        Vec dxa;
        std::vector<Mat> dSa, dZa;
        direction(0.0, nullptr, nullptr, dxa, dSa, dZa);
        const double ap = max_step(S, dSa, 1.0), ad = max_step(Z, dZa, 1.0);
        std::vector<Mat> Sa(nb), Za(nb);
        for (size_t k = 0; k < nb; ++k) {
            Sa[k] = S[k] + ap * dSa[k];
            Za[k] = Z[k] + ad * dZa[k];
        }
        const double mua = inner(Sa, Za) / ntot;
        double sigma = std::pow(std::max(0.0, mua) / mu, 3);
        sigma = std::clamp(sigma, 0.0, 1.0);

        Vec dx;
        std::vector<Mat> dS, dZ;
        direction(sigma * mu, &dZa, &dSa, dx, dS, dZ);
        double alp = std::min(1.0, opt.step_fraction * max_step(S, dS, 1e6));
        double ald = std::min(1.0, opt.step_fraction * max_step(Z, dZ, 1e6));
        if (alp <= 0 || ald <= 0) {
            res.status = stalled_status(res, opt);
            break;
        }
        x += alp * dx;
        for (size_t k = 0; k < nb; ++k) {
            S[k] += alp * dS[k];
            Z[k] += ald * dZ[k];
        }
    }
    if (res.status != SdpStatus::optimal && best.x.size() == m) {
        const SdpStatus st = res.status;
        const int its = res.iterations;
        res = best;
        res.status = stalled_status(best, opt) == SdpStatus::near_optimal ? SdpStatus::near_optimal : st;
        res.iterations = its;
        return res;
    }
    res.x = x;
    res.S = S;
    res.Z = Z;
    return res;
}

std::string to_sdpa(const ConeProgram& prog, const std::string& comment, double drop_tol)
{
    std::ostringstream os;
    os.precision(17);
    if (!comment.empty()) os << "\" " << comment << "\n";
    os << prog.nvars() << " = mDIM\n" << prog.nblocks() << " = nBLOCK\n";
    for (int k = 0; k < prog.nblocks(); ++k) os << prog.block_dim(k) << (k + 1 < prog.nblocks() ? " " : "");
    os << " = bLOCKsTRUCT\n";
    for (int i = 0; i < prog.nvars(); ++i) os << prog.cost()(i) << (i + 1 < prog.nvars() ? " " : "\n");
    auto emit = [&](int mat, int blk, const Mat& F) {
        for (Eigen::Index i = 0; i < F.rows(); ++i)
            for (Eigen::Index j = i; j < F.cols(); ++j)
                if (std::abs(F(i, j)) > drop_tol && F(i, j) != 0.0)
                    os << mat << ' ' << blk + 1 << ' ' << i + 1 << ' ' << j + 1 << ' ' << F(i, j) << '\n';
    };
    for (int k = 0; k < prog.nblocks(); ++k) emit(0, k, prog.constant(k));
    std::vector<std::vector<int>> blocks_of(prog.nvars());
    for (int k = 0; k < prog.nblocks(); ++k) {
        const auto& bl = prog.block(k);
        for (int v : bl.tvar) blocks_of[v].push_back(k);
        for (int v : bl.dvar) blocks_of[v].push_back(k);
    }
    for (int v = 0; v < prog.nvars(); ++v) {
        auto& ks = blocks_of[v];
        std::sort(ks.begin(), ks.end());
        ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
        for (int k : ks) emit(v + 1, k, prog.constraint(v, k));
    }
    return os.str();
}

}  // namespace dse
