#include "daedse/daecheck.hpp"

#include <cmath>
#include <limits>
#include <sstream>

extern "C" void dggev_(const char* jobvl, const char* jobvr, const int* n, double* a, const int* lda, double* b,
                       const int* ldb, double* alphar, double* alphai, double* beta, double* vl, const int* ldvl,
                       double* vr, const int* ldvr, double* work, const int* lwork, int* info);

namespace dse {

Mat orthogonal_complement(const Mat& E, int r)
{
    const int n = int(E.rows());
    if (n == 0) return Mat(0, E.cols());
    Eigen::BDCSVD<Mat> svd(E, Eigen::ComputeFullU);
    const RankInfo ri = numerical_rank(E);
    if (ri.rank != r)
        throw numerical_error("rank(E) is " + std::to_string(ri.rank) + ", expected " + std::to_string(r));
    return svd.matrixU().rightCols(n - r).transpose();
}

PencilSpectrum finite_spectrum(const Mat& E, const Mat& A)
{
    const int n = int(A.rows());
    PencilSpectrum out;
    if (n == 0) return out;
    Mat a = A, b = E;
    Vec ar(n), ai(n), be(n);
    int lwork = -1, info = 0, one = 1;
    double q = 0, dummy = 0;
    dggev_("N", "N", &n, a.data(), &n, b.data(), &n, ar.data(), ai.data(), be.data(), &dummy, &one, &dummy, &one,
           &q, &lwork, &info);
    lwork = std::max(1, int(q));
    std::vector<double> work(lwork);
    dggev_("N", "N", &n, a.data(), &n, b.data(), &n, ar.data(), ai.data(), be.data(), &dummy, &one, &dummy, &one,
           work.data(), &lwork, &info);
    if (info != 0) throw numerical_error("generalized eigenvalue solver failed, info " + std::to_string(info));
    // QZ backward error is about n eps ||(E, A)||; beta below that (or a tiny
    // fraction of ||E||) is infinite, alpha and beta both below it is singular
    const double scale = std::sqrt(E.squaredNorm() + A.squaredNorm());
    const double thr = std::max(1e-10 * E.norm(), 1e3 * n * std::numeric_limits<double>::epsilon() * scale);
    for (int i = 0; i < n; ++i) {
        const double amag = std::hypot(ar(i), ai(i));
        if (std::abs(be(i)) <= thr) {
            if (amag <= thr) throw structural_error("singular pencil: det(sE - A) vanishes identically");
            ++out.infinite;
        } else {
            out.finite.emplace_back(ar(i) / be(i), ai(i) / be(i));
        }
    }
    return out;
}

bool impulse_free(const Mat& E, const Mat& A)
{
    return int(finite_spectrum(E, A).finite.size()) == numerical_rank(E).rank;
}

double regularity_sample(const DescriptorModel& m, cplx s)
{
    const CMat lhs = s * m.E_D.cast<cplx>() - m.A1.cast<cplx>();
    const CMat S = m.A4.cast<cplx>() + m.A3.cast<cplx>() * lhs.partialPivLu().solve(m.A2.cast<cplx>());
    Eigen::BDCSVD<CMat> svd(S);
    const auto& sv = svd.singularValues();
    return sv(sv.size() - 1) / sv(0);
}

RegularityReport is_regular(const DescriptorModel& m)
{
    RegularityReport r;
    Eigen::BDCSVD<Mat> svd(m.A4);
    const auto& sv = svd.singularValues();
    r.cond_A4 = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    r.via_A4 = numerical_rank(m.A4).rank == m.A4.rows();
    const cplx samples[5] = {{0.37, 1.13}, {-1.7, 0.4}, {2.9, -3.1}, {0.05, 7.0}, {-11.0, -0.3}};
    for (cplx s : samples) {
        if (regularity_sample(m, s) > 1e-12) {
            r.witness = s;
            r.regular = true;
            break;
        }
    }
    if (r.via_A4) r.regular = true;
    return r;
}

DetectabilityReport is_detectable(const Mat& E, const Mat& A, const Mat& C, double rel_tol)
{
    DetectabilityReport d;
    const int n = int(A.rows());
    const PencilSpectrum sp = finite_spectrum(E, A);
    d.detectable = true;
    for (cplx s : sp.finite) {
        if (s.real() < -1e-8) continue;
        d.tested.push_back(s);
        CMat M(n + C.rows(), n);
        M << s * E.cast<cplx>() - A.cast<cplx>(), C.cast<cplx>();
        Eigen::BDCSVD<CMat> svd(M);
        const auto& sv = svd.singularValues();
        const double thr = rel_tol * sv(0);
        int rank = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv(i) > thr) ++rank;
        const double last = sv(std::min<Eigen::Index>(n, sv.size()) - 1);
        const double gap = rank == n ? last / (thr > 0 ? thr : 1.0) : (rank > 0 ? sv(rank - 1) / std::max(last, 1e-300) : 0.0);
        d.min_gap = std::min(d.min_gap, gap);
        if (rank < n) {
            d.detectable = false;
            d.worst_deficiency = std::max(d.worst_deficiency, n - rank);
        }
    }
    if (d.min_gap < 1e3) d.warning = "rank decision is numerically marginal (gap " + std::to_string(d.min_gap) + ")";
    return d;
}

namespace {

RankVerdict verdict(const Mat& M, int required)
{
    RankVerdict v;
    const RankInfo ri = numerical_rank(M);
    v.rank = ri.rank;
    v.required = required;
    v.pass = ri.rank == required;
    v.gap = ri.gap();
    return v;
}

}  // namespace

RankVerdict i_observability_full(const Mat& E, const Mat& A, const Mat& C)
{
    const int n = int(A.rows()), p = int(C.rows());
    Mat M = Mat::Zero(2 * n + p, 2 * n);
    M.topLeftCorner(n, n) = E;
    M.topRightCorner(n, n) = A;
    M.block(n, n, n, n) = E;
    M.bottomRightCorner(p, n) = C;
    return verdict(M, n + numerical_rank(E).rank);
}

IObservabilityReport is_i_observable(const DescriptorModel& m)
{
    IObservabilityReport r;
    const int nx = int(m.A1.rows()), nv = int(m.A4.rows()), p = int(m.C_tilde.rows());
    Eigen::FullPivLU<Mat> lu(m.A4);
    if (!lu.isInvertible()) throw structural_error("A4 is singular; reduced impulse-observability test undefined");
    Mat R = Mat::Zero(nv + nx + p, nx + nv);
    R.topLeftCorner(nv, nx) = lu.solve(m.A3);
    R.topRightCorner(nv, nv) = m.C_M.transpose();
    R.block(nv, 0, nx, nx).setIdentity();
    R.bottomRightCorner(p, nv) = m.C_tilde;
    r.reduced = verdict(R, nx + nv);
    r.full = i_observability_full(m.E, m.A, m.C);
    r.agree = r.reduced.pass == r.full.pass;
    r.observable = r.reduced.pass;
    return r;
}

PencilReport check_model(const DescriptorModel& m)
{
    PencilReport rep;
    rep.regularity = is_regular(m);
    rep.spectrum = finite_spectrum(m.E, m.A);
    rep.degree = int(rep.spectrum.finite.size());
    rep.rank_E = numerical_rank(m.E).rank;
    rep.impulse_free = rep.regularity.regular && rep.degree == rep.rank_E;
    rep.index_one = rep.impulse_free;
    rep.detectability = is_detectable(m.E, m.A, m.C);
    rep.iobs = is_i_observable(m);
    return rep;
}

std::string PencilReport::to_text(int digits) const
{
    std::ostringstream o;
    o.precision(digits);
    auto yn = [](bool b) { return b ? "yes" : "no"; };
    o << "regular: " << yn(regularity.regular) << " (A4 nonsingular: " << yn(regularity.via_A4)
      << ", cond(A4) = " << regularity.cond_A4 << ", witness s = " << regularity.witness << ")\n";
    o << "impulse-free: " << yn(impulse_free) << " (deg det(sE - A) = " << degree << ", rank E = " << rank_E << ")\n";
    o << "index one: " << yn(index_one) << "\n";
    o << "finite eigenvalues: " << spectrum.finite.size() << ", infinite: " << spectrum.infinite << "\n";
    double maxre = -INFINITY;
    for (cplx s : spectrum.finite) maxre = std::max(maxre, s.real());
    o << "max Re(finite eigenvalue): " << maxre << "\n";
    o << "detectable: " << yn(detectability.detectable) << " (tested " << detectability.tested.size()
      << " eigenvalues in the closed right half-plane, worst deficiency " << detectability.worst_deficiency
      << ", min gap " << detectability.min_gap << ")\n";
    if (!detectability.warning.empty()) o << "warning: " << detectability.warning << "\n";
    o << "I-observable: " << yn(iobs.observable) << " (reduced rank " << iobs.reduced.rank << "/"
      << iobs.reduced.required << ", full rank " << iobs.full.rank << "/" << iobs.full.required
      << ", agree: " << yn(iobs.agree) << ")\n";
    return o.str();
}

}  // namespace dse
