#include "daedse/common.hpp"

#include <cstdio>
#include <limits>

namespace dse {

Mat blkdiag(const std::vector<Mat>& blocks)
{
    Eigen::Index rows = 0, cols = 0;
    for (const auto& b : blocks) {
        rows += b.rows();
        cols += b.cols();
    }
    Mat out = Mat::Zero(rows, cols);
    Eigen::Index r = 0, c = 0;
    for (const auto& b : blocks) {
        out.block(r, c, b.rows(), b.cols()) = b;
        r += b.rows();
        c += b.cols();
    }
    return out;
}

double RankInfo::gap() const
{
    if (sigma_next <= 0.0) return std::numeric_limits<double>::infinity();
    return sigma_last / sigma_next;
}

namespace {

template <class SV>
RankInfo rank_from_singular_values(const SV& s, Eigen::Index rows, Eigen::Index cols, double tol)
{
    RankInfo info;
    if (s.size() == 0) return info;
    info.sigma_max = s(0);
    double thr = tol > 0 ? tol
                         : double(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * s(0);
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s(i) > thr) {
            info.rank++;
            info.sigma_last = s(i);
        } else {
            info.sigma_next = s(i);
            break;
        }
    }
    return info;
}

}  // namespace

RankInfo numerical_rank(const Mat& M, double tol)
{
    if (M.size() == 0) return {};
    Eigen::BDCSVD<Mat> svd(M);
    return rank_from_singular_values(svd.singularValues(), M.rows(), M.cols(), tol);
}

RankInfo numerical_rank(const CMat& M, double tol)
{
    if (M.size() == 0) return {};
    Eigen::BDCSVD<CMat> svd(M);
    return rank_from_singular_values(svd.singularValues(), M.rows(), M.cols(), tol);
}

Mat null_space(const Mat& M, double tol)
{
    const Eigen::Index n = M.cols();
    if (M.rows() == 0) return Mat::Identity(n, n);
    Eigen::BDCSVD<Mat> svd(M, Eigen::ComputeFullV);
    RankInfo ri = rank_from_singular_values(svd.singularValues(), M.rows(), M.cols(), tol);
    return svd.matrixV().rightCols(n - ri.rank);
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t h)
{
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace dse
