#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dse {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using cplx = std::complex<double>;

// Error families map onto CLI exit codes.
enum class ErrorKind { config = 2, structural = 3, infeasible = 4, numerical = 5 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline Error config_error(const std::string& m) { return Error(ErrorKind::config, m); }
inline Error structural_error(const std::string& m) { return Error(ErrorKind::structural, m); }
inline Error infeasible_error(const std::string& m) { return Error(ErrorKind::infeasible, m); }
inline Error numerical_error(const std::string& m) { return Error(ErrorKind::numerical, m); }

// Block-diagonal concatenation.
Mat blkdiag(const std::vector<Mat>& blocks);

// Numerical rank with tolerance max_dim * eps * sigma_max unless tol > 0.
struct RankInfo {
    int rank = 0;
    double sigma_max = 0.0;
    double sigma_last = 0.0;   // smallest singular value counted in the rank
    double sigma_next = 0.0;   // largest singular value below the threshold
    double gap() const;        // sigma_last / sigma_next (inf when nothing dropped)
};
RankInfo numerical_rank(const Mat& M, double tol = -1.0);
RankInfo numerical_rank(const CMat& M, double tol = -1.0);

// Orthonormal basis of the null space of M (columns).
Mat null_space(const Mat& M, double tol = -1.0);

// 64-bit FNV-1a, used for content hashes in caches and manifests.
std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

}  // namespace dse
