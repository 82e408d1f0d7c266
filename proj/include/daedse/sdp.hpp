#pragma once

#include "daedse/common.hpp"

#include <string>
#include <vector>

namespace dse {

// Cone program in SDPA form:
//   minimize c'x  subject to  F(x) = sum_i x_i F_i - F_0  >= 0  (block diagonal)
// Constraint matrices are stored per block as symmetric rank-two terms
// coef * (a b' + b a') plus optional dense pieces.
class ConeProgram {
public:
    explicit ConeProgram(int nvars = 0) : c_(Vec::Zero(nvars)) {}

    int add_block(int dim);
    int add_var();
    int nvars() const { return int(c_.size()); }
    int nblocks() const { return int(blocks_.size()); }
    int block_dim(int k) const { return blocks_[k].dim; }

    void set_cost(int var, double v) { c_(var) = v; }
    const Vec& cost() const { return c_; }

    // F_var[block] += coef * (a b' + b a')
    void add_term(int var, int block, const Vec& a, const Vec& b, double coef);
    // F_var[block] += M (M symmetric)
    void add_dense(int var, int block, const Mat& M);
    // F_0[block] += M
    void add_constant(int block, const Mat& M);

    Mat constraint(int var, int block) const;  // dense F_var[block]
    const Mat& constant(int block) const { return blocks_[block].F0; }
    // F(x) for block k
    Mat evaluate(int block, const Vec& x) const;

    struct Block {
        int dim = 0;
        Mat F0;
        std::vector<int> tvar;
        std::vector<Vec> ta, tb;
        std::vector<double> tcoef;
        std::vector<int> dvar;
        std::vector<Mat> dmat;
    };
    const Block& block(int k) const { return blocks_[k]; }

private:
    Vec c_;
    std::vector<Block> blocks_;
};

struct SdpOptions {
    int max_iter = 100;
    double tol_gap = 1e-8;
    double tol_feas = 1e-8;
    double tol_stall = 1e-4;  // accepted as near_optimal when progress stops
    double step_fraction = 0.95;
    bool verbose = false;
};

enum class SdpStatus { optimal, near_optimal, max_iter, numerical_failure };

struct SdpResult {
    SdpStatus status = SdpStatus::numerical_failure;
    Vec x;
    std::vector<Mat> S, Z;  // slack F(x) and dual matrix per block
    double primal_obj = 0.0, dual_obj = 0.0;
    double primal_infeas = 0.0, dual_infeas = 0.0, rel_gap = 0.0;
    int iterations = 0;
};

// Abstract backend so alternative solvers can be swapped in.
class SdpSolver {
public:
    virtual ~SdpSolver() = default;
    virtual SdpResult solve(const ConeProgram& prog, const SdpOptions& opt) const = 0;
    virtual std::string name() const = 0;
};

// Infeasible-start primal-dual path following, HKM direction,
// Mehrotra predictor-corrector.
class InteriorPointSolver : public SdpSolver {
public:
    SdpResult solve(const ConeProgram& prog, const SdpOptions& opt) const override;
    std::string name() const override { return "hkm-ipm"; }
};

std::string status_name(SdpStatus s);

// Sparse SDPA text (.dat-s). Entries below drop_tol are omitted.
std::string to_sdpa(const ConeProgram& prog, const std::string& comment = "", double drop_tol = 0.0);

}  // namespace dse
