#pragma once

#include "daedse/netcase.hpp"
#include "daedse/powerflow.hpp"

namespace dse {

// Ordering of the descriptor state: per-generator (delta, omega, e'q, e'd)
// blocks, then (vR, vI) pairs of generator buses in generator order, then
// load buses by id. Algebraic balance rows follow the same bus order.
struct StateLayout {
    int G = 0, N = 0;
    std::vector<int> v_bus;        // pair k -> internal bus id
    std::vector<int> pair_of_bus;  // internal bus id - 1 -> pair k

    int nx() const { return 4 * G; }
    int nv() const { return 2 * N; }
    int n() const { return 4 * G + 2 * N; }
    int vR(int bus) const { return nx() + 2 * pair_of_bus[bus - 1]; }
    int vI(int bus) const { return vR(bus) + 1; }
    std::vector<std::string> names(const NetworkCase& c) const;
};

StateLayout make_layout(const NetworkCase& c);

// Nonlinear plant equations:
//   E_D x' = f(x, i_g, u),   0 = stator(x, i_g, v),   0 = balance(x, i_g, v)
// with u = (T_M, E_fd) per generator and constant-power loads. When
// low_voltage > 0 the load demand is scaled by min(1, |V|^2 / low_voltage^2).
class NetworkEquations {
public:
    NetworkEquations(const NetworkCase& c, const CMat& ybus);

    void set_ybus(const CMat& ybus);
    const CMat& ybus() const { return ybus_; }
    const StateLayout& layout() const { return layout_; }
    Vec ed_diagonal() const;

    double low_voltage = 0.0;

    Vec f(const Vec& x, const Vec& ig, const Vec& u) const;
    Vec stator(const Vec& x, const Vec& ig, const Vec& v) const;
    Vec balance(const Vec& x, const Vec& ig, const Vec& v, const Vec& PL, const Vec& QL) const;

    struct Jacobian {
        Mat fx, fi, fu;
        Mat sx, si, sv;
        Mat bx, bi, bv;
    };
    Jacobian jacobian(const Vec& x, const Vec& ig, const Vec& v, const Vec& PL, const Vec& QL) const;

    // Stacked operating-point vectors in layout order.
    Vec x_of(const OperatingPoint& op) const;
    Vec ig_of(const OperatingPoint& op) const;
    Vec v_of(const CVec& v) const;
    Vec u_of(const OperatingPoint& op) const;
    // Bus load vectors in layout pair order.
    Vec pl_of(const OperatingPoint& op) const;
    Vec ql_of(const OperatingPoint& op) const;

private:
    std::vector<GeneratorParams> gens_;
    StateLayout layout_;
    CMat ybus_;
    double omega0_;
};

}  // namespace dse
