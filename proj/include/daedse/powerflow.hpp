#pragma once

#include "daedse/netcase.hpp"

#include <optional>

namespace dse {

struct PowerFlowOptions {
    double tol = 1e-8;    // max |mismatch|, pu
    int max_iter = 30;
    int max_halvings = 10;
};

struct PowerFlowSolution {
    CVec v;          // complex bus voltages, internal bus order
    CVec injection;  // net complex injection S_i = V_i conj((Y V)_i)
    int iterations = 0;
    double mismatch = 0.0;
};

// Polar Newton-Raphson with flat start unless a start vector is given.
// Reactive limits are not enforced.
PowerFlowSolution solve_power_flow(const NetworkCase& c, const std::optional<CVec>& start = std::nullopt,
                                   const PowerFlowOptions& opt = {});

// Injection mismatch S_calc - S_spec with S_spec from dispatch and loads; only
// the entries the Newton iteration controls are meaningful for slack/PV buses.
CVec power_injections(const CMat& ybus, const CVec& v);

struct OperatingPoint {
    CVec v0;  // per bus, internal order
    Vec delta, omega, eqp, edp, id, iq, TM, Efd, PG, QG;  // per generator
    Vec PL, QL;                                           // per bus
    double mismatch_norm = 0.0;
    double omega0 = 0.0;

    int G() const { return int(delta.size()); }
};

OperatingPoint initialize_generators(const NetworkCase& c, const PowerFlowSolution& pf);

// Power flow followed by generator initialization.
OperatingPoint compute_operating_point(const NetworkCase& c);

// Largest residual of the steady-state machine equations (differential rows
// with zero derivative and the stator rows) at the point.
double machine_residual(const NetworkCase& c, const OperatingPoint& op);

// Text export: one "key v1 v2 ..." line per vector, %.17g.
std::string serialize_operating_point(const OperatingPoint& op);
OperatingPoint parse_operating_point(const std::string& text);

}  // namespace dse
