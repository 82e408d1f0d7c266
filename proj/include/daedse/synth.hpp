#pragma once

#include "daedse/linmodel.hpp"
#include "daedse/sdp.hpp"

#include <string>

namespace dse {

enum class ProblemKind { admissibility, p1, hinf, p2, p3 };
enum class Formulation { automatic, full, reduced };

struct SynthesisProblem {
    ProblemKind kind = ProblemKind::p2;
    Mat Gamma;           // n x n performance matrix; empty means zero
    double gamma = 0.0;  // fixed level for kind == hinf
    bool min_kappa = false;  // hinf only: minimize kappa instead of the LMI level
    double c1 = 1.0, c2 = 1.0;
    double eps = -1.0;  // <= 0 selects 1e-6 * ||A||_2
    Formulation formulation = Formulation::automatic;
    SdpOptions sdp;
};

struct Certificate {
    double eps = 0.0;
    double lmi_max_eig = 0.0;  // printed LMI at the certificate
    double x_min_eig = 0.0;
    double bilinear_max_eig = 0.0;  // A'P + P'A - C'L'P - P'LC (+ H-inf rows)
    double max_real = 0.0;          // finite spectrum of (E, A - LC)
    bool impulse_free = false;
    double ep_sym_err = 0.0, ep_min_eig = 0.0;
    double cond_P = 0.0;
    double sweep_gain = 0.0, sweep_freq = 0.0;  // H-inf designs only
    bool lmi_ok = false, stable = false, ep_ok = false, cond_ok = false, hinf_ok = true;
    bool pass() const { return lmi_ok && stable && impulse_free && ep_ok && cond_ok && hinf_ok; }
    std::string to_text() const;
};

struct ObserverGain {
    ProblemKind kind = ProblemKind::admissibility;
    bool pi = false;
    int v = 0;  // integral rows at the bottom of L
    Mat L, X, Y, W, P, Eperp;
    double kappa = NAN, gamma = NAN;
    double gamma_opt = NAN;  // SDP optimum; gamma differs only after a backoff
    double backoff = 0.0;    // relative gamma increase used to leave the stability boundary
    double eps = 0.0;
    std::string formulation, status;
    int iterations = 0;
    double seconds = 0.0;
    Certificate cert;

    Mat L_P() const { return L.topRows(L.rows() - v); }
    Mat L_I() const { return L.bottomRows(v); }
};

std::string kind_name(ProblemKind k);
ProblemKind parse_kind(const std::string& s);

double default_eps(const DescriptorSystem& sys);

// Runs the SDP for the requested problem, recovers L and certifies it.
// Throws infeasible_error when the admissibility LMI has no solution and
// numerical_error when the solver or gain recovery fails.
ObserverGain synthesize(const DescriptorSystem& sys, const SynthesisProblem& prob);

ObserverGain solve_admissibility(const DescriptorSystem& sys, double eps = -1.0);
ObserverGain solve_p1(const DescriptorSystem& sys, double eps = -1.0);
ObserverGain solve_hinf(const DescriptorSystem& sys, const Mat& Gamma, double gamma, double eps = -1.0);
ObserverGain solve_p2(const DescriptorSystem& sys, const Mat& Gamma, double eps = -1.0);
ObserverGain solve_p3(const DescriptorSystem& sys, const Mat& Gamma, double c1, double c2, double eps = -1.0);
// PI design on the augmented pair; checks detectability of the augmented pair first.
ObserverGain synth_pi(const AugmentedModel& aug, const SynthesisProblem& prob);

struct RecoveredGain {
    Mat L, P;
    double cond_P = 0.0;
};
// L = (W P^-1)' with P = X E + Eperp' Y. Throws numerical_error if cond(P) > 1e12.
RecoveredGain recover_gain(const Mat& X, const Mat& Y, const Mat& W, const Mat& E, const Mat& Eperp);

// Left-hand side of the admissibility LMI (Gamma empty) or of the H-inf LMI.
Mat lmi_matrix(const DescriptorSystem& sys, const Mat& X, const Mat& Y, const Mat& W, const Mat& Eperp,
               bool hinf, const Mat& Gamma, double gamma);

struct SweepResult {
    double gain = 0.0;  // sup sigma_max(Gamma (jwE - Acl)^-1 Bcl)
    double freq = 0.0;
};
SweepResult hinf_sweep(const Mat& E, const Mat& Acl, const Mat& Bcl, const Mat& Gamma, double wmin = 1e-3,
                       double wmax = 1e4, int points = 400);

Certificate certify(const DescriptorSystem& sys, const ObserverGain& g, const Mat& Gamma);

// Cone program exactly as solved by synthesize (for export / cross-checks).
ConeProgram build_program(const DescriptorSystem& sys, const SynthesisProblem& prob, bool reduced);

std::string serialize_gain(const ObserverGain& g);
ObserverGain parse_gain(const std::string& text);

}  // namespace dse
