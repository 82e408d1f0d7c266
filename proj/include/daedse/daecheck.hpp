#pragma once

#include "daedse/linmodel.hpp"

#include <string>

namespace dse {

// Orthonormal rows spanning the left null space of E, (n - r) x n.
Mat orthogonal_complement(const Mat& E, int r);

struct PencilSpectrum {
    std::vector<cplx> finite;  // generalized eigenvalues of (E, A)
    int infinite = 0;
};

// QZ-based generalized eigenvalues of det(sE - A) = 0; |beta| below
// max(1e-10 ||E||, 1e3 n eps ||(E, A)||) counts as infinite. Throws structural error for a singular pencil.
PencilSpectrum finite_spectrum(const Mat& E, const Mat& A);

struct RankVerdict {
    bool pass = false;
    int rank = 0;
    int required = 0;
    double gap = 0.0;  // deciding singular-value ratio
};

struct RegularityReport {
    bool regular = false;
    bool via_A4 = false;   // A4 nonsingular certificate
    double cond_A4 = 0.0;
    cplx witness{0.0, 0.0};  // s with det(sE - A) != 0
};

// Primary test via A4; falls back to sampling det(A4 + A3 (s E_D - A1)^{-1} A2).
RegularityReport is_regular(const DescriptorModel& m);
// Schur-complement form of the regularity condition at one sample s.
double regularity_sample(const DescriptorModel& m, cplx s);

struct DetectabilityReport {
    bool detectable = false;
    std::vector<cplx> tested;  // finite eigenvalues with Re(s) >= -1e-8
    int worst_deficiency = 0;
    double min_gap = INFINITY;
    std::string warning;
};

// PBH-style test rank [sE - A; C] = n on the closed right half-plane part of the
// finite spectrum. Rank tolerance is rel_tol * sigma_max.
DetectabilityReport is_detectable(const Mat& E, const Mat& A, const Mat& C, double rel_tol = 1e-8);

struct IObservabilityReport {
    bool observable = false;
    RankVerdict reduced;  // [[A4^{-1} A3, C_M^T], [I, O], [O, C_tilde]] has rank n
    RankVerdict full;     // [[E, A], [O, E], [O, C]] has rank n + rank E
    bool agree = false;
};

IObservabilityReport is_i_observable(const DescriptorModel& m);
RankVerdict i_observability_full(const Mat& E, const Mat& A, const Mat& C);

struct PencilReport {
    RegularityReport regularity;
    bool impulse_free = false;
    bool index_one = false;
    int degree = 0;  // deg det(sE - A)
    int rank_E = 0;
    PencilSpectrum spectrum;
    DetectabilityReport detectability;
    IObservabilityReport iobs;
    std::string to_text(int digits = 6) const;
};

PencilReport check_model(const DescriptorModel& m);

// Impulse-freeness via the degree test on an arbitrary pair.
bool impulse_free(const Mat& E, const Mat& A);

}  // namespace dse
