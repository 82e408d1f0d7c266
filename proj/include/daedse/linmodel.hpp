#pragma once

#include "daedse/equations.hpp"

namespace dse {

struct GeneratorBlocks {
    Mat E_D, A_D, D_D, B_D;  // 4G x 4G, 4G x 4G, 4G x 2G, 4G x 2G
    Mat A_A, D_A, G_A;       // 2G x 4G, 2G x 2G, 2G x 2G
};

struct NetworkBlocks {
    Mat A_G, D_G;     // generator-bus balance rows w.r.t. machine states / stator currents
    Mat G_GG, G_GL;   // generator-bus rows w.r.t. generator / load bus voltages
    Mat G_LG, G_LL;   // load-bus rows
};

// Matrices of E x' = A x + B_u u + B_w w,  y = C x + D_w w.
struct DescriptorSystem {
    Mat E, A, B_u, B_w, C, D_w;
    int r = 0;  // rank(E)

    int n() const { return int(A.rows()); }
    int p() const { return int(C.rows()); }
    int q() const { return int(B_w.cols()); }
};

struct MeasurementModel {
    Mat C_tilde;                  // p x 2N, acts on (all vR, all vI) in bus order
    Mat C_M;                      // 2N x 2N permutation, v_tilde = C_M v
    Mat C;                        // p x n
    std::vector<int> pmus;        // original bus ids
    std::vector<int> rows_per_pmu;
};

struct DescriptorModel : DescriptorSystem {
    Mat A1, A2, A3, A4, Abar_G;
    Mat E_D, B_D;
    Mat C_tilde, C_M;
    GeneratorBlocks gen;
    NetworkBlocks net;
    StateLayout layout;
    std::vector<int> pmus;  // original ids
    int G = 0, N = 0, m = 0;
    Vec x0;  // operating point in layout order (4G machine states, 2N voltages)
    Vec u0;
};

struct AugmentedModel : DescriptorSystem {
    Mat B_nu, Psi;
    int n_base = 0, v = 0;
};

GeneratorBlocks linearize_generators(const NetworkCase& c, const OperatingPoint& op);
NetworkBlocks linearize_network(const NetworkCase& c, const OperatingPoint& op);

MeasurementModel build_measurement(const NetworkCase& c, const AdmittanceSet& adm, const StateLayout& layout,
                                   const std::vector<int>& pmus);

// Eliminates the stator currents and stacks the descriptor form. B_w = [I O],
// D_w = [O I] with q = n + p.
DescriptorModel assemble_descriptor(const NetworkCase& c, const OperatingPoint& op, const GeneratorBlocks& gb,
                                    const NetworkBlocks& nb, const std::vector<int>& pmus);

DescriptorModel build_model(const NetworkCase& c, const OperatingPoint& op, const std::vector<int>& pmus);

AugmentedModel augment_unknown_input(const DescriptorSystem& model, const Mat& B_nu, const Mat& Psi);

// Dense text container: "name rows cols" header followed by row-major values.
std::string export_matrices(const std::vector<std::pair<std::string, const Mat*>>& mats);
std::vector<std::pair<std::string, Mat>> import_matrices(const std::string& text);

}  // namespace dse
