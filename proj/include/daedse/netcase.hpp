#pragma once

#include "daedse/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace dse {

enum class BusKind { slack, generator, load };

struct BusRecord {
    int id = 0;  // internal 1-based contiguous id
    BusKind kind = BusKind::load;
    cplx shunt{0.0, 0.0};  // pu admittance at 1 pu voltage
    double vset = 1.0;     // pu, slack/generator buses
    cplx load{0.0, 0.0};   // P_L + jQ_L demand, pu
};

struct BranchRecord {
    int from = 0, to = 0;
    cplx z{0.0, 0.0};  // series impedance, pu
    double b = 0.0;    // total charging susceptance, pu
    double tap = 1.0;
    double shift = 0.0;  // rad
    bool in_service = true;
};

struct GeneratorParams {
    int bus = 0;      // internal bus id
    double pg = 0.0;  // active dispatch, pu (slack value recomputed by power flow)
    double M = 0.0, D = 0.0;
    double xd = 0.0, xq = 0.0, xdp = 0.0, xqp = 0.0;
    double Td0p = 0.0, Tq0p = 0.0;
    double Rs = 0.0;
};

struct NetworkCase {
    std::vector<BusRecord> buses;
    std::vector<BranchRecord> branches;
    std::vector<GeneratorParams> generators;
    double base_mva = 100.0;
    double omega0 = 376.99111843077515;  // 2*pi*60
    std::vector<int> original_ids;       // original_ids[id-1] = id in the source document
    std::string name;

    int N() const { return int(buses.size()); }
    int G() const { return int(generators.size()); }
    // Internal id for an original bus id; throws config error if unknown.
    int internal_id(int original) const;
    int original_id(int internal) const { return original_ids.at(internal - 1); }
    // Generator index at an internal bus id, or -1.
    int generator_at(int internal) const;
    int slack_bus() const;
};

struct AdmittanceSet {
    CMat y_bus;                    // N x N
    CMat y_from, y_to;             // |E| x N (in-service branches only)
    CMat y_ft;                     // 2|E| x N
    std::vector<int> branch_index; // row e -> index into case.branches
};

enum class CaseFormat { native, matpower_subset };

// Parses a case document. For matpower_subset the companion table supplies
// machine parameters keyed by original bus id:
//   bus H D xd xq xdp xqp Td0p Tq0p Rs   (H in s, converted to M = 2H/omega0)
// A header line starting with "# bus M ..." switches the second column to M.
NetworkCase parse_case(const std::string& text, CaseFormat format, const std::string& companion = "");

// Reads a case from disk; ".m" files use the MATPOWER subset importer and look
// for "<stem>_dyn.txt" beside them unless a companion path is given.
NetworkCase load_case(const std::string& path, const std::string& companion_path = "");

std::string serialize_case(const NetworkCase& c);

void validate_case(const NetworkCase& c);

AdmittanceSet build_admittances(const NetworkCase& c);

// Bus-level incidence helpers.
std::vector<int> incident_branches(const NetworkCase& c, const AdmittanceSet& adm, int bus);

std::string read_text_file(const std::string& path);

}  // namespace dse
