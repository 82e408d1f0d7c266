#include "daedse/evalcli.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

using namespace dse;
using nlohmann::json;

namespace {

struct Common {
    std::string case_path, companion, scenario, out, cache, format = "csv", kind = "p2";
    std::vector<int> pmus;
    std::vector<std::uint64_t> seeds;
    int jobs = 1;
    bool pi = false;
    double gamma_scale = -1.0, gamma_level = 1.0, c1 = 1.0, c2 = 1.0;
};

void emit(const Common& o, const std::string& text, const std::string& default_name)
{
    if (o.out.empty()) {
        std::cout << text;
        return;
    }
    namespace fs = std::filesystem;
    const fs::path p(o.out);
    const std::string file = (fs::is_directory(p) || o.out.back() == '/') ? (p / default_name).string() : o.out;
    write_text_file(file, text);
    std::cerr << "wrote " << file << "\n";
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Mat& m)
{
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

std::string mat_csv(const Mat& m)
{
    std::ostringstream os;
    os.precision(17);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
        os << "\n";
    }
    return os.str();
}

void need_case(const Common& o)
{
    if (o.case_path.empty()) throw config_error("--case is required");
}

Scenario scenario_for(const Common& o)
{
    if (o.scenario.empty()) throw config_error("--scenario is required");
    Scenario s = load_scenario(o.scenario);
    if (!o.seeds.empty()) s.seeds = o.seeds;
    s.validate();
    return s;
}

RunOptions run_options(const Common& o)
{
    RunOptions r;
    r.out_dir = o.out;
    r.jobs = o.jobs;
    r.cache_dir = !o.cache.empty() ? o.cache : (o.out.empty() ? "" : (std::filesystem::path(o.out) / "gains").string());
    return r;
}

int cmd_parse(const Common& o)
{
    need_case(o);
    const NetworkCase c = load_case(o.case_path, o.companion);
    if (o.format == "json") {
        json j;
        j["name"] = c.name;
        j["base_mva"] = c.base_mva;
        j["buses"] = c.N();
        j["branches"] = c.branches.size();
        j["generators"] = c.G();
        j["slack"] = c.original_id(c.slack_bus());
        j["bus_ids"] = c.original_ids;
        emit(o, j.dump(2) + "\n", "case.json");
    } else {
        emit(o, serialize_case(c), "case.txt");
    }
    return 0;
}

int cmd_pf(const Common& o)
{
    need_case(o);
    const NetworkCase c = load_case(o.case_path, o.companion);
    const PowerFlowSolution pf = solve_power_flow(c);
    const OperatingPoint op = initialize_generators(c, pf);
    if (o.format == "json") {
        json j;
        json buses = json::array();
        for (int i = 0; i < c.N(); ++i)
            buses.push_back({{"bus", c.original_id(i + 1)}, {"vm", std::abs(pf.v(i))}, {"va_deg", std::arg(pf.v(i)) * 180.0 / M_PI}});
        j["buses"] = buses;
        j["iterations"] = pf.iterations;
        j["mismatch"] = pf.mismatch;
        j["delta"] = vec_json(op.delta);
        j["eqp"] = vec_json(op.eqp);
        j["edp"] = vec_json(op.edp);
        j["TM"] = vec_json(op.TM);
        j["Efd"] = vec_json(op.Efd);
        j["machine_residual"] = machine_residual(c, op);
        emit(o, j.dump(2) + "\n", "pf.json");
    } else {
        std::ostringstream os;
        os.precision(10);
        os << "bus,vm,va_deg\n";
        for (int i = 0; i < c.N(); ++i)
            os << c.original_id(i + 1) << ',' << std::abs(pf.v(i)) << ',' << std::arg(pf.v(i)) * 180.0 / M_PI << "\n";
        os << "# iterations " << pf.iterations << ", mismatch " << pf.mismatch << ", machine residual "
           << machine_residual(c, op) << "\n";
        emit(o, os.str(), "pf.csv");
    }
    return 0;
}

int cmd_linearize(const Common& o)
{
    need_case(o);
    const ModelBundle b = load_bundle(o.case_path, o.companion, o.pmus.empty() ? std::vector<int>{} : o.pmus);
    const DescriptorModel& m = b.model;
    const std::vector<std::pair<std::string, const Mat*>> mats{{"E", &m.E},   {"A", &m.A},   {"B_u", &m.B_u},
                                                               {"C", &m.C},   {"A1", &m.A1}, {"A2", &m.A2},
                                                               {"A3", &m.A3}, {"A4", &m.A4}};
    if (o.format == "json") {
        json j;
        j["states"] = m.layout.names(b.net);
        for (const auto& [k, v] : mats) j[k] = mat_json(*v);
        j["x0"] = vec_json(m.x0);
        j["u0"] = vec_json(m.u0);
        emit(o, j.dump() + "\n", "model.json");
    } else if (!o.out.empty() && std::filesystem::is_directory(o.out)) {
        for (const auto& [k, v] : mats) write_text_file((std::filesystem::path(o.out) / (k + ".csv")).string(), mat_csv(*v));
        std::cerr << "wrote " << mats.size() << " matrices to " << o.out << "\n";
    } else {
        emit(o, export_matrices(mats), "model.txt");
    }
    return 0;
}

int cmd_check(const Common& o)
{
    need_case(o);
    if (o.pmus.empty()) throw config_error("--pmus is required");
    const ModelBundle b = load_bundle(o.case_path, o.companion, o.pmus);
    const PencilReport r = check_model(b.model);
    emit(o, r.to_text(), "check.txt");
    const bool ok = r.regularity.regular && r.impulse_free && r.detectability.detectable && r.iobs.observable;
    return ok ? 0 : int(ErrorKind::structural);
}

int cmd_synth(const Common& o)
{
    need_case(o);
    if (o.pmus.empty()) throw config_error("--pmus is required");
    const ModelBundle b = load_bundle(o.case_path, o.companion, o.pmus);
    const PencilReport r = check_model(b.model);
    if (!r.detectability.detectable || !r.iobs.observable)
        throw structural_error("PMU set fails detectability or impulse observability\n" + r.to_text());
    ObserverSpec spec;
    spec.name = o.kind;
    spec.kind = o.kind;
    spec.pi = o.pi;
    spec.gamma_scale = o.gamma_scale;
    spec.gamma_level = o.gamma_level;
    spec.c1 = o.c1;
    spec.c2 = o.c2;
    if (spec.kind == "two_stage") throw config_error("the two-stage estimator has no gain to synthesize");
    const DesignedObserver d = design_observer(b.model, spec, o.cache);
    std::cerr << d.gain.formulation << ' ' << d.gain.status << "  kappa " << d.gain.kappa << "  gamma " << d.gain.gamma
              << (d.from_cache ? "  (cached)" : "") << "\n"
              << d.gain.cert.to_text();
    emit(o, serialize_gain(d.gain), "gain.txt");
    return 0;
}

int cmd_simulate(const Common& o)
{
    Scenario s = scenario_for(o);
    s.observers.clear();
    s.seeds.resize(1);
    RunOptions r = run_options(o);
    const MetricsReport rep = run_scenario(s, r);
    std::cout << report_text(rep);
    return 0;
}

int cmd_evaluate(const Common& o)
{
    const Scenario s = scenario_for(o);
    const MetricsReport rep = run_scenario(s, run_options(o));
    std::cout << (o.format == "json" ? report_json(rep) : report_text(rep));
    return 0;
}

int cmd_compare(const Common& o)
{
    const Scenario s = scenario_for(o);
    const MetricsReport rep = run_scenario(s, run_options(o));
    std::vector<const ObserverMetrics*> order;
    for (const auto& m : rep.observers) order.push_back(&m);
    std::stable_sort(order.begin(), order.end(),
                     [](const ObserverMetrics* a, const ObserverMetrics* b) { return a->rmse_mean < b->rmse_mean; });
    std::ostringstream os;
    os.precision(6);
    if (o.format == "json") {
        json j = json::array();
        for (const auto* m : order) {
            double run = 0.0;
            for (double t : m->run_seconds) run += t;
            j.push_back({{"name", m->name}, {"rmse", m->rmse_mean}, {"mean_error_norm", m->error_norm_mean},
                         {"run_seconds", run / double(m->run_seconds.size())}});
        }
        os << j.dump(2) << "\n";
    } else {
        os << "rank,observer,rmse,mean_error_norm,run_seconds\n";
        int k = 1;
        for (const auto* m : order) {
            double run = 0.0;
            for (double t : m->run_seconds) run += t;
            os << k++ << ',' << m->name << ',' << m->rmse_mean << ',' << m->error_norm_mean << ','
               << run / double(m->run_seconds.size()) << "\n";
        }
    }
    std::cout << os.str();
    return 0;
}

int cmd_sweep(const Common& o)
{
    if (o.scenario.empty()) throw config_error("--scenario is required (a sweep file)");
    SweepSpec sw = load_sweep(o.scenario);
    if (!o.seeds.empty()) sw.base.seeds = o.seeds;
    RunOptions r = run_options(o);
    const auto reps = run_sweep(sw, r);
    std::cout << sweep_table(sw, reps);
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Observer-based dynamic state estimation for power-network DAEs"};
    app.require_subcommand(1);
    Common o;

    auto add_case = [&](CLI::App* c, bool pmus) {
        c->add_option("--case", o.case_path, "case file (native or MATPOWER subset .m)");
        c->add_option("--companion", o.companion, "machine-parameter table for .m cases");
        if (pmus) c->add_option("--pmus", o.pmus, "PMU bus ids")->delimiter(',');
    };
    auto add_out = [&](CLI::App* c) {
        c->add_option("--out", o.out, "output file or directory");
        c->add_option("--format", o.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
    };
    auto add_run = [&](CLI::App* c) {
        c->add_option("--scenario", o.scenario, "scenario file")->required();
        c->add_option("--seed", o.seeds, "override the scenario seeds")->delimiter(',');
        c->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
        c->add_option("--cache", o.cache, "gain cache directory (default <out>/gains)");
        add_out(c);
    };

    auto* parse = app.add_subcommand("parse", "parse and validate a case");
    add_case(parse, false);
    add_out(parse);
    auto* pf = app.add_subcommand("pf", "power flow and generator initialization");
    add_case(pf, false);
    add_out(pf);
    auto* lin = app.add_subcommand("linearize", "descriptor matrices at the operating point");
    add_case(lin, true);
    add_out(lin);
    auto* check = app.add_subcommand("check", "regularity, impulse-freeness, detectability, I-observability");
    add_case(check, true);
    add_out(check);
    auto* synth = app.add_subcommand("synth", "observer gain by LMI synthesis");
    add_case(synth, true);
    add_out(synth);
    synth->add_option("--kind", o.kind, "admissibility, p1, p2, p3 or hinf")
        ->check(CLI::IsMember({"admissibility", "p1", "p2", "p3", "hinf"}));
    synth->add_flag("--pi", o.pi, "proportional-integral observer with B_nu = B_u");
    synth->add_option("--gamma-scale", o.gamma_scale, "Gamma = s I");
    synth->add_option("--gamma", o.gamma_level, "fixed level for hinf");
    synth->add_option("--c1", o.c1);
    synth->add_option("--c2", o.c2);
    synth->add_option("--cache", o.cache, "gain cache directory");
    auto* sim = app.add_subcommand("simulate", "plant only, first seed");
    add_run(sim);
    auto* eval = app.add_subcommand("evaluate", "run a scenario and report metrics");
    add_run(eval);
    auto* cmp = app.add_subcommand("compare", "rank the scenario's estimators by RMSE");
    add_run(cmp);
    auto* sweep = app.add_subcommand("sweep", "run PMU-set variants of a base scenario");
    add_run(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : int(ErrorKind::config);
    }

    try {
        if (*parse) return cmd_parse(o);
        if (*pf) return cmd_pf(o);
        if (*lin) return cmd_linearize(o);
        if (*check) return cmd_check(o);
        if (*synth) return cmd_synth(o);
        if (*sim) return cmd_simulate(o);
        if (*eval) return cmd_evaluate(o);
        if (*cmp) return cmd_compare(o);
        if (*sweep) return cmd_sweep(o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return int(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
