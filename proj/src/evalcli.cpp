#include "daedse/evalcli.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace dse {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const char* kVersion = "daedse 0.1.0";

// Typed access with the key path in every error message.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where))
    {
        if (!j_.is_object()) throw config_error(where_ + ": expected an object");
    }

    void allow(std::initializer_list<const char*> keys) const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool ok = false;
            for (const char* k : keys) ok = ok || it.key() == k;
            if (!ok) throw config_error(where_ + ": unknown key '" + it.key() + "'");
        }
    }

    bool has(const char* k) const { return j_.contains(k) && !j_.at(k).is_null(); }
    const json& at(const char* k) const { return j_.at(k); }
    std::string path(const char* k) const { return where_ + "." + k; }

    double num(const char* k, double def) const
    {
        if (!has(k)) return def;
        if (!j_.at(k).is_number()) throw config_error(path(k) + ": expected a number");
        return j_.at(k).get<double>();
    }
    int integer(const char* k, int def) const
    {
        if (!has(k)) return def;
        if (!j_.at(k).is_number_integer()) throw config_error(path(k) + ": expected an integer");
        return j_.at(k).get<int>();
    }
    bool flag(const char* k, bool def) const
    {
        if (!has(k)) return def;
        if (!j_.at(k).is_boolean()) throw config_error(path(k) + ": expected true or false");
        return j_.at(k).get<bool>();
    }
    std::string str(const char* k, const std::string& def) const
    {
        if (!has(k)) return def;
        if (!j_.at(k).is_string()) throw config_error(path(k) + ": expected a string");
        return j_.at(k).get<std::string>();
    }
    std::string choice(const char* k, const std::string& def, std::initializer_list<const char*> options) const
    {
        const std::string v = str(k, def);
        for (const char* o : options)
            if (v == o) return v;
        std::string msg = path(k) + ": '" + v + "' is not one of";
        for (const char* o : options) msg += std::string(" ") + o;
        throw config_error(msg);
    }
    std::vector<double> numbers(const char* k) const
    {
        std::vector<double> out;
        if (!has(k)) return out;
        if (!j_.at(k).is_array()) throw config_error(path(k) + ": expected an array of numbers");
        for (const auto& e : j_.at(k)) {
            if (!e.is_number()) throw config_error(path(k) + ": expected an array of numbers");
            out.push_back(e.get<double>());
        }
        return out;
    }
    std::vector<int> integers(const char* k) const
    {
        std::vector<int> out;
        if (!has(k)) return out;
        if (!j_.at(k).is_array()) throw config_error(path(k) + ": expected an array of integers");
        for (const auto& e : j_.at(k)) {
            if (!e.is_number_integer()) throw config_error(path(k) + ": expected an array of integers");
            out.push_back(e.get<int>());
        }
        return out;
    }

private:
    const json& j_;
    std::string where_;
};

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), Eigen::Index(v.size())); }

std::string resolve(const std::string& p, const std::string& base)
{
    if (p.empty()) return p;
    const fs::path fp(p);
    return fp.is_absolute() ? p : (fs::path(base) / fp).lexically_normal().string();
}

ObserverSpec parse_observer(const json& j, const std::string& where)
{
    Reader r(j, where);
    r.allow({"name", "kind", "pi", "gamma_scale", "gamma_level", "c1", "c2", "psi", "formulation", "kf"});
    ObserverSpec o;
    o.kind = r.choice("kind", "p2", {"admissibility", "p1", "p2", "p3", "hinf", "two_stage"});
    o.name = r.str("name", o.kind);
    o.pi = r.flag("pi", false);
    o.gamma_scale = r.num("gamma_scale", -1.0);
    o.gamma_level = r.num("gamma_level", 1.0);
    o.c1 = r.num("c1", 1.0);
    o.c2 = r.num("c2", 1.0);
    o.psi = r.num("psi", 0.0);
    const std::string f = r.choice("formulation", "automatic", {"automatic", "full", "reduced"});
    o.formulation = f == "full" ? Formulation::full : f == "reduced" ? Formulation::reduced : Formulation::automatic;
    if (r.has("kf")) {
        Reader k(r.at("kf"), r.path("kf"));
        k.allow({"T", "q_floor", "meas_var", "r_floor"});
        o.kf.T = k.num("T", o.kf.T);
        o.kf.q_floor = k.num("q_floor", o.kf.q_floor);
        o.kf.r_floor = k.num("r_floor", o.kf.r_floor);
        o.kf_meas_var_set = k.has("meas_var");
        o.kf.meas_var = k.num("meas_var", 0.0);
    }
    if (o.kind == "two_stage" && o.pi) throw config_error(where + ": the two-stage estimator has no PI form");
    return o;
}

std::string fmt(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

void Scenario::validate() const
{
    if (case_path.empty()) throw config_error("scenario: case is required");
    if (pmus.empty()) throw config_error("scenario: pmus must not be empty");
    if (!(dt > 0.0) || !(T > 0.0) || !(t_end > 0.0)) throw config_error("scenario: t_end, dt and T must be positive");
    if (dt > T) throw config_error("scenario: dt must not exceed T");
    if (seeds.empty()) throw config_error("scenario: at least one seed is required");
    if (start_frac < 0.0) throw config_error("scenario: start_frac must be >= 0");
    std::vector<std::string> names;
    for (const auto& o : observers) {
        if (std::find(names.begin(), names.end(), o.name) != names.end())
            throw config_error("scenario: duplicate observer name '" + o.name + "'");
        names.push_back(o.name);
        if (o.kind == "two_stage" && std::abs(o.kf.T / dt - std::round(o.kf.T / dt)) > 1e-9 * o.kf.T / dt)
            throw config_error("scenario: KF period of '" + o.name + "' must be a multiple of dt");
    }
    fault.validate();
    noise.validate();
}

Scenario parse_scenario(const std::string& text, const std::string& base_dir)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw config_error(std::string("scenario is not valid JSON: ") + e.what());
    }
    Reader r(j, "scenario");
    r.allow({"name", "case", "companion", "pmus", "observers", "fault", "noise", "inputs", "load_model", "t_end",
             "dt", "T", "start_frac", "seeds", "plot_states", "description"});
    Scenario s;
    s.name = r.str("name", "scenario");
    s.case_path = resolve(r.str("case", ""), base_dir);
    s.companion_path = resolve(r.str("companion", ""), base_dir);
    s.pmus = r.integers("pmus");
    if (r.has("observers")) {
        if (!r.at("observers").is_array()) throw config_error("scenario.observers: expected an array");
        int k = 0;
        for (const auto& o : r.at("observers"))
            s.observers.push_back(parse_observer(o, "scenario.observers[" + std::to_string(k++) + "]"));
    }
    if (r.has("fault")) {
        Reader f(r.at("fault"), "scenario.fault");
        f.allow({"bus", "from", "to", "t_fault", "t_clear_near", "t_clear_remote", "admittance"});
        s.fault.enabled = true;
        s.fault.bus = f.integer("bus", 0);
        s.fault.from = f.integer("from", 0);
        s.fault.to = f.integer("to", 0);
        s.fault.t_fault = f.num("t_fault", 0.0);
        s.fault.t_clear_near = f.num("t_clear_near", s.fault.t_clear_near);
        s.fault.t_clear_remote = f.num("t_clear_remote", s.fault.t_clear_remote);
        if (f.has("admittance")) {
            const auto y = f.numbers("admittance");
            if (y.size() != 2) throw config_error("scenario.fault.admittance: expected [G, B]");
            s.fault.admittance = cplx(y[0], y[1]);
        }
    }
    if (r.has("noise")) {
        Reader n(r.at("noise"), "scenario.noise");
        n.allow({"process", "process_scale", "process_var", "measurement", "meas_var", "a", "b", "m", "s"});
        s.noise.process = n.choice("process", "none", {"none", "gaussian"}) == "gaussian" ? ProcessNoise::gaussian
                                                                                          : ProcessNoise::none;
        s.noise.process_scale = n.num("process_scale", s.noise.process_scale);
        s.noise.process_var = to_vec(n.numbers("process_var"));
        const std::string m = n.choice("measurement", "none", {"none", "gaussian", "cauchy", "laplace"});
        s.noise.measurement = m == "gaussian" ? MeasurementNoise::gaussian
                              : m == "cauchy" ? MeasurementNoise::cauchy
                              : m == "laplace" ? MeasurementNoise::laplace
                                               : MeasurementNoise::none;
        s.noise.meas_var = n.num("meas_var", 0.0);
        s.noise.a = n.num("a", s.noise.a);
        s.noise.b = n.num("b", s.noise.b);
        s.noise.m = n.num("m", s.noise.m);
        s.noise.s = n.num("s", s.noise.s);
    }
    if (r.has("inputs")) {
        Reader in(r.at("inputs"), "scenario.inputs");
        in.allow({"profile", "observer", "kp", "ki", "ka", "kai", "step", "t_step"});
        s.input.kind = in.choice("profile", "steady", {"steady", "regulated"}) == "regulated"
                           ? InputProfile::regulated
                           : InputProfile::steady;
        s.known_inputs = in.choice("observer", "known", {"known", "steady"}) == "known";
        s.input.kp = in.num("kp", s.input.kp);
        s.input.ki = in.num("ki", s.input.ki);
        s.input.ka = in.num("ka", s.input.ka);
        s.input.kai = in.num("kai", s.input.kai);
        s.input.step = to_vec(in.numbers("step"));
        s.input.t_step = in.num("t_step", 0.0);
    }
    s.load = r.choice("load_model", "constant_impedance", {"constant_impedance", "constant_power"}) ==
                     "constant_power"
                 ? LoadModel::constant_power
                 : LoadModel::constant_impedance;
    s.t_end = r.num("t_end", s.t_end);
    s.dt = r.num("dt", s.dt);
    s.T = r.num("T", s.T);
    s.start_frac = r.num("start_frac", s.start_frac);
    if (r.has("seeds")) {
        s.seeds.clear();
        for (int v : r.integers("seeds")) {
            if (v < 0) throw config_error("scenario.seeds: seeds must be >= 0");
            s.seeds.push_back(std::uint64_t(v));
        }
    }
    if (r.has("plot_states")) {
        if (!r.at("plot_states").is_array()) throw config_error("scenario.plot_states: expected an array of names");
        for (const auto& e : r.at("plot_states")) {
            if (!e.is_string()) throw config_error("scenario.plot_states: expected an array of names");
            s.plot_states.push_back(e.get<std::string>());
        }
    }
    s.validate();
    return s;
}

Scenario load_scenario(const std::string& path)
{
    const std::string text = read_text_file(path);
    return parse_scenario(text, fs::path(path).parent_path().string());
}

std::string scenario_canonical(const Scenario& s)
{
    json j;
    j["name"] = s.name;
    j["case"] = fs::path(s.case_path).filename().string();
    j["case_hash"] = hex64(fnv1a(read_text_file(s.case_path)));
    const std::string comp = s.companion_path.empty() && s.case_path.size() > 2 &&
                                     s.case_path.substr(s.case_path.size() - 2) == ".m"
                                 ? s.case_path.substr(0, s.case_path.size() - 2) + "_dyn.txt"
                                 : s.companion_path;
    if (!comp.empty() && fs::exists(comp)) j["companion_hash"] = hex64(fnv1a(read_text_file(comp)));
    j["pmus"] = s.pmus;
    json obs = json::array();
    for (const auto& o : s.observers) {
        json e{{"name", o.name}, {"kind", o.kind}, {"pi", o.pi}, {"gamma_scale", o.gamma_scale},
               {"gamma_level", o.gamma_level}, {"c1", o.c1}, {"c2", o.c2}, {"psi", o.psi},
               {"formulation", int(o.formulation)}};
        if (o.kind == "two_stage")
            e["kf"] = {{"T", o.kf.T}, {"q_floor", o.kf.q_floor}, {"r_floor", o.kf.r_floor},
                       {"meas_var", o.kf_meas_var_set ? json(o.kf.meas_var) : json(nullptr)}};
        obs.push_back(e);
    }
    j["observers"] = obs;
    if (s.fault.enabled)
        j["fault"] = {{"bus", s.fault.bus},           {"from", s.fault.from},
                      {"to", s.fault.to},             {"t_fault", s.fault.t_fault},
                      {"t_clear_near", s.fault.t_clear_near}, {"t_clear_remote", s.fault.t_clear_remote},
                      {"admittance", {s.fault.admittance.real(), s.fault.admittance.imag()}}};
    j["noise"] = {{"process", int(s.noise.process)},
                  {"process_scale", s.noise.process_scale},
                  {"process_var", std::vector<double>(s.noise.process_var.data(),
                                                      s.noise.process_var.data() + s.noise.process_var.size())},
                  {"measurement", int(s.noise.measurement)},
                  {"meas_var", s.noise.meas_var},
                  {"a", s.noise.a}, {"b", s.noise.b}, {"m", s.noise.m}, {"s", s.noise.s}};
    j["inputs"] = {{"profile", int(s.input.kind)},
                   {"observer", s.known_inputs ? "known" : "steady"},
                   {"kp", s.input.kp}, {"ki", s.input.ki}, {"ka", s.input.ka}, {"kai", s.input.kai},
                   {"step", std::vector<double>(s.input.step.data(), s.input.step.data() + s.input.step.size())},
                   {"t_step", s.input.t_step}};
    j["load_model"] = int(s.load);
    j["t_end"] = s.t_end;
    j["dt"] = s.dt;
    j["T"] = s.T;
    j["start_frac"] = s.start_frac;
    j["seeds"] = s.seeds;
    j["version"] = kVersion;
    return j.dump();
}

std::string scenario_hash(const Scenario& s) { return hex64(fnv1a(scenario_canonical(s))); }

double rmse(const Mat& E)
{
    const Eigen::Index kf = E.cols() - 1;
    if (E.rows() == 0 || kf < 1) throw config_error("rmse needs at least two samples (k_f >= 1)");
    double s = 0.0;
    for (Eigen::Index i = 0; i < E.rows(); ++i) s += std::sqrt(E.row(i).squaredNorm() / double(kf));
    return s;
}

Vec error_norm_series(const Mat& E)
{
    Vec out(E.cols());
    for (Eigen::Index k = 0; k < E.cols(); ++k) out(k) = E.col(k).norm();
    return out;
}

ModelBundle load_bundle(const std::string& case_path, const std::string& companion, const std::vector<int>& pmus)
{
    ModelBundle b;
    b.net = load_case(case_path, companion);
    b.op = compute_operating_point(b.net);
    b.model = build_model(b.net, b.op, pmus);
    return b;
}

namespace {

std::string design_key(const DescriptorModel& m, const ObserverSpec& o)
{
    std::ostringstream os;
    os << kVersion << '\n'
       << export_matrices({{"E", &m.E}, {"A", &m.A}, {"C", &m.C}, {"B_u", &m.B_u}, {"B_w", &m.B_w}, {"D_w", &m.D_w}});
    os.precision(17);
    os << o.kind << ' ' << o.pi << ' ' << o.gamma_scale << ' ' << o.gamma_level << ' ' << o.c1 << ' ' << o.c2 << ' '
       << o.psi << ' ' << int(o.formulation);
    return hex64(fnv1a(os.str()));
}

bool needs_gamma(const std::string& kind) { return kind == "p2" || kind == "p3" || kind == "hinf"; }

}  // namespace

DesignedObserver design_observer(const DescriptorModel& m, const ObserverSpec& spec, const std::string& cache_dir)
{
    DesignedObserver d;
    d.spec = spec;
    if (spec.pi) d.augmented = augment_unknown_input(m, m.B_u, spec.psi * Mat::Identity(m.B_u.cols(), m.B_u.cols()));
    if (spec.kind == "two_stage") {
        std::ostringstream os;
        os << spec.kf.T << ' ' << spec.kf.q_floor << ' ' << spec.kf.r_floor << ' ' << spec.kf.meas_var;
        d.hash = hex64(fnv1a(os.str()));
        return d;
    }
    d.hash = design_key(m, spec);
    const std::string file = cache_dir.empty() ? "" : (fs::path(cache_dir) / (d.hash + ".gain")).string();
    if (!file.empty() && fs::exists(file)) {
        try {
            d.gain = parse_gain(read_text_file(file));
            d.from_cache = d.gain.cert.pass();
        } catch (const Error&) {
            d.from_cache = false;
        }
        if (d.from_cache) return d;
    }
    SynthesisProblem p;
    p.kind = parse_kind(spec.kind);
    p.formulation = spec.formulation;
    p.c1 = spec.c1;
    p.c2 = spec.c2;
    p.gamma = spec.gamma_level;
    const int n = spec.pi ? d.augmented.n() : m.n();
    if (needs_gamma(spec.kind)) {
        const double s = spec.gamma_scale >= 0.0 ? spec.gamma_scale : (spec.pi ? 0.1 : 0.5);
        p.Gamma = s * Mat::Identity(n, n);
    }
    d.gain = spec.pi ? synth_pi(d.augmented, p) : synthesize(m, p);
    if (!file.empty()) write_text_file(file, serialize_gain(d.gain));
    return d;
}

const ObserverMetrics& MetricsReport::at(const std::string& name) const
{
    for (const auto& o : observers)
        if (o.name == name) return o;
    throw config_error("no observer named '" + name + "' in the report");
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn)
{
    const int workers = std::max(1, std::min(jobs, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&]() {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!first) first = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

void write_text_file(const std::string& path, const std::string& text)
{
    const fs::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw config_error("cannot write " + path);
    f << text;
    if (!f) throw config_error("cannot write " + path);
}

namespace {

double kf_meas_var(const Scenario& s, const ObserverSpec& o)
{
    if (o.kf_meas_var_set) return o.kf.meas_var;
    switch (s.noise.measurement) {
    case MeasurementNoise::gaussian: return s.noise.meas_var;
    case MeasurementNoise::laplace: return 2.0 * s.noise.s * s.noise.s;
    case MeasurementNoise::cauchy: return s.noise.b * s.noise.b;
    default: return 0.0;
    }
}

std::string pencil_summary(const PencilReport& p)
{
    std::ostringstream os;
    os << "regular " << (p.regularity.regular ? "yes" : "no") << ", impulse-free " << (p.impulse_free ? "yes" : "no")
       << ", index-one " << (p.index_one ? "yes" : "no") << ", deg det(sE-A) " << p.degree << ", rank E "
       << p.rank_E << ", detectable " << (p.detectability.detectable ? "yes" : "no") << ", I-observable "
       << (p.iobs.observable ? "yes" : "no");
    return os.str();
}

struct SeedResult {
    std::vector<double> rmse, mean_norm, seconds;
    std::vector<std::vector<double>> norm;
    std::vector<std::vector<std::string>> notes;
    double max_residual = 0.0, plant_seconds = 0.0;
    std::vector<std::string> events;
    std::vector<double> t;
};

std::string sanitize(const std::string& s)
{
    std::string o;
    for (char c : s) o += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return o;
}

}  // namespace

MetricsReport run_scenario(const Scenario& s, const RunOptions& opt)
{
    s.validate();
    const ModelBundle b = load_bundle(s.case_path, s.companion_path, s.pmus);
    const DescriptorModel& m = b.model;
    const std::vector<std::string> names = m.layout.names(b.net);

    MetricsReport rep;
    rep.scenario = s.name;
    rep.hash = scenario_hash(s);
    rep.pmus = s.pmus;
    rep.seeds = s.seeds;
    const PencilReport pencil = check_model(m);
    rep.pencil = pencil_summary(pencil);
    if (!pencil.regularity.regular || !pencil.impulse_free)
        throw structural_error("model is not regular and impulse-free\n" + pencil.to_text());
    if (!s.observers.empty() && (!pencil.detectability.detectable || !pencil.iobs.observable))
        throw structural_error("PMU set fails detectability or impulse observability; synthesis aborted\n" +
                               pencil.to_text());
    for (const auto& st : s.plot_states)
        if (std::find(names.begin(), names.end(), st) == names.end())
            throw config_error("plot state '" + st + "' is not a state name");

    std::vector<DesignedObserver> designs(s.observers.size());
    parallel_for(int(designs.size()), opt.jobs, [&](int i) {
        try {
            designs[i] = design_observer(m, s.observers[i], opt.cache_dir);
        } catch (const Error& e) {
            throw Error(e.kind(), "synthesis of '" + s.observers[i].name + "': " + e.what());
        }
    });

    PlantScenario base;
    base.net = &b.net;
    base.op = &b.op;
    base.model = &m;
    base.fault = s.fault;
    base.noise = s.noise;
    base.input = s.input;
    base.opt.t_end = s.t_end;
    base.opt.dt = s.dt;
    base.opt.t_rec = s.T;
    base.opt.load = s.load;

    std::vector<SeedResult> res(s.seeds.size());
    const int seed_jobs = std::max(1, opt.jobs);
    parallel_for(int(s.seeds.size()), seed_jobs, [&](int si) {
        const std::uint64_t seed = s.seeds[si];
        PlantScenario sc = base;
        sc.noise.seed = seed;
        auto rng = substream(seed, "observer start");
        const Vec d0 = random_initial_deviation(m, rng, s.start_frac);
        std::vector<Estimator> est;
        for (const auto& d : designs) {
            est.push_back({d.spec.name, [&, d0](const PlantRun& p) {
                               const std::function<Vec(double)> u =
                                   s.known_inputs ? std::function<Vec(double)>([&p](double t) { return p.inputs.at(t); })
                                                  : std::function<Vec(double)>([&m](double) { return m.u0; });
                               if (d.spec.kind == "two_stage") {
                                   KfOptions k = d.spec.kf;
                                   k.meas_var = kf_meas_var(s, d.spec);
                                   return run_two_stage(d.spec.name, m, p, u, d0, k);
                               }
                               if (d.spec.pi) {
                                   Vec x0 = Vec::Zero(d.augmented.n());
                                   x0.head(m.n()) = d0;
                                   return simulate_observer(d.spec.name, d.augmented, d.gain, m, p, u, x0, sc.opt);
                               }
                               return simulate_observer(d.spec.name, m, d.gain, m, p, u, d0, sc.opt);
                           }});
        }
        const CosimResult cr = cosimulate(sc, est);
        SeedResult& r = res[si];
        r.t = cr.plant.t;
        r.max_residual = cr.plant.max_residual;
        r.plant_seconds = cr.plant.seconds;
        r.events = cr.plant.events;
        for (const auto& e : cr.estimates) {
            const Mat E = e.X - cr.plant.X;
            const Vec nrm = error_norm_series(E);
            r.rmse.push_back(rmse(E));
            r.mean_norm.push_back(nrm.mean());
            r.norm.emplace_back(nrm.data(), nrm.data() + nrm.size());
            r.seconds.push_back(e.seconds);
            r.notes.push_back(e.notes);
        }
        if (!opt.out_dir.empty() && opt.trajectories)
            write_text_file((fs::path(opt.out_dir) / ("trajectory_seed" + std::to_string(seed) + ".csv")).string(),
                            trajectory_csv(cr, names));
        if (!opt.out_dir.empty() && si == 0) {
            std::vector<std::string> plot = s.plot_states;
            if (plot.empty()) plot = {names[0], names[1]};
            for (const auto& st : plot) {
                const int idx = int(std::find(names.begin(), names.end(), st) - names.begin());
                std::vector<PlotSeries> ser;
                PlotSeries ps{"plant", cr.plant.t, {}};
                for (Eigen::Index k = 0; k < cr.plant.X.cols(); ++k) ps.y.push_back(cr.plant.X(idx, k));
                ser.push_back(ps);
                for (const auto& e : cr.estimates) {
                    PlotSeries q{e.name, cr.plant.t, {}};
                    for (Eigen::Index k = 0; k < e.X.cols(); ++k) q.y.push_back(e.X(idx, k));
                    ser.push_back(q);
                }
                write_text_file((fs::path(opt.out_dir) / ("state_" + sanitize(st) + ".svg")).string(),
                                svg_plot(st + " (seed " + std::to_string(seed) + ")", st, ser));
            }
        }
    });

    rep.t = res[0].t;
    rep.events = res[0].events;
    for (const auto& r : res) {
        rep.plant_max_residual = std::max(rep.plant_max_residual, r.max_residual);
        rep.plant_seconds.push_back(r.plant_seconds);
    }
    for (size_t i = 0; i < designs.size(); ++i) {
        const DesignedObserver& d = designs[i];
        ObserverMetrics om;
        om.name = d.spec.name;
        om.kind = d.spec.pi ? "pi-" + d.spec.kind : d.spec.kind;
        if (d.spec.kind != "two_stage") {
            om.formulation = d.gain.formulation;
            om.kappa = d.gain.kappa;
            om.gamma = d.gain.gamma;
            om.synth_seconds = d.gain.seconds;
        }
        om.from_cache = d.from_cache;
        for (const auto& r : res) {
            om.rmse.push_back(r.rmse[i]);
            om.mean_error_norm.push_back(r.mean_norm[i]);
            om.run_seconds.push_back(r.seconds[i]);
        }
        om.error_norm = res[0].norm[i];
        om.notes = res[0].notes[i];
        om.rmse_mean = std::accumulate(om.rmse.begin(), om.rmse.end(), 0.0) / double(om.rmse.size());
        om.error_norm_mean =
            std::accumulate(om.mean_error_norm.begin(), om.mean_error_norm.end(), 0.0) / double(om.rmse.size());
        rep.observers.push_back(om);
    }

    if (!opt.out_dir.empty()) {
        const fs::path out(opt.out_dir);
        write_text_file((out / "metrics.txt").string(), report_text(rep));
        write_text_file((out / "metrics.json").string(), report_json(rep));
        write_text_file((out / "timing.json").string(), timing_json(rep));
        std::ostringstream en;
        en.precision(10);
        en << "t";
        for (const auto& o : rep.observers) en << ',' << o.name;
        en << '\n';
        for (size_t k = 0; k < rep.t.size(); ++k) {
            en << rep.t[k];
            for (const auto& o : rep.observers) en << ',' << o.error_norm[k];
            en << '\n';
        }
        write_text_file((out / "error_norm.csv").string(), en.str());
        if (!rep.observers.empty()) {
            std::vector<PlotSeries> ser;
            for (const auto& o : rep.observers) ser.push_back({o.name, rep.t, o.error_norm});
            write_text_file((out / "error_norm.svg").string(),
                            svg_plot("estimation error norm (seed " + std::to_string(s.seeds[0]) + ")", "||e(t)||",
                                     ser));
        }
        json man;
        man["scenario"] = s.name;
        man["scenario_hash"] = rep.hash;
        man["config"] = json::parse(scenario_canonical(s));
        man["version"] = kVersion;
        json gains = json::array();
        for (const auto& d : designs) gains.push_back({{"name", d.spec.name}, {"hash", d.hash}, {"from_cache", d.from_cache}});
        man["designs"] = gains;
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(out))
            if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path().filename().string());
        files.push_back("manifest.json");
        std::sort(files.begin(), files.end());
        man["files"] = files;
        write_text_file((out / "manifest.json").string(), man.dump(2) + "\n");
    }
    return rep;
}

std::string report_text(const MetricsReport& r)
{
    std::ostringstream os;
    os << "scenario " << r.scenario << "  hash " << r.hash << "\n";
    os << "pmus";
    for (int p : r.pmus) os << ' ' << p;
    os << "\nseeds";
    for (auto s : r.seeds) os << ' ' << s;
    os << "\nstructure: " << r.pencil << "\n";
    os << "plant: " << r.t.size() << " samples, max algebraic residual " << fmt(r.plant_max_residual) << "\n";
    for (const auto& e : r.events) os << "event " << e << "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %-8s %-9s %12s %12s %12s %12s\n", "observer", "kind", "form", "kappa",
                  "gamma", "RMSE", "mean ||e||");
    os << line;
    for (const auto& o : r.observers) {
        std::snprintf(line, sizeof line, "%-16s %-8s %-9s %12s %12s %12s %12s\n", o.name.c_str(), o.kind.c_str(),
                      o.formulation.empty() ? "-" : o.formulation.c_str(), std::isnan(o.kappa) ? "-" : fmt(o.kappa).c_str(),
                      std::isnan(o.gamma) ? "-" : fmt(o.gamma).c_str(), fmt(o.rmse_mean).c_str(),
                      fmt(o.error_norm_mean).c_str());
        os << line;
    }
    os << "RMSE = sum_i sqrt((1/k_f) sum_{k=0..k_f} e_i[k]^2), k_f = " << (r.t.empty() ? 0 : r.t.size() - 1)
       << "; averaged over seeds\n";
    return os.str();
}

std::string report_json(const MetricsReport& r)
{
    json j;
    j["scenario"] = r.scenario;
    j["hash"] = r.hash;
    j["pmus"] = r.pmus;
    j["seeds"] = r.seeds;
    j["structure"] = r.pencil;
    j["samples"] = r.t.size();
    j["plant_max_residual"] = r.plant_max_residual;
    j["events"] = r.events;
    json obs = json::array();
    for (const auto& o : r.observers) {
        json e{{"name", o.name}, {"kind", o.kind}, {"formulation", o.formulation}, {"rmse", o.rmse},
               {"rmse_mean", o.rmse_mean}, {"mean_error_norm", o.mean_error_norm},
               {"error_norm_mean", o.error_norm_mean}, {"notes", o.notes}};
        e["kappa"] = std::isnan(o.kappa) ? json(nullptr) : json(o.kappa);
        e["gamma"] = std::isnan(o.gamma) ? json(nullptr) : json(o.gamma);
        obs.push_back(e);
    }
    j["observers"] = obs;
    return j.dump(2) + "\n";
}

std::string timing_json(const MetricsReport& r)
{
    json j;
    j["plant_seconds"] = r.plant_seconds;
    json obs = json::array();
    for (const auto& o : r.observers)
        obs.push_back({{"name", o.name}, {"synth_seconds", o.synth_seconds}, {"from_cache", o.from_cache},
                       {"run_seconds", o.run_seconds}});
    j["observers"] = obs;
    return j.dump(2) + "\n";
}

std::string svg_plot(const std::string& title, const std::string& ylabel, const std::vector<PlotSeries>& series)
{
    const double W = 820, H = 420, l = 80, r = 170, t = 40, b = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series) {
        for (size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k) {
            if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
            x0 = std::min(x0, s.x[k]);
            x1 = std::max(x1, s.x[k]);
            y0 = std::min(y0, s.y[k]);
            y1 = std::max(y1, s.y[k]);
        }
    }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 - y0 <= 1e-12 * std::max(1.0, std::abs(y0))) {
        const double pad = std::max(1e-6, 0.05 * std::abs(y0));
        y0 -= pad;
        y1 += pad;
    }
    const double pw = W - l - r, ph = H - t - b;
    auto X = [&](double x) { return l + (x - x0) / (x1 - x0) * pw; };
    auto Y = [&](double y) { return t + (1.0 - (y - y0) / (y1 - y0)) * ph; };
    auto esc = [](const std::string& s) {
        std::string o;
        for (char c : s) {
            if (c == '<') o += "&lt;";
            else if (c == '>') o += "&gt;";
            else if (c == '&') o += "&amp;";
            else o += c;
        }
        return o;
    };
    static const char* colors[] = {"#000000", "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};
    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
    os << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
        os << "<line x1=\"" << X(xv) << "\" y1=\"" << t + ph << "\" x2=\"" << X(xv) << "\" y2=\"" << t
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << X(xv) << "\" y=\"" << t + ph + 16 << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
        os << "<line x1=\"" << l << "\" y1=\"" << Y(yv) << "\" x2=\"" << l + pw << "\" y2=\"" << Y(yv)
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << l - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    }
    os << "<text x=\"" << l + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">t (s)</text>\n";
    os << "<text x=\"16\" y=\"" << t + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << t + ph / 2
       << ")\">" << esc(ylabel) << "</text>\n";
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* col = colors[si % 8];
        os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.2\" points=\"";
        for (size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k)
            if (std::isfinite(s.x[k]) && std::isfinite(s.y[k])) os << X(s.x[k]) << ',' << Y(s.y[k]) << ' ';
        os << "\"/>\n";
        const double ly = t + 14 + 18 * double(si);
        os << "<line x1=\"" << l + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << l + pw + 36 << "\" y2=\"" << ly
           << "\" stroke=\"" << col << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << l + pw + 42 << "\" y=\"" << ly + 4 << "\">" << esc(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

SweepSpec load_sweep(const std::string& path)
{
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw config_error(std::string("sweep file is not valid JSON: ") + e.what());
    }
    Reader r(j, "sweep");
    r.allow({"base", "variants", "description"});
    const std::string dir = fs::path(path).parent_path().string();
    SweepSpec s;
    s.base = load_scenario(resolve(r.str("base", ""), dir));
    if (!r.has("variants") || !r.at("variants").is_array()) throw config_error("sweep.variants: expected an array");
    int k = 0;
    for (const auto& v : r.at("variants")) {
        Reader vr(v, "sweep.variants[" + std::to_string(k++) + "]");
        vr.allow({"name", "pmus"});
        SweepVariant sv;
        sv.pmus = vr.integers("pmus");
        if (sv.pmus.empty()) throw config_error("sweep variant needs a PMU set");
        std::string nm = "{";
        for (size_t i = 0; i < sv.pmus.size(); ++i) nm += (i ? "," : "") + std::to_string(sv.pmus[i]);
        sv.name = vr.str("name", nm + "}");
        s.variants.push_back(sv);
    }
    return s;
}

std::vector<MetricsReport> run_sweep(const SweepSpec& s, const RunOptions& opt)
{
    std::vector<MetricsReport> out(s.variants.size());
    parallel_for(int(s.variants.size()), opt.jobs, [&](int i) {
        Scenario sc = s.base;
        sc.pmus = s.variants[i].pmus;
        sc.name = s.base.name + " " + s.variants[i].name;
        RunOptions o = opt;
        o.jobs = 1;
        if (!opt.out_dir.empty()) o.out_dir = (fs::path(opt.out_dir) / sanitize(s.variants[i].name)).string();
        try {
            out[i] = run_scenario(sc, o);
        } catch (const Error& e) {
            throw Error(e.kind(), "variant " + s.variants[i].name + ": " + e.what());
        }
    });
    if (!opt.out_dir.empty()) write_text_file((fs::path(opt.out_dir) / "table.txt").string(), sweep_table(s, out));
    return out;
}

std::string sweep_table(const SweepSpec& s, const std::vector<MetricsReport>& reports)
{
    std::ostringstream os;
    char cell[64];
    std::snprintf(cell, sizeof cell, "%-20s", "PMU set");
    os << cell;
    for (const auto& o : s.base.observers) {
        std::snprintf(cell, sizeof cell, " %14s", o.name.c_str());
        os << cell;
    }
    os << "\n";
    for (size_t i = 0; i < reports.size(); ++i) {
        std::snprintf(cell, sizeof cell, "%-20s", s.variants[i].name.c_str());
        os << cell;
        for (const auto& o : reports[i].observers) {
            std::snprintf(cell, sizeof cell, " %14.6f", o.rmse_mean);
            os << cell;
        }
        os << "\n";
    }
    os << "RMSE averaged over " << s.base.seeds.size() << " seed(s)\n";
    return os.str();
}

}  // namespace dse
