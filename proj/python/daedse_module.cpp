#include "daedse/evalcli.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace dse;

namespace {

py::object json_loads(const std::string& s) { return py::module_::import("json").attr("loads")(s); }

py::dict model_dict(const ModelBundle& b)
{
    const DescriptorModel& m = b.model;
    py::dict d;
    d["E"] = m.E;
    d["A"] = m.A;
    d["B_u"] = m.B_u;
    d["B_w"] = m.B_w;
    d["C"] = m.C;
    d["D_w"] = m.D_w;
    d["A1"] = m.A1;
    d["A2"] = m.A2;
    d["A3"] = m.A3;
    d["A4"] = m.A4;
    d["x0"] = m.x0;
    d["u0"] = m.u0;
    d["states"] = m.layout.names(b.net);
    d["G"] = m.G;
    d["N"] = m.N;
    d["pmus"] = m.pmus;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Observer-based dynamic state estimation for power-network DAEs";

    static py::exception<Error> base(m, "DaedseError");
    static py::exception<Error> cfg(m, "ConfigError", base.ptr());
    static py::exception<Error> structural(m, "StructuralError", base.ptr());
    static py::exception<Error> infeasible(m, "InfeasibleError", base.ptr());
    static py::exception<Error> numerical(m, "NumericalError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            switch (e.kind()) {
            case ErrorKind::config: py::set_error(cfg, e.what()); break;
            case ErrorKind::structural: py::set_error(structural, e.what()); break;
            case ErrorKind::infeasible: py::set_error(infeasible, e.what()); break;
            case ErrorKind::numerical: py::set_error(numerical, e.what()); break;
            }
        }
    });

    m.def(
        "load_model",
        [](const std::string& case_path, const std::vector<int>& pmus, const std::string& companion) {
            return model_dict(load_bundle(case_path, companion, pmus));
        },
        py::arg("case_path"), py::arg("pmus"), py::arg("companion") = "",
        "Descriptor matrices, operating point and state names for a case and PMU set.");

    m.def(
        "check",
        [](const std::string& case_path, const std::vector<int>& pmus) {
            const PencilReport r = check_model(load_bundle(case_path, "", pmus).model);
            py::dict d;
            d["regular"] = r.regularity.regular;
            d["a4_nonsingular"] = r.regularity.via_A4;
            d["impulse_free"] = r.impulse_free;
            d["index_one"] = r.index_one;
            d["degree"] = r.degree;
            d["rank_E"] = r.rank_E;
            d["detectable"] = r.detectability.detectable;
            d["i_observable"] = r.iobs.observable;
            d["report"] = r.to_text();
            return d;
        },
        py::arg("case_path"), py::arg("pmus"));

    m.def(
        "synthesize",
        [](const std::string& case_path, const std::vector<int>& pmus, const std::string& kind, bool pi,
           double gamma_scale, double c1, double c2, const std::string& cache_dir) {
            ObserverSpec s;
            s.name = s.kind = kind;
            s.pi = pi;
            s.gamma_scale = gamma_scale;
            s.c1 = c1;
            s.c2 = c2;
            DesignedObserver d;
            {
                py::gil_scoped_release nogil;
                d = design_observer(load_bundle(case_path, "", pmus).model, s, cache_dir);
            }
            py::dict out;
            out["L"] = d.gain.L;
            out["kappa"] = d.gain.kappa;
            out["gamma"] = d.gain.gamma;
            out["formulation"] = d.gain.formulation;
            out["certified"] = d.gain.cert.pass();
            out["max_real"] = d.gain.cert.max_real;
            out["from_cache"] = d.from_cache;
            return out;
        },
        py::arg("case_path"), py::arg("pmus"), py::arg("kind") = "p2", py::arg("pi") = false,
        py::arg("gamma_scale") = -1.0, py::arg("c1") = 1.0, py::arg("c2") = 1.0, py::arg("cache_dir") = "");

    m.def("rmse", &rmse, py::arg("errors"), "sum_i sqrt((1/k_f) sum_k e_i[k]^2) over columns k = 0..k_f.");

    m.def(
        "solve_lav",
        [](const Mat& C, const Vec& y) {
            const LavSolution s = solve_lav(C, y);
            py::dict d;
            d["v"] = s.v;
            d["r"] = s.r;
            d["objective"] = s.objective;
            d["optimal"] = s.optimal;
            d["unique"] = s.unique;
            return d;
        },
        py::arg("C"), py::arg("y"));

    m.def(
        "run_scenario",
        [](const std::string& path, const std::string& out_dir, const std::string& cache_dir, int jobs,
           const std::vector<std::uint64_t>& seeds) {
            Scenario s = load_scenario(path);
            if (!seeds.empty()) s.seeds = seeds;
            RunOptions o;
            o.out_dir = out_dir;
            o.cache_dir = cache_dir;
            o.jobs = jobs;
            MetricsReport r;
            {
                py::gil_scoped_release nogil;
                r = run_scenario(s, o);
            }
            return json_loads(report_json(r));
        },
        py::arg("path"), py::arg("out_dir") = "", py::arg("cache_dir") = "", py::arg("jobs") = 1,
        py::arg("seeds") = std::vector<std::uint64_t>{});
}
