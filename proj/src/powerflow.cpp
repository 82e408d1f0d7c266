#include "daedse/powerflow.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>

namespace dse {

CVec power_injections(const CMat& ybus, const CVec& v)
{
    CVec i = ybus * v;
    return v.cwiseProduct(i.conjugate());
}

namespace {

struct Spec {
    std::vector<int> pv, pq;  // 0-based bus indices
    CVec s;                   // scheduled net injection
};

Spec schedule(const NetworkCase& c)
{
    Spec sp;
    sp.s = CVec::Zero(c.N());
    for (const auto& g : c.generators) sp.s(g.bus - 1) += g.pg;
    for (const auto& b : c.buses) {
        sp.s(b.id - 1) -= b.load;
        if (b.kind == BusKind::generator) sp.pv.push_back(b.id - 1);
        if (b.kind == BusKind::load) sp.pq.push_back(b.id - 1);
    }
    return sp;
}

Vec mismatch_vector(const Spec& sp, const CVec& s_calc)
{
    const int npv = int(sp.pv.size()), npq = int(sp.pq.size());
    Vec f(npv + 2 * npq);
    for (int k = 0; k < npv; ++k) f(k) = (s_calc - sp.s)(sp.pv[k]).real();
    for (int k = 0; k < npq; ++k) {
        f(npv + k) = (s_calc - sp.s)(sp.pq[k]).real();
        f(npv + npq + k) = (s_calc - sp.s)(sp.pq[k]).imag();
    }
    return f;
}

}  // namespace

PowerFlowSolution solve_power_flow(const NetworkCase& c, const std::optional<CVec>& start,
                                   const PowerFlowOptions& opt)
{
    validate_case(c);
    const int N = c.N();
    const CMat Y = build_admittances(c).y_bus;
    const Spec sp = schedule(c);
    const int npv = int(sp.pv.size()), npq = int(sp.pq.size());

    CVec v = start ? *start : CVec::Ones(N);
    if (v.size() != N) throw config_error("power flow start vector has wrong length");
    for (const auto& b : c.buses)
        if (b.kind != BusKind::load) v(b.id - 1) = std::polar(b.vset, std::arg(v(b.id - 1)));

    // angle unknowns: pv then pq; magnitude unknowns: pq
    std::vector<int> ang(sp.pv);
    ang.insert(ang.end(), sp.pq.begin(), sp.pq.end());

    PowerFlowSolution sol;
    Vec f = mismatch_vector(sp, power_injections(Y, v));
    double norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    int it = 0;
    while (norm > opt.tol) {
        if (it >= opt.max_iter)
            throw numerical_error("power flow did not converge after " + std::to_string(it) +
                                  " iterations, mismatch " + std::to_string(norm));
        ++it;
        const CVec cur = Y * v;
        const CVec vn = v.cwiseQuotient(v.cwiseAbs().cast<cplx>());
        CMat dS_dVm = v.asDiagonal() * (Y * vn.asDiagonal()).conjugate();
        dS_dVm += (cur.conjugate().cwiseProduct(vn)).asDiagonal();
        CMat tmp = -(Y * v.asDiagonal());
        tmp.diagonal() += cur;
        CMat dS_dVa = cplx(0, 1) * (v.asDiagonal() * tmp.conjugate());

        const int nx = npv + 2 * npq;
        Mat J(nx, nx);
        for (int r = 0; r < npv + npq; ++r) {
            const int bus = ang[r];
            for (int k = 0; k < npv + npq; ++k) J(r, k) = dS_dVa(bus, ang[k]).real();
            for (int k = 0; k < npq; ++k) J(r, npv + npq + k) = dS_dVm(bus, sp.pq[k]).real();
        }
        for (int r = 0; r < npq; ++r) {
            const int bus = sp.pq[r];
            for (int k = 0; k < npv + npq; ++k) J(npv + npq + r, k) = dS_dVa(bus, ang[k]).imag();
            for (int k = 0; k < npq; ++k) J(npv + npq + r, npv + npq + k) = dS_dVm(bus, sp.pq[k]).imag();
        }
        Eigen::FullPivLU<Mat> lu(J);
        if (lu.rank() < nx) throw numerical_error("singular power flow Jacobian");
        const Vec dx = -lu.solve(f);

        auto apply = [&](double step) {
            CVec w = v;
            for (int k = 0; k < npv + npq; ++k)
                w(ang[k]) = std::polar(std::abs(v(ang[k])), std::arg(v(ang[k])) + step * dx(k));
            for (int k = 0; k < npq; ++k)
                w(sp.pq[k]) = std::polar(std::abs(v(sp.pq[k])) + step * dx(npv + npq + k), std::arg(w(sp.pq[k])));
            return w;
        };
        double step = 1.0;
        CVec trial = apply(step);
        Vec ft = mismatch_vector(sp, power_injections(Y, trial));
        int halvings = 0;
        while (ft.cwiseAbs().maxCoeff() > norm && halvings < opt.max_halvings) {
            step *= 0.5;
            ++halvings;
            trial = apply(step);
            ft = mismatch_vector(sp, power_injections(Y, trial));
        }
        v = trial;
        f = ft;
        norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    }
    sol.v = v;
    sol.injection = power_injections(Y, v);
    sol.iterations = it;
    sol.mismatch = norm;
    return sol;
}

OperatingPoint initialize_generators(const NetworkCase& c, const PowerFlowSolution& pf)
{
    const int G = c.G();
    OperatingPoint op;
    op.v0 = pf.v;
    op.omega0 = c.omega0;
    op.mismatch_norm = pf.mismatch;
    op.PL.resize(c.N());
    op.QL.resize(c.N());
    for (const auto& b : c.buses) {
        op.PL(b.id - 1) = b.load.real();
        op.QL(b.id - 1) = b.load.imag();
    }
    for (Vec* x : {&op.delta, &op.omega, &op.eqp, &op.edp, &op.id, &op.iq, &op.TM, &op.Efd, &op.PG, &op.QG})
        x->resize(G);
    for (int g = 0; g < G; ++g) {
        const auto& p = c.generators[g];
        const int b = p.bus - 1;
        const cplx sg = pf.injection(b) + c.buses[b].load;
        const cplx V = pf.v(b);
        const cplx I = std::conj(sg / V);
        const double delta = std::arg(V + cplx(p.Rs, p.xq) * I);
        const cplx rot = std::polar(1.0, std::numbers::pi / 2 - delta);
        const cplx idq = I * rot;
        const cplx vdq = V * rot;
        const double id = idq.real(), iq = idq.imag(), vd = vdq.real(), vq = vdq.imag();
        op.delta(g) = delta;
        op.omega(g) = c.omega0;
        op.id(g) = id;
        op.iq(g) = iq;
        op.edp(g) = (p.xq - p.xqp) * iq;
        op.eqp(g) = vq + p.Rs * iq + p.xdp * id;
        op.Efd(g) = op.eqp(g) + (p.xd - p.xdp) * id;
        op.TM(g) = (op.eqp(g) - p.xdp * id) * iq + (op.edp(g) + p.xqp * iq) * id;
        op.PG(g) = vd * id + vq * iq;
        op.QG(g) = vq * id - vd * iq;
    }
    const double res = machine_residual(c, op);
    if (!(res <= 1e-8))
        throw numerical_error("generator initialization residual " + std::to_string(res) + " exceeds 1e-8");
    return op;
}

double machine_residual(const NetworkCase& c, const OperatingPoint& op)
{
    double worst = 0.0;
    for (int g = 0; g < c.G(); ++g) {
        const auto& p = c.generators[g];
        const cplx V = op.v0(p.bus - 1);
        const double s = std::sin(op.delta(g)), co = std::cos(op.delta(g));
        const double id = op.id(g), iq = op.iq(g), eq = op.eqp(g), ed = op.edp(g);
        const double r[6] = {
            op.omega(g) - c.omega0,
            op.TM(g) - (eq - p.xdp * id) * iq - (ed + p.xqp * iq) * id - p.D * (op.omega(g) - c.omega0),
            -eq - (p.xd - p.xdp) * id + op.Efd(g),
            -ed + (p.xq - p.xqp) * iq,
            ed - V.real() * s + V.imag() * co - p.Rs * id + p.xqp * iq,
            eq - V.real() * co - V.imag() * s - p.Rs * iq - p.xdp * id,
        };
        for (double x : r) worst = std::max(worst, std::abs(x));
    }
    return worst;
}

OperatingPoint compute_operating_point(const NetworkCase& c)
{
    return initialize_generators(c, solve_power_flow(c));
}

std::string serialize_operating_point(const OperatingPoint& op)
{
    std::ostringstream o;
    auto put = [&](const char* key, const Vec& x) {
        o << key;
        char buf[40];
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            std::snprintf(buf, sizeof buf, " %.17g", x(i));
            o << buf;
        }
        o << "\n";
    };
    put("omega0", Vec::Constant(1, op.omega0));
    put("mismatch", Vec::Constant(1, op.mismatch_norm));
    put("v_re", op.v0.real());
    put("v_im", op.v0.imag());
    put("delta", op.delta);
    put("omega", op.omega);
    put("eqp", op.eqp);
    put("edp", op.edp);
    put("id", op.id);
    put("iq", op.iq);
    put("TM", op.TM);
    put("Efd", op.Efd);
    put("PG", op.PG);
    put("QG", op.QG);
    put("PL", op.PL);
    put("QL", op.QL);
    return o.str();
}

OperatingPoint parse_operating_point(const std::string& text)
{
    std::map<std::string, std::vector<double>> kv;
    std::istringstream in(text);
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key) || key[0] == '#') continue;
        std::vector<double> vals;
        std::string tok;
        while (ls >> tok) {
            try {
                vals.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw config_error("operating point: bad number '" + tok + "' on line " + std::to_string(ln));
            }
        }
        kv[key] = vals;
    }
    auto get = [&](const char* key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw config_error(std::string("operating point: missing ") + key);
        return Vec(Eigen::Map<const Vec>(it->second.data(), Eigen::Index(it->second.size())));
    };
    OperatingPoint op;
    op.omega0 = get("omega0")(0);
    op.mismatch_norm = get("mismatch")(0);
    const Vec re = get("v_re"), im = get("v_im");
    if (re.size() != im.size()) throw config_error("operating point: voltage vectors differ in length");
    op.v0 = CVec(re.size());
    for (Eigen::Index i = 0; i < re.size(); ++i) op.v0(i) = cplx(re(i), im(i));
    op.delta = get("delta");
    op.omega = get("omega");
    op.eqp = get("eqp");
    op.edp = get("edp");
    op.id = get("id");
    op.iq = get("iq");
    op.TM = get("TM");
    op.Efd = get("Efd");
    op.PG = get("PG");
    op.QG = get("QG");
    op.PL = get("PL");
    op.QL = get("QL");
    for (const Vec* x : {&op.omega, &op.eqp, &op.edp, &op.id, &op.iq, &op.TM, &op.Efd, &op.PG, &op.QG})
        if (x->size() != op.delta.size()) throw config_error("operating point: generator vectors differ in length");
    return op;
}

}  // namespace dse
