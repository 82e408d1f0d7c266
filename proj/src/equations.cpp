#include "daedse/equations.hpp"

#include <cmath>

namespace dse {

StateLayout make_layout(const NetworkCase& c)
{
    StateLayout l;
    l.G = c.G();
    l.N = c.N();
    l.pair_of_bus.assign(c.N(), -1);
    for (const auto& g : c.generators) {
        l.pair_of_bus[g.bus - 1] = int(l.v_bus.size());
        l.v_bus.push_back(g.bus);
    }
    for (const auto& b : c.buses) {
        if (l.pair_of_bus[b.id - 1] >= 0) continue;
        if (b.kind == BusKind::slack) throw structural_error("slack bus without a machine cannot be modeled");
        l.pair_of_bus[b.id - 1] = int(l.v_bus.size());
        l.v_bus.push_back(b.id);
    }
    return l;
}

std::vector<std::string> StateLayout::names(const NetworkCase& c) const
{
    std::vector<std::string> out;
    static const char* gx[4] = {"delta", "omega", "eqp", "edp"};
    for (int g = 0; g < G; ++g)
        for (int k = 0; k < 4; ++k)
            out.push_back(std::string(gx[k]) + "_g" + std::to_string(c.original_id(c.generators[g].bus)));
    for (int b : v_bus) {
        out.push_back("vR_" + std::to_string(c.original_id(b)));
        out.push_back("vI_" + std::to_string(c.original_id(b)));
    }
    return out;
}

NetworkEquations::NetworkEquations(const NetworkCase& c, const CMat& ybus)
    : gens_(c.generators), layout_(make_layout(c)), ybus_(ybus), omega0_(c.omega0)
{
    if (ybus.rows() != c.N() || ybus.cols() != c.N()) throw config_error("admittance matrix size mismatch");
}

void NetworkEquations::set_ybus(const CMat& ybus)
{
    if (ybus.rows() != ybus_.rows() || ybus.cols() != ybus_.cols())
        throw config_error("admittance matrix size mismatch");
    ybus_ = ybus;
}

Vec NetworkEquations::ed_diagonal() const
{
    Vec d(4 * layout_.G);
    for (int g = 0; g < layout_.G; ++g) d.segment<4>(4 * g) << 1.0, gens_[g].M, gens_[g].Td0p, gens_[g].Tq0p;
    return d;
}

Vec NetworkEquations::f(const Vec& x, const Vec& ig, const Vec& u) const
{
    Vec out(4 * layout_.G);
    for (int g = 0; g < layout_.G; ++g) {
        const auto& p = gens_[g];
        const double w = x(4 * g + 1), eq = x(4 * g + 2), ed = x(4 * g + 3);
        const double id = ig(2 * g), iq = ig(2 * g + 1);
        out(4 * g) = w - omega0_;
        out(4 * g + 1) = u(2 * g) - (eq - p.xdp * id) * iq - (ed + p.xqp * iq) * id - p.D * (w - omega0_);
        out(4 * g + 2) = -eq - (p.xd - p.xdp) * id + u(2 * g + 1);
        out(4 * g + 3) = -ed + (p.xq - p.xqp) * iq;
    }
    return out;
}

Vec NetworkEquations::stator(const Vec& x, const Vec& ig, const Vec& v) const
{
    Vec out(2 * layout_.G);
    for (int g = 0; g < layout_.G; ++g) {
        const auto& p = gens_[g];
        const double d = x(4 * g), eq = x(4 * g + 2), ed = x(4 * g + 3);
        const double id = ig(2 * g), iq = ig(2 * g + 1);
        const double vr = v(2 * g), vi = v(2 * g + 1);  // generator bus pairs come first
        const double s = std::sin(d), c = std::cos(d);
        out(2 * g) = ed - vr * s + vi * c - p.Rs * id + p.xqp * iq;
        out(2 * g + 1) = eq - vr * c - vi * s - p.Rs * iq - p.xdp * id;
    }
    return out;
}

namespace {

CVec bus_voltages(const StateLayout& l, const Vec& v)
{
    CVec V(l.N);
    for (int k = 0; k < l.N; ++k) V(l.v_bus[k] - 1) = cplx(v(2 * k), v(2 * k + 1));
    return V;
}

}  // namespace

Vec NetworkEquations::balance(const Vec& x, const Vec& ig, const Vec& v, const Vec& PL, const Vec& QL) const
{
    const CVec V = bus_voltages(layout_, v);
    const CVec S = V.cwiseProduct((ybus_ * V).conjugate());
    Vec out(2 * layout_.N);
    for (int k = 0; k < layout_.N; ++k) {
        const int b = layout_.v_bus[k] - 1;
        double scale = 1.0;
        if (low_voltage > 0) scale = std::min(1.0, std::norm(V(b)) / (low_voltage * low_voltage));
        out(2 * k) = -PL(k) * scale - S(b).real();
        out(2 * k + 1) = -QL(k) * scale - S(b).imag();
    }
    for (int g = 0; g < layout_.G; ++g) {
        const double d = x(4 * g), id = ig(2 * g), iq = ig(2 * g + 1);
        const double vr = v(2 * g), vi = v(2 * g + 1);
        const double vd = vr * std::sin(d) - vi * std::cos(d);
        const double vq = vr * std::cos(d) + vi * std::sin(d);
        out(2 * g) += vd * id + vq * iq;
        out(2 * g + 1) += vq * id - vd * iq;
    }
    return out;
}

NetworkEquations::Jacobian NetworkEquations::jacobian(const Vec& x, const Vec& ig, const Vec& v, const Vec& PL,
                                                       const Vec& QL) const
{
    const int G = layout_.G, N = layout_.N;
    Jacobian J;
    J.fx = Mat::Zero(4 * G, 4 * G);
    J.fi = Mat::Zero(4 * G, 2 * G);
    J.fu = Mat::Zero(4 * G, 2 * G);
    J.sx = Mat::Zero(2 * G, 4 * G);
    J.si = Mat::Zero(2 * G, 2 * G);
    J.sv = Mat::Zero(2 * G, 2 * N);
    J.bx = Mat::Zero(2 * N, 4 * G);
    J.bi = Mat::Zero(2 * N, 2 * G);
    J.bv = Mat::Zero(2 * N, 2 * N);
    for (int g = 0; g < G; ++g) {
        const auto& p = gens_[g];
        const int r = 4 * g;
        const double d = x(r), eq = x(r + 2), ed = x(r + 3);
        const double id = ig(2 * g), iq = ig(2 * g + 1);
        const double vr = v(2 * g), vi = v(2 * g + 1);
        const double s = std::sin(d), c = std::cos(d);

        J.fx(r, r + 1) = 1.0;
        J.fx(r + 1, r + 1) = -p.D;
        J.fx(r + 1, r + 2) = -iq;
        J.fx(r + 1, r + 3) = -id;
        J.fx(r + 2, r + 2) = -1.0;
        J.fx(r + 3, r + 3) = -1.0;
        J.fi(r + 1, 2 * g) = iq * (p.xdp - p.xqp) - ed;
        J.fi(r + 1, 2 * g + 1) = id * (p.xdp - p.xqp) - eq;
        J.fi(r + 2, 2 * g) = -(p.xd - p.xdp);
        J.fi(r + 3, 2 * g + 1) = p.xq - p.xqp;
        J.fu(r + 1, 2 * g) = 1.0;
        J.fu(r + 2, 2 * g + 1) = 1.0;

        J.sx(2 * g, r) = -vr * c - vi * s;
        J.sx(2 * g, r + 3) = 1.0;
        J.sx(2 * g + 1, r) = vr * s - vi * c;
        J.sx(2 * g + 1, r + 2) = 1.0;
        J.si(2 * g, 2 * g) = -p.Rs;
        J.si(2 * g, 2 * g + 1) = p.xqp;
        J.si(2 * g + 1, 2 * g) = -p.xdp;
        J.si(2 * g + 1, 2 * g + 1) = -p.Rs;
        J.sv(2 * g, 2 * g) = -s;
        J.sv(2 * g, 2 * g + 1) = c;
        J.sv(2 * g + 1, 2 * g) = -c;
        J.sv(2 * g + 1, 2 * g + 1) = -s;

        const double vd = vr * s - vi * c, vq = vr * c + vi * s;
        J.bx(2 * g, r) = vq * id - vd * iq;
        J.bx(2 * g + 1, r) = -vd * id - vq * iq;
        J.bi(2 * g, 2 * g) = vd;
        J.bi(2 * g, 2 * g + 1) = vq;
        J.bi(2 * g + 1, 2 * g) = vq;
        J.bi(2 * g + 1, 2 * g + 1) = -vd;
        J.bv(2 * g, 2 * g) += s * id + c * iq;
        J.bv(2 * g, 2 * g + 1) += -c * id + s * iq;
        J.bv(2 * g + 1, 2 * g) += c * id - s * iq;
        J.bv(2 * g + 1, 2 * g + 1) += s * id + c * iq;
    }
    const CVec V = bus_voltages(layout_, v);
    const CVec I = ybus_ * V;
    const cplx j(0.0, 1.0);
    for (int k = 0; k < N; ++k) {
        const int b = layout_.v_bus[k] - 1;
        for (int m = 0; m < N; ++m) {
            const int a = layout_.v_bus[m] - 1;
            const cplx yc = std::conj(ybus_(b, a));
            if (yc == cplx(0.0) && a != b) continue;
            cplx dR = V(b) * yc, dI = -j * V(b) * yc;
            if (a == b) {
                dR += std::conj(I(b));
                dI += j * std::conj(I(b));
            }
            J.bv(2 * k, 2 * m) -= dR.real();
            J.bv(2 * k + 1, 2 * m) -= dR.imag();
            J.bv(2 * k, 2 * m + 1) -= dI.real();
            J.bv(2 * k + 1, 2 * m + 1) -= dI.imag();
        }
        if (low_voltage > 0) {
            const double vm2 = std::norm(V(b)), t2 = low_voltage * low_voltage;
            if (vm2 < t2) {
                const double vr = V(b).real(), vi = V(b).imag();
                J.bv(2 * k, 2 * k) -= PL(k) * 2 * vr / t2;
                J.bv(2 * k, 2 * k + 1) -= PL(k) * 2 * vi / t2;
                J.bv(2 * k + 1, 2 * k) -= QL(k) * 2 * vr / t2;
                J.bv(2 * k + 1, 2 * k + 1) -= QL(k) * 2 * vi / t2;
            }
        }
    }
    return J;
}

Vec NetworkEquations::x_of(const OperatingPoint& op) const
{
    Vec x(4 * layout_.G);
    for (int g = 0; g < layout_.G; ++g) x.segment<4>(4 * g) << op.delta(g), op.omega(g), op.eqp(g), op.edp(g);
    return x;
}

Vec NetworkEquations::ig_of(const OperatingPoint& op) const
{
    Vec i(2 * layout_.G);
    for (int g = 0; g < layout_.G; ++g) i.segment<2>(2 * g) << op.id(g), op.iq(g);
    return i;
}

Vec NetworkEquations::v_of(const CVec& V) const
{
    Vec v(2 * layout_.N);
    for (int k = 0; k < layout_.N; ++k) {
        v(2 * k) = V(layout_.v_bus[k] - 1).real();
        v(2 * k + 1) = V(layout_.v_bus[k] - 1).imag();
    }
    return v;
}

Vec NetworkEquations::u_of(const OperatingPoint& op) const
{
    Vec u(2 * layout_.G);
    for (int g = 0; g < layout_.G; ++g) u.segment<2>(2 * g) << op.TM(g), op.Efd(g);
    return u;
}

Vec NetworkEquations::pl_of(const OperatingPoint& op) const
{
    Vec p(layout_.N);
    for (int k = 0; k < layout_.N; ++k) p(k) = op.PL(layout_.v_bus[k] - 1);
    return p;
}

Vec NetworkEquations::ql_of(const OperatingPoint& op) const
{
    Vec q(layout_.N);
    for (int k = 0; k < layout_.N; ++k) q(k) = op.QL(layout_.v_bus[k] - 1);
    return q;
}

}  // namespace dse
