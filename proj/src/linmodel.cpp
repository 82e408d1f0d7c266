#include "daedse/linmodel.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dse {

GeneratorBlocks linearize_generators(const NetworkCase& c, const OperatingPoint& op)
{
    const int G = c.G();
    GeneratorBlocks b;
    b.E_D = Mat::Zero(4 * G, 4 * G);
    b.A_D = Mat::Zero(4 * G, 4 * G);
    b.D_D = Mat::Zero(4 * G, 2 * G);
    b.B_D = Mat::Zero(4 * G, 2 * G);
    b.A_A = Mat::Zero(2 * G, 4 * G);
    b.D_A = Mat::Zero(2 * G, 2 * G);
    b.G_A = Mat::Zero(2 * G, 2 * G);
    for (int g = 0; g < G; ++g) {
        const auto& p = c.generators[g];
        const int r = 4 * g, s = 2 * g;
        const double id = op.id(g), iq = op.iq(g);
        const double vr = op.v0(p.bus - 1).real(), vi = op.v0(p.bus - 1).imag();
        const double sd = std::sin(op.delta(g)), cd = std::cos(op.delta(g));
        b.E_D.diagonal().segment<4>(r) << 1.0, p.M, p.Td0p, p.Tq0p;
        b.A_D.block<4, 4>(r, r) << 0, 1, 0, 0,
                                   0, -p.D, -iq, -id,
                                   0, 0, -1, 0,
                                   0, 0, 0, -1;
        b.B_D.block<4, 2>(r, s) << 0, 0, 1, 0, 0, 1, 0, 0;
        b.D_D.block<4, 2>(r, s) << 0, 0,
                                   iq * (p.xdp - p.xqp) - op.edp(g), id * (p.xdp - p.xqp) - op.eqp(g),
                                   -(p.xd - p.xdp), 0,
                                   0, p.xq - p.xqp;
        b.A_A.block<2, 4>(s, r) << -vr * cd - vi * sd, 0, 0, 1,
                                   vr * sd - vi * cd, 0, 1, 0;
        b.D_A.block<2, 2>(s, s) << -p.Rs, p.xqp, -p.xdp, -p.Rs;
        b.G_A.block<2, 2>(s, s) << -sd, cd, -cd, -sd;
        if (std::abs(p.Rs * p.Rs + p.xdp * p.xqp) < 1e-14)
            throw structural_error("singular stator matrix at generator bus " + std::to_string(c.original_id(p.bus)));
    }
    return b;
}

NetworkBlocks linearize_network(const NetworkCase& c, const OperatingPoint& op)
{
    NetworkEquations eq(c, build_admittances(c).y_bus);
    const auto J = eq.jacobian(eq.x_of(op), eq.ig_of(op), eq.v_of(op.v0), eq.pl_of(op), eq.ql_of(op));
    const int G = c.G(), N = c.N(), L = N - G;
    NetworkBlocks nb;
    nb.A_G = J.bx.topRows(2 * G);
    nb.D_G = J.bi.topRows(2 * G);
    nb.G_GG = J.bv.topLeftCorner(2 * G, 2 * G);
    nb.G_GL = J.bv.topRightCorner(2 * G, 2 * L);
    nb.G_LG = J.bv.bottomLeftCorner(2 * L, 2 * G);
    nb.G_LL = J.bv.bottomRightCorner(2 * L, 2 * L);
    return nb;
}

MeasurementModel build_measurement(const NetworkCase& c, const AdmittanceSet& adm, const StateLayout& layout,
                                   const std::vector<int>& pmus)
{
    const int N = c.N();
    const int E = int(adm.branch_index.size());
    MeasurementModel mm;
    mm.pmus = pmus;
    const Mat re = adm.y_ft.real(), im = adm.y_ft.imag();
    std::vector<Mat> blocks;
    for (int orig : pmus) {
        const int j = c.internal_id(orig);
        std::vector<int> sel;  // rows of y_ft carrying current out of bus j
        for (int e = 0; e < E; ++e) {
            const auto& br = c.branches[adm.branch_index[e]];
            if (br.from == j) sel.push_back(e);
            if (br.to == j) sel.push_back(E + e);
        }
        const int k = int(sel.size());
        Mat Cj = Mat::Zero(2 + 2 * k, 2 * N);
        Cj(0, j - 1) = 1.0;
        Cj(1, N + j - 1) = 1.0;
        for (int t = 0; t < k; ++t) {
            Cj.row(2 + t) << re.row(sel[t]), -im.row(sel[t]);
            Cj.row(2 + k + t) << im.row(sel[t]), re.row(sel[t]);
        }
        mm.rows_per_pmu.push_back(2 + 2 * k);
        blocks.push_back(Cj);
    }
    int p = 0;
    for (const auto& b : blocks) p += int(b.rows());
    mm.C_tilde = Mat::Zero(p, 2 * N);
    int row = 0;
    for (const auto& b : blocks) {
        mm.C_tilde.middleRows(row, b.rows()) = b;
        row += int(b.rows());
    }
    mm.C_M = Mat::Zero(2 * N, 2 * N);
    for (int k = 0; k < N; ++k) {
        const int bus = layout.v_bus[k];
        mm.C_M(bus - 1, 2 * k) = 1.0;
        mm.C_M(N + bus - 1, 2 * k + 1) = 1.0;
    }
    mm.C = Mat::Zero(p, layout.n());
    mm.C.rightCols(2 * N) = mm.C_tilde * mm.C_M;
    return mm;
}

DescriptorModel assemble_descriptor(const NetworkCase& c, const OperatingPoint& op, const GeneratorBlocks& gb,
                                    const NetworkBlocks& nb, const std::vector<int>& pmus)
{
    const int G = c.G(), N = c.N(), L = N - G;
    DescriptorModel m;
    m.G = G;
    m.N = N;
    m.m = 2 * G;
    m.layout = make_layout(c);
    m.gen = gb;
    m.net = nb;
    m.E_D = gb.E_D;
    m.B_D = gb.B_D;
    m.pmus = pmus;

    Eigen::PartialPivLU<Mat> da(gb.D_A);
    if (std::abs(gb.D_A.determinant()) < 1e-300) throw structural_error("stator matrix D_A is singular");
    const Mat DAinv_AA = da.solve(gb.A_A);
    const Mat DAinv_GA = da.solve(gb.G_A);

    m.A1 = gb.A_D - gb.D_D * DAinv_AA;
    m.A2 = Mat::Zero(4 * G, 2 * N);
    m.A2.leftCols(2 * G) = -gb.D_D * DAinv_GA;
    m.A3 = Mat::Zero(2 * N, 4 * G);
    m.A3.topRows(2 * G) = nb.A_G - nb.D_G * DAinv_AA;
    m.Abar_G = nb.G_GG - nb.D_G * DAinv_GA;
    m.A4.resize(2 * N, 2 * N);
    m.A4 << m.Abar_G, nb.G_GL, nb.G_LG, nb.G_LL;
    (void)L;

    const int n = 4 * G + 2 * N;
    m.E = Mat::Zero(n, n);
    m.E.topLeftCorner(4 * G, 4 * G) = gb.E_D;
    m.A.resize(n, n);
    m.A << m.A1, m.A2, m.A3, m.A4;
    m.B_u = Mat::Zero(n, 2 * G);
    m.B_u.topRows(4 * G) = gb.B_D;
    m.r = 4 * G;

    const AdmittanceSet adm = build_admittances(c);
    MeasurementModel mm = build_measurement(c, adm, m.layout, pmus);
    m.C = mm.C;
    m.C_tilde = mm.C_tilde;
    m.C_M = mm.C_M;
    const int p = int(m.C.rows());
    m.B_w = Mat::Zero(n, n + p);
    m.B_w.leftCols(n).setIdentity();
    m.D_w = Mat::Zero(p, n + p);
    m.D_w.rightCols(p).setIdentity();

    NetworkEquations eq(c, adm.y_bus);
    m.x0.resize(n);
    m.x0 << eq.x_of(op), eq.v_of(op.v0);
    m.u0 = eq.u_of(op);
    return m;
}

DescriptorModel build_model(const NetworkCase& c, const OperatingPoint& op, const std::vector<int>& pmus)
{
    return assemble_descriptor(c, op, linearize_generators(c, op), linearize_network(c, op), pmus);
}

AugmentedModel augment_unknown_input(const DescriptorSystem& s, const Mat& B_nu, const Mat& Psi)
{
    const int n = s.n();
    if (B_nu.rows() != n) throw config_error("B_nu must have n rows");
    const int v = int(B_nu.cols());
    if (Psi.rows() != v || Psi.cols() != v) throw config_error("Psi must be square with B_nu's column count");
    AugmentedModel a;
    a.n_base = n;
    a.v = v;
    a.B_nu = B_nu;
    a.Psi = Psi;
    a.E = Mat::Zero(n + v, n + v);
    a.E.topLeftCorner(n, n) = s.E;
    a.E.bottomRightCorner(v, v).setIdentity();
    a.A = Mat::Zero(n + v, n + v);
    a.A.topLeftCorner(n, n) = s.A;
    a.A.topRightCorner(n, v) = B_nu;
    a.A.bottomRightCorner(v, v) = Psi;
    a.B_u = Mat::Zero(n + v, s.B_u.cols());
    a.B_u.topRows(n) = s.B_u;
    a.B_w = Mat::Zero(n + v, s.B_w.cols());
    a.B_w.topRows(n) = s.B_w;
    a.C = Mat::Zero(s.C.rows(), n + v);
    a.C.leftCols(n) = s.C;
    a.D_w = s.D_w;
    a.r = s.r + v;
    return a;
}

std::string export_matrices(const std::vector<std::pair<std::string, const Mat*>>& mats)
{
    std::ostringstream o;
    char buf[40];
    for (const auto& [name, m] : mats) {
        o << name << ' ' << m->rows() << ' ' << m->cols() << '\n';
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
            for (Eigen::Index j = 0; j < m->cols(); ++j) {
                std::snprintf(buf, sizeof buf, "%.17g", (*m)(i, j));
                o << (j ? " " : "") << buf;
            }
            o << '\n';
        }
    }
    return o.str();
}

std::vector<std::pair<std::string, Mat>> import_matrices(const std::string& text)
{
    std::istringstream in(text);
    std::vector<std::pair<std::string, Mat>> out;
    std::string name;
    while (in >> name) {
        long r = 0, c = 0;
        if (!(in >> r >> c) || r < 0 || c < 0) throw config_error("matrix container: bad header for " + name);
        Mat m(r, c);
        for (long i = 0; i < r; ++i)
            for (long j = 0; j < c; ++j)
                if (!(in >> m(i, j))) throw config_error("matrix container: truncated values for " + name);
        out.emplace_back(name, std::move(m));
    }
    return out;
}

}  // namespace dse
