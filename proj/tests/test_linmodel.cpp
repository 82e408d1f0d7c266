#include "doctest.h"
#include "daedse/linmodel.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <numbers>

using namespace dse;

namespace {

struct Fixture {
    NetworkCase c;
    OperatingPoint op;
    explicit Fixture(const char* name) : c(load_case(data_path(name))), op(compute_operating_point(c)) {}
};

struct PointVectors {
    Vec x, ig, u, v;
};

PointVectors stack(const NetworkCase& c, const OperatingPoint& op, const oracle::PaperModel& pm)
{
    PointVectors p;
    const int G = c.G();
    p.x.resize(4 * G);
    p.ig.resize(2 * G);
    p.u.resize(2 * G);
    for (int g = 0; g < G; ++g) {
        p.x.segment<4>(4 * g) << op.delta(g), op.omega(g), op.eqp(g), op.edp(g);
        p.ig.segment<2>(2 * g) << op.id(g), op.iq(g);
        p.u.segment<2>(2 * g) << op.TM(g), op.Efd(g);
    }
    p.v.resize(2 * c.N());
    int k = 0;
    for (int b : pm.gen_bus) p.v.segment<2>(2 * k++) << op.v0(b).real(), op.v0(b).imag();
    for (int b : pm.load_bus) p.v.segment<2>(2 * k++) << op.v0(b).real(), op.v0(b).imag();
    return p;
}

}  // namespace

TEST_CASE("generator blocks against finite differences")
{
    for (const char* name : {"case9.m", "case39.m"}) {
        Fixture f(name);
        oracle::PaperModel pm(f.c);
        const PointVectors p = stack(f.c, f.op, pm);
        const GeneratorBlocks gb = linearize_generators(f.c, f.op);
        Vec vR, vI;
        pm.split_v(p.v, vR, vI);

        const Mat fx = oracle::central_difference([&](const Vec& x) { return pm.dyn(x, p.ig, p.u); }, p.x);
        const Mat fi = oracle::central_difference([&](const Vec& i) { return pm.dyn(p.x, i, p.u); }, p.ig);
        const Mat fu = oracle::central_difference([&](const Vec& u) { return pm.dyn(p.x, p.ig, u); }, p.u);
        CHECK(oracle::rel_error(gb.E_D * fx, gb.A_D) <= 1e-6);
        CHECK(oracle::rel_error(gb.E_D * fi, gb.D_D) <= 1e-6);
        CHECK(oracle::rel_error(gb.E_D * fu, gb.B_D) <= 1e-6);

        const Mat sx = oracle::central_difference([&](const Vec& x) { return pm.stator(x, p.ig, vR, vI); }, p.x);
        const Mat si = oracle::central_difference([&](const Vec& i) { return pm.stator(p.x, i, vR, vI); }, p.ig);
        const Mat sv = oracle::central_difference(
            [&](const Vec& v) {
                Vec r, i;
                pm.split_v(v, r, i);
                return pm.stator(p.x, p.ig, r, i);
            },
            p.v);
        CHECK(oracle::rel_error(gb.A_A, sx) <= 1e-6);
        CHECK(oracle::rel_error(gb.D_A, si) <= 1e-6);
        CHECK(oracle::rel_error(gb.G_A, sv.leftCols(2 * f.c.G())) <= 1e-6);
        CHECK(sv.rightCols(2 * (f.c.N() - f.c.G())).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("network blocks against finite differences")
{
    for (const char* name : {"case9.m", "case39.m"}) {
        Fixture f(name);
        oracle::PaperModel pm(f.c);
        const PointVectors p = stack(f.c, f.op, pm);
        const NetworkBlocks nb = linearize_network(f.c, f.op);
        const int G = f.c.G(), N = f.c.N(), L = N - G;
        auto bal_v = [&](const Vec& v) {
            Vec r, i;
            pm.split_v(v, r, i);
            return pm.balance_stacked(p.x, p.ig, r, i);
        };
        Vec vR, vI;
        pm.split_v(p.v, vR, vI);
        const Mat bx = oracle::central_difference([&](const Vec& x) { return pm.balance_stacked(x, p.ig, vR, vI); }, p.x);
        const Mat bi = oracle::central_difference([&](const Vec& i) { return pm.balance_stacked(p.x, i, vR, vI); }, p.ig);
        const Mat bv = oracle::central_difference(bal_v, p.v);
        CHECK(oracle::rel_error(nb.A_G, bx.topRows(2 * G)) <= 1e-6);
        CHECK(oracle::rel_error(nb.D_G, bi.topRows(2 * G)) <= 1e-6);
        CHECK(oracle::rel_error(nb.G_GG, bv.topLeftCorner(2 * G, 2 * G)) <= 1e-6);
        CHECK(oracle::rel_error(nb.G_GL, bv.topRightCorner(2 * G, 2 * L)) <= 1e-6);
        CHECK(oracle::rel_error(nb.G_LG, bv.bottomLeftCorner(2 * L, 2 * G)) <= 1e-6);
        CHECK(oracle::rel_error(nb.G_LL, bv.bottomRightCorner(2 * L, 2 * L)) <= 1e-6);
        // load rows carry no machine dependence
        CHECK(bx.bottomRows(2 * L).cwiseAbs().maxCoeff() == 0.0);
        CHECK(bi.bottomRows(2 * L).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("assembled descriptor matches the reduced nonlinear model")
{
    for (const char* name : {"case9.m", "case39.m"}) {
        Fixture f(name);
        oracle::PaperModel pm(f.c);
        const PointVectors p = stack(f.c, f.op, pm);
        const DescriptorModel m = build_model(f.c, f.op, {f.c.original_id(1)});
        const int G = f.c.G();
        auto reduced = [&](const Vec& z) {
            const Vec x = z.head(4 * G), v = z.tail(2 * f.c.N());
            Vec vR, vI;
            pm.split_v(v, vR, vI);
            const Vec ig = pm.currents(x, vR, vI);
            Vec out(z.size());
            out << m.E_D * pm.dyn(x, ig, p.u), pm.balance_stacked(x, ig, vR, vI);
            return out;
        };
        Vec z(m.n());
        z << p.x, p.v;
        CHECK((z - m.x0).norm() < 1e-14);
        const Mat J = oracle::central_difference(reduced, z);
        CHECK(oracle::rel_error(m.A, J) <= 1e-6);
        CHECK(m.A.topRightCorner(4 * G, 2 * f.c.N()).rightCols(2 * (f.c.N() - G)).norm() == 0.0);
    }
}

TEST_CASE("appendix machine rows at given currents")
{
    NetworkCase c = parse_case("[buses]\n1 slack 1 0 0 0 0\n[generators]\n1 0 2 1 1 1 0.3 0.3 5 0.5 0.01\n",
                               CaseFormat::native);
    OperatingPoint op;
    op.v0 = CVec::Constant(1, cplx(1.0, 0.0));
    op.delta = Vec::Zero(1);
    op.omega = Vec::Constant(1, c.omega0);
    op.eqp = Vec::Constant(1, 1.0);
    op.edp = Vec::Constant(1, 0.2);
    op.id = Vec::Constant(1, 0.3);
    op.iq = Vec::Constant(1, 0.8);
    const GeneratorBlocks gb = linearize_generators(c, op);
    CHECK(gb.A_D.row(1).isApprox((Eigen::RowVector4d() << 0, -1, -0.8, -0.3).finished()));
    CHECK(gb.G_A.isApprox((Eigen::Matrix2d() << 0, 1, -1, 0).finished()));
    CHECK(gb.E_D.diagonal().isApprox(Eigen::Vector4d(1, 2, 5, 0.5)));
}

TEST_CASE("lossless two-bus balance derivative")
{
    const char* text = "[buses]\n1 slack 1.0 0 0 0 0\n2 load 1 0.4 0.1 0 0\n[branches]\n1 2 0 0.1 0 1 0 1\n"
                       "[generators]\n1 0 0.1 0.1 1 1 0.3 0.3 5 0.5 0\n";
    NetworkCase c = parse_case(text, CaseFormat::native);
    OperatingPoint op = compute_operating_point(c);
    NetworkBlocks nb = linearize_network(c, op);
    // row 0 is -P_1; with G = 0, dP_1/dvR2 = B12 vI1 and dP_1/dvI2 = -B12 vR1, B12 = 10
    const double vR1 = op.v0(0).real(), vI1 = op.v0(0).imag();
    CHECK(nb.G_GL(0, 0) == doctest::Approx(-10.0 * vI1).epsilon(1e-12));
    CHECK(nb.G_GL(0, 1) == doctest::Approx(10.0 * vR1).epsilon(1e-12));
}

TEST_CASE("descriptor dimensions")
{
    Fixture f9("case9.m");
    DescriptorModel m = build_model(f9.c, f9.op, {4, 6});
    CHECK(m.n() == 30);
    CHECK(m.m == 6);
    CHECK(m.r == 12);
    CHECK(numerical_rank(m.E).rank == 12);
    CHECK(m.p() == 16);
    CHECK(m.q() == 46);
    CHECK(m.A4.rows() == 18);
    CHECK((m.C_M * m.C_M.transpose() - Mat::Identity(18, 18)).norm() == 0.0);
    CHECK((m.A * Vec::Zero(30)).norm() == 0.0);
    CHECK((m.B_w * m.B_w.transpose() - Mat::Identity(30, 30)).norm() == 0.0);
    CHECK((m.D_w * m.D_w.transpose() - Mat::Identity(16, 16)).norm() == 0.0);
    CHECK(m.C.leftCols(12).norm() == 0.0);
    CHECK((m.C.rightCols(18) - m.C_tilde * m.C_M).norm() == 0.0);
    int max_deg = 3;
    for (Eigen::Index i = 0; i < m.C.rows(); ++i)
        CHECK((m.C.row(i).array() != 0.0).count() <= 2 + 2 * max_deg);

    DescriptorModel one = build_model(f9.c, f9.op, {1});
    CHECK(one.p() == 4);

    Fixture f39("case39.m");
    DescriptorModel m39 = build_model(f39.c, f39.op, {2, 6, 10, 19, 20, 22, 23, 25, 29});
    CHECK(m39.n() == 4 * f39.c.G() + 78);
    const AdmittanceSet adm = build_admittances(f39.c);
    int p = 0;
    for (int b : {2, 6, 10, 19, 20, 22, 23, 25, 29})
        p += 2 + 2 * int(incident_branches(f39.c, adm, f39.c.internal_id(b)).size());
    CHECK(m39.p() == p);
}

TEST_CASE("measurement rows reproduce branch currents")
{
    Fixture f("case9.m");
    DescriptorModel m = build_model(f.c, f.op, {4});
    const AdmittanceSet adm = build_admittances(f.c);
    const Vec y = m.C * m.x0;
    CHECK(y(0) == doctest::Approx(f.op.v0(3).real()));
    CHECK(y(1) == doctest::Approx(f.op.v0(3).imag()));
    // currents leaving bus 4 over its three branches, in branch order
    std::vector<cplx> cur;
    for (int e : incident_branches(f.c, adm, 4)) {
        const auto& br = f.c.branches[adm.branch_index[e]];
        const CVec row = br.from == 4 ? CVec(adm.y_from.row(e).transpose()) : CVec(adm.y_to.row(e).transpose());
        cur.push_back((row.transpose() * f.op.v0)(0));
    }
    REQUIRE(cur.size() == 3);
    for (int t = 0; t < 3; ++t) {
        CHECK(y(2 + t) == doctest::Approx(cur[t].real()).epsilon(1e-12));
        CHECK(y(5 + t) == doctest::Approx(cur[t].imag()).epsilon(1e-12));
    }
}

TEST_CASE("unknown-input augmentation")
{
    Fixture f("case9.m");
    DescriptorModel m = build_model(f.c, f.op, {4, 6});
    AugmentedModel a = augment_unknown_input(m, m.B_u, Mat::Zero(6, 6));
    CHECK(a.n() == 36);
    CHECK(a.r == 18);
    CHECK(numerical_rank(a.E).rank == 18);
    CHECK((a.A.topRightCorner(30, 6) - m.B_u).norm() == 0.0);
    CHECK(a.A.bottomRows(6).norm() == 0.0);
    AugmentedModel id = augment_unknown_input(m, Mat::Zero(30, 0), Mat::Zero(0, 0));
    CHECK((id.A - m.A).norm() == 0.0);
    CHECK((id.E - m.E).norm() == 0.0);
    CHECK((id.C - m.C).norm() == 0.0);
    CHECK_THROWS_AS(augment_unknown_input(m, m.B_u, Mat::Zero(5, 5)), Error);
}

TEST_CASE("matrix container round trip")
{
    Fixture f("case9.m");
    DescriptorModel m = build_model(f.c, f.op, {4, 6});
    const std::string s = export_matrices({{"E", &m.E}, {"A", &m.A}, {"C", &m.C}});
    auto back = import_matrices(s);
    REQUIRE(back.size() == 3);
    CHECK(back[1].first == "A");
    CHECK((back[1].second - m.A).norm() == 0.0);
}
