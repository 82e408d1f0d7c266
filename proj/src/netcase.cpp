#include "daedse/netcase.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <queue>
#include <set>
#include <sstream>

namespace dse {

namespace {

std::string trim(const std::string& s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

Error parse_error(int line, int col, const std::string& msg)
{
    return config_error("parse error at line " + std::to_string(line) + ", column " + std::to_string(col) +
                        ": " + msg);
}

// Splits a line into whitespace-separated tokens, remembering 1-based columns.
struct Token {
    std::string text;
    int col;
};

std::vector<Token> tokenize(const std::string& line, const std::string& separators = " \t\r,")
{
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && separators.find(line[i]) != std::string::npos) ++i;
        if (i >= line.size()) break;
        std::size_t j = i;
        while (j < line.size() && separators.find(line[j]) == std::string::npos) ++j;
        out.push_back({line.substr(i, j - i), int(i) + 1});
        i = j;
    }
    return out;
}

double to_number(const Token& t, int line)
{
    try {
        std::size_t used = 0;
        double v = std::stod(t.text, &used);
        if (used != t.text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw parse_error(line, t.col, "expected a number, found '" + t.text + "'");
    }
}

struct RawBus {
    int id;
    BusKind kind;
    double vset;
    cplx load;
    cplx shunt;
    int line;
};

struct RawBranch {
    int from, to;
    double r, x, b, tap, shift;
    bool status;
    int line;
};

struct RawGen {
    int bus;
    double pg, vset;
    bool status;
    GeneratorParams p;
    bool has_params;
    int line;
};

struct DynRow {
    double M_or_H, D, xd, xq, xdp, xqp, Td0p, Tq0p, Rs;
};

NetworkCase assemble(const std::vector<RawBus>& rb, const std::vector<RawBranch>& rbr,
                     const std::vector<RawGen>& rg, double base_mva, double omega0)
{
    NetworkCase c;
    c.base_mva = base_mva;
    c.omega0 = omega0;
    std::map<int, int> idmap;
    for (const auto& b : rb) {
        if (idmap.count(b.id)) throw parse_error(b.line, 1, "duplicate bus id " + std::to_string(b.id));
        int internal = int(c.buses.size()) + 1;
        idmap[b.id] = internal;
        BusRecord rec;
        rec.id = internal;
        rec.kind = b.kind;
        rec.vset = b.vset;
        rec.load = b.load;
        rec.shunt = b.shunt;
        c.buses.push_back(rec);
        c.original_ids.push_back(b.id);
    }
    for (const auto& br : rbr) {
        auto f = idmap.find(br.from), t = idmap.find(br.to);
        if (f == idmap.end() || t == idmap.end())
            throw parse_error(br.line, 1, "branch references unknown bus");
        BranchRecord rec;
        rec.from = f->second;
        rec.to = t->second;
        rec.z = cplx(br.r, br.x);
        rec.b = br.b;
        rec.tap = br.tap == 0.0 ? 1.0 : br.tap;
        rec.shift = br.shift;
        rec.in_service = br.status;
        c.branches.push_back(rec);
    }
    for (const auto& g : rg) {
        if (!g.status) continue;
        auto it = idmap.find(g.bus);
        if (it == idmap.end())
            throw parse_error(g.line, 1, "generator references unknown bus " + std::to_string(g.bus));
        if (!g.has_params)
            throw parse_error(g.line, 1, "no dynamic parameters for generator at bus " + std::to_string(g.bus));
        GeneratorParams p = g.p;
        p.bus = it->second;
        p.pg = g.pg;
        auto& bus = c.buses[it->second - 1];
        if (bus.kind == BusKind::load) bus.kind = BusKind::generator;
        bus.vset = g.vset;
        c.generators.push_back(p);
    }
    // MATPOWER marks PV buses without an online generator; treat them as loads.
    for (auto& b : c.buses)
        if (b.kind == BusKind::generator && c.generator_at(b.id) < 0) b.kind = BusKind::load;
    return c;
}

std::map<int, DynRow> parse_companion(const std::string& text, bool& is_mass)
{
    std::map<int, DynRow> rows;
    std::istringstream in(text);
    std::string line;
    int ln = 0;
    is_mass = false;
    while (std::getline(in, line)) {
        ++ln;
        std::string t = trim(line);
        if (t.empty()) continue;
        if (t[0] == '#') {
            auto toks = tokenize(t.substr(1));
            if (toks.size() >= 2 && toks[0].text == "bus") is_mass = (toks[1].text == "M");
            continue;
        }
        auto toks = tokenize(t);
        if (toks.size() != 10) throw parse_error(ln, 1, "companion row needs 10 columns");
        int bus = int(to_number(toks[0], ln));
        if (rows.count(bus)) throw parse_error(ln, 1, "duplicate companion row for bus " + std::to_string(bus));
        DynRow r{to_number(toks[1], ln), to_number(toks[2], ln), to_number(toks[3], ln),
                 to_number(toks[4], ln), to_number(toks[5], ln), to_number(toks[6], ln),
                 to_number(toks[7], ln), to_number(toks[8], ln), to_number(toks[9], ln)};
        rows[bus] = r;
    }
    return rows;
}

// Extracts "mpc.<name> = [ ... ];" as rows of tokens with source positions.
struct MatRow {
    std::vector<Token> toks;
    int line;
};

std::vector<MatRow> matpower_matrix(const std::vector<std::string>& lines, const std::string& name, bool required)
{
    std::vector<MatRow> rows;
    const std::string key = "mpc." + name;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string l = lines[i].substr(0, lines[i].find('%'));
        auto pos = l.find(key);
        if (pos == std::string::npos) continue;
        auto after = l.substr(pos + key.size());
        auto eq = after.find('=');
        if (eq == std::string::npos || !trim(after.substr(0, eq)).empty()) continue;
        auto br = l.find('[', pos);
        if (br == std::string::npos) throw parse_error(int(i) + 1, int(pos) + 1, "expected '[' after " + key);
        std::string rest = l.substr(br + 1);
        std::size_t li = i;
        int col_offset = int(br) + 1;
        while (true) {
            auto close = rest.find(']');
            std::string body = close == std::string::npos ? rest : rest.substr(0, close);
            // rows end at ';' or at the end of the physical line
            std::size_t start = 0;
            while (start <= body.size()) {
                auto semi = body.find(';', start);
                std::string seg = body.substr(start, semi == std::string::npos ? std::string::npos : semi - start);
                auto toks = tokenize(seg);
                for (auto& t : toks) t.col += col_offset + int(start);
                if (!toks.empty()) rows.push_back({toks, int(li) + 1});
                if (semi == std::string::npos) break;
                start = semi + 1;
            }
            if (close != std::string::npos) return rows;
            ++li;
            if (li >= lines.size()) throw parse_error(int(li), 1, "unterminated matrix " + key);
            rest = lines[li].substr(0, lines[li].find('%'));
            col_offset = 0;
        }
    }
    if (required) throw config_error("parse error: matrix " + key + " not found");
    return rows;
}

NetworkCase parse_matpower(const std::string& text, const std::string& companion)
{
    std::vector<std::string> lines;
    {
        std::istringstream in(text);
        std::string l;
        while (std::getline(in, l)) lines.push_back(l);
    }
    double base = 100.0;
    bool found_base = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        std::string l = lines[i].substr(0, lines[i].find('%'));
        auto pos = l.find("mpc.baseMVA");
        if (pos == std::string::npos) continue;
        auto eq = l.find('=', pos);
        if (eq == std::string::npos) throw parse_error(int(i) + 1, int(pos) + 1, "expected '='");
        auto toks = tokenize(l.substr(eq + 1), " \t\r;");
        if (toks.empty()) throw parse_error(int(i) + 1, int(eq) + 2, "missing baseMVA value");
        toks[0].col += int(eq) + 1;
        base = to_number(toks[0], int(i) + 1);
        found_base = true;
    }
    if (!found_base) throw config_error("parse error: mpc.baseMVA not found");
    const double omega0 = 2.0 * std::numbers::pi * 60.0;

    bool is_mass = false;
    auto dyn = parse_companion(companion, is_mass);

    std::vector<RawBus> rb;
    for (const auto& row : matpower_matrix(lines, "bus", true)) {
        if (row.toks.size() < 13) throw parse_error(row.line, row.toks.front().col, "bus row needs 13 columns");
        std::vector<double> v;
        for (const auto& t : row.toks) v.push_back(to_number(t, row.line));
        int type = int(v[1]);
        BusKind k = type == 3 ? BusKind::slack : type == 2 ? BusKind::generator : BusKind::load;
        if (type == 4) continue;  // isolated
        rb.push_back({int(v[0]), k, v[7], cplx(v[2], v[3]) / base, cplx(v[4], v[5]) / base, row.line});
    }
    std::vector<RawGen> rg;
    for (const auto& row : matpower_matrix(lines, "gen", true)) {
        if (row.toks.size() < 8) throw parse_error(row.line, row.toks.front().col, "gen row needs at least 8 columns");
        std::vector<double> v;
        for (const auto& t : row.toks) v.push_back(to_number(t, row.line));
        RawGen g{int(v[0]), v[1] / base, v[5], v[7] > 0, {}, false, row.line};
        auto it = dyn.find(g.bus);
        if (it != dyn.end()) {
            const DynRow& d = it->second;
            g.p.M = is_mass ? d.M_or_H : 2.0 * d.M_or_H / omega0;
            g.p.D = d.D;
            g.p.xd = d.xd;
            g.p.xq = d.xq;
            g.p.xdp = d.xdp;
            g.p.xqp = d.xqp;
            g.p.Td0p = d.Td0p;
            g.p.Tq0p = d.Tq0p;
            g.p.Rs = d.Rs;
            g.has_params = true;
        }
        rg.push_back(g);
    }
    std::vector<RawBranch> rbr;
    for (const auto& row : matpower_matrix(lines, "branch", true)) {
        if (row.toks.size() < 11) throw parse_error(row.line, row.toks.front().col, "branch row needs 11 columns");
        std::vector<double> v;
        for (const auto& t : row.toks) v.push_back(to_number(t, row.line));
        rbr.push_back({int(v[0]), int(v[1]), v[2], v[3], v[4], v[8], v[9] * std::numbers::pi / 180.0, v[10] > 0,
                       row.line});
    }
    NetworkCase c = assemble(rb, rbr, rg, base, omega0);
    return c;
}

BusKind kind_from(const Token& t, int line)
{
    if (t.text == "slack") return BusKind::slack;
    if (t.text == "generator" || t.text == "gen" || t.text == "pv") return BusKind::generator;
    if (t.text == "load" || t.text == "pq") return BusKind::load;
    throw parse_error(line, t.col, "unknown bus kind '" + t.text + "'");
}

NetworkCase parse_native(const std::string& text)
{
    std::istringstream in(text);
    std::string line, section, name;
    int ln = 0;
    double base = 100.0, omega0 = 2.0 * std::numbers::pi * 60.0;
    std::vector<RawBus> rb;
    std::vector<RawBranch> rbr;
    std::vector<RawGen> rg;
    while (std::getline(in, line)) {
        ++ln;
        std::string t = trim(line.substr(0, line.find('#')));
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw parse_error(ln, int(line.find('[')) + 1, "unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section != "base" && section != "buses" && section != "branches" && section != "generators")
                throw parse_error(ln, 2, "unknown section '" + section + "'");
            continue;
        }
        auto toks = tokenize(line.substr(0, line.find('#')));
        if (section.empty()) throw parse_error(ln, toks.front().col, "content outside of a section");
        if (section == "base") {
            auto eq = t.find('=');
            if (eq == std::string::npos) throw parse_error(ln, 1, "expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string val = trim(t.substr(eq + 1));
            Token vt{val, int(line.find('=')) + 2};
            if (key == "base_mva") base = to_number(vt, ln);
            else if (key == "omega0") omega0 = to_number(vt, ln);
            else if (key == "name") name = val;
            else throw parse_error(ln, 1, "unknown key '" + key + "'");
        } else if (section == "buses") {
            if (toks.size() != 7) throw parse_error(ln, toks.front().col, "bus row needs 7 columns: id kind vset pl ql gs bs");
            rb.push_back({int(to_number(toks[0], ln)), kind_from(toks[1], ln), to_number(toks[2], ln),
                          cplx(to_number(toks[3], ln), to_number(toks[4], ln)),
                          cplx(to_number(toks[5], ln), to_number(toks[6], ln)), ln});
        } else if (section == "branches") {
            if (toks.size() != 8)
                throw parse_error(ln, toks.front().col, "branch row needs 8 columns: from to r x b tap shift status");
            rbr.push_back({int(to_number(toks[0], ln)), int(to_number(toks[1], ln)), to_number(toks[2], ln),
                           to_number(toks[3], ln), to_number(toks[4], ln), to_number(toks[5], ln),
                           to_number(toks[6], ln), to_number(toks[7], ln) > 0, ln});
        } else {
            if (toks.size() != 11)
                throw parse_error(ln, toks.front().col,
                                  "generator row needs 11 columns: bus pg M D xd xq xdp xqp Td0p Tq0p Rs");
            RawGen g{int(to_number(toks[0], ln)), to_number(toks[1], ln), 1.0, true, {}, true, ln};
            g.p.M = to_number(toks[2], ln);
            g.p.D = to_number(toks[3], ln);
            g.p.xd = to_number(toks[4], ln);
            g.p.xq = to_number(toks[5], ln);
            g.p.xdp = to_number(toks[6], ln);
            g.p.xqp = to_number(toks[7], ln);
            g.p.Td0p = to_number(toks[8], ln);
            g.p.Tq0p = to_number(toks[9], ln);
            g.p.Rs = to_number(toks[10], ln);
            rg.push_back(g);
        }
    }
    // generator voltage setpoints live on the bus rows in the native format
    for (auto& g : rg)
        for (const auto& b : rb)
            if (b.id == g.bus) g.vset = b.vset;
    NetworkCase c = assemble(rb, rbr, rg, base, omega0);
    c.name = name;
    return c;
}

}  // namespace

int NetworkCase::internal_id(int original) const
{
    for (std::size_t i = 0; i < original_ids.size(); ++i)
        if (original_ids[i] == original) return int(i) + 1;
    throw config_error("unknown bus id " + std::to_string(original));
}

int NetworkCase::generator_at(int internal) const
{
    for (std::size_t g = 0; g < generators.size(); ++g)
        if (generators[g].bus == internal) return int(g);
    return -1;
}

int NetworkCase::slack_bus() const
{
    for (const auto& b : buses)
        if (b.kind == BusKind::slack) return b.id;
    throw config_error("case has no slack bus");
}

void validate_case(const NetworkCase& c)
{
    if (c.base_mva <= 0) throw config_error("base_mva must be positive");
    if (c.buses.empty()) throw config_error("case has no buses");
    int slack = 0;
    for (std::size_t i = 0; i < c.buses.size(); ++i) {
        if (c.buses[i].id != int(i) + 1) throw config_error("bus ids are not contiguous");
        if (c.buses[i].kind == BusKind::slack) ++slack;
    }
    if (slack == 0) throw config_error("missing slack bus");
    if (slack > 1) throw config_error("more than one slack bus");
    std::set<int> genbus;
    for (const auto& g : c.generators) {
        const int orig = g.bus >= 1 && g.bus <= c.N() ? c.original_id(g.bus) : g.bus;
        if (g.bus < 1 || g.bus > c.N()) throw config_error("generator references unknown bus");
        if (!genbus.insert(g.bus).second)
            throw config_error("more than one generator at bus " + std::to_string(orig));
        if (!(g.M > 0) || !(g.Td0p > 0) || !(g.Tq0p > 0))
            throw config_error("generator at bus " + std::to_string(orig) + " needs M, T'd0, T'q0 > 0");
        if (std::abs(g.Rs * g.Rs + g.xdp * g.xqp) < 1e-14)
            throw config_error("generator at bus " + std::to_string(orig) + " has singular stator matrix");
    }
    for (const auto& br : c.branches) {
        if (br.from < 1 || br.from > c.N() || br.to < 1 || br.to > c.N())
            throw config_error("branch references unknown bus");
        if (br.from == br.to) throw config_error("branch connects a bus to itself");
        if (std::abs(br.z) == 0.0) throw config_error("zero series impedance");
    }
    // connectivity over in-service branches
    std::vector<std::vector<int>> adj(c.N() + 1);
    for (const auto& br : c.branches)
        if (br.in_service) {
            adj[br.from].push_back(br.to);
            adj[br.to].push_back(br.from);
        }
    std::vector<bool> seen(c.N() + 1, false);
    std::queue<int> q;
    q.push(1);
    seen[1] = true;
    int count = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : adj[u])
            if (!seen[v]) {
                seen[v] = true;
                ++count;
                q.push(v);
            }
    }
    if (count != c.N()) throw config_error("network graph is not connected");
}

NetworkCase parse_case(const std::string& text, CaseFormat format, const std::string& companion)
{
    NetworkCase c = format == CaseFormat::native ? parse_native(text) : parse_matpower(text, companion);
    validate_case(c);
    return c;
}

std::string read_text_file(const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw config_error("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

NetworkCase load_case(const std::string& path, const std::string& companion_path)
{
    const std::string text = read_text_file(path);
    const bool is_m = path.size() > 2 && path.substr(path.size() - 2) == ".m";
    NetworkCase c;
    if (is_m) {
        std::string comp = companion_path;
        if (comp.empty()) comp = path.substr(0, path.size() - 2) + "_dyn.txt";
        c = parse_case(text, CaseFormat::matpower_subset, read_text_file(comp));
    } else {
        c = parse_case(text, CaseFormat::native);
    }
    if (c.name.empty()) {
        auto slash = path.find_last_of('/');
        c.name = path.substr(slash == std::string::npos ? 0 : slash + 1);
    }
    return c;
}

std::string serialize_case(const NetworkCase& c)
{
    std::ostringstream o;
    auto num = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    o << "[base]\n";
    if (!c.name.empty()) o << "name = " << c.name << "\n";
    o << "base_mva = " << num(c.base_mva) << "\nomega0 = " << num(c.omega0) << "\n\n";
    o << "[buses]\n# id kind vset pl ql gs bs\n";
    for (const auto& b : c.buses) {
        const char* k = b.kind == BusKind::slack ? "slack" : b.kind == BusKind::generator ? "generator" : "load";
        o << c.original_id(b.id) << ' ' << k << ' ' << num(b.vset) << ' ' << num(b.load.real()) << ' '
          << num(b.load.imag()) << ' ' << num(b.shunt.real()) << ' ' << num(b.shunt.imag()) << "\n";
    }
    o << "\n[branches]\n# from to r x b tap shift status\n";
    for (const auto& br : c.branches)
        o << c.original_id(br.from) << ' ' << c.original_id(br.to) << ' ' << num(br.z.real()) << ' '
          << num(br.z.imag()) << ' ' << num(br.b) << ' ' << num(br.tap) << ' ' << num(br.shift) << ' '
          << (br.in_service ? 1 : 0) << "\n";
    o << "\n[generators]\n# bus pg M D xd xq xdp xqp Td0p Tq0p Rs\n";
    for (const auto& g : c.generators)
        o << c.original_id(g.bus) << ' ' << num(g.pg) << ' ' << num(g.M) << ' ' << num(g.D) << ' ' << num(g.xd)
          << ' ' << num(g.xq) << ' ' << num(g.xdp) << ' ' << num(g.xqp) << ' ' << num(g.Td0p) << ' '
          << num(g.Tq0p) << ' ' << num(g.Rs) << "\n";
    return o.str();
}

AdmittanceSet build_admittances(const NetworkCase& c)
{
    const int N = c.N();
    AdmittanceSet a;
    for (std::size_t e = 0; e < c.branches.size(); ++e)
        if (c.branches[e].in_service) a.branch_index.push_back(int(e));
    const int E = int(a.branch_index.size());
    a.y_from = CMat::Zero(E, N);
    a.y_to = CMat::Zero(E, N);
    for (int e = 0; e < E; ++e) {
        const auto& br = c.branches[a.branch_index[e]];
        if (std::abs(br.z) == 0.0) throw config_error("zero series impedance");
        const cplx ys = 1.0 / br.z;
        const cplx tap = std::polar(br.tap, br.shift);
        const cplx ytt = ys + cplx(0.0, br.b / 2.0);
        const cplx yff = ytt / (br.tap * br.tap);
        const cplx yft = -ys / std::conj(tap);
        const cplx ytf = -ys / tap;
        a.y_from(e, br.from - 1) += yff;
        a.y_from(e, br.to - 1) += yft;
        a.y_to(e, br.from - 1) += ytf;
        a.y_to(e, br.to - 1) += ytt;
    }
    a.y_bus = CMat::Zero(N, N);
    for (const auto& b : c.buses) a.y_bus(b.id - 1, b.id - 1) += b.shunt;
    for (int e = 0; e < E; ++e) {
        const auto& br = c.branches[a.branch_index[e]];
        a.y_bus.row(br.from - 1) += a.y_from.row(e);
        a.y_bus.row(br.to - 1) += a.y_to.row(e);
    }
    a.y_ft.resize(2 * E, N);
    a.y_ft << a.y_from, a.y_to;
    return a;
}

std::vector<int> incident_branches(const NetworkCase& c, const AdmittanceSet& adm, int bus)
{
    std::vector<int> rows;
    for (std::size_t e = 0; e < adm.branch_index.size(); ++e) {
        const auto& br = c.branches[adm.branch_index[e]];
        if (br.from == bus || br.to == bus) rows.push_back(int(e));
    }
    return rows;
}

}  // namespace dse
