#include "tsim/scenario.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "tsim/devices.hpp"

#ifndef TSIM_DATA_DIR
#define TSIM_DATA_DIR "data"
#endif

namespace tsim {

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line >= 0 ? n.Mark().line + 1 : -1; }

// Typed field access on one mapping record; remembers which keys were read
// so that leftovers can be reported as schema violations.
class Record {
public:
    Record(const YAML::Node& node, std::string what) : node_(node), what_(std::move(what)) {
        if (!node_.IsMap()) throw ParseError(what_ + ": expected a mapping", line_of(node_));
    }

    bool has(const char* key) {
        used_.insert(key);
        return static_cast<bool>(node_[key]);
    }

    double num(const char* key, double fallback) { return has(key) ? to_double(key) : fallback; }

    double num(const char* key) {
        if (!has(key)) throw ParseError(what_ + ": missing field '" + key + "'", line_of(node_));
        return to_double(key);
    }

    int integer(const char* key) {
        const double v = num(key);
        if (v != std::floor(v)) throw ParseError(what_ + ": field '" + key + "' must be an integer", line_of(node_[key]));
        return static_cast<int>(v);
    }

    int integer(const char* key, int fallback) { return has(key) ? integer(key) : fallback; }

    std::string str(const char* key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const YAML::Node n = node_[key];
        if (!n.IsScalar()) throw ParseError(what_ + ": field '" + key + "' must be a scalar", line_of(n));
        return n.Scalar();
    }

    YAML::Node child(const char* key) {
        used_.insert(key);
        return node_[key];
    }

    void finish() const {
        for (const auto& kv : node_) {
            const std::string k = kv.first.Scalar();
            if (!used_.contains(k)) {
                throw ParseError(what_ + ": unknown field '" + k + "'", line_of(kv.first));
            }
        }
    }

    int line() const { return line_of(node_); }
    const std::string& what() const { return what_; }

private:
    double to_double(const char* key) {
        const YAML::Node n = node_[key];
        if (!n.IsScalar()) throw ParseError(what_ + ": field '" + key + "' must be a number", line_of(n));
        try {
            return parse_fraction(n.Scalar());
        } catch (const ParseError&) {
            throw ParseError(what_ + ": field '" + key + "' is not a number: '" + n.Scalar() + "'", line_of(n));
        }
    }

    YAML::Node node_;
    std::string what_;
    std::set<std::string> used_;
};

YAML::Node load_yaml(const std::string& text, const std::string& name) {
    try {
        return YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ParseError(name + ": " + e.msg, e.mark.line >= 0 ? e.mark.line + 1 : -1);
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<YAML::Node> list_of(const YAML::Node& n, const std::string& what) {
    std::vector<YAML::Node> out;
    if (!n || n.IsNull()) return out;
    if (!n.IsSequence()) throw ParseError(what + ": expected a list", line_of(n));
    for (const auto& item : n) out.push_back(item);
    return out;
}

std::string tag(const char* model, int id, int line) {
    return std::string(model) + " id=" + std::to_string(id) + " (line " + std::to_string(line) + ")";
}

// Parameter invariants surface as validation errors naming the record.
template <typename F>
auto checked(const std::string& record, F&& make) {
    try {
        return make();
    } catch (const ParameterError& e) {
        throw ValidationError(record + ": " + e.what());
    } catch (const InitializationError& e) {
        throw ValidationError(record + ": " + e.what());
    }
}

BusKind bus_kind(const std::string& s, const Record& r) {
    if (s == "slack") return BusKind::slack;
    if (s == "pv") return BusKind::pv;
    if (s == "pq") return BusKind::pq;
    throw ParseError(r.what() + ": kind must be slack, pv or pq, got '" + s + "'", r.line());
}

struct MachineRecord {
    int line;
    double mva;
};

void parse_devices(const YAML::Node& node, CaseData& out) {
    if (!node || node.IsNull()) return;
    if (!node.IsMap()) throw ParseError("devices: expected a mapping keyed by model name", line_of(node));
    static const std::vector<std::string> known = {"GENROU", "EXST_LITE", "TGOV_LITE", "REGCA_LITE", "REECA_LITE"};
    for (const auto& kv : node) {
        const std::string model = kv.first.Scalar();
        if (std::find(known.begin(), known.end(), model) == known.end()) {
            throw ParseError("devices: unknown model '" + model + "'", line_of(kv.first));
        }
    }

    const double sb = out.grid.base_mva;
    const double omega_base = 2.0 * M_PI * out.grid.frequency;
    std::map<int, MachineRecord> gens, convs;
    std::map<int, int> gen_bus, conv_bus;

    auto check_bus = [&](int bus, const std::string& rec) {
        if (!out.grid.has_bus(bus)) throw ValidationError(rec + ": unknown bus " + std::to_string(bus));
    };
    auto unique = [](std::set<int>& seen, int id, const std::string& rec) {
        if (!seen.insert(id).second) throw ValidationError(rec + ": duplicate id");
    };

    std::set<int> seen;
    for (const auto& item : list_of(node["GENROU"], "GENROU")) {
        Record r(item, "GENROU");
        const int id = r.integer("id");
        const std::string rec = tag("GENROU", id, r.line());
        unique(seen, id, rec);
        const int bus = r.integer("bus");
        check_bus(bus, rec);
        Dispatch d{r.num("p0", 0.0), r.num("q0", 0.0), r.num("mva", sb)};
        if (!(d.mva > 0.0)) throw ValidationError(rec + ": mva must be > 0");
        GenrouParams p;
        p.x_d = r.num("x_d", p.x_d);
        p.x_q = r.num("x_q", p.x_q);
        p.x_d_p = r.num("x_d_p", p.x_d_p);
        p.x_q_p = r.num("x_q_p", p.x_q_p);
        p.x_d_pp = r.num("x_d_pp", p.x_d_pp);
        p.x_l = r.num("x_l", p.x_l);
        p.r_a = r.num("r_a", p.r_a);
        p.T_d0_p = r.num("T_d0_p", p.T_d0_p);
        p.T_q0_p = r.num("T_q0_p", p.T_q0_p);
        p.T_d0_pp = r.num("T_d0_pp", p.T_d0_pp);
        p.T_q0_pp = r.num("T_q0_pp", p.T_q0_pp);
        p.H = r.num("H", p.H);
        p.D = r.num("D", p.D);
        p.S10 = r.num("S10", p.S10);
        p.S12 = r.num("S12", p.S12);
        r.finish();
        auto dev = checked(rec, [&] {
            p.validate();
            return std::make_unique<Genrou>(id, bus, p.to_system_base(d.mva, sb), omega_base);
        });
        gens[id] = {r.line(), d.mva};
        gen_bus[id] = bus;
        out.devices.push_back({std::move(dev), d});
    }

    seen.clear();
    for (const auto& item : list_of(node["REGCA_LITE"], "REGCA_LITE")) {
        Record r(item, "REGCA_LITE");
        const int id = r.integer("id");
        const std::string rec = tag("REGCA_LITE", id, r.line());
        unique(seen, id, rec);
        const int bus = r.integer("bus");
        check_bus(bus, rec);
        Dispatch d{r.num("p0", 0.0), r.num("q0", 0.0), r.num("mva", sb)};
        if (!(d.mva > 0.0)) throw ValidationError(rec + ": mva must be > 0");
        RegcaParams p;
        p.T_g = r.num("T_g", p.T_g);
        p.lvpl1 = r.num("lvpl1", p.lvpl1);
        p.zerox = r.num("zerox", p.zerox);
        p.brkpt = r.num("brkpt", p.brkpt);
        r.finish();
        auto dev = checked(rec, [&] { return std::make_unique<RegcaLite>(id, bus, p.to_system_base(d.mva, sb)); });
        convs[id] = {r.line(), d.mva};
        conv_bus[id] = bus;
        out.devices.push_back({std::move(dev), d});
    }

    auto target_of = [](const std::map<int, int>& buses, int target, const char* kind, const std::string& rec) {
        const auto it = buses.find(target);
        if (it == buses.end()) {
            throw ValidationError(rec + ": unknown " + kind + " " + std::to_string(target));
        }
        return it->second;
    };

    seen.clear();
    std::set<int> excited;
    for (const auto& item : list_of(node["EXST_LITE"], "EXST_LITE")) {
        Record r(item, "EXST_LITE");
        const int id = r.integer("id");
        const std::string rec = tag("EXST_LITE", id, r.line());
        unique(seen, id, rec);
        const int gen = r.integer("gen");
        ExstParams p;
        p.T_r = r.num("T_r", p.T_r);
        p.K_a = r.num("K_a", p.K_a);
        p.T_a = r.num("T_a", p.T_a);
        p.v_min = r.num("v_min", p.v_min);
        p.v_max = r.num("v_max", p.v_max);
        r.finish();
        const int bus = target_of(gen_bus, gen, "GENROU", rec);
        if (!excited.insert(gen).second) throw ValidationError(rec + ": GENROU " + std::to_string(gen) + " already has an exciter");
        auto dev = checked(rec, [&] { return std::make_unique<ExstLite>(id, gen, p); });
        dev->set_bus(bus);
        out.devices.push_back({std::move(dev), {}});
    }

    seen.clear();
    std::set<int> governed;
    for (const auto& item : list_of(node["TGOV_LITE"], "TGOV_LITE")) {
        Record r(item, "TGOV_LITE");
        const int id = r.integer("id");
        const std::string rec = tag("TGOV_LITE", id, r.line());
        unique(seen, id, rec);
        const int gen = r.integer("gen");
        TgovParams p;
        p.R = r.num("R", p.R);
        p.T_1 = r.num("T_1", p.T_1);
        p.T_3 = r.num("T_3", p.T_3);
        p.v_min = r.num("v_min", p.v_min);
        p.v_max = r.num("v_max", p.v_max);
        p.D_t = r.num("D_t", p.D_t);
        r.finish();
        const int bus = target_of(gen_bus, gen, "GENROU", rec);
        if (!governed.insert(gen).second) throw ValidationError(rec + ": GENROU " + std::to_string(gen) + " already has a governor");
        auto dev = checked(rec, [&] {
            p.validate();
            return std::make_unique<TgovLite>(id, gen, p.to_system_base(gens[gen].mva, sb));
        });
        dev->set_bus(bus);
        out.devices.push_back({std::move(dev), {}});
    }

    seen.clear();
    std::set<int> controlled;
    for (const auto& item : list_of(node["REECA_LITE"], "REECA_LITE")) {
        Record r(item, "REECA_LITE");
        const int id = r.integer("id");
        const std::string rec = tag("REECA_LITE", id, r.line());
        unique(seen, id, rec);
        const int conv = r.integer("regca");
        ReecaParams p;
        if (r.has("v_ref0")) p.v_ref0 = r.num("v_ref0");
        p.K_qv = r.num("K_qv", p.K_qv);
        p.i_ql1 = r.num("i_ql1", p.i_ql1);
        p.i_qh1 = r.num("i_qh1", p.i_qh1);
        p.T_rv = r.num("T_rv", p.T_rv);
        r.finish();
        const int bus = target_of(conv_bus, conv, "REGCA_LITE", rec);
        if (!controlled.insert(conv).second) throw ValidationError(rec + ": REGCA_LITE " + std::to_string(conv) + " already has a controller");
        auto dev = checked(rec, [&] {
            p.validate();
            return std::make_unique<ReecaLite>(id, conv, p.to_system_base(convs[conv].mva, sb));
        });
        dev->set_bus(bus);
        out.devices.push_back({std::move(dev), {}});
    }
}

}  // namespace

// ---------------------------------------------------------------------------

CaseData::CaseData(const CaseData& other) : name(other.name), grid(other.grid) {
    for (const auto& e : other.devices) devices.push_back({e.device->clone(), e.dispatch});
}

CaseData& CaseData::operator=(const CaseData& other) {
    if (this != &other) {
        CaseData tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

double parse_fraction(const std::string& text) {
    auto parse_one = [&](std::string_view s) {
        while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
        while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
        if (!s.empty() && s.front() == '+') s.remove_prefix(1);
        double v = 0.0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
            throw ParseError("not a number: '" + text + "'");
        }
        return v;
    };
    const auto slash = text.find('/');
    if (slash == std::string::npos) return parse_one(text);
    const double num = parse_one(std::string_view(text).substr(0, slash));
    const double den = parse_one(std::string_view(text).substr(slash + 1));
    if (den == 0.0) throw ParseError("zero denominator in '" + text + "'");
    return num / den;
}

CaseData parse_case_text(const std::string& text, const std::string& name) {
    const YAML::Node root = load_yaml(text, name);
    Record top(root, "case");
    CaseData out;
    out.name = top.str("name", name);
    out.grid.base_mva = top.num("base_mva", 100.0);
    out.grid.frequency = top.num("frequency", 60.0);
    if (!(out.grid.base_mva > 0.0 && out.grid.frequency > 0.0)) {
        throw ValidationError("case: base_mva and frequency must be > 0");
    }

    std::set<int> ids;
    for (const auto& item : list_of(top.child("buses"), "buses")) {
        Record r(item, "bus");
        Bus b;
        b.id = r.integer("id");
        b.kind = bus_kind(r.str("kind", "pq"), r);
        b.v_mag = r.num("v", 1.0);
        b.theta = r.num("theta", 0.0);
        b.base_kv = r.num("base_kv", 1.0);
        r.finish();
        if (!ids.insert(b.id).second) throw ValidationError("bus " + std::to_string(b.id) + ": duplicate id");
        out.grid.buses.push_back(b);
    }
    if (out.grid.buses.empty()) throw ValidationError("case: no buses");

    ids.clear();
    int next_branch = 1;
    for (const auto& item : list_of(top.child("branches"), "branches")) {
        Record r(item, "branch");
        Branch br;
        br.id = r.integer("id", next_branch);
        next_branch = br.id + 1;
        br.from_bus = r.integer("from");
        br.to_bus = r.integer("to");
        br.r = r.num("r", 0.0);
        br.x = r.num("x");
        br.b = r.num("b", 0.0);
        br.tap = r.num("tap", 1.0);
        const std::string st = r.str("status", "in_service");
        if (st == "tripped") br.status = BranchStatus::tripped;
        else if (st != "in_service") throw ParseError("branch: status must be in_service or tripped", r.line());
        r.finish();
        if (!ids.insert(br.id).second) throw ValidationError("branch " + std::to_string(br.id) + ": duplicate id");
        out.grid.branches.push_back(br);
    }

    for (const auto& item : list_of(top.child("shunts"), "shunts")) {
        Record r(item, "shunt");
        ShuntElement sh;
        sh.bus = r.integer("bus");
        sh.g = r.num("g", 0.0);
        sh.b = r.num("b", 0.0);
        r.finish();
        out.grid.shunts.push_back(sh);
    }

    for (const auto& item : list_of(top.child("loads"), "loads")) {
        Record r(item, "load");
        Load ld;
        ld.bus = r.integer("bus");
        ld.p = r.num("p", 0.0);
        ld.q = r.num("q", 0.0);
        r.finish();
        out.grid.loads.push_back(ld);
    }

    out.grid.reindex();
    auto check = [&](int bus, const std::string& what) {
        if (!out.grid.has_bus(bus)) throw ValidationError(what + ": unknown bus " + std::to_string(bus));
    };
    for (const auto& sh : out.grid.shunts) check(sh.bus, "shunt");
    for (const auto& ld : out.grid.loads) check(ld.bus, "load");
    try {
        out.grid.validate();
    } catch (const StructuralError& e) {
        throw ValidationError(e.what());
    } catch (const ParameterError& e) {
        throw ValidationError(e.what());
    }

    parse_devices(top.child("devices"), out);
    top.finish();
    return out;
}

CaseData parse_case(const std::filesystem::path& path) {
    CaseData c = parse_case_text(read_file(path), path.stem().string());
    return c;
}

std::filesystem::path data_dir() {
    if (const char* env = std::getenv("TSIM_DATA_DIR"); env != nullptr && *env != '\0') return env;
    return TSIM_DATA_DIR;
}

namespace {

bool is_bare_name(const std::string& ref) {
    return !ref.empty() && ref.find('/') == std::string::npos && ref.find('.') == std::string::npos;
}

}  // namespace

std::filesystem::path resolve_case_path(const std::string& ref, const std::filesystem::path& base) {
    if (is_bare_name(ref)) {
        const auto bundled = data_dir() / "cases" / (ref + ".yaml");
        if (std::filesystem::exists(bundled)) return bundled;
    }
    std::filesystem::path p(ref);
    if (p.is_relative() && !base.empty()) p = base / p;
    if (!std::filesystem::exists(p)) throw IoError("case not found: " + ref);
    return p;
}

std::filesystem::path resolve_scenario_path(const std::string& ref) {
    if (is_bare_name(ref)) {
        const auto bundled = data_dir() / "scenarios" / (ref + ".yaml");
        if (std::filesystem::exists(bundled)) return bundled;
    }
    if (!std::filesystem::exists(ref)) throw IoError("scenario not found: " + ref);
    return ref;
}

// ---------------------------------------------------------------------------

std::string_view to_string(EventKind kind) {
    switch (kind) {
    case EventKind::line_trip: return "line_trip";
    case EventKind::line_reconnect: return "line_reconnect";
    case EventKind::bus_fault_apply: return "bus_fault_apply";
    case EventKind::bus_fault_clear: return "bus_fault_clear";
    case EventKind::generator_trip: return "generator_trip";
    }
    return "unknown";
}

void Scenario::validate() const {
    solver.validate();
    if (!(t_end > 0.0)) throw ValidationError("scenario: t_end must be > 0");
    std::set<int> faulted;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const Event& e = events[i];
        const std::string what = "event " + std::to_string(i + 1) + " (" + std::string(to_string(e.kind)) + ")";
        if (!(e.t > 0.0)) throw ValidationError(what + ": t must be > 0");
        if (!(e.t < t_end)) throw ValidationError(what + ": t must be < t_end");
        if (i > 0 && e.t < events[i - 1].t) throw ValidationError(what + ": events must be sorted by t");
        if (e.kind == EventKind::bus_fault_apply && !faulted.insert(e.target).second) {
            throw ValidationError(what + ": bus " + std::to_string(e.target) + " is already faulted");
        }
        if (e.kind == EventKind::bus_fault_clear && faulted.erase(e.target) == 0) {
            throw ValidationError(what + ": no matching bus_fault_apply on bus " + std::to_string(e.target));
        }
    }
}

Scenario parse_scenario_text(const std::string& text, const std::filesystem::path& base_dir,
                             const std::string& name) {
    const YAML::Node root = load_yaml(text, name);
    Record top(root, "scenario");
    Scenario s;
    s.name = top.str("name", name);
    s.base_dir = base_dir;
    s.case_ref = top.str("case", "");
    if (s.case_ref.empty()) throw ParseError("scenario: missing field 'case'", top.line());
    s.t_end = top.num("t_end", 5.0);

    const std::string mode = top.str("formulation", "full");
    std::set<std::string> blocks;
    if (top.has("split_blocks")) {
        const YAML::Node n = top.child("split_blocks");
        std::vector<std::string> names;
        if (n.IsSequence()) {
            for (const auto& b : n) names.push_back(b.Scalar());
        } else if (n.IsScalar()) {
            std::stringstream ss(n.Scalar());
            for (std::string tok; std::getline(ss, tok, ',');) names.push_back(tok);
        } else {
            throw ParseError("scenario: split_blocks must be a list or a comma-separated string", line_of(n));
        }
        for (const auto& b : names) {
            if (b != "none" && !b.empty()) blocks.insert(resolve_block_alias(b));
        }
    }
    if (mode == "full") s.formulation = Formulation::full();
    else if (mode == "split") s.formulation = Formulation::split(blocks);
    else throw ParseError("scenario: formulation must be full or split", top.line());

    if (top.has("solver")) {
        Record r(top.child("solver"), "solver");
        s.solver.h = r.num("h", s.solver.h);
        s.solver.tol = r.num("tol", s.solver.tol);
        s.solver.max_iter = r.integer("max_iter", s.solver.max_iter);
        s.solver.refresh_every = r.integer("refresh_every", s.solver.refresh_every);
        s.solver.honest_window = r.num("honest_window", s.solver.honest_window);
        if (r.has("per_iteration_split_update")) {
            s.solver.per_iteration_split_update = r.child("per_iteration_split_update").as<bool>();
        }
        r.finish();
    }

    static const std::map<std::string, EventKind> kinds = {
        {"line_trip", EventKind::line_trip},
        {"line_reconnect", EventKind::line_reconnect},
        {"bus_fault_apply", EventKind::bus_fault_apply},
        {"bus_fault_clear", EventKind::bus_fault_clear},
        {"generator_trip", EventKind::generator_trip},
    };
    for (const auto& item : list_of(top.child("events"), "events")) {
        Record r(item, "event");
        Event e;
        e.t = r.num("t");
        const std::string k = r.str("kind", "");
        const auto it = kinds.find(k);
        if (it == kinds.end()) throw ParseError("event: unknown kind '" + k + "'", r.line());
        e.kind = it->second;
        e.target = r.integer("target");
        e.model = r.str("model", e.model);
        e.fault_impedance = Complex(r.num("r_f", 0.0), r.num("x_f", 1e-4));
        r.finish();
        s.events.push_back(e);
    }
    top.finish();
    s.validate();
    return s;
}

Scenario parse_scenario(const std::filesystem::path& path) {
    return parse_scenario_text(read_file(path), path.parent_path(), path.stem().string());
}

// ---------------------------------------------------------------------------

void apply_event(PowerSystemDae& system, const Event& event) {
    Grid& grid = system.grid();
    const std::string what = std::string(to_string(event.kind)) + " " + std::to_string(event.target);
    switch (event.kind) {
    case EventKind::line_trip:
    case EventKind::line_reconnect: {
        if (!std::any_of(grid.branches.begin(), grid.branches.end(),
                         [&](const Branch& b) { return b.id == event.target; })) {
            throw EventError(what + ": unknown branch");
        }
        Branch& br = grid.branch(event.target);
        const bool trip = event.kind == EventKind::line_trip;
        const auto want = trip ? BranchStatus::in_service : BranchStatus::tripped;
        if (br.status != want) throw EventError(what + (trip ? ": branch already tripped" : ": branch not tripped"));
        br.status = trip ? BranchStatus::tripped : BranchStatus::in_service;
        system.rebuild_network();
        return;
    }
    case EventKind::bus_fault_apply: {
        if (!grid.has_bus(event.target)) throw EventError(what + ": unknown bus");
        for (const auto& sh : grid.shunts) {
            if (sh.tag == ShuntTag::fault && sh.bus == event.target) throw EventError(what + ": bus already faulted");
        }
        if (std::abs(event.fault_impedance) == 0.0) throw EventError(what + ": zero fault impedance");
        const Complex y = 1.0 / event.fault_impedance;
        grid.shunts.push_back({event.target, y.real(), y.imag(), ShuntTag::fault});
        system.save_algebraic_snapshot(event.target);
        system.rebuild_network();
        return;
    }
    case EventKind::bus_fault_clear: {
        const auto it = std::find_if(grid.shunts.begin(), grid.shunts.end(), [&](const ShuntElement& sh) {
            return sh.tag == ShuntTag::fault && sh.bus == event.target;
        });
        if (it == grid.shunts.end()) throw EventError(what + ": no fault on bus");
        grid.shunts.erase(it);
        // The faulted point is close to the trivial v = 0 root of the power
        // balance; restart the re-solve from the pre-fault algebraic values.
        system.restore_algebraic_snapshot(event.target);
        system.rebuild_network();
        return;
    }
    case EventKind::generator_trip: {
        Device* d = system.find_device(event.model, event.target);
        if (d == nullptr || !d->injects()) throw EventError(what + ": unknown generating device " + event.model);
        if (!d->in_service()) throw EventError(what + ": device already tripped");
        if (d->model() == "GENROU" && system.in_service_machines() == 1) {
            throw EventError(what + ": tripping the last synchronous machine leaves no machine in service");
        }
        system.set_device_in_service(system.device_index(*d), false);
        return;
    }
    }
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ec == std::errc() ? ptr : buf);
}

namespace {

Formulation expand_selection(const Formulation& f, const CaseData& data) {
    if (f.mode != FormulationMode::split || !f.selection.contains("all")) return f;
    Formulation out = f;
    out.selection.erase("all");
    for (const auto& e : data.devices) {
        for (const auto& b : e.device->split_blocks()) out.selection.insert(b.id);
    }
    return out;
}

}  // namespace

void Trajectory::write_csv(std::ostream& os) const {
    os << "t";
    for (const auto& n : names) os << ',' << n;
    os << '\n';
    for (std::size_t k = 0; k < t.size(); ++k) {
        os << format_double(t[k]);
        for (double v : samples[k]) os << ',' << format_double(v);
        os << '\n';
    }
}

void Trajectory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    write_csv(out);
    if (!out) throw IoError("write failed: " + path.string());
}

std::uint64_t Trajectory::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffU;
            h *= 0x100000001b3ULL;
        }
    };
    for (std::size_t k = 0; k < t.size(); ++k) {
        mix(t[k]);
        for (double v : samples[k]) mix(v);
    }
    return h;
}

double max_state_deviation(const Trajectory& a, const Trajectory& b) {
    if (a.names != b.names) throw StructuralError("trajectories have different columns");
    if (a.t.size() != b.t.size()) throw StructuralError("trajectories have different time grids");
    double m = 0.0;
    for (std::size_t k = 0; k < a.t.size(); ++k) {
        if (std::abs(a.t[k] - b.t[k]) > 1e-9) throw StructuralError("trajectories have different time grids");
        for (std::size_t i = 0; i < a.names.size(); ++i) {
            if (!a.is_state[i]) continue;
            const double d = std::abs(a.samples[k][i] - b.samples[k][i]);
            if (!(d <= m)) m = std::isnan(d) ? std::numeric_limits<double>::infinity() : d;
        }
    }
    return m;
}

void write_steps_csv(const std::vector<StepStats>& steps, std::ostream& os) {
    os << "t,iterations,factorizations,residual,converged\n";
    for (const auto& s : steps) {
        os << format_double(s.t) << ',' << s.iterations << ',' << s.factorizations << ','
           << format_double(s.residual) << ',' << (s.converged ? 1 : 0) << '\n';
    }
}

PreparedSystem prepare_system(const CaseData& data, const Formulation& formulation) {
    CaseData copy = data;
    PreparedSystem out;
    out.system = std::make_unique<PowerSystemDae>(std::move(copy.grid), std::move(copy.devices),
                                                  expand_selection(formulation, data));
    out.z0 = out.system->initialize();
    return out;
}

ScenarioResult run_scenario(const CaseData& data, const Scenario& scenario) {
    scenario.validate();
    PreparedSystem prepared = prepare_system(data, scenario.formulation);
    PowerSystemDae& sys = *prepared.system;

    ScenarioResult result;
    Trajectory& traj = result.trajectory;
    traj.names = sys.registry().names();
    traj.is_state.resize(traj.names.size());
    for (std::size_t i = 0; i < traj.names.size(); ++i) traj.is_state[i] = sys.registry().is_state(i);
    const long n_steps = step_count(scenario.t_end, scenario.solver.h);
    traj.t.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.samples.reserve(static_cast<std::size_t>(n_steps) + 1);

    EventSchedule schedule;
    for (const auto& e : scenario.events) {
        if (schedule.times.empty() || std::abs(schedule.times.back() - e.t) > 1e-12) schedule.times.push_back(e.t);
    }
    schedule.apply = [&](double t, std::span<const double> z) {
        sys.set_stored(sys.full_vector(z));
        for (const auto& e : scenario.events) {
            if (std::abs(e.t - t) <= 1e-9 * std::max(1.0, t)) apply_event(sys, e);
        }
        return sys.newton_vector(sys.stored());
    };
    const StepObserver observer = [&](double t, std::span<const double> z) {
        traj.t.push_back(t);
        traj.samples.push_back(sys.full_vector(z));
    };

    const SimulationResult sim =
        run_simulation(sys, std::move(prepared.z0), scenario.t_end, scenario.solver, schedule, observer);

    RunReport& rep = result.report;
    rep.formulation = sys.formulation().label();
    rep.h = scenario.solver.h;
    rep.steps = sim.steps;
    for (const auto& s : sim.steps) {
        rep.total_iterations += s.iterations;
        rep.total_factorizations += s.factorizations;
    }
    rep.event_iterations = sim.event_iterations;
    rep.wall_time_s = sim.wall_time_s;
    rep.digest = traj.digest();
    rep.counts = sys.registry().counts();
    return result;
}

}  // namespace tsim
