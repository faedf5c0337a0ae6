#include "dyace/problem.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace dyace {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

// Reads whitespace-separated tokens, skipping blank lines and '#' comments.
std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) out.push_back(tok);
    }
    return out;
}

long parse_long(const std::string& tok, const std::string& context) {
    try {
        std::size_t pos = 0;
        long v = std::stol(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ProblemError(context + ": expected an integer, got '" + tok + "'");
    }
}

double parse_real(const std::string& tok, const std::string& context) {
    try {
        std::size_t pos = 0;
        double v = std::stod(tok, &pos);
        if (pos != tok.size() || !std::isfinite(v)) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ProblemError(context + ": expected a number, got '" + tok + "'");
    }
}

double euclid(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    return std::sqrt(dx * dx + dy * dy);
}

void attach_bks(const BksRegistry& registry, const std::string& name, double& bks,
                std::string& metric) {
    const auto& entry = registry.lookup(name);
    bks = entry.cost;
    metric = entry.metric;
}

JsspInstance parse_taillard(const std::string& text, const BksRegistry& registry,
                            const std::string& name) {
    auto toks = tokenize(text);
    std::size_t i = 0;
    auto next = [&](const std::string& ctx) -> const std::string& {
        if (i >= toks.size()) throw ProblemError("taillard: truncated file while reading " + ctx);
        return toks[i++];
    };

    JsspInstance inst;
    inst.name = name;
    inst.num_jobs = static_cast<int>(parse_long(next("header"), "taillard header"));
    inst.num_machines = static_cast<int>(parse_long(next("header"), "taillard header"));
    if (inst.num_jobs <= 0 || inst.num_machines <= 0)
        throw ProblemError("taillard: malformed header: non-positive dimensions");

    const std::size_t cells = static_cast<std::size_t>(inst.num_jobs) * inst.num_machines;
    if (toks.size() - i != 2 * cells)
        throw ProblemError("taillard: dimension mismatch: expected " + std::to_string(2 * cells) +
                           " matrix entries, found " + std::to_string(toks.size() - i));

    std::vector<std::vector<int>> times(inst.num_jobs, std::vector<int>(inst.num_machines));
    for (int j = 0; j < inst.num_jobs; ++j)
        for (int k = 0; k < inst.num_machines; ++k) {
            times[j][k] = static_cast<int>(parse_long(next("times"), "taillard times"));
            if (times[j][k] <= 0) throw ProblemError("taillard: processing time must be > 0");
        }

    inst.routing.assign(inst.num_jobs, {});
    for (int j = 0; j < inst.num_jobs; ++j) {
        std::vector<bool> seen(inst.num_machines, false);
        for (int k = 0; k < inst.num_machines; ++k) {
            int m = static_cast<int>(parse_long(next("machines"), "taillard machines"));
            if (m < 1 || m > inst.num_machines)
                throw ProblemError("taillard: machine id " + std::to_string(m) +
                                   " out of range 1.." + std::to_string(inst.num_machines));
            if (seen[m - 1])
                throw ProblemError("taillard: job " + std::to_string(j) + " visits machine " +
                                   std::to_string(m) + " twice");
            seen[m - 1] = true;
            inst.routing[j].push_back({m - 1, times[j][k]});
        }
    }

    attach_bks(registry, inst.name, inst.bks, inst.bks_metric);
    return inst;
}

// Shared keyword-header reader for TSPLIB-style files (TSP and CVRP).
struct TsplibFields {
    std::string name;
    std::string type;
    std::string edge_weight_type = "EUC_2D";
    int dimension = -1;
    int capacity = -1;
    std::vector<std::array<double, 2>> coords;
    std::vector<int> demands;
    int depot = -1;
};

TsplibFields parse_tsplib_fields(const std::string& text, const std::string& what) {
    TsplibFields f;
    std::istringstream lines(text);
    std::string line;
    enum class Section { Header, Coords, Demands, Depot };
    Section section = Section::Header;

    auto header_value = [&](const std::string& l) {
        auto colon = l.find(':');
        return trim(colon == std::string::npos ? "" : l.substr(colon + 1));
    };

    while (std::getline(lines, line)) {
        line = trim(line);
        if (line.empty()) continue;
        const std::string key = lower(line.substr(0, line.find_first_of(" \t:")));

        if (key == "eof") break;
        if (key == "name") { f.name = lower(header_value(line)); section = Section::Header; continue; }
        if (key == "type") { f.type = lower(header_value(line)); section = Section::Header; continue; }
        if (key == "comment") { section = Section::Header; continue; }
        if (key == "dimension") {
            f.dimension = static_cast<int>(parse_long(header_value(line), what + " DIMENSION"));
            section = Section::Header;
            continue;
        }
        if (key == "capacity") {
            f.capacity = static_cast<int>(parse_long(header_value(line), what + " CAPACITY"));
            section = Section::Header;
            continue;
        }
        if (key == "edge_weight_type") {
            f.edge_weight_type = header_value(line);
            section = Section::Header;
            continue;
        }
        if (key == "node_coord_section") { section = Section::Coords; continue; }
        if (key == "demand_section") { section = Section::Demands; continue; }
        if (key == "depot_section") { section = Section::Depot; continue; }
        if (!key.empty() && !std::isdigit(static_cast<unsigned char>(key[0])) && key[0] != '-') {
            // Unknown header keyword: ignore (TSPLIB files carry many).
            section = Section::Header;
            continue;
        }

        std::istringstream ls(line);
        if (section == Section::Coords) {
            std::string id, x, y;
            if (!(ls >> id >> x >> y)) throw ProblemError(what + ": malformed coordinate line '" + line + "'");
            f.coords.push_back({parse_real(x, what + " coord"), parse_real(y, what + " coord")});
        } else if (section == Section::Demands) {
            std::string id, d;
            if (!(ls >> id >> d)) throw ProblemError(what + ": malformed demand line '" + line + "'");
            f.demands.push_back(static_cast<int>(parse_long(d, what + " demand")));
        } else if (section == Section::Depot) {
            long v = parse_long(trim(line), what + " depot");
            if (v != -1) f.depot = static_cast<int>(v) - 1;
        } else {
            throw ProblemError(what + ": unexpected data line outside any section: '" + line + "'");
        }
    }

    if (f.dimension < 0) throw ProblemError(what + ": malformed header: missing DIMENSION");
    if (static_cast<int>(f.coords.size()) != f.dimension)
        throw ProblemError(what + ": dimension mismatch: DIMENSION=" + std::to_string(f.dimension) +
                           " but " + std::to_string(f.coords.size()) + " coordinates");
    for (auto& c : f.coords)
        if (!std::isfinite(c[0]) || !std::isfinite(c[1]))
            throw ProblemError(what + ": non-finite coordinate");
    if (lower(f.edge_weight_type) != "euc_2d")
        throw ProblemError(what + ": unsupported EDGE_WEIGHT_TYPE '" + f.edge_weight_type +
                           "' (only EUC_2D)");
    return f;
}

TspInstance parse_tsplib(const std::string& text, const BksRegistry& registry,
                         const std::string& fallback_name) {
    auto f = parse_tsplib_fields(text, "tsplib");
    TspInstance inst;
    inst.name = f.name.empty() ? fallback_name : f.name;
    inst.num_nodes = f.dimension;
    inst.coords = std::move(f.coords);
    if (inst.num_nodes < 3) throw ProblemError("tsplib: need at least 3 nodes");
    attach_bks(registry, inst.name, inst.bks, inst.bks_metric);
    return inst;
}

CvrpInstance parse_cvrplib(const std::string& text, const BksRegistry& registry,
                           const std::string& fallback_name) {
    auto f = parse_tsplib_fields(text, "cvrplib");
    CvrpInstance inst;
    inst.name = f.name.empty() ? fallback_name : f.name;
    inst.num_nodes = f.dimension;
    inst.coords = std::move(f.coords);
    inst.capacity = f.capacity;
    inst.depot = f.depot < 0 ? 0 : f.depot;
    inst.demands = std::move(f.demands);

    if (inst.capacity <= 0) throw ProblemError("cvrplib: malformed header: missing or non-positive CAPACITY");
    if (static_cast<int>(inst.demands.size()) != inst.num_nodes)
        throw ProblemError("cvrplib: dimension mismatch: " + std::to_string(inst.demands.size()) +
                           " demands for " + std::to_string(inst.num_nodes) + " nodes");
    if (inst.depot < 0 || inst.depot >= inst.num_nodes)
        throw ProblemError("cvrplib: depot id out of range");
    if (inst.demands[inst.depot] != 0) throw ProblemError("cvrplib: depot demand must be 0");
    for (int i = 0; i < inst.num_nodes; ++i) {
        if (i == inst.depot) continue;
        if (inst.demands[i] < 0) throw ProblemError("cvrplib: negative demand");
        if (inst.demands[i] > inst.capacity)
            throw ProblemError("cvrplib: demand of node " + std::to_string(i + 1) +
                               " exceeds vehicle capacity");
    }

    attach_bks(registry, inst.name, inst.bks, inst.bks_metric);
    return inst;
}

double evaluate_jssp(const JsspInstance& inst, const std::vector<int>& perm) {
    // Semi-active decode: every operation starts as early as its machine and
    // its job predecessor allow, in the order the sequence dictates.
    std::vector<int> machine_free(inst.num_machines, 0);
    std::vector<int> job_free(inst.num_jobs, 0);
    std::vector<int> next_op(inst.num_jobs, 0);
    int makespan = 0;
    for (int job : perm) {
        const JsspOp& op = inst.routing[job][next_op[job]++];
        const int start = std::max(machine_free[op.machine], job_free[job]);
        const int end = start + op.time;
        machine_free[op.machine] = end;
        job_free[job] = end;
        makespan = std::max(makespan, end);
    }
    return static_cast<double>(makespan);
}

double evaluate_tsp(const TspInstance& inst, const std::vector<int>& perm) {
    double total = 0.0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
        const int a = perm[i];
        const int b = perm[(i + 1) % perm.size()];
        total += euclid(inst.coords[a], inst.coords[b]);
    }
    return total;
}

double route_length(const CvrpInstance& inst, const std::vector<int>& route) {
    if (route.empty()) return 0.0;
    double total = euclid(inst.coords[inst.depot], inst.coords[route.front()]);
    for (std::size_t i = 0; i + 1 < route.size(); ++i)
        total += euclid(inst.coords[route[i]], inst.coords[route[i + 1]]);
    total += euclid(inst.coords[route.back()], inst.coords[inst.depot]);
    return total;
}

} // namespace

std::string to_string(Domain d) {
    switch (d) {
    case Domain::Jssp: return "jssp";
    case Domain::Tsp: return "tsp";
    case Domain::Cvrp: return "cvrp";
    }
    return "?";
}

Domain domain_from_string(const std::string& s) {
    if (s == "jssp") return Domain::Jssp;
    if (s == "tsp") return Domain::Tsp;
    if (s == "cvrp") return Domain::Cvrp;
    throw ProblemError("unknown domain '" + s + "'");
}

Domain domain_of(const ProblemInstance& inst) {
    if (std::holds_alternative<JsspInstance>(inst)) return Domain::Jssp;
    if (std::holds_alternative<TspInstance>(inst)) return Domain::Tsp;
    return Domain::Cvrp;
}

const std::string& name_of(const ProblemInstance& inst) {
    return std::visit([](const auto& i) -> const std::string& { return i.name; }, inst);
}

double bks_of(const ProblemInstance& inst) {
    return std::visit([](const auto& i) { return i.bks; }, inst);
}

BksRegistry BksRegistry::parse(const std::string& text) {
    BksRegistry reg;
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string name, cost, metric;
        if (!(ls >> name)) continue;
        if (!(ls >> cost >> metric))
            throw ProblemError("bks registry line " + std::to_string(lineno) +
                               ": expected 'name cost metric'");
        if (metric != "exact" && metric != "rounded" && metric != "bound")
            throw ProblemError("bks registry line " + std::to_string(lineno) +
                               ": unknown metric '" + metric + "'");
        double c = parse_real(cost, "bks registry");
        if (c <= 0.0)
            throw ProblemError("bks registry line " + std::to_string(lineno) +
                               ": cost must be positive");
        reg.entries_[lower(name)] = Entry{c, metric};
    }
    return reg;
}

BksRegistry BksRegistry::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ProblemError("cannot open BKS registry '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

const BksRegistry::Entry& BksRegistry::lookup(const std::string& name) const {
    auto it = entries_.find(lower(name));
    if (it == entries_.end())
        throw ProblemError("missing BKS registry entry for instance '" + name + "'");
    return it->second;
}

ProblemInstance parse_instance(const std::string& text, const std::string& format,
                               const BksRegistry& registry, const std::string& fallback_name) {
    const std::string fmt = lower(format);
    if (fmt == "taillard") return parse_taillard(text, registry, lower(fallback_name));
    if (fmt == "tsplib") return parse_tsplib(text, registry, lower(fallback_name));
    if (fmt == "cvrplib") return parse_cvrplib(text, registry, lower(fallback_name));
    throw ProblemError("unknown instance format '" + format + "'");
}

std::size_t encoding_length(const ProblemInstance& inst) {
    if (const auto* j = std::get_if<JsspInstance>(&inst))
        return static_cast<std::size_t>(j->num_jobs) * j->num_machines;
    if (const auto* t = std::get_if<TspInstance>(&inst))
        return static_cast<std::size_t>(t->num_nodes);
    const auto& c = std::get<CvrpInstance>(inst);
    return static_cast<std::size_t>(c.num_nodes - 1); // customers only
}

bool encoding_valid(const ProblemInstance& inst, const Solution& s) {
    if (s.domain != domain_of(inst)) return false;
    if (s.perm.size() != encoding_length(inst)) return false;
    if (const auto* j = std::get_if<JsspInstance>(&inst)) {
        std::vector<int> counts(j->num_jobs, 0);
        for (int v : s.perm) {
            if (v < 0 || v >= j->num_jobs) return false;
            ++counts[v];
        }
        return std::all_of(counts.begin(), counts.end(),
                           [&](int c) { return c == j->num_machines; });
    }
    std::vector<int> expect;
    if (const auto* t = std::get_if<TspInstance>(&inst)) {
        expect.resize(t->num_nodes);
        std::iota(expect.begin(), expect.end(), 0);
    } else {
        const auto& c = std::get<CvrpInstance>(inst);
        for (int i = 0; i < c.num_nodes; ++i)
            if (i != c.depot) expect.push_back(i);
    }
    auto sorted = s.perm;
    std::sort(sorted.begin(), sorted.end());
    return sorted == expect;
}

double evaluate(const ProblemInstance& inst, const Solution& s) {
    if (s.domain != domain_of(inst))
        throw ProblemError("encoding/instance domain mismatch: solution is " +
                           to_string(s.domain) + ", instance is " + to_string(domain_of(inst)));
    if (const auto* j = std::get_if<JsspInstance>(&inst)) return evaluate_jssp(*j, s.perm);
    if (const auto* t = std::get_if<TspInstance>(&inst)) return evaluate_tsp(*t, s.perm);

    const auto& c = std::get<CvrpInstance>(inst);
    double total = 0.0;
    for (const auto& route : split_routes(c, s.perm)) total += route_length(c, route);
    return total;
}

std::vector<std::vector<int>> split_routes(const CvrpInstance& inst,
                                           const std::vector<int>& giant_tour) {
    std::vector<std::vector<int>> routes;
    std::vector<int> current;
    int load = 0;
    for (int customer : giant_tour) {
        const int d = inst.demands[customer];
        if (!current.empty() && load + d > inst.capacity) {
            routes.push_back(std::move(current));
            current.clear();
            load = 0;
        }
        current.push_back(customer);
        load += d;
    }
    if (!current.empty()) routes.push_back(std::move(current));
    return routes;
}

FeasibilityReport check_feasible(const CvrpInstance& inst,
                                 const std::vector<std::vector<int>>& routes) {
    FeasibilityReport report;
    for (std::size_t r = 0; r < routes.size(); ++r) {
        int load = 0;
        for (int customer : routes[r]) load += inst.demands[customer];
        if (load > inst.capacity) {
            report.feasible = false;
            report.violations.push_back({static_cast<int>(r), load, inst.capacity});
        }
    }
    return report;
}

FeasibilityReport check_feasible(const CvrpInstance& inst, const Solution& s) {
    return check_feasible(inst, split_routes(inst, s.perm));
}

double optimality_gap(double cost, double bks) {
    if (!(bks > 0.0)) throw ProblemError("optimality_gap: bks must be positive");
    if (cost < 0.0) throw ProblemError("optimality_gap: cost must be nonnegative");
    return 100.0 * (cost - bks) / bks;
}

Solution random_solution(const ProblemInstance& inst, Rng& rng) {
    Solution s;
    s.domain = domain_of(inst);
    if (const auto* j = std::get_if<JsspInstance>(&inst)) {
        s.perm.reserve(encoding_length(inst));
        for (int job = 0; job < j->num_jobs; ++job)
            s.perm.insert(s.perm.end(), static_cast<std::size_t>(j->num_machines), job);
    } else if (const auto* t = std::get_if<TspInstance>(&inst)) {
        s.perm.resize(t->num_nodes);
        std::iota(s.perm.begin(), s.perm.end(), 0);
    } else {
        const auto& c = std::get<CvrpInstance>(inst);
        for (int i = 0; i < c.num_nodes; ++i)
            if (i != c.depot) s.perm.push_back(i);
    }
    // Fisher-Yates with the artifact's own stream, identical on every platform.
    for (std::size_t i = s.perm.size(); i > 1; --i) {
        const std::size_t k = rng.next_below(i);
        std::swap(s.perm[i - 1], s.perm[k]);
    }
    return s;
}

} // namespace dyace
