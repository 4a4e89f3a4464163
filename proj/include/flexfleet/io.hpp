#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flexfleet/network.hpp"
#include "flexfleet/reduction.hpp"
#include "flexfleet/scenario.hpp"
#include "flexfleet/ucsolver.hpp"

namespace flexfleet {

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Single-bus problem instance as stored on disk.
struct Instance {
    TimeHorizon horizon;
    std::vector<Device> devices;
    std::vector<double> inflexible_kw;
    std::vector<Generator> generators;
    std::string power_unit = "kW";  // informational only

    Fleet fleet() const { return Fleet(horizon, devices); }
};

struct TwoAreaInstance {
    struct AreaSpec {
        std::string id;
        std::vector<Device> devices;
        std::vector<double> inflexible_kw;
        std::vector<Generator> generators;
    };
    TimeHorizon horizon;
    std::vector<AreaSpec> areas;
    double p_bar_kw = 0.0;
    std::string power_unit = "kW";

    NetworkProblem network_problem(NetworkMethod method) const {
        NetworkProblem prob;
        prob.horizon = horizon;
        prob.method = method;
        prob.tie = TieLine{0, 1, p_bar_kw};
        for (const AreaSpec& a : areas) {
            Area area;
            area.id = a.id;
            area.fleet = Fleet(horizon, a.devices);
            area.inflexible_kw = a.inflexible_kw;
            area.generators = a.generators;
            prob.areas.push_back(std::move(area));
        }
        return prob;
    }
};

namespace detail {

using nlohmann::json;

inline const json& field(const json& j, const char* name, const char* context) {
    auto it = j.find(name);
    if (it == j.end())
        throw io_error(std::string(context) + ": missing field '" + name + "'");
    return *it;
}

inline TimeHorizon horizon_from_json(const json& j) {
    const json& h = field(j, "horizon", "instance");
    TimeHorizon out{field(h, "steps", "horizon").get<int>(),
                    h.value("step_hours", 1.0)};
    out.validate();
    return out;
}

inline json horizon_to_json(const TimeHorizon& h) {
    return json{{"steps", h.num_steps}, {"step_hours", h.step_hours}};
}

inline json cost_to_json(const CostFunction& f) {
    switch (f.kind) {
        case CostFunction::Kind::affine: return json{{"type", "affine"}, {"b", f.b}};
        case CostFunction::Kind::quadratic:
            return json{{"type", "quadratic"}, {"a", f.a}, {"b", f.b}};
        case CostFunction::Kind::piecewise_linear:
            return json{{"type", "piecewise_linear"},
                        {"breakpoints", f.breakpoints},
                        {"slopes", f.slopes}};
    }
    return {};
}

inline CostFunction cost_from_json(const json& j) {
    const std::string type = field(j, "type", "cost").get<std::string>();
    if (type == "affine") return CostFunction::affine(field(j, "b", "cost").get<double>());
    if (type == "quadratic")
        return CostFunction::quadratic(field(j, "a", "cost").get<double>(),
                                       field(j, "b", "cost").get<double>());
    if (type == "piecewise_linear")
        return CostFunction::piecewise_linear(
            field(j, "breakpoints", "cost").get<std::vector<double>>(),
            field(j, "slopes", "cost").get<std::vector<double>>());
    throw io_error("cost: unknown type '" + type + "'");
}

inline json generator_to_json(const Generator& g) {
    return json{{"g_min_kw", g.g_min_kw}, {"g_max_kw", g.g_max_kw}, {"cost", cost_to_json(g.cost)}};
}

inline Generator generator_from_json(const json& j) {
    Generator g{field(j, "g_min_kw", "generator").get<double>(),
                field(j, "g_max_kw", "generator").get<double>(),
                cost_from_json(field(j, "cost", "generator"))};
    g.validate();
    return g;
}

inline json device_to_json(const Device& d) {
    return json{{"p_max_kw", d.p_max_kw},
                {"e_target_kwh", d.e_target_kwh},
                {"availability", d.availability.slots()}};
}

inline Device device_from_json(const json& j, int num_steps, size_t index) {
    const auto slots = field(j, "availability", "device").get<std::vector<int>>();
    for (int s : slots)
        if (s < 1 || s > num_steps)
            throw io_error("device " + std::to_string(index) + ": availability slot " +
                           std::to_string(s) + " outside [1, " + std::to_string(num_steps) + "]");
    return Device{field(j, "p_max_kw", "device").get<double>(),
                  field(j, "e_target_kwh", "device").get<double>(),
                  TimeSet::from_slots(slots, num_steps)};
}

inline std::vector<double> series_from_json(const json& j, int num_steps, const char* name) {
    auto v = j.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != num_steps)
        throw io_error(std::string(name) + ": expected " + std::to_string(num_steps) +
                       " values, got " + std::to_string(v.size()));
    return v;
}

inline json parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw io_error("parse error in '" + path + "': " + e.what());
    }
    return j;
}

inline void write_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

}  // namespace detail

inline nlohmann::json instance_to_json(const Instance& inst) {
    nlohmann::json j;
    j["version"] = 1;
    j["horizon"] = detail::horizon_to_json(inst.horizon);
    j["units"] = {{"power", inst.power_unit}};
    j["devices"] = nlohmann::json::array();
    for (const Device& d : inst.devices) j["devices"].push_back(detail::device_to_json(d));
    j["inflexible_kw"] = inst.inflexible_kw;
    j["generators"] = nlohmann::json::array();
    for (const Generator& g : inst.generators) j["generators"].push_back(detail::generator_to_json(g));
    return j;
}

inline Instance instance_from_json(const nlohmann::json& j) {
    Instance inst;
    inst.horizon = detail::horizon_from_json(j);
    if (j.contains("units") && j["units"].contains("power"))
        inst.power_unit = j["units"]["power"].get<std::string>();
    const auto& devices = detail::field(j, "devices", "instance");
    for (size_t i = 0; i < devices.size(); ++i)
        inst.devices.push_back(detail::device_from_json(devices[i], inst.horizon.num_steps, i));
    inst.inflexible_kw = detail::series_from_json(detail::field(j, "inflexible_kw", "instance"),
                                                  inst.horizon.num_steps, "inflexible_kw");
    for (const auto& g : detail::field(j, "generators", "instance"))
        inst.generators.push_back(detail::generator_from_json(g));
    return inst;
}

inline Instance load_instance(const std::string& path) {
    return instance_from_json(detail::parse_file(path));
}

inline void save_instance(const std::string& path, const Instance& inst) {
    detail::write_file(path, instance_to_json(inst));
}

inline nlohmann::json two_area_to_json(const TwoAreaInstance& inst) {
    nlohmann::json j;
    j["version"] = 1;
    j["horizon"] = detail::horizon_to_json(inst.horizon);
    j["units"] = {{"power", inst.power_unit}};
    j["tie"] = {{"p_bar_kw", inst.p_bar_kw}};
    j["areas"] = nlohmann::json::array();
    for (const auto& a : inst.areas) {
        nlohmann::json ja;
        ja["id"] = a.id;
        ja["devices"] = nlohmann::json::array();
        for (const Device& d : a.devices) ja["devices"].push_back(detail::device_to_json(d));
        ja["inflexible_kw"] = a.inflexible_kw;
        ja["generators"] = nlohmann::json::array();
        for (const Generator& g : a.generators)
            ja["generators"].push_back(detail::generator_to_json(g));
        j["areas"].push_back(std::move(ja));
    }
    return j;
}

inline TwoAreaInstance two_area_from_json(const nlohmann::json& j) {
    TwoAreaInstance inst;
    inst.horizon = detail::horizon_from_json(j);
    if (j.contains("units") && j["units"].contains("power"))
        inst.power_unit = j["units"]["power"].get<std::string>();
    inst.p_bar_kw =
        detail::field(detail::field(j, "tie", "two-area instance"), "p_bar_kw", "tie").get<double>();
    for (const auto& ja : detail::field(j, "areas", "two-area instance")) {
        TwoAreaInstance::AreaSpec a;
        a.id = ja.value("id", "area" + std::to_string(inst.areas.size() + 1));
        const auto& devices = detail::field(ja, "devices", "area");
        for (size_t i = 0; i < devices.size(); ++i)
            a.devices.push_back(detail::device_from_json(devices[i], inst.horizon.num_steps, i));
        a.inflexible_kw = detail::series_from_json(detail::field(ja, "inflexible_kw", "area"),
                                                   inst.horizon.num_steps, "inflexible_kw");
        for (const auto& g : detail::field(ja, "generators", "area"))
            a.generators.push_back(detail::generator_from_json(g));
        inst.areas.push_back(std::move(a));
    }
    return inst;
}

inline TwoAreaInstance load_two_area(const std::string& path) {
    return two_area_from_json(detail::parse_file(path));
}

inline void save_two_area(const std::string& path, const TwoAreaInstance& inst) {
    detail::write_file(path, two_area_to_json(inst));
}

inline nlohmann::json constraints_to_json(const ConstraintSet& cs) {
    nlohmann::json j;
    j["version"] = 1;
    j["method"] = to_string(cs.method);
    j["constraints"] = nlohmann::json::array();
    for (const auto& c : cs.constraints)
        j["constraints"].push_back({{"support", c.support.slots()}, {"rhs_kwh", c.rhs_kwh}});
    if (cs.per_slot_caps_kw)
        j["per_slot_caps_kw"] = *cs.per_slot_caps_kw;
    else
        j["per_slot_caps_kw"] = nullptr;
    return j;
}

inline ConstraintSet constraints_from_json(const nlohmann::json& j, int num_steps) {
    ConstraintSet cs;
    const std::string method = detail::field(j, "method", "constraints").get<std::string>();
    bool known = false;
    for (SelectionMethod m :
         {SelectionMethod::exhaustive, SelectionMethod::combinatorial, SelectionMethod::greedy1,
          SelectionMethod::greedy2, SelectionMethod::full_availability, SelectionMethod::sublevel})
        if (method == to_string(m)) {
            cs.method = m;
            known = true;
        }
    if (!known) throw io_error("constraints: unknown method '" + method + "'");
    for (const auto& c : detail::field(j, "constraints", "constraints")) {
        const auto slots = detail::field(c, "support", "constraint").get<std::vector<int>>();
        cs.constraints.push_back({TimeSet::from_slots(slots, num_steps),
                                  detail::field(c, "rhs_kwh", "constraint").get<double>()});
    }
    if (j.contains("per_slot_caps_kw") && !j["per_slot_caps_kw"].is_null())
        cs.per_slot_caps_kw =
            detail::series_from_json(j["per_slot_caps_kw"], num_steps, "per_slot_caps_kw");
    return cs;
}

inline nlohmann::json solution_to_json(const Solution& sol) {
    nlohmann::json j;
    j["version"] = 1;
    j["status"] = to_string(sol.status);
    j["iterations"] = sol.iterations;
    if (sol.status != SolveStatus::optimal) return j;
    j["objective"] = sol.objective;
    j["d_kw"] = sol.d_kw;
    j["g_kw"] = sol.g_kw;
    if (!sol.u_kw.empty()) j["u_kw"] = sol.u_kw;
    j["lambda_per_kwh"] = sol.lambda;
    j["mu_per_kwh"] = sol.mu;
    if (!sol.cap_mu.empty()) j["cap_mu_per_kwh"] = sol.cap_mu;
    j["kkt_residual"] = sol.kkt_residual;
    return j;
}

inline nlohmann::json network_solution_to_json(const NetworkSolution& sol) {
    nlohmann::json j;
    j["version"] = 1;
    j["method"] = to_string(sol.method);
    j["status"] = to_string(sol.status);
    j["iterations"] = sol.iterations;
    if (sol.status != SolveStatus::optimal) return j;
    j["objective"] = sol.objective;
    j["areas"] = nlohmann::json::array();
    for (size_t a = 0; a < sol.d_kw.size(); ++a)
        j["areas"].push_back({{"d_kw", sol.d_kw[a]},
                              {"g_kw", sol.g_kw[a]},
                              {"lambda_per_kwh", sol.lambda[a]}});
    j["p_kw"] = sol.p_kw;
    j["kkt_residual"] = sol.kkt_residual;
    return j;
}

inline nlohmann::json scenario_to_json(const ScenarioSpec& spec) {
    nlohmann::json j;
    j["version"] = 1;
    j["kind"] = to_string(spec.kind);
    j["steps"] = spec.num_steps;
    j["devices"] = spec.num_devices;
    j["step_hours"] = spec.step_hours;
    j["p_max_kw"] = spec.p_max_kw;
    j["seed"] = spec.seed;
    if (spec.kind == ScenarioKind::contiguous_normal)
        j["normal"] = {{"start_mean_h", spec.start_mean_h},
                       {"start_sd_h", spec.start_sd_h},
                       {"duration_mean_h", spec.duration_mean_h},
                       {"duration_sd_h", spec.duration_sd_h}};
    return j;
}

inline ScenarioSpec scenario_from_json(const nlohmann::json& j) {
    ScenarioSpec spec;
    const std::string kind = detail::field(j, "kind", "scenario").get<std::string>();
    if (kind == "uniform_subsets")
        spec.kind = ScenarioKind::uniform_subsets;
    else if (kind == "contiguous_normal")
        spec.kind = ScenarioKind::contiguous_normal;
    else
        throw io_error("scenario: unknown kind '" + kind + "'");
    spec.num_steps = detail::field(j, "steps", "scenario").get<int>();
    spec.num_devices = detail::field(j, "devices", "scenario").get<int>();
    spec.step_hours = j.value("step_hours", 1.0);
    spec.p_max_kw = j.value("p_max_kw", 1.0);
    spec.seed = detail::field(j, "seed", "scenario").get<uint64_t>();
    if (j.contains("normal")) {
        const auto& n = j["normal"];
        spec.start_mean_h = n.value("start_mean_h", spec.start_mean_h);
        spec.start_sd_h = n.value("start_sd_h", spec.start_sd_h);
        spec.duration_mean_h = n.value("duration_mean_h", spec.duration_mean_h);
        spec.duration_sd_h = n.value("duration_sd_h", spec.duration_sd_h);
    }
    spec.validate();
    return spec;
}

/// One numeric value per line (a one-column CSV); '#' lines are comments.
inline std::vector<double> read_series_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::vector<double> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        try {
            out.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw io_error("'" + path + "' line " + std::to_string(lineno) +
                           ": expected a number, got '" + line + "'");
        }
    }
    return out;
}

}  // namespace flexfleet
