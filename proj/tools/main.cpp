// Command-line front end: generate instances, select aggregate constraint
// families, solve dispatch problems, split aggregate profiles back into
// device schedules, run the two-area study, and drive the benchmark harness.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flexfleet/bench.hpp"
#include "flexfleet/dispatch.hpp"
#include "flexfleet/io.hpp"
#include "flexfleet/network.hpp"
#include "flexfleet/reduction.hpp"
#include "flexfleet/scenario.hpp"
#include "flexfleet/ucsolver.hpp"

namespace {

using namespace flexfleet;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInfeasible = 2;

struct CommonFlags {
    std::string instance_path;
    std::string out_path;
    int t_guard = 20;
    double tol = 1e-9;
};

SelectionOptions selection_options(const CommonFlags& f) {
    SelectionOptions sel;
    sel.exhaustive_guard = f.t_guard;
    sel.combinatorial_guard = std::max(f.t_guard, 24);
    return sel;
}

ConstraintSet select_by_method(const std::string& method, const Fleet& fleet,
                               const std::vector<double>& inflexible,
                               const SelectionOptions& sel) {
    if (method == "m2" || method == "exhaustive") return exhaustive_constraints(fleet, sel);
    if (method == "m3" || method == "combinatorial")
        return combinatorial_selection(fleet, inflexible, sel);
    if (method == "m4" || method == "greedy1") return greedy_selection_1(fleet, inflexible, sel);
    if (method == "m5" || method == "greedy2") return greedy_selection_2(fleet, inflexible, sel);
    if (method == "full" || method == "full_availability")
        return full_availability_constraints(fleet, inflexible, sel);
    throw CLI::ValidationError("--method", "unknown selection method '" + method + "'");
}

int cmd_gen(const std::string& spec_path, const std::string& scenario_kind, int T, int N,
            double p_max, uint64_t seed, const std::string& inflexible_csv,
            const std::string& out) {
    ScenarioSpec spec;
    if (!spec_path.empty()) {
        spec = scenario_from_json(detail::parse_file(spec_path));
    } else {
        spec.kind = scenario_kind == "contiguous_normal" ? ScenarioKind::contiguous_normal
                                                         : ScenarioKind::uniform_subsets;
        spec.num_steps = T;
        spec.num_devices = N;
        spec.p_max_kw = p_max;
        spec.seed = seed;
    }
    Fleet fleet = generate_fleet(spec);

    Instance inst;
    inst.horizon = fleet.horizon();
    inst.devices = fleet.devices();
    if (!inflexible_csv.empty()) {
        inst.inflexible_kw = read_series_csv(inflexible_csv);
        if (static_cast<int>(inst.inflexible_kw.size()) != spec.num_steps)
            throw io_error("inflexible CSV length does not match the horizon");
    } else {
        Rng rng(Rng::derive(spec.seed, 91));
        inst.inflexible_kw.resize(static_cast<size_t>(spec.num_steps));
        for (auto& v : inst.inflexible_kw)
            v = rng.uniform(0.0, 0.5 * spec.num_devices * spec.p_max_kw);
    }
    double peak = 0.0;
    for (double v : inst.inflexible_kw) peak = std::max(peak, v);
    inst.generators.push_back(Generator{
        0.0, peak + spec.num_devices * spec.p_max_kw + 1.0, CostFunction::quadratic(1.0, 0.0)});
    save_instance(out, inst);
    std::printf("wrote %s (T=%d, N=%d, total target %.3f kWh)\n", out.c_str(), spec.num_steps,
                spec.num_devices, fleet.total_energy());
    return kExitOk;
}

int cmd_reduce(const CommonFlags& f, const std::string& method) {
    Instance inst = load_instance(f.instance_path);
    Fleet fleet = inst.fleet();
    ConstraintSet cs = select_by_method(method, fleet, inst.inflexible_kw, selection_options(f));
    const std::string out = f.out_path.empty() ? "constraints.json" : f.out_path;
    detail::write_file(out, constraints_to_json(cs));
    std::printf("%s: %zu constraints -> %s\n", to_string(cs.method), cs.constraints.size(),
                out.c_str());
    return kExitOk;
}

int cmd_solve(const CommonFlags& f, const std::string& method,
              const std::string& constraints_path, bool schedules) {
    Instance inst = load_instance(f.instance_path);
    Fleet fleet = inst.fleet();

    UcProblem prob;
    prob.horizon = inst.horizon;
    prob.generators = inst.generators;
    prob.inflexible_kw = inst.inflexible_kw;

    SolveOptions opts;
    opts.tol = f.tol;
    opts.want_schedules = schedules;

    Solution sol;
    if (method == "m1" || method == "per_device") {
        prob.fleet_model = PerDeviceModel{fleet};
        sol = solve_per_device(prob, opts);
    } else {
        ConstraintSet cs;
        if (!constraints_path.empty())
            cs = constraints_from_json(detail::parse_file(constraints_path),
                                       inst.horizon.num_steps);
        else
            cs = select_by_method(method, fleet, inst.inflexible_kw, selection_options(f));
        prob.fleet_model = AggregateModel{std::move(cs), fleet.total_energy()};
        sol = solve_aggregate(prob, opts);
    }

    if (!f.out_path.empty()) detail::write_file(f.out_path, solution_to_json(sol));
    if (sol.status != SolveStatus::optimal) {
        std::fprintf(stderr, "solve: %s\n", to_string(sol.status));
        return kExitInfeasible;
    }
    std::printf("objective %.6f (kkt residual %.2e, %d iterations)\n", sol.objective,
                sol.kkt_residual, sol.iterations);
    return kExitOk;
}

int cmd_dispatch(const CommonFlags& f, const std::string& profile_path) {
    Instance inst = load_instance(f.instance_path);
    Fleet fleet = inst.fleet();
    std::vector<double> d;
    if (profile_path.size() > 5 && profile_path.substr(profile_path.size() - 5) == ".json") {
        const auto j = detail::parse_file(profile_path);
        d = detail::field(j, "d_kw", "profile").get<std::vector<double>>();
    } else {
        d = read_series_csv(profile_path);
    }
    if (static_cast<int>(d.size()) != inst.horizon.num_steps)
        throw io_error("profile length does not match the horizon");

    FeasibilityReport rep = check_aggregate_feasible(fleet, d);
    nlohmann::json j;
    j["version"] = 1;
    j["feasible"] = rep.feasible;
    if (!rep.feasible) {
        j["reason"] = rep.reason == FeasibilityReport::Reason::energy_mismatch ? "energy_mismatch"
                                                                               : "capacity_cut";
        j["certificate_support"] = rep.certificate.slots();
        j["violation_kwh"] = rep.violation_kwh;
        if (!f.out_path.empty()) detail::write_file(f.out_path, j);
        std::fprintf(stderr, "infeasible profile (violation %.6f kWh)\n", rep.violation_kwh);
        return kExitInfeasible;
    }
    auto u = disaggregate(fleet, d, inst.inflexible_kw);
    j["u_kw"] = u;
    j["thresholds_verified"] = verify_thresholds(u, fleet, inst.inflexible_kw, d);
    if (!f.out_path.empty()) detail::write_file(f.out_path, j);
    std::printf("feasible; %zu schedules%s\n", u.size(),
                f.out_path.empty() ? "" : (" -> " + f.out_path).c_str());
    return kExitOk;
}

int cmd_twoarea(const CommonFlags& f, const std::string& method_name,
                const std::vector<double>& p_bars, uint64_t seed, int scale,
                const std::string& out_dir) {
    std::vector<NetworkMethod> methods;
    if (method_name == "all") {
        methods = {NetworkMethod::mm1, NetworkMethod::mm3, NetworkMethod::mm4};
    } else {
        if (method_name == "mm1") methods = {NetworkMethod::mm1};
        else if (method_name == "mm2") methods = {NetworkMethod::mm2};
        else if (method_name == "mm3") methods = {NetworkMethod::mm3};
        else if (method_name == "mm4") methods = {NetworkMethod::mm4};
        else throw CLI::ValidationError("--method", "unknown method '" + method_name + "'");
    }
    std::filesystem::create_directories(out_dir);

    std::optional<TwoAreaInstance> file_inst;
    if (!f.instance_path.empty()) file_inst = load_two_area(f.instance_path);

    std::ofstream csv(out_dir + "/summary.csv");
    csv << "method,p_bar,objective,congested_slots,degenerate,max_price_gap,area1_feasible,"
           "area2_feasible\n";
    for (double p_bar : p_bars) {
        NetworkProblem base = file_inst ? file_inst->network_problem(NetworkMethod::mm1)
                                        : make_two_area_case(p_bar, seed, scale);
        base.tie.p_bar_kw = p_bar;
        for (NetworkMethod m : methods) {
            NetworkProblem prob = base;
            prob.method = m;
            SolveOptions opts;
            opts.tol = f.tol;
            NetworkSolution sol = solve_network(prob, opts);
            if (sol.status != SolveStatus::optimal) {
                std::fprintf(stderr, "%s at p_bar=%g: %s\n", to_string(m), p_bar,
                             to_string(sol.status));
                return kExitInfeasible;
            }
            auto cp = congestion_profile(sol, prob.tie);
            double gap = 0.0;
            for (size_t t = 0; t < sol.lambda[0].size(); ++t)
                gap = std::max(gap, std::abs(sol.lambda[0][t] - sol.lambda[1][t]));
            auto v = validate_area_profiles(prob, sol);
            csv << to_string(m) << ',' << p_bar << ',' << sol.objective << ','
                << cp.congested_count << ',' << (cp.degenerate ? 1 : 0) << ',' << gap << ','
                << (v.per_area[0].feasible ? 1 : 0) << ',' << (v.per_area[1].feasible ? 1 : 0)
                << "\n";
            const std::string out =
                out_dir + "/" + to_string(m) + "_pbar" + std::to_string(p_bar) + ".json";
            detail::write_file(out, network_solution_to_json(sol));
            std::printf("%s p_bar=%-6g objective %.4f congested %d/%zu\n", to_string(m), p_bar,
                        sol.objective, cp.congested_count, sol.lambda[0].size());
        }
    }
    std::printf("summary -> %s/summary.csv\n", out_dir.c_str());
    return kExitOk;
}

int cmd_bench(const std::string& experiment, const std::string& out, int instances, uint64_t seed) {
    if (experiment == "equivalence") {
        EquivalenceConfig cfg;
        if (instances > 0) cfg.instances = instances;
        cfg.seed = seed;
        auto s = run_equivalence(cfg);
        write_report_csv(out, s.reports);
        std::printf("equivalence: %d instances, max m2 gap %.3e, max m3 gap %.3e -> %s\n",
                    s.count, s.max_gap_m2, s.max_gap_m3, out.c_str());
        return kExitOk;
    }
    if (experiment == "success_rate") {
        SuccessRateConfig cfg;
        if (instances > 0) cfg.instances = instances;
        cfg.seed = seed;
        auto s = run_success_rate(cfg);
        write_report_csv(out, s.reports);
        std::printf("success rates on %d instances: greedy descent %.1f%%, one-slot greedy "
                    "%.1f%% (mean failure gaps %.2e / %.2e) -> %s\n",
                    s.count, 100.0 * s.greedy1_rate, 100.0 * s.greedy2_rate,
                    s.greedy1_mean_fail_gap, s.greedy2_mean_fail_gap, out.c_str());
        return kExitOk;
    }
    if (experiment == "timing") {
        TimingConfig cfg;
        if (instances > 0) cfg.instances = instances;
        cfg.seed = seed;
        auto s = run_timing(cfg);
        write_report_csv(out, s.reports);
        std::printf("timing grid done; selection medians at T=%d: exact %.1f ms, greedy descent "
                    "%.2f ms, one-slot %.2f ms -> %s\n",
                    cfg.selection_T, s.selection_median_m3, s.selection_median_m4,
                    s.selection_median_m5, out.c_str());
        return kExitOk;
    }
    std::fprintf(stderr, "unknown experiment '%s'\n", experiment.c_str());
    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Aggregate-flexibility dispatch toolkit"};
    app.require_subcommand(1);

    CommonFlags flags;

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a random instance file");
    std::string gen_spec, gen_kind = "uniform_subsets", gen_inflexible, gen_out = "instance.json";
    int gen_t = 24, gen_n = 10;
    double gen_pmax = 1.0;
    uint64_t gen_seed = 1;
    gen->add_option("--spec", gen_spec, "scenario spec JSON (overrides the flags)");
    gen->add_option("--kind", gen_kind, "uniform_subsets | contiguous_normal");
    gen->add_option("--t", gen_t, "number of slots");
    gen->add_option("--n", gen_n, "number of devices");
    gen->add_option("--p-max", gen_pmax, "device rated power, kW");
    gen->add_option("--seed", gen_seed, "random seed (required for reproducibility)");
    gen->add_option("--inflexible", gen_inflexible, "CSV with one inflexible value per slot");
    gen->add_option("--out", gen_out, "output instance path");

    // reduce
    auto* reduce = app.add_subcommand("reduce", "Select an aggregate constraint family");
    std::string reduce_method = "m5";
    reduce->add_option("--instance", flags.instance_path, "instance JSON")->required();
    reduce->add_option("--method", reduce_method, "m2|m3|m4|m5|full");
    reduce->add_option("--out", flags.out_path, "output constraints path");
    reduce->add_option("--t-guard", flags.t_guard, "largest horizon allowed for enumeration");

    // solve
    auto* solve = app.add_subcommand("solve", "Solve the dispatch problem");
    std::string solve_method = "m1", solve_constraints;
    bool solve_schedules = false;
    solve->add_option("--instance", flags.instance_path, "instance JSON")->required();
    solve->add_option("--method", solve_method, "m1|m2|m3|m4|m5");
    solve->add_option("--constraints", solve_constraints, "pre-selected constraints JSON");
    solve->add_option("--out", flags.out_path, "solution output path");
    solve->add_option("--t-guard", flags.t_guard, "largest horizon allowed for enumeration");
    solve->add_option("--tol", flags.tol, "solver tolerance");
    solve->add_flag("--schedules", solve_schedules, "include per-device schedules (m1)");

    // dispatch
    auto* dispatch = app.add_subcommand("dispatch", "Check and split an aggregate profile");
    std::string dispatch_profile;
    dispatch->add_option("--instance", flags.instance_path, "instance JSON")->required();
    dispatch->add_option("--profile", dispatch_profile, "aggregate profile (CSV or solution JSON)")
        ->required();
    dispatch->add_option("--out", flags.out_path, "schedules output path");

    // twoarea
    auto* twoarea = app.add_subcommand("twoarea", "Two-area interchange study");
    std::string ta_method = "all", ta_out = "twoarea_out";
    std::vector<double> ta_pbars{0.0, 5.0, 10.0, 15.0, 20.0};
    uint64_t ta_seed = 20240;
    int ta_scale = 1000;
    twoarea->add_option("--method", ta_method, "mm1|mm2|mm3|mm4|all");
    twoarea->add_option("--pbar", ta_pbars, "tie capacities to sweep")->delimiter(',');
    twoarea->add_option("--seed", ta_seed, "fleet seed");
    twoarea->add_option("--scale", ta_scale, "fleet shrink factor (devices/scale, power*scale)");
    twoarea->add_option("--instance", flags.instance_path, "two-area instance JSON (optional)");
    twoarea->add_option("--out", ta_out, "output directory");
    twoarea->add_option("--tol", flags.tol, "solver tolerance");

    // bench
    auto* bench = app.add_subcommand("bench", "Benchmark studies with CSV reports");
    std::string bench_experiment = "equivalence", bench_out = "bench.csv";
    int bench_instances = 0;
    uint64_t bench_seed = 1;
    bench->add_option("--experiment", bench_experiment, "equivalence|success_rate|timing");
    bench->add_option("--out", bench_out, "CSV output path");
    bench->add_option("--instances", bench_instances, "instance count override");
    bench->add_option("--seed", bench_seed, "master seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen(gen_spec, gen_kind, gen_t, gen_n, gen_pmax, gen_seed, gen_inflexible,
                           gen_out);
        if (reduce->parsed()) return cmd_reduce(flags, reduce_method);
        if (solve->parsed()) return cmd_solve(flags, solve_method, solve_constraints, solve_schedules);
        if (dispatch->parsed()) return cmd_dispatch(flags, dispatch_profile);
        if (twoarea->parsed())
            return cmd_twoarea(flags, ta_method, ta_pbars, ta_seed, ta_scale, ta_out);
        if (bench->parsed()) return cmd_bench(bench_experiment, bench_out, bench_instances, bench_seed);
    } catch (const guard_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
    return kExitUsage;
}
