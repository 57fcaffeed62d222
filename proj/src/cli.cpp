#include "coreplan/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <thread>

#include <CLI11.hpp>

#include "coreplan/diagnostics.hpp"
#include "coreplan/io.hpp"
#include "coreplan/planner.hpp"

namespace coreplan::cli {
namespace fs = std::filesystem;
using io::Json;

unsigned worker_count() {
    if (const char* env = std::getenv("COREPLAN_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && n > 0)
            return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

// Runs job(i) for i in [0, n) on up to worker_count() threads. The first
// exception is rethrown after all workers finish.
template <class Job>
void parallel_for(std::size_t n, Job job) {
    const unsigned workers = std::min<std::size_t>(worker_count(), std::max<std::size_t>(n, 1));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

BoundInputs bound_inputs(const io::InstanceFiles& inst, double D_gamma) {
    const Index m = inst.core.size();
    return BoundInputs{m, inst.features.radius, D_gamma, inst.mdp.num_actions,
                       std::log(static_cast<double>(m))};
}

double resolve_radius(const io::InstanceFiles& inst, std::optional<double> D) {
    return D ? *D : default_radius(inst.features.dim(), inst.mdp.gamma);
}

void require_distinct(const std::vector<std::uint64_t>& seeds) {
    require(!seeds.empty(), "at least one seed is required");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(),
            "replicate seeds must be distinct");
}

void write_csv_meta(std::ofstream& out, const Json& meta) { out << "# meta " << meta.dump() << '\n'; }

// ---------------------------------------------------------------------------

struct GenArgs {
    Index states = 0, actions = 0, dim = 0;
    std::uint64_t seed = 0;
    double gamma = 0.9;
    bool toggle = false;
    std::string out = ".";
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    LinearMdpInstance inst;
    Json config{{"command", "gen"}, {"seed", a.seed}, {"gamma", a.gamma}};
    if (a.toggle) {
        inst = toggle_instance(a.gamma);
        config["instance"] = "toggle";
    } else {
        require(a.states >= 1 && a.actions >= 1 && a.dim >= 1, "gen: --states, --actions and --dim must be >= 1");
        require(a.dim <= a.states * a.actions, "gen: precondition d <= X*A violated (--dim " +
                                                   std::to_string(a.dim) + " > " +
                                                   std::to_string(a.states * a.actions) + ")");
        inst = gen_linear_mdp(a.seed, a.states, a.actions, a.dim, GeneratorOptions{a.gamma});
        config["instance"] = "linear";
        config["states"] = a.states;
        config["actions"] = a.actions;
        config["dim"] = a.dim;
    }
    io::save_instance(a.out, inst, config);
    out << "wrote mdp.json features.json coreset.json witness.json to " << a.out << " (hash "
        << io::instance_hash(inst.mdp, inst.features, inst.core) << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct PlanArgs {
    std::string instance;
    std::string out;
    std::optional<double> epsilon;
    std::optional<std::uint64_t> T, K;
    std::optional<double> eta, beta, alpha, D_gamma;
    std::vector<std::uint64_t> seeds{0};
    bool no_trace = false;
};

PlannerConfig resolve_plan_config(const PlanArgs& a, const io::InstanceFiles& inst) {
    const double D = resolve_radius(inst, a.D_gamma);
    const BoundInputs in = bound_inputs(inst, D);
    const bool explicit_rates = a.T || a.K || a.eta || a.beta || a.alpha;
    require(!(a.epsilon && explicit_rates),
            "plan: --epsilon cannot be combined with explicit --T/--K/--eta/--beta/--alpha");
    require(a.epsilon || a.T, "plan: give either --epsilon or --T");
    PlannerConfig cfg;
    if (a.epsilon) {
        cfg = tune_hyperparameters(*a.epsilon, in.m, in.R, in.D_gamma, in.num_actions, in.dkl_bound);
    } else {
        cfg = tuned_config_for_horizon(*a.T, in);
        if (a.K) {
            cfg.K = *a.K;
            cfg.alpha = D / (in.R * std::sqrt(static_cast<double>(cfg.K)));
        }
        if (a.eta)
            cfg.eta = *a.eta;
        if (a.beta)
            cfg.beta = *a.beta;
        if (a.alpha)
            cfg.alpha = *a.alpha;
    }
    cfg.record_trace = !a.no_trace;
    cfg.validate();
    return cfg;
}

Json result_json(const RunResult& r, const PlannerConfig& cfg, const Json& meta) {
    return Json{{"meta", meta},
                {"J", r.J},
                {"theta_cum", std::vector<double>(r.policy.theta_cum().data(),
                                                  r.policy.theta_cum().data() + r.policy.theta_cum().size())},
                {"beta", cfg.beta},
                {"T", cfg.T},
                {"K", cfg.K},
                {"transition_queries", r.transition_queries},
                {"init_queries", r.init_queries},
                {"max_theta_grad_norm", r.trace.max_theta_grad_norm},
                {"max_lambda_grad_abs", r.trace.max_lambda_grad_abs},
                {"theta_bound_violations", r.trace.theta_bound_violations},
                {"lambda_bound_violations", r.trace.lambda_bound_violations}};
}

int cmd_plan(const PlanArgs& a, std::ostream& out) {
    const io::InstanceFiles inst = io::load_instance(a.instance);
    require_distinct(a.seeds);
    const PlannerConfig base = resolve_plan_config(a, inst);
    const fs::path root = a.out.empty() ? fs::path(a.instance) : fs::path(a.out);

    std::vector<std::string> lines(a.seeds.size());
    parallel_for(a.seeds.size(), [&](std::size_t i) {
        PlannerConfig cfg = base;
        cfg.seed = a.seeds[i];
        Json config = io::to_json(cfg);
        config["command"] = "plan";
        if (a.epsilon)
            config["epsilon"] = *a.epsilon;
        const Json meta = io::make_meta(config, inst.hash);
        const RunResult r = run(inst.mdp, inst.features, inst.core, cfg);
        const fs::path dir = root / ("seed_" + std::to_string(cfg.seed));
        fs::create_directories(dir);
        io::write_json(dir / "result.json", result_json(r, cfg, meta));
        if (cfg.record_trace)
            io::write_trace_csv(dir / "trace.csv", r.trace, meta);
        lines[i] = "seed=" + std::to_string(cfg.seed) + " T=" + std::to_string(cfg.T) + " K=" +
                   std::to_string(cfg.K) + " J=" + std::to_string(r.J) +
                   " transition_queries=" + std::to_string(r.transition_queries) +
                   " init_queries=" + std::to_string(r.init_queries) + "\n";
    });
    for (const auto& l : lines)
        out << l;
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct AuditArgs {
    std::string instance;
    std::string run_dir;
    std::string out;
    Index ibe_policies = 16;
    std::uint64_t ibe_seed = 0;
    double tol = 1e-8;
};

int cmd_audit(const AuditArgs& a, std::ostream& out) {
    const io::InstanceFiles inst = io::load_instance(a.instance);
    const fs::path run_dir(a.run_dir);
    const Json result = io::read_json(run_dir / "result.json");
    const io::LoadedTrace lt = io::read_trace_csv(run_dir / "trace.csv");
    for (const Json* j : {&result.at("meta"), &lt.meta}) {
        const auto h = j->at("instance_hash").get<std::string>();
        if (h != inst.hash)
            throw IntegrityError("audit: run was produced for instance " + h + ", not " + inst.hash);
    }
    const PlannerConfig cfg = io::config_from_json(lt.meta.at("config"));
    require(lt.trace.rounds.size() == cfg.T, "audit: trace must record all T rounds");

    const LinearMdpWitness* witness = inst.witness ? &*inst.witness : nullptr;
    const DualityGapReport gap =
        dynamic_duality_gap(inst.mdp, inst.features, inst.core, lt.trace, cfg.beta, cfg.D_gamma, witness);
    const ApproxErrorReport approx = approx_error_report(inst.mdp, inst.features, inst.core, lt.trace, cfg.beta,
                                                         cfg.D_gamma, a.ibe_policies, a.ibe_seed);
    const CertificateReport cert = certificate_check_relaxed_lp(inst.mdp, inst.features, inst.core, witness, a.tol);
    const GeneralGapAudit general = general_gap_audit(gap, approx);

    Json audit_config{{"command", "audit"},   {"run", a.run_dir},   {"ibe_policies", a.ibe_policies},
                      {"ibe_seed", a.ibe_seed}, {"tol", a.tol},       {"planner", io::to_json(cfg)}};
    const Json meta = io::make_meta(audit_config, inst.hash);
    const Json report{
        {"meta", meta},
        {"gap", gap.gap},
        {"primal_regret", gap.primal_regret},
        {"dual_dynamic_regret", gap.dual_dynamic_regret},
        {"mean_subopt", gap.mean_subopt},
        {"gap_minus_mean_subopt", gap.gap - gap.mean_subopt},
        {"comparators", gap.witness_comparators ? "witness" : "chebyshev"},
        {"comparators_in_domain", gap.comparators_in_domain},
        {"eps_approx_bound", approx.eps_approx_bound},
        {"approx",
         {{"mean_eps_pi", approx.mean_eps_pi},
          {"ibe", approx.ibe},
          {"ibe_sampled", approx.ibe_sampled},
          {"ibe_rounds", approx.ibe_rounds},
          {"core_term", approx.core_term}}},
        {"general_gap_audit", {{"lhs", general.lhs}, {"rhs", general.rhs}, {"holds", general.holds}}},
        {"certificate",
         {{"primal_residual", cert.primal_residual},
          {"dual_residual", cert.dual_residual},
          {"objective_gap", cert.objective_gap},
          {"passed", cert.passed},
          {"violations", cert.violations}}}};

    const fs::path dest = a.out.empty() ? run_dir : fs::path(a.out);
    fs::create_directories(dest);
    io::write_json(dest / "report.json", report);
    std::ofstream csv(dest / "audit.csv");
    require(static_cast<bool>(csv), "cannot write audit.csv");
    write_csv_meta(csv, meta);
    csv << "t,L_left,L_right,subopt_t\n";
    for (const GapRound& g : gap.rounds)
        csv << g.t << ',' << io::format_double(g.L_left) << ',' << io::format_double(g.L_right) << ','
            << io::format_double(g.subopt) << '\n';

    out << "gap=" << gap.gap << " mean_subopt=" << gap.mean_subopt << " eps_approx_bound=" << approx.eps_approx_bound
        << " certificate=" << (cert.passed ? "pass" : "fail") << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
    std::string instance;
    std::string out;
    std::vector<double> epsilons;
    std::vector<std::uint64_t> horizons;
    std::vector<std::uint64_t> seeds{0};
    std::optional<double> D_gamma;
    bool dry_run = false;
};

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    require(a.epsilons.empty() != a.horizons.empty(), "sweep: give exactly one non-empty list of --epsilons or --T");
    const io::InstanceFiles inst = io::load_instance(a.instance);
    require_distinct(a.seeds);
    const double D = resolve_radius(inst, a.D_gamma);
    const BoundInputs in = bound_inputs(inst, D);

    struct Setting {
        double epsilon;
        PlannerConfig cfg;
    };
    std::vector<Setting> settings;
    for (double e : a.epsilons) {
        require(e > 0.0, "sweep: epsilons must be positive");
        settings.push_back({e, tune_hyperparameters(e, in.m, in.R, in.D_gamma, in.num_actions, in.dkl_bound)});
    }
    for (std::uint64_t T : a.horizons) {
        require(T >= 1, "sweep: T values must be >= 1");
        PlannerConfig cfg = tuned_config_for_horizon(T, in);
        settings.push_back({optimization_error_bound(cfg, in), cfg});
    }

    struct Row {
        double epsilon;
        PlannerConfig cfg;
        std::uint64_t queries;
        std::optional<double> subopt, gap;
    };
    const std::size_t reps = a.dry_run ? 1 : a.seeds.size();
    std::vector<Row> rows(settings.size() * reps);
    const LinearMdpWitness* witness = inst.witness ? &*inst.witness : nullptr;
    parallel_for(rows.size(), [&](std::size_t i) {
        const Setting& s = settings[i / reps];
        PlannerConfig cfg = s.cfg;
        cfg.seed = a.dry_run ? 0 : a.seeds[i % reps];
        Row row{s.epsilon, cfg, cfg.T * (cfg.K + 1), std::nullopt, std::nullopt};
        if (!a.dry_run) {
            const RunResult r = run(inst.mdp, inst.features, inst.core, cfg);
            const DualityGapReport g =
                dynamic_duality_gap(inst.mdp, inst.features, inst.core, r.trace, cfg.beta, cfg.D_gamma, witness);
            row.queries = r.transition_queries;
            row.subopt = g.mean_subopt;
            row.gap = g.gap;
        }
        rows[i] = row;
    });

    fs::create_directories(a.out);
    std::ofstream csv(fs::path(a.out) / "sweep.csv");
    require(static_cast<bool>(csv), "cannot write sweep.csv");
    Json config{{"command", "sweep"}, {"epsilons", a.epsilons}, {"T", a.horizons}, {"seeds", a.seeds},
                {"D_gamma", D},      {"dry_run", a.dry_run}};
    write_csv_meta(csv, io::make_meta(config, inst.hash));
    csv << "epsilon,T,K,queries,subopt_mean,gap,seed\n";
    for (const Row& r : rows) {
        csv << io::format_double(r.epsilon) << ',' << r.cfg.T << ',' << r.cfg.K << ',' << r.queries << ','
            << (r.subopt ? io::format_double(*r.subopt) : "") << ',' << (r.gap ? io::format_double(*r.gap) : "")
            << ',' << (a.dry_run ? std::string() : std::to_string(r.cfg.seed)) << '\n';
    }
    out << "wrote " << rows.size() << " rows to " << (fs::path(a.out) / "sweep.csv").string() << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"coreplan: primal-dual planning with core state-action sets"};
    app.require_subcommand(1);
    app.set_version_flag("--version", io::version_string());

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "generate a linear MDP instance (or the toggle MDP)");
    g->add_option("--states", gen.states, "number of states X");
    g->add_option("--actions", gen.actions, "number of actions A");
    g->add_option("--dim", gen.dim, "feature dimension d");
    g->add_option("--seed", gen.seed, "generator seed");
    g->add_option("--gamma", gen.gamma, "discount factor");
    g->add_flag("--toggle", gen.toggle, "write the two-state toggle MDP with tabular features");
    g->add_option("--out", gen.out, "output directory");

    PlanArgs plan;
    auto* p = app.add_subcommand("plan", "run the planner on an instance directory");
    p->add_option("--instance", plan.instance, "instance directory")->required();
    p->add_option("--out", plan.out, "output directory (default: the instance directory)");
    p->add_option("--epsilon", plan.epsilon, "target optimization error; tunes T, K and the rates");
    p->add_option("--T", plan.T, "number of rounds");
    p->add_option("--K", plan.K, "inner SGD steps per round");
    p->add_option("--eta", plan.eta, "lambda step size");
    p->add_option("--beta", plan.beta, "softmax step size");
    p->add_option("--alpha", plan.alpha, "SGD step size");
    p->add_option("--D-gamma", plan.D_gamma, "parameter ball radius");
    p->add_option("--seeds", plan.seeds, "replicate seeds")->delimiter(',');
    p->add_flag("--no-trace", plan.no_trace, "skip trace.csv");

    AuditArgs audit;
    auto* au = app.add_subcommand("audit", "exact duality-gap and certificate audit of a run");
    au->add_option("--instance", audit.instance, "instance directory")->required();
    au->add_option("--run", audit.run_dir, "replicate directory holding result.json and trace.csv")->required();
    au->add_option("--out", audit.out, "output directory (default: the run directory)");
    au->add_option("--ibe-policies", audit.ibe_policies, "sampled policies for the IBE estimate");
    au->add_option("--ibe-seed", audit.ibe_seed, "seed of the IBE estimator");
    au->add_option("--tol", audit.tol, "certificate tolerance");

    SweepArgs sweep;
    auto* s = app.add_subcommand("sweep", "tuned runs over a list of epsilons or horizons");
    s->add_option("--instance", sweep.instance, "instance directory")->required();
    s->add_option("--out", sweep.out, "output directory")->required();
    s->add_option("--epsilons", sweep.epsilons, "target errors")->delimiter(',');
    s->add_option("--T", sweep.horizons, "horizons")->delimiter(',');
    s->add_option("--seeds", sweep.seeds, "replicate seeds")->delimiter(',');
    s->add_option("--D-gamma", sweep.D_gamma, "parameter ball radius");
    s->add_flag("--dry-run", sweep.dry_run, "closed-form schedule and query counts only");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
        if (g->parsed())
            return cmd_gen(gen, out);
        if (p->parsed())
            return cmd_plan(plan, out);
        if (au->parsed())
            return cmd_audit(audit, out);
        return cmd_sweep(sweep, out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const IntegrityError& e) {
        err << "integrity error: " << e.what() << '\n';
        return kExitIntegrity;
    } catch (const ContractError& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}

}  // namespace coreplan::cli
