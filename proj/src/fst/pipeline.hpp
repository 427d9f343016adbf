#pragma once

// Pipeline stages behind the command-line tool. Each stage writes into its
// own directory under the output root together with manifest.json, which
// records the stage's config hash, the master seed, the hashes of upstream
// manifests and a content hash for every file it wrote. Downstream stages
// refuse artifacts whose manifest does not match the current config.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fst/common.hpp"
#include "fst/config.hpp"
#include "fst/cutin_sim.hpp"
#include "fst/eval_harness.hpp"
#include "fst/fst_optimizer.hpp"
#include "fst/fst_trainer.hpp"
#include "fst/model_set.hpp"
#include "fst/scenario_space.hpp"
#include "fst/similarity_net.hpp"

namespace fst {

namespace fs = std::filesystem;

struct StageOptions {
    bool force = false;           // recompute even when up to date
    std::ostream* log = &std::cerr;
};

enum class StageStatus { Ran, UpToDate };

inline fs::path stage_dir(const RunConfig& cfg, const std::string& stage) { return fs::path(cfg.output_dir) / stage; }

// ---------------------------------------------------------------------------
// Manifests

class Manifest {
public:
    Manifest(const RunConfig& cfg, std::string stage) : stage_(std::move(stage)), dir_(stage_dir(cfg, stage_)) {
        j_["stage"] = stage_;
        j_["config_hash"] = stage_config_hash(cfg, stage_ == "execute" ? "optimize" : stage_);
        j_["master_seed"] = cfg.seed;
        j_["upstream"] = json::object();
        j_["files"] = json::object();
    }

    void upstream(const std::string& stage, const json& manifest) {
        j_["upstream"][stage] = hex64(fnv1a64(manifest.dump()));
    }

    /// Writes `contents` under the stage directory and records its hash.
    void write(const std::string& name, std::string_view contents) {
        write_file(dir_ / name, contents);
        add(name);
    }

    void add(const std::string& name) { j_["files"][name] = file_hash(dir_ / name); }

    json& data() { return j_; }

    void commit() const { write_file(dir_ / "manifest.json", j_.dump(2) + "\n"); }

private:
    std::string stage_;
    fs::path dir_;
    json j_;
};

inline std::optional<json> read_manifest(const fs::path& dir) {
    auto path = dir / "manifest.json";
    if (!fs::exists(path)) return std::nullopt;
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded() || !j.contains("files") || !j.contains("config_hash"))
        throw ArtifactError(path.string() + ": malformed manifest");
    return j;
}

inline void verify_files(const fs::path& dir, const json& manifest) {
    for (auto it = manifest.at("files").begin(); it != manifest.at("files").end(); ++it) {
        auto path = dir / it.key();
        if (!fs::exists(path)) throw ArtifactError("missing artifact " + path.string());
        if (file_hash(path) != it.value().get<std::string>()) throw ArtifactError("hash mismatch for " + path.string());
    }
}

/// Manifest of a finished upstream stage, checked against the current config
/// and its file hashes.
inline json require_stage(const RunConfig& cfg, const std::string& stage) {
    auto dir = stage_dir(cfg, stage);
    auto m = read_manifest(dir);
    if (!m) throw ArtifactError("missing " + stage + " artifacts in " + dir.string() + "; run `fst " + stage + "` first");
    if (m->at("config_hash").get<std::string>() != stage_config_hash(cfg, stage))
        throw ArtifactError(stage + " artifacts in " + dir.string() +
                            " were produced from a different configuration; rerun `fst " + stage + "`");
    verify_files(dir, *m);
    return *m;
}

/// True when the stage's manifest matches the config and every file verifies.
/// Corrupted files are an error rather than a silent recompute.
inline bool up_to_date(const RunConfig& cfg, const std::string& stage, const StageOptions& opt) {
    if (opt.force) return false;
    auto dir = stage_dir(cfg, stage);
    auto m = read_manifest(dir);
    if (!m || m->at("config_hash").get<std::string>() != stage_config_hash(cfg, stage)) return false;
    verify_files(dir, *m);
    return true;
}

inline void reset_dir(const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
}

class StageTimer {
public:
    StageTimer(std::ostream* log, std::string what) : log_(log), what_(std::move(what)) {}
    void done() const {
        double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        if (!log_) return;
        std::ostringstream os;
        os << what_ << ": " << std::fixed << std::setprecision(1) << s << " s\n";
        *log_ << os.str();
    }

private:
    std::ostream* log_;
    std::string what_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Loaded artifacts

struct PreparedArtifacts {
    ScenarioGrid grid;
    SurrogateSet set;
    std::vector<Subject> subjects;
    json manifest;
};

inline PreparedArtifacts load_prepared(const RunConfig& cfg) {
    PreparedArtifacts a;
    a.manifest = require_stage(cfg, "prepare");
    auto dir = stage_dir(cfg, "prepare");
    a.grid = ScenarioGrid::from_csv(dir / "grid.csv");
    if (a.grid.r_steps() != cfg.r_steps || a.grid.rdot_steps() != cfg.rdot_steps)
        throw ArtifactError((dir / "grid.csv").string() + ": grid shape does not match the config");
    a.set = SurrogateSet::load(dir / "surrogates", a.grid);
    for (const auto& s : cfg.subjects) {
        auto map = PerformanceMap::from_csv(dir / "subjects" / (s.name + ".csv"), a.grid);
        double mu = ground_truth(map, a.grid);
        a.subjects.push_back({s.name, std::move(map), mu});
    }
    return a;
}

inline std::string network_file(std::size_t n) { return "network_n" + std::to_string(n) + ".json"; }

struct TrainedArtifacts {
    std::map<std::size_t, NetParams> networks;  // by training n
    CriticalSampler sampler;
    json manifest;

    const NetParams& main(const RunConfig& cfg) const { return networks.at(cfg.training.n_train); }
};

inline TrainedArtifacts load_trained(const RunConfig& cfg, const ScenarioGrid& grid) {
    TrainedArtifacts a;
    a.manifest = require_stage(cfg, "train");
    auto dir = stage_dir(cfg, "train");
    for (auto n : cfg.network_sizes())
        a.networks.emplace(n, NetParams::from_json(json::parse(read_file(dir / network_file(n)))));
    a.sampler = CriticalSampler::from_csv(dir / "sampler.csv", grid);
    return a;
}

inline std::string plan_stem(std::size_t n, double w_M) {
    return "n" + std::to_string(n) + "_wM" + format_double(w_M);
}

inline FstPlan load_plan(const RunConfig& cfg, std::size_t n, double w_M) {
    auto m = require_stage(cfg, "optimize");
    auto name = "plan_" + plan_stem(n, w_M) + ".json";
    if (!m.at("files").contains(name))
        throw ArtifactError("missing plan " + (stage_dir(cfg, "optimize") / name).string() + "; run `fst optimize --n " +
                            std::to_string(n) + " --w-m " + format_double(w_M) + "` first");
    return FstPlan::from_json(json::parse(read_file(stage_dir(cfg, "optimize") / name)));
}

// ---------------------------------------------------------------------------
// Stages

inline StageStatus cmd_prepare(const RunConfig& cfg, const StageOptions& opt = {}) {
    if (up_to_date(cfg, "prepare", opt)) return StageStatus::UpToDate;
    StageTimer timer(opt.log, "prepare");
    auto dir = stage_dir(cfg, "prepare");
    reset_dir(dir);
    Manifest manifest(cfg, "prepare");
    auto grid = build_grid(cfg.r_steps, cfg.rdot_steps, cfg.exposure);
    manifest.write("grid.csv", grid.to_csv());

    std::vector<PerformanceMap> vertices;
    for (const auto& p : cfg.surrogates) vertices.push_back(rasterize_model(p, grid, cfg.episode, cfg.threads));
    SurrogateSet set(std::move(vertices), grid);
    set.save(dir / "surrogates", grid);
    for (std::size_t i = 0; i < set.size(); ++i) manifest.add("surrogates/vertex_" + std::to_string(i) + ".csv");
    manifest.add("surrogates/manifest.json");

    json truths = json::object();
    for (const auto& s : cfg.subjects) {
        auto map = rasterize_model(s.idm, grid, cfg.episode, cfg.threads);
        manifest.write("subjects/" + s.name + ".csv", map.to_csv(grid));
        truths[s.name] = ground_truth(map, grid);
    }
    manifest.data()["cells"] = grid.size();
    manifest.data()["surrogate_ground_truths"] = set.vertex_ground_truths();
    manifest.data()["subject_ground_truths"] = truths;
    manifest.commit();
    timer.done();
    return StageStatus::Ran;
}

inline StageStatus cmd_train(const RunConfig& cfg, const StageOptions& opt = {}) {
    auto prepared = load_prepared(cfg);
    if (up_to_date(cfg, "train", opt)) return StageStatus::UpToDate;
    StageTimer timer(opt.log, "train");
    auto dir = stage_dir(cfg, "train");
    reset_dir(dir);
    Manifest manifest(cfg, "train");
    manifest.upstream("prepare", prepared.manifest);

    auto sampler = build_sampler(prepared.grid, prepared.set, cfg.k, derive_seed(cfg.seed, "sampler"),
                                 cfg.performance_scale);
    manifest.write("sampler.csv", sampler.to_csv(prepared.grid));

    auto sizes = cfg.network_sizes();
    std::vector<TrainResult> results(sizes.size());
    parallel_for(sizes.size(), cfg.threads, [&](std::size_t i) {
        auto init = NetParams::initialize(cfg.architecture, derive_seed(cfg.seed, "network-init"), cfg.temperature,
                                          cfg.epsilon_dist);
        results[i] = train(init, prepared.set, prepared.grid, sampler, cfg.train_config_for(sizes[i]));
    });
    json final_loss = json::object();
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        auto j = results[i].params.to_json();
        j["train_n"] = sizes[i];
        j["config_hash"] = stage_config_hash(cfg, "train");
        j["master_seed"] = cfg.seed;
        manifest.write(network_file(sizes[i]), j.dump(2) + "\n");
        manifest.write("loss_n" + std::to_string(sizes[i]) + ".csv", results[i].loss_csv());
        final_loss[std::to_string(sizes[i])] = results[i].epoch_loss.back();
        if (opt.log)
            *opt.log << "  network n=" << sizes[i] << ": loss " << results[i].epoch_loss.front() << " -> "
                     << results[i].epoch_loss.back() << "\n";
    }
    manifest.data()["final_loss"] = final_loss;
    manifest.commit();
    timer.done();
    return StageStatus::Ran;
}

struct PlanRequest {
    std::size_t n;
    double w_M;
};

/// Default requests: the configured n at the configured confidence, plus the
/// same n with the fluctuation term off for the bound experiment.
inline std::vector<PlanRequest> default_plan_requests(const RunConfig& cfg) {
    std::vector<PlanRequest> out{{cfg.optimization.n, cfg.optimization.w_M}};
    if (!std::isinf(cfg.optimization.w_M)) out.push_back({cfg.optimization.n, kInfiniteConfidence});
    return out;
}

inline StageStatus cmd_optimize(const RunConfig& cfg, std::vector<PlanRequest> requests,
                                const StageOptions& opt = {}) {
    auto prepared = load_prepared(cfg);
    auto trained = load_trained(cfg, prepared.grid);
    if (requests.empty()) requests = default_plan_requests(cfg);
    auto dir = stage_dir(cfg, "optimize");

    // Plans accumulate across invocations while the config is unchanged.
    auto previous = read_manifest(dir);
    bool reuse = !opt.force && previous && previous->at("config_hash") == stage_config_hash(cfg, "optimize");
    if (reuse) verify_files(dir, *previous);
    else reset_dir(dir);
    Manifest manifest(cfg, "optimize");
    manifest.upstream("prepare", prepared.manifest);
    manifest.upstream("train", trained.manifest);
    if (reuse) {
        manifest.data()["files"] = previous->at("files");
        manifest.data()["plans"] = previous->value("plans", json::object());
    }

    PlanEvaluator evaluator(trained.main(cfg), prepared.set, prepared.grid);
    bool ran = false;
    for (const auto& req : requests) {
        auto stem = plan_stem(req.n, req.w_M);
        if (manifest.data()["files"].contains("plan_" + stem + ".json")) continue;
        StageTimer timer(opt.log, "optimize " + stem);
        OptimizeConfig oc = cfg.optimization;
        oc.n = req.n;
        oc.w_M = req.w_M;
        oc.seed = derive_seed(cfg.seed, "optimize", req.n);
        auto plan = optimize(evaluator, trained.sampler, oc);
        plan.metadata = {{"config_hash", stage_config_hash(cfg, "optimize")},
                         {"master_seed", cfg.seed},
                         {"network", network_file(cfg.training.n_train)}};
        manifest.write("plan_" + stem + ".json", plan.to_json().dump(2) + "\n");
        manifest.write("similarity_" + stem + ".csv",
                       similarity_csv(evaluator.forward(plan.scenarios).similarity(), prepared.grid));
        manifest.data()["plans"][stem] = {{"certified_loss", plan.certified_loss},
                                          {"best_initial_certified_loss", plan.best_initial_certified_loss()}};
        if (opt.log)
            *opt.log << "  certified loss " << plan.certified_loss << " (best initialization "
                     << plan.best_initial_certified_loss() << ")\n";
        timer.done();
        ran = true;
    }
    manifest.commit();
    return ran ? StageStatus::Ran : StageStatus::UpToDate;
}

/// Runs a stored plan on every subject, both from the rasterized map and by
/// simulating the exact plan coordinates.
inline StageStatus cmd_execute(const RunConfig& cfg, std::optional<PlanRequest> request,
                               const StageOptions& opt = {}) {
    auto prepared = load_prepared(cfg);
    PlanRequest req = request.value_or(PlanRequest{cfg.optimization.n, cfg.optimization.w_M});
    auto plan = load_plan(cfg, req.n, req.w_M);
    auto stem = plan_stem(req.n, req.w_M);
    Manifest manifest(cfg, "execute");
    manifest.upstream("optimize", require_stage(cfg, "optimize"));
    if (auto previous = read_manifest(stage_dir(cfg, "execute")); previous && !opt.force &&
                                                                  previous->at("config_hash") ==
                                                                      manifest.data()["config_hash"]) {
        verify_files(stage_dir(cfg, "execute"), *previous);
        if (previous->at("files").contains("execute_" + stem + ".csv")) return StageStatus::UpToDate;
        manifest.data()["files"] = previous->at("files");
    }

    std::string summary =
        "subject,ground_truth,map_estimate,simulator_estimate,map_abs_error,simulator_abs_error\n";
    std::string scenarios = "subject,index,r,rdot,weight,map_outcome,simulator_outcome\n";
    for (std::size_t s = 0; s < cfg.subjects.size(); ++s) {
        const auto& subject = prepared.subjects[s];
        double mu = subject.ground_truth;
        double est_map = execute_plan(plan, subject.map, prepared.grid);
        double est_sim = execute_plan(plan, cfg.subjects[s].idm, cfg.episode);
        summary += subject.name + "," + format_double(mu) + "," + format_double(est_map) + "," +
                   format_double(est_sim) + "," + format_double(std::abs(est_map - mu)) + "," +
                   format_double(std::abs(est_sim - mu)) + "\n";
        for (std::size_t i = 0; i < plan.n(); ++i) {
            const auto& x = plan.scenarios[i];
            scenarios += subject.name + "," + std::to_string(i) + "," + format_double(x.range_m) + "," +
                         format_double(x.range_rate_mps) + "," + format_double(plan.weights[i]) + "," +
                         format_double(subject.map.values[prepared.grid.nearest_cell(x)]) + "," +
                         std::to_string(simulate_episode(x, cfg.subjects[s].idm, cfg.episode)) + "\n";
        }
    }
    manifest.write("execute_" + stem + ".csv", summary);
    manifest.write("execute_" + stem + "_scenarios.csv", scenarios);
    manifest.commit();
    return StageStatus::Ran;
}

inline json nde_analytic_json(const std::vector<Subject>& subjects, const std::vector<std::size_t>& n_values) {
    json out = json::array();
    for (const auto& s : subjects)
        for (auto n : n_values) {
            auto a = nde_analytic(s.ground_truth, n);
            out.push_back({{"subject", s.name},
                           {"n", n},
                           {"average_abs_error", a.average_abs_error},
                           {"estimator_variance", a.estimator_variance},
                           {"max_error_q99", a.max_error_q99},
                           {"zero_probability", a.zero_probability}});
        }
    return out;
}

inline StageStatus cmd_evaluate(const RunConfig& cfg, const StageOptions& opt = {}) {
    auto prepared = load_prepared(cfg);
    auto trained = load_trained(cfg, prepared.grid);
    auto optimize_manifest = require_stage(cfg, "optimize");
    auto bound_plan = load_plan(cfg, cfg.optimization.n, kInfiniteConfidence);
    if (up_to_date(cfg, "evaluate", opt)) return StageStatus::UpToDate;
    auto dir = stage_dir(cfg, "evaluate");
    reset_dir(dir);
    Manifest manifest(cfg, "evaluate");
    manifest.upstream("prepare", prepared.manifest);
    manifest.upstream("train", trained.manifest);
    manifest.upstream("optimize", optimize_manifest);

    const auto trials = cfg.evaluation.effective_trials();
    const auto eval_seed = derive_seed(cfg.seed, "evaluate");
    const auto fst_cfg = cfg.fst_trial_config();
    auto cache = std::make_shared<PlanCache>();
    std::map<std::size_t, std::unique_ptr<PlanEvaluator>> evaluators;
    for (const auto& [n, params] : trained.networks)
        evaluators.emplace(n, std::make_unique<PlanEvaluator>(params, prepared.set, prepared.grid));
    auto prefix = [](std::size_t n) { return "net_n" + std::to_string(n) + "/"; };
    const auto main_n = cfg.training.n_train;
    const auto& main_eval = *evaluators.at(main_n);

    // Stored plans are re-verified before use.
    double recomputed = main_eval.evaluate(bound_plan.scenarios, kInfiniteConfidence, false).certified.loss;
    if (std::abs(recomputed - bound_plan.certified_loss) > 1e-9)
        throw ArtifactError("plan " + plan_stem(cfg.optimization.n, kInfiniteConfidence) +
                            ": stored certified loss does not match the network; rerun `fst optimize`");

    {
        StageTimer timer(opt.log, "evaluate: compare");
        MethodRegistry registry;
        registry.add(std::make_shared<FstMethod>("fst", main_eval, trained.sampler, fst_cfg, cache,
                                                 fst_cache_tag(fst_cfg, prefix(main_n))));
        registry.add(std::make_shared<UniformMethod>(prepared.grid));
        registry.add(std::make_shared<NdeMethod>(prepared.grid));
        auto report = compare_methods(registry, cfg.evaluation.methods, prepared.subjects, cfg.evaluation.n_values,
                                      trials, eval_seed, cfg.threads);
        manifest.write("compare.csv", report.csv());
        auto j = report.to_json();
        j["nde_analytic"] = nde_analytic_json(prepared.subjects, cfg.evaluation.n_values);
        j["fst_trial_optimizer"] = {{"restarts", fst_cfg.restarts},
                                    {"steps", fst_cfg.steps},
                                    {"learning_rate", fst_cfg.learning_rate},
                                    {"w_M", confidence_to_json(fst_cfg.w_M)}};
        manifest.write("compare.json", j.dump(2) + "\n");
        for (const auto& s : prepared.subjects)
            for (auto n : cfg.evaluation.n_values)
                manifest.write("histogram_" + s.name + "_n" + std::to_string(n) + ".csv", report.histogram_csv(s.name, n));
        timer.done();
    }

    BoundReport bound;
    {
        StageTimer timer(opt.log, "evaluate: bound");
        bound = bound_experiment(bound_plan, prepared.set, prepared.grid, cfg.evaluation.bound_draws,
                                 derive_seed(cfg.seed, "bound"));
        auto j = bound.to_json();
        j["plan"] = "plan_" + plan_stem(cfg.optimization.n, kInfiniteConfidence) + ".json";
        manifest.write("bound.json", j.dump(2) + "\n");
        timer.done();
    }

    {
        StageTimer timer(opt.log, "evaluate: ablation");
        auto report = ablation_run(main_eval, trained.sampler, prepared.subjects, default_ablation_specs(), fst_cfg,
                                   cfg.evaluation.ablation.n, cfg.evaluation.ablation_trials(), eval_seed,
                                   cfg.threads, cache, prefix(main_n));
        manifest.write("ablation.csv", report.csv());
        timer.done();
    }

    {
        StageTimer timer(opt.log, "evaluate: cross-n");
        std::vector<TrainedNetwork> networks;
        for (auto n : cfg.evaluation.cross_n.train_n)
            networks.push_back({n, evaluators.at(n).get(), &trained.sampler, prefix(n)});
        auto report = cross_n_experiment(networks, cfg.evaluation.cross_n.test_n, prepared.subjects, fst_cfg,
                                         cfg.evaluation.cross_n.trials, eval_seed, cfg.threads, cache);
        manifest.write("cross_n.csv", report.csv());
        timer.done();
    }
    manifest.commit();

    if (bound.violations > 0) {
        std::ostringstream os;
        os << "bound experiment: " << bound.violations << " of " << bound.draws
           << " members exceed the certified loss; first offending weights [";
        for (std::size_t i = 0; i < bound.first_violation_weights.size(); ++i)
            os << (i ? ", " : "") << format_double(bound.first_violation_weights[i]);
        os << "]";
        throw NumericalError(os.str());
    }
    return StageStatus::Ran;
}

namespace detail {

inline std::string sci(double v, int digits = 3) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*e", digits - 1, v);
    return buf;
}

inline std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f%%", 100.0 * v);
    return buf;
}

}  // namespace detail

/// Renders the evaluation outputs as one markdown summary.
inline StageStatus cmd_report(const RunConfig& cfg, const StageOptions& opt = {}) {
    auto evaluate_manifest = require_stage(cfg, "evaluate");
    if (up_to_date(cfg, "report", opt)) return StageStatus::UpToDate;
    auto in = stage_dir(cfg, "evaluate");
    auto compare = json::parse(read_file(in / "compare.json"));
    auto bound = json::parse(read_file(in / "bound.json"));
    auto ablation = read_csv(in / "ablation.csv", "config,optimization,fluctuation," + TrialStats::csv_header());
    auto cross = read_csv(in / "cross_n.csv", "train_n,test_n," + TrialStats::csv_header());
    using detail::pct;
    using detail::sci;

    std::ostringstream md;
    md << "# FST evaluation summary\n\n";
    md << "- master seed: " << cfg.seed << "\n";
    md << "- evaluate config hash: " << evaluate_manifest.at("config_hash").get<std::string>() << "\n";
    md << "- trials per cell: " << cfg.evaluation.effective_trials() << "\n";
    md << "- variance: " << compare.at("variance_definition").get<std::string>() << "\n\n";

    md << "## Method comparison\n\n";
    md << "| subject | n | method | mean estimate | avg abs error | relative | variance | max error (99%) | "
          "relative |\n|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : compare.at("rows"))
        md << "| " << r.at("subject").get<std::string>() << " (mu " << sci(r.at("ground_truth")) << ") | "
           << r.at("n").get<std::size_t>() << " | " << r.at("method").get<std::string>() << " | "
           << sci(r.at("mean_estimate")) << " | " << sci(r.at("average_abs_error")) << " | "
           << pct(r.at("relative_average_error")) << " | " << sci(r.at("estimator_variance")) << " | "
           << sci(r.at("max_error_q99")) << " | " << pct(r.at("relative_max_error_q99")) << " |\n";

    md << "\n## Upper-bound experiment\n\n";
    md << "- plan: " << bound.at("plan").get<std::string>() << "\n";
    md << "- certified loss: " << sci(bound.at("certified_loss")) << "\n";
    md << "- members drawn: " << bound.at("draws").get<std::size_t>()
       << ", violations: " << bound.at("violations").get<std::size_t>() << "\n";
    md << "- max error: " << sci(bound.at("max_error")) << " (" << pct(bound.at("max_ratio"))
       << " of the bound), max relative error: " << pct(bound.at("max_relative_error")) << "\n";

    md << "\n## Ablation (n = " << cfg.evaluation.ablation.n << ")\n\n";
    md << "| config | optimization | fluctuation | subject | avg abs error | relative | max error (99%) |\n"
          "|---|---|---|---|---|---|---|\n";
    for (const auto& r : ablation)
        md << "| " << r[0] << " | " << r[1] << " | " << r[2] << " | " << r[3] << " | " << sci(parse_double(r[9]))
           << " | " << pct(parse_double(r[12])) << " | " << sci(parse_double(r[11])) << " |\n";

    md << "\n## Cross-n generalization (relative average error)\n\n";
    std::vector<std::string> subjects;
    for (const auto& s : cfg.subjects) subjects.push_back(s.name);
    md << "| train n | test n |";
    for (const auto& s : subjects) md << " " << s << " |";
    md << "\n|---|---|";
    for (std::size_t i = 0; i < subjects.size(); ++i) md << "---|";
    md << "\n";
    for (std::size_t i = 0; i < cross.size(); i += subjects.size()) {
        md << "| " << cross[i][0] << " | " << cross[i][1] << " |";
        for (std::size_t s = 0; s < subjects.size() && i + s < cross.size(); ++s)
            md << " " << pct(parse_double(cross[i + s][11])) << " |";
        md << "\n";
    }

    reset_dir(stage_dir(cfg, "report"));
    Manifest manifest(cfg, "report");
    manifest.upstream("evaluate", evaluate_manifest);
    manifest.write("summary.md", md.str());
    manifest.commit();
    return StageStatus::Ran;
}

/// prepare, train, optimize, evaluate, report in order.
inline void run_pipeline(const RunConfig& cfg, const StageOptions& opt = {}) {
    cmd_prepare(cfg, opt);
    cmd_train(cfg, opt);
    cmd_optimize(cfg, {}, opt);
    cmd_execute(cfg, std::nullopt, opt);
    cmd_evaluate(cfg, opt);
    cmd_report(cfg, opt);
}

/// Report files compared for run-to-run determinism.
inline std::vector<std::string> report_files(const RunConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& stage : {"evaluate", "report"}) {
        auto m = read_manifest(stage_dir(cfg, stage));
        if (!m) continue;
        for (auto it = m->at("files").begin(); it != m->at("files").end(); ++it)
            out.push_back(std::string(stage) + "/" + it.key());
        out.push_back(std::string(stage) + "/manifest.json");
    }
    return out;
}

}  // namespace fst
