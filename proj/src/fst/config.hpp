#pragma once

// Declarative run configuration. The JSON form is the source of truth: a user
// file is merged onto the defaults, `--set path=value` overrides are applied,
// unknown keys are rejected, and every invariant is checked before any stage
// runs. Stage hashes cover only the sections a stage depends on.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fst/common.hpp"
#include "fst/cutin_sim.hpp"
#include "fst/fst_optimizer.hpp"
#include "fst/fst_trainer.hpp"
#include "fst/scenario_space.hpp"
#include "fst/similarity_net.hpp"

namespace fst {

using nlohmann::json;

struct SubjectSpec {
    std::string name;
    IdmParams idm;
};

struct AblationSettings {
    std::size_t n = 10;
    std::size_t trials = 0;  // 0: use the evaluation trial count
};

struct CrossNSettings {
    std::vector<std::size_t> train_n{5, 10, 20};
    std::vector<std::size_t> test_n{5, 10, 20};
    std::size_t trials = 100;
    std::size_t epochs = 100;  // for networks other than the main one
};

struct EvaluationConfig {
    std::vector<std::string> methods{"fst", "uniform", "nde"};
    std::vector<std::size_t> n_values{5, 10, 20};
    std::size_t trials = 1000;
    bool fast = false;
    std::size_t fast_trials = 200;
    std::size_t fst_restarts = 4;
    std::size_t fst_steps = 75;
    std::size_t bound_draws = 1000;
    AblationSettings ablation;
    CrossNSettings cross_n;

    std::size_t effective_trials() const { return fast ? fast_trials : trials; }
    std::size_t ablation_trials() const { return ablation.trials ? ablation.trials : effective_trials(); }
};

struct RunConfig {
    std::uint64_t seed = 20240601;
    std::string output_dir = "fst_run";
    unsigned threads = 1;

    std::size_t r_steps = 91;
    std::size_t rdot_steps = 61;
    ExposureModel exposure = default_exposure();

    EpisodeConfig episode;
    std::vector<IdmParams> surrogates = default_surrogates();
    std::vector<SubjectSpec> subjects;

    NetArchitecture architecture;
    double temperature = 1.0;
    double epsilon_dist = 1e-3;

    TrainConfig training;
    std::size_t k = 5;
    double performance_scale = 2.0;

    OptimizeConfig optimization;
    EvaluationConfig evaluation;

    json raw;  // merged, validated JSON form

    /// Optimizer settings used by FST trials in the evaluation stage.
    OptimizeConfig fst_trial_config() const {
        OptimizeConfig c = optimization;
        c.restarts = evaluation.fst_restarts;
        c.steps = evaluation.fst_steps;
        return c;
    }

    /// Every training n that needs a network: the main one plus the cross-n list.
    std::vector<std::size_t> network_sizes() const {
        std::vector<std::size_t> out{training.n_train};
        for (auto n : evaluation.cross_n.train_n)
            if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(n);
        return out;
    }

    TrainConfig train_config_for(std::size_t n_train) const {
        TrainConfig c = training;
        c.n_train = n_train;
        if (n_train != training.n_train) c.epochs = evaluation.cross_n.epochs;
        c.seed = derive_seed(seed, "train", n_train);
        return c;
    }
};

inline json idm_to_json(const IdmParams& p) {
    return {{"desired_speed_mps", p.desired_speed_mps}, {"max_accel_mps2", p.max_accel_mps2},
            {"comfortable_decel_mps2", p.comfortable_decel_mps2}, {"min_gap_m", p.min_gap_m},
            {"time_headway_s", p.time_headway_s}, {"accel_exponent", p.accel_exponent},
            {"max_decel_mps2", p.max_decel_mps2}};
}

inline json confidence_to_json(double w_M) { return std::isinf(w_M) ? json("inf") : json(w_M); }

inline json default_config_json() {
    json exposure = json::array();
    for (const auto& c : default_exposure().components)
        exposure.push_back({{"weight", c.weight}, {"mean_r", c.mean_r}, {"mean_rdot", c.mean_rdot},
                            {"std_r", c.std_r}, {"std_rdot", c.std_rdot}});
    json surrogates = json::array();
    for (const auto& p : default_surrogates()) surrogates.push_back(idm_to_json(p));
    json subjects = json::array();
    auto subject_params = default_subjects();
    for (std::size_t i = 0; i < subject_params.size(); ++i) {
        auto j = idm_to_json(subject_params[i]);
        j["name"] = "AV-" + std::to_string(i + 1);
        subjects.push_back(j);
    }
    EpisodeConfig ep;
    TrainConfig tc;
    OptimizeConfig oc;
    EvaluationConfig ec;
    NetArchitecture arch;
    oc.w_M = 1.0;
    return {
        {"seed", 20240601},
        {"output_dir", "fst_run"},
        {"threads", 1},
        {"grid", {{"r_steps", 91}, {"rdot_steps", 61}, {"exposure", exposure}}},
        {"simulation",
         {{"episode",
           {{"av_initial_speed_mps", ep.av_initial_speed_mps},
            {"bv_speed_policy", "constant_speed"},
            {"horizon_s", ep.horizon_s},
            {"dt_s", ep.dt_s}}},
          {"surrogates", surrogates},
          {"subjects", subjects}}},
        {"network",
         {{"hidden", arch.hidden}, {"feature_dim", arch.feature_dim}, {"temperature", 1.0}, {"epsilon_dist", 1e-3}}},
        {"training",
         {{"epochs", tc.epochs},
          {"batches_per_epoch", tc.batches_per_epoch},
          {"sets_per_batch", tc.sets_per_batch},
          {"learning_rate", tc.learning_rate},
          {"momentum", tc.momentum},
          {"clip_norm", tc.clip_norm},
          {"final_lr_fraction", tc.final_lr_fraction},
          {"n_train", tc.n_train},
          {"k", 5},
          {"performance_scale", 2.0}}},
        {"optimization",
         {{"n", oc.n},
          {"restarts", oc.restarts},
          {"steps", oc.steps},
          {"learning_rate", oc.learning_rate},
          {"w_M", confidence_to_json(oc.w_M)}}},
        {"evaluation",
         {{"methods", ec.methods},
          {"n_values", ec.n_values},
          {"trials", ec.trials},
          {"fast", ec.fast},
          {"fast_trials", ec.fast_trials},
          {"fst_restarts", ec.fst_restarts},
          {"fst_steps", ec.fst_steps},
          {"bound_draws", ec.bound_draws},
          {"ablation", {{"n", ec.ablation.n}, {"trials", ec.ablation.trials}}},
          {"cross_n",
           {{"train_n", ec.cross_n.train_n},
            {"test_n", ec.cross_n.test_n},
            {"trials", ec.cross_n.trials},
            {"epochs", ec.cross_n.epochs}}}}},
    };
}

namespace detail {

/// Templates for elements of object arrays, so partial elements get defaults
/// and unknown element keys are caught.
inline std::optional<json> element_template(const std::string& path) {
    auto d = default_config_json();
    if (path == "grid.exposure") return d["grid"]["exposure"][0];
    if (path == "simulation.surrogates") return idm_to_json(IdmParams{});
    if (path == "simulation.subjects") {
        auto j = idm_to_json(IdmParams{});
        j["name"] = "";
        return j;
    }
    return std::nullopt;
}

inline std::string join_path(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

/// Merges `patch` onto `base` in place; objects recurse, everything else replaces.
inline void merge_onto(json& base, const json& patch, const std::string& path, std::vector<std::string>& errors) {
    if (!patch.is_object()) {
        errors.push_back(path + ": expected an object");
        return;
    }
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        auto here = join_path(path, it.key());
        if (!base.contains(it.key())) {
            errors.push_back("unknown key '" + here + "'");
            continue;
        }
        auto& slot = base[it.key()];
        if (slot.is_object()) {
            merge_onto(slot, it.value(), here, errors);
        } else if (auto tmpl = element_template(here); tmpl && it.value().is_array()) {
            json arr = json::array();
            for (std::size_t i = 0; i < it.value().size(); ++i) {
                json e = *tmpl;
                merge_onto(e, it.value()[i], here + "." + std::to_string(i), errors);
                arr.push_back(e);
            }
            slot = arr;
        } else {
            slot = it.value();
        }
    }
}

/// Collects failures instead of stopping at the first.
class Checker {
public:
    explicit Checker(const json& root) : root_(root) {}

    template <class T>
    T get(const std::string& path, T fallback = T{}) {
        const json* node = &root_;
        for (const auto& part : split(path, '.')) {
            if (node->is_array()) {
                node = &node->at(std::stoul(part));
            } else {
                node = &node->at(part);
            }
        }
        try {
            return node->get<T>();
        } catch (const json::exception&) {
            errors.push_back(path + ": wrong type (" + std::string(node->type_name()) + ")");
            return fallback;
        }
    }

    double confidence(const std::string& path) {
        const json* node = &root_;
        for (const auto& part : split(path, '.')) node = &node->at(part);
        if (node->is_string() && node->get<std::string>() == "inf") return kInfiniteConfidence;
        if (node->is_number()) return node->get<double>();
        errors.push_back(path + ": expected a positive number or \"inf\"");
        return 1.0;
    }

    template <class F>
    void check(const std::string& where, F&& f) {
        try {
            f();
        } catch (const ValidationError& e) {
            errors.push_back(where + ": " + e.what());
        }
    }

    void expect(bool ok, const std::string& what) {
        if (!ok) errors.push_back(what);
    }

    std::vector<std::string> errors;

private:
    const json& root_;
};

inline IdmParams idm_from(Checker& c, const std::string& path) {
    IdmParams p;
    p.desired_speed_mps = c.get<double>(path + ".desired_speed_mps");
    p.max_accel_mps2 = c.get<double>(path + ".max_accel_mps2");
    p.comfortable_decel_mps2 = c.get<double>(path + ".comfortable_decel_mps2");
    p.min_gap_m = c.get<double>(path + ".min_gap_m");
    p.time_headway_s = c.get<double>(path + ".time_headway_s");
    p.accel_exponent = c.get<double>(path + ".accel_exponent");
    p.max_decel_mps2 = c.get<double>(path + ".max_decel_mps2");
    c.check(path, [&] { p.validate(); });
    return p;
}

inline std::string format_errors(const std::vector<std::string>& errors) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  - " + e;
    return msg;
}

}  // namespace detail

/// Parses "section.key=value"; the value is read as JSON when it parses,
/// otherwise taken as a string. Numeric path segments index arrays.
inline void apply_override(json& config, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ValidationError("--set expects path=value, got '" + assignment + "'");
    auto path = assignment.substr(0, eq);
    auto text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &config;
    auto parts = split(path, '.');
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& part = parts[i];
        bool last = i + 1 == parts.size();
        if (node->is_array()) {
            std::size_t idx = 0;
            try {
                idx = std::stoul(part);
            } catch (const std::exception&) {
                throw ValidationError("--set " + path + ": '" + part + "' is not an array index");
            }
            if (idx >= node->size()) throw ValidationError("--set " + path + ": index " + part + " out of range");
            node = &(*node)[idx];
        } else if (node->is_object()) {
            if (!node->contains(part)) throw ValidationError("--set: unknown key '" + path + "'");
            node = &(*node)[part];
        } else {
            throw ValidationError("--set " + path + ": '" + part + "' is below a scalar");
        }
        if (last) {
            if (node->is_object()) {
                std::vector<std::string> errors;
                detail::merge_onto(*node, value, path, errors);
                if (!errors.empty()) throw ValidationError(detail::format_errors(errors));
            } else if (auto tmpl = detail::element_template(path); tmpl && value.is_array()) {
                json arr = json::array();
                std::vector<std::string> errors;
                for (std::size_t k = 0; k < value.size(); ++k) {
                    json e = *tmpl;
                    detail::merge_onto(e, value[k], path + "." + std::to_string(k), errors);
                    arr.push_back(e);
                }
                if (!errors.empty()) throw ValidationError(detail::format_errors(errors));
                *node = arr;
            } else {
                *node = value;
            }
        }
    }
}

namespace detail {

inline RunConfig parse_config(const json& merged, std::vector<std::string>& errors) {
    Checker c(merged);
    RunConfig cfg;
    cfg.raw = merged;
    cfg.seed = c.get<std::uint64_t>("seed");
    cfg.output_dir = c.get<std::string>("output_dir");
    c.expect(!cfg.output_dir.empty(), "output_dir: must not be empty");
    cfg.threads = c.get<unsigned>("threads", 1);

    cfg.r_steps = c.get<std::size_t>("grid.r_steps");
    cfg.rdot_steps = c.get<std::size_t>("grid.rdot_steps");
    c.expect(cfg.r_steps >= 2 && cfg.rdot_steps >= 2, "grid: r_steps and rdot_steps must be >= 2");
    cfg.exposure.components.clear();
    for (std::size_t i = 0; i < merged["grid"]["exposure"].size(); ++i) {
        auto p = "grid.exposure." + std::to_string(i);
        cfg.exposure.components.push_back({c.get<double>(p + ".weight"), c.get<double>(p + ".mean_r"),
                                           c.get<double>(p + ".mean_rdot"), c.get<double>(p + ".std_r"),
                                           c.get<double>(p + ".std_rdot")});
    }
    c.check("grid.exposure", [&] { cfg.exposure.validate(); });

    cfg.episode.av_initial_speed_mps = c.get<double>("simulation.episode.av_initial_speed_mps");
    cfg.episode.horizon_s = c.get<double>("simulation.episode.horizon_s");
    cfg.episode.dt_s = c.get<double>("simulation.episode.dt_s");
    c.expect(c.get<std::string>("simulation.episode.bv_speed_policy") == "constant_speed",
             "simulation.episode.bv_speed_policy: only \"constant_speed\" is supported");
    c.check("simulation.episode", [&] { cfg.episode.validate(); });
    cfg.surrogates.clear();
    for (std::size_t i = 0; i < merged["simulation"]["surrogates"].size(); ++i)
        cfg.surrogates.push_back(detail::idm_from(c, "simulation.surrogates." + std::to_string(i)));
    c.expect(cfg.surrogates.size() >= 2, "simulation.surrogates: at least 2 vertex models required");
    static const std::regex name_re("[A-Za-z0-9_-]+");
    for (std::size_t i = 0; i < merged["simulation"]["subjects"].size(); ++i) {
        auto p = "simulation.subjects." + std::to_string(i);
        SubjectSpec s{c.get<std::string>(p + ".name"), detail::idm_from(c, p)};
        c.expect(std::regex_match(s.name, name_re), p + ".name: must be non-empty [A-Za-z0-9_-]");
        for (const auto& other : cfg.subjects)
            c.expect(other.name != s.name, p + ".name: duplicate subject name '" + s.name + "'");
        cfg.subjects.push_back(s);
    }
    c.expect(!cfg.subjects.empty(), "simulation.subjects: at least one subject required");

    cfg.architecture.hidden = c.get<std::vector<int>>("network.hidden");
    cfg.architecture.feature_dim = c.get<int>("network.feature_dim");
    c.check("network", [&] { cfg.architecture.validate(); });
    cfg.temperature = c.get<double>("network.temperature");
    cfg.epsilon_dist = c.get<double>("network.epsilon_dist");
    c.expect(cfg.temperature > 0.0 && std::isfinite(cfg.temperature), "network.temperature: must be > 0");
    c.expect(cfg.epsilon_dist > 0.0 && std::isfinite(cfg.epsilon_dist), "network.epsilon_dist: must be > 0");

    auto& t = cfg.training;
    t.epochs = c.get<std::size_t>("training.epochs");
    t.batches_per_epoch = c.get<std::size_t>("training.batches_per_epoch");
    t.sets_per_batch = c.get<std::size_t>("training.sets_per_batch");
    t.learning_rate = c.get<double>("training.learning_rate");
    t.momentum = c.get<double>("training.momentum");
    t.clip_norm = c.get<double>("training.clip_norm");
    t.final_lr_fraction = c.get<double>("training.final_lr_fraction");
    t.n_train = c.get<std::size_t>("training.n_train");
    c.expect(t.epochs >= 1, "training.epochs: must be >= 1");
    c.expect(t.batches_per_epoch >= 1, "training.batches_per_epoch: must be >= 1");
    c.expect(t.sets_per_batch >= 1, "training.sets_per_batch: must be >= 1");
    c.expect(t.n_train >= 1, "training.n_train: must be >= 1");
    c.expect(t.learning_rate >= 0.0 && std::isfinite(t.learning_rate), "training.learning_rate: must be >= 0");
    c.expect(t.momentum >= 0.0 && t.momentum < 1.0, "training.momentum: must be in [0, 1)");
    c.expect(t.clip_norm >= 0.0 && std::isfinite(t.clip_norm), "training.clip_norm: must be >= 0");
    c.expect(t.final_lr_fraction >= 0.0 && t.final_lr_fraction <= 1.0,
             "training.final_lr_fraction: must be in [0, 1]");
    cfg.k = c.get<std::size_t>("training.k");
    cfg.performance_scale = c.get<double>("training.performance_scale");
    c.expect(cfg.k >= 1 && cfg.k <= cfg.r_steps * cfg.rdot_steps, "training.k: must be in [1, grid cells]");
    c.expect(cfg.performance_scale >= 0.0 && std::isfinite(cfg.performance_scale),
             "training.performance_scale: must be >= 0");

    auto& o = cfg.optimization;
    o.n = c.get<std::size_t>("optimization.n");
    o.restarts = c.get<std::size_t>("optimization.restarts");
    o.steps = c.get<std::size_t>("optimization.steps");
    o.learning_rate = c.get<double>("optimization.learning_rate");
    o.w_M = c.confidence("optimization.w_M");
    c.check("optimization", [&] { o.validate(); });

    auto& e = cfg.evaluation;
    e.methods = c.get<std::vector<std::string>>("evaluation.methods");
    for (const auto& m : e.methods)
        c.expect(m == "fst" || m == "uniform" || m == "nde", "evaluation.methods: unknown method '" + m + "'");
    c.expect(!e.methods.empty(), "evaluation.methods: at least one method required");
    e.n_values = c.get<std::vector<std::size_t>>("evaluation.n_values");
    c.expect(!e.n_values.empty(), "evaluation.n_values: at least one n required");
    for (auto n : e.n_values) c.expect(n >= 1, "evaluation.n_values: entries must be >= 1");
    e.trials = c.get<std::size_t>("evaluation.trials");
    e.fast = c.get<bool>("evaluation.fast");
    e.fast_trials = c.get<std::size_t>("evaluation.fast_trials");
    c.expect(e.trials >= 100 && e.fast_trials >= 100, "evaluation: trials and fast_trials must be >= 100");
    e.fst_restarts = c.get<std::size_t>("evaluation.fst_restarts");
    e.fst_steps = c.get<std::size_t>("evaluation.fst_steps");
    c.expect(e.fst_restarts >= 1, "evaluation.fst_restarts: must be >= 1");
    e.bound_draws = c.get<std::size_t>("evaluation.bound_draws");
    c.expect(e.bound_draws >= 1, "evaluation.bound_draws: must be >= 1");
    e.ablation.n = c.get<std::size_t>("evaluation.ablation.n");
    e.ablation.trials = c.get<std::size_t>("evaluation.ablation.trials");
    c.expect(e.ablation.n >= 1, "evaluation.ablation.n: must be >= 1");
    c.expect(e.ablation.trials == 0 || e.ablation.trials >= 100, "evaluation.ablation.trials: must be 0 or >= 100");
    c.expect(!std::isinf(o.w_M), "optimization.w_M: must be finite so the ablation fluctuation toggle matters");
    e.cross_n.train_n = c.get<std::vector<std::size_t>>("evaluation.cross_n.train_n");
    e.cross_n.test_n = c.get<std::vector<std::size_t>>("evaluation.cross_n.test_n");
    e.cross_n.trials = c.get<std::size_t>("evaluation.cross_n.trials");
    e.cross_n.epochs = c.get<std::size_t>("evaluation.cross_n.epochs");
    for (auto n : e.cross_n.train_n) c.expect(n >= 1, "evaluation.cross_n.train_n: entries must be >= 1");
    for (auto n : e.cross_n.test_n) c.expect(n >= 1, "evaluation.cross_n.test_n: entries must be >= 1");
    c.expect(e.cross_n.trials >= 100, "evaluation.cross_n.trials: must be >= 100");
    c.expect(e.cross_n.epochs >= 1, "evaluation.cross_n.epochs: must be >= 1");

    errors.insert(errors.end(), c.errors.begin(), c.errors.end());
    return cfg;
}

}  // namespace detail

/// Builds a validated RunConfig from merged JSON; lists every violation.
inline RunConfig config_from_json(const json& merged) {
    std::vector<std::string> errors;
    RunConfig cfg;
    try {
        cfg = detail::parse_config(merged, errors);
    } catch (const json::exception& e) {
        errors.push_back(std::string("malformed configuration: ") + e.what());
    }
    if (!errors.empty()) throw ValidationError(detail::format_errors(errors));
    return cfg;
}

/// Defaults, then the optional file, then overrides in order.
inline RunConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::string>& overrides = {}) {
    json merged = default_config_json();
    std::vector<std::string> errors;
    if (path) {
        std::string text;
        try {
            text = read_file(*path);
        } catch (const ArtifactError&) {
            throw ValidationError("cannot read config file " + path->string());
        }
        json user = json::parse(text, nullptr, false);
        if (user.is_discarded()) throw ValidationError("config file " + path->string() + " is not valid JSON");
        detail::merge_onto(merged, user, "", errors);
    }
    for (const auto& o : overrides) {
        try {
            apply_override(merged, o);
        } catch (const ValidationError& e) {
            errors.push_back(e.what());
        }
    }
    RunConfig cfg;
    try {
        cfg = detail::parse_config(merged, errors);
    } catch (const json::exception& e) {
        errors.push_back(std::string("malformed configuration: ") + e.what());
    }
    if (!errors.empty()) throw ValidationError(detail::format_errors(errors));
    return cfg;
}

/// Hash of the config sections a stage depends on. Stages are cumulative, so a
/// change upstream invalidates everything after it. Threads and output
/// location never change results and are excluded.
inline std::string stage_config_hash(const RunConfig& cfg, const std::string& stage) {
    const auto& r = cfg.raw;
    json scope = {{"seed", r.at("seed")}, {"grid", r.at("grid")}, {"simulation", r.at("simulation")}};
    if (stage != "prepare") {
        scope["network"] = r.at("network");
        scope["training"] = r.at("training");
        scope["cross_n_networks"] = {{"train_n", r.at("evaluation").at("cross_n").at("train_n")},
                                     {"epochs", r.at("evaluation").at("cross_n").at("epochs")}};
    }
    if (stage != "prepare" && stage != "train") scope["optimization"] = r.at("optimization");
    if (stage == "evaluate" || stage == "report") {
        json ev = r.at("evaluation");
        ev["trials"] = cfg.evaluation.effective_trials();
        ev.erase("fast");
        ev.erase("fast_trials");
        scope["evaluation"] = ev;
    }
    require(stage == "prepare" || stage == "train" || stage == "optimize" || stage == "evaluate" ||
                stage == "report",
            "unknown stage '" + stage + "'");
    return hex64(fnv1a64(scope.dump()));
}

}  // namespace fst
