#pragma once

// Test-set optimization: projected gradient descent on the query coordinates
// of a trained similarity network, minimizing the worst-vertex error,
// optionally plus the fused fluctuation term, with best-of-restarts selection.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fst/certified_loss.hpp"
#include "fst/common.hpp"
#include "fst/cutin_sim.hpp"
#include "fst/fst_trainer.hpp"
#include "fst/model_set.hpp"
#include "fst/scenario_space.hpp"
#include "fst/similarity_net.hpp"

namespace fst {

inline constexpr double kInfiniteConfidence = std::numeric_limits<double>::infinity();

struct OptimizeConfig {
    std::size_t n = 10;
    std::size_t restarts = 8;
    std::size_t steps = 300;
    double learning_rate = 0.02;
    double w_M = kInfiniteConfidence;  // infinity disables the fluctuation term
    std::uint64_t seed = 0;

    void validate() const {
        require(n >= 1, "optimize: n must be >= 1");
        require(restarts >= 1, "optimize: restarts must be >= 1");
        require(learning_rate > 0.0 && std::isfinite(learning_rate), "optimize: learning_rate must be > 0");
        require(w_M > 0.0, "optimize: w_M must be > 0 or infinite");
    }
};

struct RestartRecord {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    double initial_objective = 0.0;
    double initial_certified_loss = 0.0;
    double best_objective = 0.0;
    bool failed = false;
    std::string failure;
};

struct FstPlan {
    std::vector<Scenario> scenarios;
    FusionWeights weights;
    double certified_loss = 0.0;
    double objective_value = 0.0;
    double w_M = kInfiniteConfidence;
    std::uint64_t seed = 0;
    std::size_t restart_index = 0;
    std::vector<RestartRecord> restarts;
    nlohmann::json metadata = nlohmann::json::object();

    std::size_t n() const { return scenarios.size(); }

    /// Lowest initial certified loss among successful restarts.
    double best_initial_certified_loss() const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& r : restarts)
            if (!r.failed) best = std::min(best, r.initial_certified_loss);
        return best;
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["scenarios"] = nlohmann::json::array();
        for (const auto& s : scenarios) j["scenarios"].push_back({{"r", s.range_m}, {"rdot", s.range_rate_mps}});
        j["weights"] = weights;
        j["certified_loss"] = certified_loss;
        j["objective"] = objective_value;
        j["w_M"] = std::isinf(w_M) ? nlohmann::json("inf") : nlohmann::json(w_M);
        j["seed"] = seed;
        j["restart_index"] = restart_index;
        j["restarts"] = nlohmann::json::array();
        for (const auto& r : restarts)
            j["restarts"].push_back({{"index", r.index},
                                     {"seed", r.seed},
                                     {"initial_objective", r.initial_objective},
                                     {"initial_certified_loss", r.initial_certified_loss},
                                     {"best_objective", r.best_objective},
                                     {"failed", r.failed},
                                     {"failure", r.failure}});
        j["metadata"] = metadata;
        return j;
    }

    static FstPlan from_json(const nlohmann::json& j) {
        FstPlan p;
        for (const auto& s : j.at("scenarios")) {
            Scenario sc{s.at("r").get<double>(), s.at("rdot").get<double>()};
            if (!in_box(sc)) throw ArtifactError("plan json: scenario outside the box");
            p.scenarios.push_back(sc);
        }
        p.weights = j.at("weights").get<std::vector<double>>();
        if (p.weights.size() != p.scenarios.size()) throw ArtifactError("plan json: weights/scenarios size mismatch");
        p.certified_loss = j.at("certified_loss").get<double>();
        p.objective_value = j.at("objective").get<double>();
        const auto& wm = j.at("w_M");
        p.w_M = wm.is_string() ? kInfiniteConfidence : wm.get<double>();
        p.seed = j.at("seed").get<std::uint64_t>();
        p.restart_index = j.at("restart_index").get<std::size_t>();
        for (const auto& r : j.value("restarts", nlohmann::json::array()))
            p.restarts.push_back({r.at("index").get<std::size_t>(), r.at("seed").get<std::uint64_t>(),
                                  r.at("initial_objective").get<double>(), r.at("initial_certified_loss").get<double>(),
                                  r.at("best_objective").get<double>(), r.at("failed").get<bool>(),
                                  r.at("failure").get<std::string>()});
        p.metadata = j.value("metadata", nlohmann::json::object());
        return p;
    }
};

/// Evaluation of one candidate test set against the surrogate set.
struct PlanEvaluation {
    FusionWeights weights;
    LossValue certified;
    double fused_fluctuation = 0.0;
    double objective = 0.0;
    std::vector<UnitCoords> grad_unit;  // empty unless requested
};

/// Holds a trained network with its grid keys encoded once.
class PlanEvaluator {
public:
    PlanEvaluator(const NetParams& params, const SurrogateSet& set, const ScenarioGrid& grid)
        : params_(&params), set_(&set), grid_(&grid), keys_(params, grid) {
        params.validate();
        require(set.cells() == grid.size(), "optimizer: surrogate maps not aligned with grid");
    }

    const ScenarioGrid& grid() const { return *grid_; }
    const SurrogateSet& set() const { return *set_; }
    const KeyCache& keys() const { return keys_; }

    ForwardPass forward(const std::vector<Scenario>& scenarios) const {
        std::vector<UnitCoords> u;
        for (const auto& s : scenarios) u.push_back(normalize_coords(s));
        return ForwardPass(*params_, u, keys_, grid_->exposure());
    }

    std::vector<std::size_t> cells_of(const std::vector<Scenario>& scenarios) const {
        std::vector<std::size_t> cells;
        for (const auto& s : scenarios) cells.push_back(grid_->nearest_cell(s));
        return cells;
    }

    /// Fused fluctuation: sum_i w_i F_i = sum_i sum_j (P(x_j) - P(x_i)) S_ij p_j.
    static double fused_fluctuation(const SimilarityMatrix& S, const PerformanceMap& map,
                                    const std::vector<double>& outcomes, const std::vector<double>& p) {
        double total = 0.0;
        for (Eigen::Index j = 0; j < S.cols(); ++j) {
            const double* s = S.col(j).data();
            double col = 0.0;
            for (Eigen::Index i = 0; i < S.rows(); ++i) col += (map.values[std::size_t(j)] - outcomes[std::size_t(i)]) * s[i];
            total += col * p[std::size_t(j)];
        }
        return total;
    }

    PlanEvaluation evaluate(const std::vector<Scenario>& scenarios, double w_M, bool with_grad) const {
        auto pass = forward(scenarios);
        auto outcomes = lookup_outcomes(*set_, cells_of(scenarios));
        PlanEvaluation out;
        out.weights = pass.weights();
        out.certified = worst_vertex_loss(out.weights, outcomes);
        const bool fluctuation_on = !std::isinf(w_M);
        const auto& worst_map = set_->vertex(out.certified.worst);
        const auto& worst_outcomes = outcomes.outcomes[out.certified.worst];
        if (fluctuation_on) {
            out.fused_fluctuation = fused_fluctuation(pass.similarity(), worst_map, worst_outcomes, grid_->exposure());
            out.objective = w_M * out.certified.loss + std::abs(out.fused_fluctuation);
        } else {
            out.objective = out.certified.loss;
        }
        require_finite(out.objective, "optimizer objective");
        if (!with_grad) return out;

        // Outcomes are piecewise constant in the coordinates: held fixed.
        const auto& p = grid_->exposure();
        const Eigen::Index n = Eigen::Index(scenarios.size()), N = Eigen::Index(p.size());
        auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
        const double err_scale = (fluctuation_on ? w_M : 1.0) * sign(out.certified.signed_error);
        const double fl_sign = fluctuation_on ? sign(out.fused_fluctuation) : 0.0;
        Eigen::MatrixXd grad_S(n, N);
        for (Eigen::Index j = 0; j < N; ++j) {
            double* g = grad_S.col(j).data();
            const double pj = p[std::size_t(j)], mj = worst_map.values[std::size_t(j)];
            for (Eigen::Index i = 0; i < n; ++i) {
                double o = worst_outcomes[std::size_t(i)];
                g[i] = pj * (err_scale * o + fl_sign * (mj - o));
            }
        }
        out.grad_unit = pass.backward_similarity(grad_S, false).query_unit;
        return out;
    }

private:
    const NetParams* params_;
    const SurrogateSet* set_;
    const ScenarioGrid* grid_;
    KeyCache keys_;
};

inline double certified_loss(const NetParams& params, const std::vector<Scenario>& scenarios, const SurrogateSet& set,
                             const ScenarioGrid& grid) {
    return PlanEvaluator(params, set, grid).evaluate(scenarios, kInfiniteConfidence, false).certified.loss;
}

/// F(x_i) for one query: similarity- and exposure-weighted mean deviation of
/// the map from the query's own outcome.
inline double fluctuation(const NetParams& params, const std::vector<Scenario>& scenarios, const PerformanceMap& map,
                          const ScenarioGrid& grid, std::size_t i) {
    require(i < scenarios.size(), "fluctuation: query index out of range");
    require(map.size() == grid.size(), "fluctuation: map not aligned with grid");
    KeyCache keys(params, grid);
    std::vector<UnitCoords> u;
    for (const auto& s : scenarios) u.push_back(normalize_coords(s));
    ForwardPass pass(params, u, keys, grid.exposure());
    const auto& S = pass.similarity();
    const double own = map.values[grid.nearest_cell(scenarios[i])];
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
        double sp = S(Eigen::Index(i), Eigen::Index(j)) * grid.exposure()[j];
        num += (map.values[j] - own) * sp;
        den += sp;
    }
    if (!(den > 0.0)) throw NumericalError("fluctuation: zero similarity mass for query " + std::to_string(i));
    return num / den;
}

inline double objective(const NetParams& params, const std::vector<Scenario>& scenarios, const SurrogateSet& set,
                        const ScenarioGrid& grid, double w_M) {
    require(w_M > 0.0, "objective: w_M must be > 0 or infinite");
    return PlanEvaluator(params, set, grid).evaluate(scenarios, w_M, false).objective;
}

namespace detail {

inline std::vector<Scenario> to_scenarios(const std::vector<UnitCoords>& u) {
    std::vector<Scenario> out;
    for (const auto& x : u) out.push_back(denormalize_coords(x));
    return out;
}

}  // namespace detail

/// Multi-restart projected descent. Each step moves the scenario with the
/// largest gradient by `learning_rate` in unit coordinates and the others
/// proportionally; coordinates are clamped to the unit square. A restart
/// reports the best iterate it visited.
inline FstPlan optimize(const PlanEvaluator& evaluator, const CriticalSampler& sampler, const OptimizeConfig& cfg) {
    cfg.validate();
    const auto& grid = evaluator.grid();
    std::optional<std::vector<Scenario>> best_set;
    double best_objective = std::numeric_limits<double>::infinity();
    FstPlan plan;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
        RestartRecord rec;
        rec.index = r;
        rec.seed = derive_seed(cfg.seed, "restart", r);
        std::vector<UnitCoords> u;
        for (const auto& s : sample_fst_set(sampler, grid, cfg.n, rec.seed)) u.push_back(normalize_coords(s));
        try {
            auto current = detail::to_scenarios(u);
            auto eval = evaluator.evaluate(current, cfg.w_M, cfg.steps > 0);
            rec.initial_objective = eval.objective;
            rec.initial_certified_loss = eval.certified.loss;
            double restart_best = eval.objective;
            auto restart_best_set = current;
            for (std::size_t step = 0; step < cfg.steps; ++step) {
                double g_max = 0.0;
                for (const auto& g : eval.grad_unit) g_max = std::max(g_max, std::hypot(g[0], g[1]));
                if (!(g_max > 0.0)) break;
                for (std::size_t i = 0; i < u.size(); ++i)
                    for (int d = 0; d < 2; ++d)
                        u[i][d] = std::clamp(u[i][d] - cfg.learning_rate * eval.grad_unit[i][d] / g_max, 0.0, 1.0);
                current = detail::to_scenarios(u);
                eval = evaluator.evaluate(current, cfg.w_M, step + 1 < cfg.steps);
                if (eval.objective < restart_best) {
                    restart_best = eval.objective;
                    restart_best_set = current;
                }
            }
            rec.best_objective = restart_best;
            if (restart_best < best_objective) {
                best_objective = restart_best;
                best_set = restart_best_set;
                plan.restart_index = r;
            }
        } catch (const NumericalError& e) {
            rec.failed = true;
            rec.failure = e.what();
        }
        plan.restarts.push_back(rec);
    }
    if (!best_set) throw NumericalError("optimize: every restart failed");
    // Recompute from the stored coordinates so the plan is self-consistent.
    auto final_eval = evaluator.evaluate(*best_set, cfg.w_M, false);
    plan.scenarios = *best_set;
    plan.weights = final_eval.weights;
    plan.certified_loss = final_eval.certified.loss;
    plan.objective_value = final_eval.objective;
    plan.w_M = cfg.w_M;
    plan.seed = cfg.seed;
    return plan;
}

inline FstPlan optimize(const NetParams& params, const SurrogateSet& set, const ScenarioGrid& grid,
                        const CriticalSampler& sampler, const OptimizeConfig& cfg) {
    return optimize(PlanEvaluator(params, set, grid), sampler, cfg);
}

/// Fused estimate for a subject given as an outcome map (nearest-cell lookup).
inline double execute_plan(const FstPlan& plan, const PerformanceMap& subject, const ScenarioGrid& grid) {
    require(plan.weights.size() == plan.scenarios.size(), "execute_plan: malformed plan");
    require(subject.size() == grid.size(), "execute_plan: subject map not aligned with grid");
    std::vector<double> outcomes;
    for (const auto& s : plan.scenarios) outcomes.push_back(subject.values[grid.nearest_cell(s)]);
    return fuse_estimate(plan.weights, outcomes);
}

/// Fused estimate for a simulated subject, run at the exact stored coordinates.
inline double execute_plan(const FstPlan& plan, const IdmParams& subject, const EpisodeConfig& cfg) {
    require(plan.weights.size() == plan.scenarios.size(), "execute_plan: malformed plan");
    std::vector<double> outcomes;
    for (std::size_t i = 0; i < plan.scenarios.size(); ++i) {
        try {
            outcomes.push_back(simulate_episode(plan.scenarios[i], subject, cfg));
        } catch (const std::exception& e) {
            throw NumericalError("execute_plan: scenario " + std::to_string(i) + ": " + e.what());
        }
    }
    return fuse_estimate(plan.weights, outcomes);
}

}  // namespace fst
