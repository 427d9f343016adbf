#pragma once

// Repeated-trial evaluation: naturalistic (crude Monte Carlo) testing,
// uniform randomized-QMC testing, FST testing, and the experiment drivers
// built on them (method comparison, bound check, ablation, cross-n).

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fst/common.hpp"
#include "fst/cutin_sim.hpp"
#include "fst/fst_optimizer.hpp"
#include "fst/fst_trainer.hpp"
#include "fst/model_set.hpp"
#include "fst/scenario_space.hpp"

namespace fst {

/// Runs fn(i) for i in [0, count) on up to `threads` workers. Each index is
/// handled exactly once; the first exception (by index) is rethrown.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, unsigned(std::max<std::size_t>(count, 1))));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < count; i += threads) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Statistics

/// The ceil(q*T)-th smallest value (1-based).
inline double order_statistic(std::vector<double> values, double q) {
    require(!values.empty(), "order_statistic: no values");
    require(q > 0.0 && q <= 1.0, "order_statistic: q must be in (0, 1]");
    std::sort(values.begin(), values.end());
    auto rank = std::size_t(std::ceil(q * double(values.size()) - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

struct TrialStats {
    std::string subject;
    std::string method;
    std::size_t n = 0;
    std::size_t trials = 0;
    double ground_truth = 0.0;
    double mean_estimate = 0.0;
    double average_abs_error = 0.0;
    double estimator_variance = 0.0;  // population variance of the estimates
    double max_error_q99 = 0.0;
    double relative_average_error = 0.0;
    double relative_variance = 0.0;  // variance / mu^2
    double relative_max_error_q99 = 0.0;
    std::vector<double> errors;       // per trial, in trial order

    static std::string csv_header() {
        return "subject,method,n,trials,ground_truth,mean_estimate,average_abs_error,estimator_variance,"
               "max_error_q99,relative_average_error,relative_variance,relative_max_error_q99";
    }

    std::string csv_row() const {
        return subject + "," + method + "," + std::to_string(n) + "," + std::to_string(trials) + "," +
               format_double(ground_truth) + "," + format_double(mean_estimate) + "," +
               format_double(average_abs_error) + "," + format_double(estimator_variance) + "," +
               format_double(max_error_q99) + "," + format_double(relative_average_error) + "," +
               format_double(relative_variance) + "," + format_double(relative_max_error_q99);
    }

    nlohmann::json to_json() const {
        return {{"subject", subject},
                {"method", method},
                {"n", n},
                {"trials", trials},
                {"ground_truth", ground_truth},
                {"mean_estimate", mean_estimate},
                {"average_abs_error", average_abs_error},
                {"estimator_variance", estimator_variance},
                {"max_error_q99", max_error_q99},
                {"relative_average_error", relative_average_error},
                {"relative_variance", relative_variance},
                {"relative_max_error_q99", relative_max_error_q99}};
    }
};

inline TrialStats summarize_trials(const std::vector<double>& estimates, double mu) {
    require(!estimates.empty(), "summarize_trials: no trials");
    TrialStats s;
    s.trials = estimates.size();
    s.ground_truth = mu;
    const double T = double(estimates.size());
    double mean = 0.0;
    for (double e : estimates) mean += e;
    mean /= T;
    double var = 0.0, abs_err = 0.0;
    for (double e : estimates) {
        var += (e - mean) * (e - mean);
        abs_err += std::abs(e - mu);
        s.errors.push_back(std::abs(e - mu));
    }
    s.mean_estimate = mean;
    s.estimator_variance = var / T;
    s.average_abs_error = abs_err / T;
    s.max_error_q99 = order_statistic(s.errors, 0.99);
    if (mu > 0.0) {
        s.relative_average_error = s.average_abs_error / mu;
        s.relative_variance = s.estimator_variance / (mu * mu);
        s.relative_max_error_q99 = s.max_error_q99 / mu;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Naturalistic testing

/// Inverse-CDF sampler over the fixed cell order.
class NdeSampler {
public:
    explicit NdeSampler(const ScenarioGrid& grid) : cdf_(grid.size()) {
        std::partial_sum(grid.exposure().begin(), grid.exposure().end(), cdf_.begin());
    }

    std::size_t draw(Rng& rng) const {
        double u = std::uniform_real_distribution<double>(0.0, cdf_.back())(rng);
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return std::min<std::size_t>(std::size_t(it - cdf_.begin()), cdf_.size() - 1);
    }

    /// Crude Monte Carlo estimate: mean outcome over n i.i.d. exposure draws.
    double trial(const PerformanceMap& subject, std::size_t n, std::uint64_t seed) const {
        require(n >= 1, "nde_trial: n must be >= 1");
        require(subject.size() == cdf_.size(), "nde_trial: subject map not aligned with grid");
        Rng rng(seed);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += subject.values[draw(rng)];
        return sum / double(n);
    }

private:
    std::vector<double> cdf_;
};

inline double nde_trial(const PerformanceMap& subject, const ScenarioGrid& grid, std::size_t n, std::uint64_t seed) {
    return NdeSampler(grid).trial(subject, n, seed);
}

/// Exact moments of the crude Monte Carlo estimator for a binary subject:
/// the crash count is Binomial(n, mu).
struct BinomialStats {
    double average_abs_error = 0.0;
    double estimator_variance = 0.0;
    double max_error_q99 = 0.0;
    double zero_probability = 0.0;
};

inline BinomialStats nde_analytic(double mu, std::size_t n) {
    require(mu >= 0.0 && mu <= 1.0, "nde_analytic: mu must be in [0, 1]");
    require(n >= 1, "nde_analytic: n must be >= 1");
    BinomialStats out;
    out.estimator_variance = mu * (1.0 - mu) / double(n);
    out.zero_probability = std::pow(1.0 - mu, double(n));
    std::vector<std::pair<double, double>> err_mass;
    for (std::size_t k = 0; k <= n; ++k) {
        double log_pmf = std::lgamma(double(n) + 1) - std::lgamma(double(k) + 1) - std::lgamma(double(n - k) + 1);
        double pmf;
        if (mu == 0.0)
            pmf = k == 0 ? 1.0 : 0.0;
        else if (mu == 1.0)
            pmf = k == n ? 1.0 : 0.0;
        else
            pmf = std::exp(log_pmf + double(k) * std::log(mu) + double(n - k) * std::log1p(-mu));
        double e = std::abs(double(k) / double(n) - mu);
        out.average_abs_error += pmf * e;
        err_mass.emplace_back(e, pmf);
    }
    std::sort(err_mass.begin(), err_mass.end());
    double acc = 0.0;
    for (const auto& [e, m] : err_mass) {
        acc += m;
        out.max_error_q99 = e;
        if (acc >= 0.99 - 1e-12) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Uniform randomized-QMC testing

/// Radical inverse of `index` in `base`.
inline double halton(std::uint64_t index, unsigned base) {
    double f = 1.0, r = 0.0;
    while (index > 0) {
        f /= double(base);
        r += f * double(index % base);
        index /= base;
    }
    return r;
}

/// First n points of the (2, 3) Halton sequence under a random toroidal shift.
inline std::vector<UnitCoords> rqmc_points(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    double a = U(rng), b = U(rng);
    std::vector<UnitCoords> pts(n);
    for (std::size_t i = 0; i < n; ++i) {
        double x = halton(i, 2) + a, y = halton(i, 3) + b;
        pts[i] = {x - std::floor(x), y - std::floor(y)};
    }
    return pts;
}

/// Importance estimate under a uniform proposal over cells:
/// sum_i outcome * p(cell) * N / n.
inline double uniform_estimate(const PerformanceMap& subject, const ScenarioGrid& grid,
                               const std::vector<UnitCoords>& points) {
    require(!points.empty(), "uniform_trial: n must be >= 1");
    require(subject.size() == grid.size(), "uniform_trial: subject map not aligned with grid");
    double sum = 0.0;
    for (const auto& u : points) {
        auto k = grid.cell_of_tile(u);
        sum += subject.values[k] * grid.exposure()[k];
    }
    return sum * double(grid.size()) / double(points.size());
}

inline double uniform_trial(const PerformanceMap& subject, const ScenarioGrid& grid, std::size_t n,
                            std::uint64_t seed) {
    require(n >= 1, "uniform_trial: n must be >= 1");
    return uniform_estimate(subject, grid, rqmc_points(n, seed));
}

// ---------------------------------------------------------------------------
// Methods

struct Subject {
    std::string name;
    PerformanceMap map;
    double ground_truth = 0.0;
};

/// A testing method. One call to trial() fixes the test set for a seed; the
/// returned estimator is then applied to every subject, so all subjects see
/// the same scenarios in a given trial.
class Method {
public:
    virtual ~Method() = default;
    virtual std::string name() const = 0;
    virtual std::function<double(const PerformanceMap&)> trial(std::size_t n, std::uint64_t seed) const = 0;
};

class NdeMethod : public Method {
public:
    explicit NdeMethod(const ScenarioGrid& grid) : sampler_(grid) {}
    std::string name() const override { return "nde"; }
    std::function<double(const PerformanceMap&)> trial(std::size_t n, std::uint64_t seed) const override {
        return [this, n, seed](const PerformanceMap& m) { return sampler_.trial(m, n, seed); };
    }

private:
    NdeSampler sampler_;
};

class UniformMethod : public Method {
public:
    explicit UniformMethod(const ScenarioGrid& grid) : grid_(&grid) {}
    std::string name() const override { return "uniform"; }
    std::function<double(const PerformanceMap&)> trial(std::size_t n, std::uint64_t seed) const override {
        auto pts = rqmc_points(n, seed);
        return [this, pts](const PerformanceMap& m) { return uniform_estimate(m, *grid_, pts); };
    }

private:
    const ScenarioGrid* grid_;
};

/// Optimized plans keyed by (configuration tag, n, seed). Lets several
/// experiments share identical optimizer runs.
class PlanCache {
public:
    using Key = std::tuple<std::string, std::size_t, std::uint64_t>;

    FstPlan get_or_compute(const Key& key, const std::function<FstPlan()>& compute) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            auto it = plans_.find(key);
            if (it != plans_.end()) return it->second;
        }
        FstPlan plan = compute();
        std::lock_guard<std::mutex> lock(mutex_);
        return plans_.emplace(key, std::move(plan)).first->second;
    }

    std::size_t size() const {
        std::lock_guard<std::mutex> lock(mutex_);
        return plans_.size();
    }

private:
    mutable std::mutex mutex_;
    std::map<Key, FstPlan> plans_;
};

/// Cache tag for the optimizer settings that determine a plan besides n and seed.
inline std::string fst_cache_tag(const OptimizeConfig& cfg, const std::string& prefix = "") {
    return prefix + "restarts=" + std::to_string(cfg.restarts) + ",steps=" + std::to_string(cfg.steps) +
           ",lr=" + format_double(cfg.learning_rate) + ",w_M=" + format_double(cfg.w_M);
}

/// FST testing: each trial optimizes a fresh plan from a seeded random
/// initialization. The config's n and seed are overridden per trial.
class FstMethod : public Method {
public:
    FstMethod(std::string name, const PlanEvaluator& evaluator, const CriticalSampler& sampler, OptimizeConfig cfg,
              std::shared_ptr<PlanCache> cache = nullptr, std::string cache_tag = "")
        : name_(std::move(name)),
          evaluator_(&evaluator),
          sampler_(&sampler),
          cfg_(cfg),
          cache_(std::move(cache)),
          tag_(std::move(cache_tag)) {
        cfg_.validate();
    }

    std::string name() const override { return name_; }

    FstPlan plan(std::size_t n, std::uint64_t seed) const {
        OptimizeConfig c = cfg_;
        c.n = n;
        c.seed = seed;
        auto compute = [&] { return optimize(*evaluator_, *sampler_, c); };
        if (!cache_) return compute();
        return cache_->get_or_compute({tag_, n, seed}, compute);
    }

    std::function<double(const PerformanceMap&)> trial(std::size_t n, std::uint64_t seed) const override {
        auto p = std::make_shared<FstPlan>(plan(n, seed));
        const ScenarioGrid* grid = &evaluator_->grid();
        return [p, grid](const PerformanceMap& m) { return execute_plan(*p, m, *grid); };
    }

private:
    std::string name_;
    const PlanEvaluator* evaluator_;
    const CriticalSampler* sampler_;
    OptimizeConfig cfg_;
    std::shared_ptr<PlanCache> cache_;
    std::string tag_;
};

/// A released plan executed as is; every trial returns the same estimate.
class FixedPlanMethod : public Method {
public:
    FixedPlanMethod(std::string name, FstPlan plan, const ScenarioGrid& grid)
        : name_(std::move(name)), plan_(std::move(plan)), grid_(&grid) {}
    std::string name() const override { return name_; }
    std::function<double(const PerformanceMap&)> trial(std::size_t, std::uint64_t) const override {
        return [this](const PerformanceMap& m) { return execute_plan(plan_, m, *grid_); };
    }

private:
    std::string name_;
    FstPlan plan_;
    const ScenarioGrid* grid_;
};

/// Named methods available to the comparison; extra baselines register here.
class MethodRegistry {
public:
    void add(std::shared_ptr<Method> m) {
        require(m != nullptr, "method registry: null method");
        auto name = m->name();
        require(!methods_.count(name), "method registry: duplicate method '" + name + "'");
        order_.push_back(name);
        methods_[name] = std::move(m);
    }

    bool contains(const std::string& name) const { return methods_.count(name) > 0; }

    const Method& get(const std::string& name) const {
        auto it = methods_.find(name);
        if (it == methods_.end()) throw ValidationError("unknown method '" + name + "'");
        return *it->second;
    }

    const std::vector<std::string>& names() const { return order_; }

private:
    std::map<std::string, std::shared_ptr<Method>> methods_;
    std::vector<std::string> order_;
};

/// Seed of trial t for a (method, n) cell. Methods are keyed by name so that
/// differently named runs of the same method are independent.
inline std::uint64_t trial_seed(std::uint64_t base_seed, const std::string& method, std::size_t n, std::size_t t) {
    return derive_seed(derive_seed(base_seed, method + "/n=" + std::to_string(n)), "trial", t);
}

/// Runs `trials` seeded trials of one method at size n and summarizes them per
/// subject, in subject order.
inline std::vector<TrialStats> run_trials(const Method& method, const std::vector<Subject>& subjects, std::size_t n,
                                          std::size_t trials, std::uint64_t base_seed, unsigned threads = 1,
                                          const std::string& seed_label = "") {
    require(trials >= 1, "run_trials: trials must be >= 1");
    require(n >= 1, "run_trials: n must be >= 1");
    require(!subjects.empty(), "run_trials: no subjects");
    const std::string label = seed_label.empty() ? method.name() : seed_label;
    std::vector<std::vector<double>> est(subjects.size(), std::vector<double>(trials));
    parallel_for(trials, threads, [&](std::size_t t) {
        auto estimator = method.trial(n, trial_seed(base_seed, label, n, t));
        for (std::size_t s = 0; s < subjects.size(); ++s) {
            double e = estimator(subjects[s].map);
            require_finite(e, method.name() + " estimate");
            est[s][t] = e;
        }
    });
    std::vector<TrialStats> out;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
        auto st = summarize_trials(est[s], subjects[s].ground_truth);
        st.subject = subjects[s].name;
        st.method = method.name();
        st.n = n;
        out.push_back(std::move(st));
    }
    return out;
}

inline TrialStats run_trials(const Method& method, const Subject& subject, std::size_t n, std::size_t trials,
                             std::uint64_t base_seed, unsigned threads = 1) {
    return run_trials(method, std::vector<Subject>{subject}, n, trials, base_seed, threads).front();
}

// ---------------------------------------------------------------------------
// Method comparison

inline constexpr int kHistogramBinsPerDecade = 4;
inline constexpr double kHistogramFloor = -12.0;  // log10 of errors below 1e-12

inline double log10_error_bin(double error) {
    double l = error > 0.0 ? std::max(std::log10(error), kHistogramFloor) : kHistogramFloor;
    return std::floor(l * kHistogramBinsPerDecade) / kHistogramBinsPerDecade;
}

/// Log-binned error counts for one (subject, n), CSV `log10_error_bin,method,count`.
inline std::string error_histogram_csv(const std::vector<TrialStats>& rows) {
    std::string out = "log10_error_bin,method,count\n";
    for (const auto& r : rows) {
        std::map<double, std::size_t> bins;
        for (double e : r.errors) ++bins[log10_error_bin(e)];
        for (const auto& [b, c] : bins) out += format_double(b) + "," + r.method + "," + std::to_string(c) + "\n";
    }
    return out;
}

struct CompareReport {
    std::vector<TrialStats> rows;  // subject-major, then n, then method order

    const TrialStats& find(const std::string& subject, const std::string& method, std::size_t n) const {
        for (const auto& r : rows)
            if (r.subject == subject && r.method == method && r.n == n) return r;
        throw ValidationError("compare report: no row for " + subject + "/" + method + "/n=" + std::to_string(n));
    }

    std::string csv() const {
        std::string out = TrialStats::csv_header() + "\n";
        for (const auto& r : rows) out += r.csv_row() + "\n";
        return out;
    }

    /// Histogram CSV for one (subject, n) across methods.
    std::string histogram_csv(const std::string& subject, std::size_t n) const {
        std::vector<TrialStats> sel;
        for (const auto& r : rows)
            if (r.subject == subject && r.n == n) sel.push_back(r);
        return error_histogram_csv(sel);
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["variance_definition"] =
            "population variance of the estimates; the variance of absolute errors is not reported";
        j["rows"] = nlohmann::json::array();
        for (const auto& r : rows) {
            auto row = r.to_json();
            std::map<double, std::size_t> bins;
            for (double e : r.errors) ++bins[log10_error_bin(e)];
            row["histogram"] = nlohmann::json::array();
            for (const auto& [b, c] : bins) row["histogram"].push_back({{"log10_error_bin", b}, {"count", c}});
            j["rows"].push_back(row);
        }
        return j;
    }
};

inline CompareReport compare_methods(const MethodRegistry& registry, const std::vector<std::string>& methods,
                                     const std::vector<Subject>& subjects, const std::vector<std::size_t>& n_values,
                                     std::size_t trials, std::uint64_t seed, unsigned threads = 1) {
    require(!methods.empty(), "compare_methods: no methods");
    require(!n_values.empty(), "compare_methods: no n values");
    // cell[(method, n)] -> per-subject stats
    std::map<std::pair<std::string, std::size_t>, std::vector<TrialStats>> cells;
    for (const auto& m : methods)
        for (auto n : n_values) cells[{m, n}] = run_trials(registry.get(m), subjects, n, trials, seed, threads);
    CompareReport report;
    for (std::size_t s = 0; s < subjects.size(); ++s)
        for (auto n : n_values)
            for (const auto& m : methods) report.rows.push_back(cells.at({m, n})[s]);
    return report;
}

// ---------------------------------------------------------------------------
// Upper-bound check over the surrogate hull

struct BoundReport {
    std::size_t draws = 0;
    std::size_t violations = 0;
    double certified_loss = 0.0;
    double max_error = 0.0;
    double max_ratio = 0.0;           // max error / certified_loss
    double max_relative_error = 0.0;  // max error / member truth
    std::vector<double> worst_weights;
    std::vector<double> first_violation_weights;

    nlohmann::json to_json() const {
        return {{"draws", draws},
                {"violations", violations},
                {"certified_loss", certified_loss},
                {"max_error", max_error},
                {"max_ratio", max_ratio},
                {"max_relative_error", max_relative_error},
                {"worst_weights", worst_weights},
                {"first_violation_weights", first_violation_weights}};
    }
};

/// Executes the plan on `draws` uniform members of the hull and compares each
/// error with the plan's certified loss. A tolerance of 1e-12 absorbs the
/// rounding of the convex combination.
inline BoundReport bound_experiment(const FstPlan& plan, const SurrogateSet& set, const ScenarioGrid& grid,
                                    std::size_t draws, std::uint64_t seed) {
    require(draws >= 1, "bound_experiment: draws must be >= 1");
    require(std::isinf(plan.w_M), "bound_experiment: plan must be optimized with the fluctuation term disabled");
    BoundReport r;
    r.draws = draws;
    r.certified_loss = plan.certified_loss;
    for (std::size_t d = 0; d < draws; ++d) {
        auto c = sample_member(set, derive_seed(seed, "member", d));
        double mu = member_ground_truth(set, c);
        double err = std::abs(execute_plan(plan, combine(set, c), grid) - mu);
        if (err > r.max_error) {
            r.max_error = err;
            r.worst_weights = c.c;
        }
        if (mu > 0.0) r.max_relative_error = std::max(r.max_relative_error, err / mu);
        if (err > plan.certified_loss + 1e-12) {
            if (r.violations == 0) r.first_violation_weights = c.c;
            ++r.violations;
        }
    }
    r.max_ratio = plan.certified_loss > 0.0 ? r.max_error / plan.certified_loss : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Ablation and cross-n generalization

struct AblationRow {
    std::string config;
    bool optimization = true;
    bool fluctuation = true;
    TrialStats stats;
};

struct AblationReport {
    std::vector<AblationRow> rows;

    std::string csv() const {
        std::string out = "config,optimization,fluctuation," + TrialStats::csv_header() + "\n";
        for (const auto& r : rows)
            out += r.config + "," + (r.optimization ? "on" : "off") + "," + (r.fluctuation ? "on" : "off") + "," +
                   r.stats.csv_row() + "\n";
        return out;
    }
};

struct AblationSpec {
    std::string name;
    bool optimization = true;
    bool fluctuation = true;
};

inline std::vector<AblationSpec> default_ablation_specs() {
    return {{"full", true, true}, {"no_fluctuation", true, false}, {"no_optimization", false, true}};
}

/// Toggles the optimization module (off = one random critical-distribution
/// initialization executed directly) and the fluctuation term (off = w_M
/// infinite). `base.w_M` is the confidence used when fluctuation is on.
inline AblationReport ablation_run(const PlanEvaluator& evaluator, const CriticalSampler& sampler,
                                   const std::vector<Subject>& subjects, const std::vector<AblationSpec>& specs,
                                   const OptimizeConfig& base, std::size_t n, std::size_t trials, std::uint64_t seed,
                                   unsigned threads = 1, std::shared_ptr<PlanCache> cache = nullptr,
                                   const std::string& cache_prefix = "") {
    require(!std::isinf(base.w_M), "ablation_run: base w_M must be finite so the fluctuation toggle matters");
    AblationReport report;
    for (const auto& spec : specs) {
        OptimizeConfig cfg = base;
        if (!spec.fluctuation) cfg.w_M = kInfiniteConfidence;
        if (!spec.optimization) {
            cfg.steps = 0;
            cfg.restarts = 1;
        }
        FstMethod method(spec.name, evaluator, sampler, cfg, cache, fst_cache_tag(cfg, cache_prefix));
        auto stats = run_trials(method, subjects, n, trials, seed, threads, "fst");
        for (auto& st : stats) report.rows.push_back({spec.name, spec.optimization, spec.fluctuation, std::move(st)});
    }
    return report;
}

struct CrossNRow {
    std::size_t train_n = 0;
    std::size_t test_n = 0;
    TrialStats stats;
};

struct CrossNReport {
    std::vector<CrossNRow> rows;

    std::string csv() const {
        std::string out = "train_n,test_n," + TrialStats::csv_header() + "\n";
        for (const auto& r : rows)
            out += std::to_string(r.train_n) + "," + std::to_string(r.test_n) + "," + r.stats.csv_row() + "\n";
        return out;
    }
};

/// One trained network (with its critical sampler) per training n.
struct TrainedNetwork {
    std::size_t train_n = 0;
    const PlanEvaluator* evaluator = nullptr;
    const CriticalSampler* sampler = nullptr;
    std::string cache_prefix;  // identifies the network in a shared plan cache
};

inline CrossNReport cross_n_experiment(const std::vector<TrainedNetwork>& networks,
                                       const std::vector<std::size_t>& test_n, const std::vector<Subject>& subjects,
                                       const OptimizeConfig& cfg, std::size_t trials, std::uint64_t seed,
                                       unsigned threads = 1, std::shared_ptr<PlanCache> cache = nullptr) {
    require(!networks.empty() && !test_n.empty(), "cross_n_experiment: empty train or test list");
    CrossNReport report;
    for (const auto& net : networks) {
        require(net.evaluator && net.sampler, "cross_n_experiment: incomplete network entry");
        FstMethod method("fst", *net.evaluator, *net.sampler, cfg, cache, fst_cache_tag(cfg, net.cache_prefix));
        for (auto n : test_n) {
            auto stats = run_trials(method, subjects, n, trials, seed, threads, "fst");
            for (auto& st : stats) report.rows.push_back({net.train_n, n, std::move(st)});
        }
    }
    return report;
}

}  // namespace fst
