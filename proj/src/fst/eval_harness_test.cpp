#include "fst/eval_harness.hpp"

#include <gtest/gtest.h>

#include <numeric>

#include "fst/testing.hpp"

namespace fst {
namespace {

Subject subject_of(std::string name, PerformanceMap map, const ScenarioGrid& grid) {
    double mu = ground_truth(map, grid);
    return {std::move(name), std::move(map), mu};
}

TEST(OrderStatistic, NinetyNinthOfAHundred) {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    std::reverse(v.begin(), v.end());
    EXPECT_EQ(order_statistic(v, 0.99), 99.0);
    EXPECT_EQ(order_statistic(v, 1.0), 100.0);
    EXPECT_EQ(order_statistic({5.0}, 0.99), 5.0);
    std::vector<double> thousand(1000);
    std::iota(thousand.begin(), thousand.end(), 0.0);
    EXPECT_EQ(order_statistic(thousand, 0.99), 989.0);
    EXPECT_THROW(order_statistic({}, 0.5), ValidationError);
}

TEST(SummarizeTrials, DefinitionsOnAHandExample) {
    auto s = summarize_trials({0.0, 0.2, 0.4, 0.2}, 0.1);
    EXPECT_NEAR(s.mean_estimate, 0.2, 1e-15);
    EXPECT_NEAR(s.average_abs_error, (0.1 + 0.1 + 0.3 + 0.1) / 4, 1e-15);
    EXPECT_NEAR(s.estimator_variance, (0.04 + 0 + 0.04 + 0) / 4, 1e-15);
    EXPECT_NEAR(s.max_error_q99, 0.3, 1e-15);
    EXPECT_NEAR(s.relative_average_error, 1.5, 1e-12);
    EXPECT_NEAR(s.relative_variance, 2.0, 1e-12);
    for (double e : s.errors) EXPECT_GE(e, 0.0);
}

TEST(Nde, AllOnesAndZeros) {
    auto grid = testing::random_grid(6, 5, 1);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        EXPECT_EQ(nde_trial(PerformanceMap{std::vector<double>(grid.size(), 1.0)}, grid, 7, seed), 1.0);
        EXPECT_EQ(nde_trial(PerformanceMap{std::vector<double>(grid.size(), 0.0)}, grid, 7, seed), 0.0);
    }
}

TEST(Nde, SamplerFollowsExposure) {
    auto grid = testing::random_grid(3, 2, 2);
    NdeSampler sampler(grid);
    Rng rng(3);
    const int draws = 200000;
    std::vector<int> hits(grid.size(), 0);
    for (int i = 0; i < draws; ++i) ++hits[sampler.draw(rng)];
    for (std::size_t k = 0; k < grid.size(); ++k) {
        double p = grid.exposure()[k];
        EXPECT_NEAR(hits[k], draws * p, 3 * std::sqrt(draws * p * (1 - p)));
    }
}

TEST(Nde, UnbiasedOverManyTrials) {
    auto grid = testing::random_grid(6, 5, 4);
    auto s = subject_of("s", testing::random_map(grid.size(), 0.3, 5), grid);
    const std::size_t n = 5, trials = 100000;
    NdeSampler sampler(grid);
    double sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) sum += sampler.trial(s.map, n, derive_seed(6, "t", t));
    double se = std::sqrt(s.ground_truth * (1 - s.ground_truth) / double(n * trials));
    EXPECT_NEAR(sum / double(trials), s.ground_truth, 3 * se);
}

TEST(Nde, RareCrashesAreMostlyMissed) {
    const auto& d = testing::DefaultSetup::get();
    auto s = subject_of("AV-3", d.subjects[2], d.grid);
    ASSERT_LT(s.ground_truth, 1.5e-3);
    auto stats = run_trials(NdeMethod(d.grid), s, 10, 1000, 7);
    std::size_t zeros = 0;
    for (double e : stats.errors) zeros += e == s.ground_truth;
    EXPECT_GE(zeros, 980u);
}

TEST(Nde, RelativeErrorIsLargeForTheDefaultSubject) {
    const auto& d = testing::DefaultSetup::get();
    auto s = subject_of("AV-1", d.subjects[0], d.grid);
    for (std::size_t n : {5, 10, 20}) {
        EXPECT_GT(run_trials(NdeMethod(d.grid), s, n, 1000, 8).relative_average_error, 1.5) << "n=" << n;
        EXPECT_GT(nde_analytic(s.ground_truth, n).average_abs_error / s.ground_truth, 1.5) << "n=" << n;
    }
}

TEST(Nde, AnalyticMomentsMatchSimulation) {
    const auto& d = testing::DefaultSetup::get();
    auto s = subject_of("AV-1", d.subjects[0], d.grid);
    const std::size_t n = 10, trials = 40000;
    auto sim = run_trials(NdeMethod(d.grid), s, n, trials, 9);
    auto exact = nde_analytic(s.ground_truth, n);
    EXPECT_NEAR(exact.estimator_variance, s.ground_truth * (1 - s.ground_truth) / n, 1e-18);
    EXPECT_NEAR(sim.estimator_variance, exact.estimator_variance, 0.05 * exact.estimator_variance);
    EXPECT_NEAR(sim.average_abs_error, exact.average_abs_error, 0.05 * exact.average_abs_error);
    EXPECT_NEAR(sim.max_error_q99, exact.max_error_q99, 1e-12);
    std::size_t zeros = 0;
    for (double e : sim.errors) zeros += e == s.ground_truth;
    double pz = exact.zero_probability;
    EXPECT_NEAR(double(zeros) / trials, pz, 3 * std::sqrt(pz * (1 - pz) / trials));
}

TEST(Nde, AnalyticEdgeCases) {
    auto zero = nde_analytic(0.0, 10);
    EXPECT_EQ(zero.average_abs_error, 0.0);
    EXPECT_EQ(zero.zero_probability, 1.0);
    auto half = nde_analytic(0.5, 1);
    EXPECT_NEAR(half.average_abs_error, 0.5, 1e-15);
    EXPECT_NEAR(half.estimator_variance, 0.25, 1e-15);
    EXPECT_NEAR(half.max_error_q99, 0.5, 1e-15);
    EXPECT_THROW(nde_analytic(1.5, 3), ValidationError);
}

TEST(Uniform, HaltonRadicalInverse) {
    EXPECT_EQ(halton(0, 2), 0.0);
    EXPECT_EQ(halton(1, 2), 0.5);
    EXPECT_EQ(halton(3, 2), 0.75);
    EXPECT_NEAR(halton(5, 3), 7.0 / 9.0, 1e-15);
    for (const auto& u : rqmc_points(500, 3)) {
        EXPECT_GE(u[0], 0.0);
        EXPECT_LT(u[0], 1.0);
        EXPECT_GE(u[1], 0.0);
        EXPECT_LT(u[1], 1.0);
    }
}

TEST(Uniform, FullCoverageOfAllCellsIsExact) {
    auto grid = testing::random_grid(7, 5, 10);
    std::vector<UnitCoords> centers;
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t i = 0; i < 7; ++i) centers.push_back({(i + 0.5) / 7.0, (j + 0.5) / 5.0});
    EXPECT_NEAR(uniform_estimate(PerformanceMap{std::vector<double>(grid.size(), 1.0)}, grid, centers), 1.0, 1e-12);
    auto m = testing::random_map(grid.size(), 0.4, 11);
    EXPECT_NEAR(uniform_estimate(m, grid, centers), ground_truth(m, grid), 1e-12);
    EXPECT_EQ(uniform_trial(PerformanceMap{std::vector<double>(grid.size(), 0.0)}, grid, 9, 1), 0.0);
}

TEST(Uniform, RandomShiftIsUnbiased) {
    const auto& d = testing::DefaultSetup::get();
    auto s = subject_of("AV-1", d.subjects[0], d.grid);
    auto stats = run_trials(UniformMethod(d.grid), s, 10, 1000, 12);
    double se = std::sqrt(stats.estimator_variance / 1000.0);
    EXPECT_NEAR(stats.mean_estimate, s.ground_truth, 3 * se);
}

TEST(Uniform, UnbiasedOnASmallMapOverManyTrials) {
    auto grid = testing::random_grid(6, 5, 13);
    auto s = subject_of("s", testing::random_map(grid.size(), 0.3, 14), grid);
    auto stats = run_trials(UniformMethod(grid), s, 4, 100000, 15);
    EXPECT_NEAR(stats.mean_estimate, s.ground_truth, 3 * std::sqrt(stats.estimator_variance / 100000.0));
}

class HarnessTest : public ::testing::Test {
protected:
    ScenarioGrid grid = testing::random_grid(10, 8, 201);
    SurrogateSet set = testing::random_set(grid, 3, 202);
    NetParams params = testing::small_net(203);
    CriticalSampler sampler = build_sampler(grid, set, 4, 204);
    PlanEvaluator evaluator{params, set, grid};
    std::vector<Subject> subjects{subject_of("a", testing::random_map(grid.size(), 0.2, 205), grid),
                                  subject_of("b", combine(set, sample_member(set, 206)), grid)};

    OptimizeConfig small_cfg(double w_M = 1.0) const {
        OptimizeConfig c;
        c.restarts = 2;
        c.steps = 10;
        c.w_M = w_M;
        return c;
    }
};

TEST_F(HarnessTest, FixedPlanHasZeroVariance) {
    auto plan = optimize(evaluator, sampler, [&] {
        auto c = small_cfg();
        c.n = 5;
        return c;
    }());
    auto stats = run_trials(FixedPlanMethod("fixed", plan, grid), subjects, 5, 100, 1);
    for (const auto& s : stats) {
        ASSERT_EQ(s.errors.size(), 100u);
        for (double e : s.errors) EXPECT_EQ(e, s.errors.front());
        EXPECT_EQ(s.max_error_q99, s.errors.front());
        // Summary moments only carry the rounding of a 100-term sum.
        EXPECT_LE(s.estimator_variance, 1e-28);
        EXPECT_NEAR(s.average_abs_error, s.errors.front(), 1e-15);
        EXPECT_NEAR(s.average_abs_error, std::abs(s.mean_estimate - s.ground_truth), 1e-15);
    }
}

TEST_F(HarnessTest, TrialsAreIndependentOfThreadCount) {
    auto cache = std::make_shared<PlanCache>();
    FstMethod fst("fst", evaluator, sampler, small_cfg());
    for (const Method* m : std::vector<const Method*>{&fst}) {
        auto a = run_trials(*m, subjects, 4, 12, 2, 1);
        auto b = run_trials(*m, subjects, 4, 12, 2, 3);
        for (std::size_t s = 0; s < a.size(); ++s) EXPECT_EQ(a[s].csv_row(), b[s].csv_row());
    }
    UniformMethod uni(grid);
    EXPECT_EQ(run_trials(uni, subjects, 7, 50, 3, 1)[1].csv_row(), run_trials(uni, subjects, 7, 50, 3, 4)[1].csv_row());
}

TEST_F(HarnessTest, PlanCacheReusesPlans) {
    auto cache = std::make_shared<PlanCache>();
    FstMethod a("fst", evaluator, sampler, small_cfg(), cache, "tag");
    auto p1 = a.plan(4, 11);
    auto p2 = a.plan(4, 11);
    EXPECT_EQ(cache->size(), 1u);
    EXPECT_EQ(p1.to_json(), p2.to_json());
    EXPECT_EQ(p1.to_json(), FstMethod("fst", evaluator, sampler, small_cfg()).plan(4, 11).to_json());
    a.plan(5, 11);
    EXPECT_EQ(cache->size(), 2u);
    EXPECT_NE(fst_cache_tag(small_cfg(1.0)), fst_cache_tag(small_cfg(kInfiniteConfidence)));
}

TEST_F(HarnessTest, CompareSingleCellAndLayout) {
    MethodRegistry reg;
    reg.add(std::make_shared<NdeMethod>(grid));
    reg.add(std::make_shared<UniformMethod>(grid));
    EXPECT_THROW(reg.add(std::make_shared<NdeMethod>(grid)), ValidationError);
    auto one = compare_methods(reg, {"nde"}, {subjects[0]}, {5}, 100, 1);
    ASSERT_EQ(one.rows.size(), 1u);
    EXPECT_EQ(one.rows[0].method, "nde");
    EXPECT_THROW(compare_methods(reg, {"fst"}, subjects, {5}, 100, 1), ValidationError);

    auto full = compare_methods(reg, {"nde", "uniform"}, subjects, {3, 6}, 100, 1);
    ASSERT_EQ(full.rows.size(), 8u);
    EXPECT_EQ(full.rows[0].subject, "a");
    EXPECT_EQ(full.rows[1].method, "uniform");
    EXPECT_EQ(full.rows[2].n, 6u);
    EXPECT_EQ(full.rows[4].subject, "b");
    auto csv = full.csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), TrialStats::csv_header());
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
    EXPECT_EQ(full.find("b", "nde", 3).csv_row(), full.rows[4].csv_row());

    // Histogram counts add up to the trial count per method.
    auto hist = full.histogram_csv("a", 3);
    std::map<std::string, std::size_t> per_method;
    auto lines = split(hist, '\n');
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto f = split(lines[i], ',');
        per_method[f[1]] += std::stoul(f[2]);
    }
    EXPECT_EQ(per_method["nde"], 100u);
    EXPECT_EQ(per_method["uniform"], 100u);
}

TEST(Histogram, LogBins) {
    EXPECT_EQ(log10_error_bin(0.0), kHistogramFloor);
    EXPECT_EQ(log10_error_bin(1e-20), kHistogramFloor);
    EXPECT_EQ(log10_error_bin(1e-3), -3.0);
    EXPECT_EQ(log10_error_bin(2e-3), -2.75);
    EXPECT_EQ(log10_error_bin(0.5), -0.5);
}

TEST_F(HarnessTest, BoundExperimentHasNoViolations) {
    auto cfg = small_cfg(kInfiniteConfidence);
    cfg.n = 6;
    auto plan = optimize(evaluator, sampler, cfg);
    auto report = bound_experiment(plan, set, grid, 1000, 5);
    EXPECT_EQ(report.violations, 0u);
    EXPECT_LE(report.max_error, plan.certified_loss + 1e-12);
    EXPECT_LE(report.max_ratio, 1.0 + 1e-9);
    EXPECT_GT(report.max_relative_error, 0.0);
    EXPECT_EQ(report.worst_weights.size(), set.size());
    auto one = bound_experiment(plan, set, grid, 1, 6);
    EXPECT_EQ(one.violations, 0u);
    EXPECT_THROW(bound_experiment(optimize(evaluator, sampler, [&] {
                                      auto c = small_cfg(1.0);
                                      c.n = 3;
                                      return c;
                                  }()),
                                  set, grid, 10, 1),
                 ValidationError);
}

TEST_F(HarnessTest, AblationIsDeterministicAndShaped) {
    auto base = small_cfg(1.0);
    auto a = ablation_run(evaluator, sampler, subjects, default_ablation_specs(), base, 4, 20, 7);
    auto b = ablation_run(evaluator, sampler, subjects, default_ablation_specs(), base, 4, 20, 7);
    EXPECT_EQ(a.csv(), b.csv());
    ASSERT_EQ(a.rows.size(), 6u);
    EXPECT_EQ(a.rows[0].config, "full");
    EXPECT_EQ(a.rows[2].config, "no_fluctuation");
    EXPECT_FALSE(a.rows[4].optimization);
    // Shared cache with the same seeds reproduces the uncached report.
    auto cache = std::make_shared<PlanCache>();
    EXPECT_EQ(ablation_run(evaluator, sampler, subjects, default_ablation_specs(), base, 4, 20, 7, 2, cache).csv(),
              a.csv());
    EXPECT_THROW(ablation_run(evaluator, sampler, subjects, default_ablation_specs(), small_cfg(kInfiniteConfidence),
                              4, 20, 7),
                 ValidationError);
}

TEST_F(HarnessTest, CrossNGridAndCompositionConsistency) {
    NetParams other = testing::small_net(300);
    PlanEvaluator other_eval(other, set, grid);
    std::vector<TrainedNetwork> nets{{2, &evaluator, &sampler, "net_n2/"}, {5, &other_eval, &sampler, "net_n5/"}};
    auto cfg = small_cfg(1.0);
    auto report = cross_n_experiment(nets, {2, 5}, subjects, cfg, 10, 8);
    ASSERT_EQ(report.rows.size(), 2u * 2u * subjects.size());
    std::set<std::pair<std::size_t, std::size_t>> cells;
    for (const auto& r : report.rows) cells.insert({r.train_n, r.test_n});
    EXPECT_TRUE(cells.count({2, 2}) && cells.count({5, 5}));
    // The (5, 5) entry equals a standalone run of the same network and seeds.
    auto alone = run_trials(FstMethod("fst", other_eval, sampler, cfg), subjects, 5, 10, 8);
    for (const auto& r : report.rows) {
        if (r.train_n != 5 || r.test_n != 5) continue;
        auto it = std::find_if(alone.begin(), alone.end(), [&](const auto& s) { return s.subject == r.stats.subject; });
        ASSERT_NE(it, alone.end());
        EXPECT_EQ(r.stats.csv_row(), it->csv_row());
    }
}

}  // namespace
}  // namespace fst
