#pragma once

// Similarity-network training over test sets drawn from a critical
// distribution: k-means clusters of the grid in (coordinates, surrogate
// outcomes) feature space, one cell sampled per chosen cluster.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "fst/certified_loss.hpp"
#include "fst/common.hpp"
#include "fst/model_set.hpp"
#include "fst/scenario_space.hpp"
#include "fst/similarity_net.hpp"

namespace fst {

struct CriticalSampler {
    std::size_t k = 0;
    std::vector<std::size_t> assignment;          // per grid cell
    std::vector<std::vector<std::size_t>> members; // per cluster, ascending cell index

    std::string to_csv(const ScenarioGrid& grid) const {
        std::string out = "r,rdot,cluster\n";
        for (std::size_t c = 0; c < assignment.size(); ++c)
            out += format_double(grid.cell(c).range_m) + "," + format_double(grid.cell(c).range_rate_mps) + "," +
                   std::to_string(assignment[c]) + "\n";
        return out;
    }

    /// Reads the to_csv form back; rows must follow the grid's cell order.
    static CriticalSampler from_csv(const std::filesystem::path& path, const ScenarioGrid& grid) {
        auto rows = read_csv(path, "r,rdot,cluster");
        if (rows.size() != grid.size()) throw ArtifactError(path.string() + ": row count does not match the grid");
        CriticalSampler s;
        for (std::size_t c = 0; c < rows.size(); ++c) {
            if (std::abs(parse_double(rows[c][0]) - grid.cell(c).range_m) > 1e-9 ||
                std::abs(parse_double(rows[c][1]) - grid.cell(c).range_rate_mps) > 1e-9)
                throw ArtifactError(path.string() + ": row " + std::to_string(c) + " is not at its grid cell");
            s.assignment.push_back(std::size_t(std::stoul(rows[c][2])));
            s.k = std::max(s.k, s.assignment.back() + 1);
        }
        s.members.assign(s.k, {});
        for (std::size_t c = 0; c < s.assignment.size(); ++c) s.members[s.assignment[c]].push_back(c);
        for (std::size_t j = 0; j < s.k; ++j)
            if (s.members[j].empty()) throw ArtifactError(path.string() + ": cluster " + std::to_string(j) + " is empty");
        return s;
    }
};

namespace detail {

inline double squared_distance(const std::vector<double>& a, const double* b) {
    double s = 0.0;
    for (std::size_t d = 0; d < a.size(); ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
    return s;
}

/// Lloyd iterations with k-means++ seeding. Points are rows of `points`.
/// Returns the cluster id per point; no cluster is left empty.
inline std::vector<std::size_t> kmeans(const std::vector<std::vector<double>>& points, std::size_t k,
                                       std::uint64_t seed, int max_iterations = 100) {
    const std::size_t count = points.size(), dim = points.front().size();
    Rng rng(seed);
    std::vector<std::vector<double>> centers;
    centers.push_back(points[std::uniform_int_distribution<std::size_t>(0, count - 1)(rng)]);
    std::vector<double> d2(count, std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        double total = 0.0;
        for (std::size_t p = 0; p < count; ++p) {
            d2[p] = std::min(d2[p], squared_distance(points[p], centers.back().data()));
            total += d2[p];
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double target = std::uniform_real_distribution<double>(0.0, total)(rng);
            double acc = 0.0;
            for (pick = 0; pick + 1 < count; ++pick) {
                acc += d2[pick];
                if (acc > target && d2[pick] > 0.0) break;
            }
        } else {
            pick = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
        }
        centers.push_back(points[pick]);
    }

    std::vector<std::size_t> label(count, 0);
    auto assign = [&] {
        bool changed = false;
        for (std::size_t p = 0; p < count; ++p) {
            std::size_t best = 0;
            double best_d = squared_distance(points[p], centers[0].data());
            for (std::size_t c = 1; c < k; ++c) {
                double d = squared_distance(points[p], centers[c].data());
                if (d < best_d) best_d = d, best = c;
            }
            changed |= label[p] != best;
            label[p] = best;
        }
        return changed;
    };
    auto update = [&] {
        std::vector<std::size_t> sizes(k, 0);
        for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
        for (std::size_t p = 0; p < count; ++p) {
            ++sizes[label[p]];
            for (std::size_t d = 0; d < dim; ++d) centers[label[p]][d] += points[p][d];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (sizes[c] > 0)
                for (double& v : centers[c]) v /= double(sizes[c]);
        // Empty clusters take the point of the largest cluster farthest from its center.
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] > 0) continue;
            auto largest = std::size_t(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
            std::size_t far = count;
            double far_d = -1.0;
            for (std::size_t p = 0; p < count; ++p) {
                if (label[p] != largest) continue;
                double d = squared_distance(points[p], centers[largest].data());
                if (d > far_d) far_d = d, far = p;
            }
            label[far] = c;
            --sizes[largest];
            sizes[c] = 1;
            centers[c] = points[far];
        }
    };
    assign();
    for (int it = 0; it < max_iterations; ++it) {
        update();
        if (!assign()) break;
    }
    update();  // repairs any cluster emptied by the last assignment
    return label;
}

}  // namespace detail

/// Clusters the grid on [R/90, (Rdot+20)/30, scale*P_1, ..., scale*P_s].
inline CriticalSampler build_sampler(const ScenarioGrid& grid, const SurrogateSet& set, std::size_t k,
                                     std::uint64_t seed, double performance_scale = 1.0) {
    require(k >= 1, "build_sampler: k must be >= 1");
    require(k <= grid.size(), "build_sampler: k must not exceed the number of grid cells");
    require(set.cells() == grid.size(), "build_sampler: surrogate maps not aligned with grid");
    std::vector<std::vector<double>> features(grid.size());
    for (std::size_t c = 0; c < grid.size(); ++c) {
        auto u = normalize_coords(grid.cell(c));
        features[c] = {u[0], u[1]};
        for (const auto& m : set.vertex_maps()) features[c].push_back(performance_scale * m.values[c]);
    }
    CriticalSampler sampler;
    sampler.k = k;
    sampler.assignment = detail::kmeans(features, k, seed);
    sampler.members.assign(k, {});
    for (std::size_t c = 0; c < grid.size(); ++c) sampler.members[sampler.assignment[c]].push_back(c);
    return sampler;
}

/// One uniformly drawn cell from each of n clusters: distinct clusters chosen
/// uniformly when n <= k, clusters cycled in order when n > k.
inline std::vector<std::size_t> sample_fst_cells(const CriticalSampler& sampler, std::size_t n, std::uint64_t seed) {
    require(sampler.k >= 1 && sampler.members.size() == sampler.k, "sample_fst_set: empty sampler");
    require(n >= 1, "sample_fst_set: n must be >= 1");
    Rng rng(seed);
    std::vector<std::size_t> clusters;
    if (n <= sampler.k) {
        std::vector<std::size_t> ids(sampler.k);
        std::iota(ids.begin(), ids.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto j = std::uniform_int_distribution<std::size_t>(i, sampler.k - 1)(rng);
            std::swap(ids[i], ids[j]);
        }
        clusters.assign(ids.begin(), ids.begin() + long(n));
        std::sort(clusters.begin(), clusters.end());
    } else {
        for (std::size_t i = 0; i < n; ++i) clusters.push_back(i % sampler.k);
    }
    std::vector<std::size_t> cells;
    for (auto c : clusters) {
        const auto& m = sampler.members[c];
        require(!m.empty(), "sample_fst_set: empty cluster");
        cells.push_back(m[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)]);
    }
    return cells;
}

inline std::vector<Scenario> sample_fst_set(const CriticalSampler& sampler, const ScenarioGrid& grid, std::size_t n,
                                            std::uint64_t seed) {
    std::vector<Scenario> out;
    for (auto c : sample_fst_cells(sampler, n, seed)) out.push_back(grid.cell(c));
    return out;
}

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batches_per_epoch = 10;
    std::size_t sets_per_batch = 4;
    double learning_rate = 0.3;
    double momentum = 0.9;
    double clip_norm = 1.0;           // global gradient-norm cap; 0 disables
    double final_lr_fraction = 0.05;  // cosine decay from learning_rate to this fraction of it
    std::size_t n_train = 5;
    std::uint64_t seed = 0;

    double learning_rate_at(std::size_t epoch) const {
        if (epochs <= 1) return learning_rate;
        double t = double(epoch) / double(epochs - 1);
        double f = final_lr_fraction + (1.0 - final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
        return learning_rate * f;
    }

    void validate() const {
        require(epochs >= 1 && batches_per_epoch >= 1 && sets_per_batch >= 1, "train: counts must be positive");
        require(n_train >= 1, "train: n_train must be >= 1");
        require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train: learning_rate must be >= 0");
        require(momentum >= 0.0 && momentum < 1.0, "train: momentum must be in [0, 1)");
        require(clip_norm >= 0.0 && std::isfinite(clip_norm), "train: clip_norm must be >= 0");
        require(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0, "train: final_lr_fraction must be in [0, 1]");
    }
};

struct TrainResult {
    NetParams params;
    std::vector<double> epoch_loss;

    std::string loss_csv() const {
        std::string out = "epoch,mean_loss\n";
        for (std::size_t e = 0; e < epoch_loss.size(); ++e)
            out += std::to_string(e) + "," + format_double(epoch_loss[e]) + "\n";
        return out;
    }
};

/// Mean worst-vertex loss and its parameter gradient over a batch of test sets,
/// sharing one encoding of the grid keys.
struct BatchLoss {
    double mean_loss = 0.0;
    NetParams grad;
};

inline BatchLoss batch_loss(const NetParams& params, const ScenarioGrid& grid, const std::vector<PerformanceMap>& maps,
                            const std::vector<double>& truths, const std::vector<std::vector<std::size_t>>& sets,
                            bool with_grad = true) {
    KeyCache keys(params, grid);
    BatchLoss out;
    if (with_grad) out.grad = params.zeros_like();
    Eigen::MatrixXd grad_keys = Eigen::MatrixXd::Zero(keys.features().rows(), keys.features().cols());
    const double scale = 1.0 / double(sets.size());
    for (const auto& cells : sets) {
        std::vector<UnitCoords> u;
        for (auto c : cells) u.push_back(normalize_coords(grid.cell(c)));
        ForwardPass pass(params, u, keys, grid.exposure());
        auto outcomes = lookup_outcomes(maps, truths, cells);
        auto value = worst_vertex_loss(pass.weights(), outcomes);
        out.mean_loss += scale * value.loss;
        if (with_grad) {
            auto g = worst_vertex_loss_grad(value, outcomes);
            for (double& v : g) v *= scale;
            pass.accumulate_param_gradient(g, out.grad, grad_keys);
        }
    }
    if (with_grad) encoder_backward(params, keys.trace, grad_keys, &out.grad);
    return out;
}

/// Momentum gradient descent on the expected worst-vertex loss, with
/// global-norm clipping and a cosine learning-rate schedule.
inline TrainResult train(NetParams params, const SurrogateSet& set, const ScenarioGrid& grid,
                         const CriticalSampler& sampler, const TrainConfig& cfg) {
    cfg.validate();
    params.validate();
    require(set.cells() == grid.size(), "train: surrogate maps not aligned with grid");
    TrainResult result;
    std::vector<double> velocity(params.parameter_count(), 0.0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.learning_rate_at(epoch);
        double epoch_sum = 0.0;
        for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
            std::uint64_t batch_seed = derive_seed(cfg.seed, "batch", epoch * cfg.batches_per_epoch + b);
            std::vector<std::vector<std::size_t>> sets;
            for (std::size_t s = 0; s < cfg.sets_per_batch; ++s)
                sets.push_back(sample_fst_cells(sampler, cfg.n_train, derive_seed(batch_seed, "set", s)));
            auto batch = batch_loss(params, grid, set.vertex_maps(), set.vertex_ground_truths(), sets);
            if (!std::isfinite(batch.mean_loss))
                throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b));
            epoch_sum += batch.mean_loss;
            auto flat = params.flatten();
            auto grad = batch.grad.flatten();
            double norm = std::sqrt(std::inner_product(grad.begin(), grad.end(), grad.begin(), 0.0));
            require_finite(norm, "train: gradient norm");
            double g_scale = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
            for (std::size_t i = 0; i < flat.size(); ++i) {
                velocity[i] = cfg.momentum * velocity[i] + g_scale * grad[i];
                flat[i] -= lr * velocity[i];
            }
            params.unflatten(flat);
        }
        result.epoch_loss.push_back(epoch_sum / double(cfg.batches_per_epoch));
    }
    params.seed_lineage.push_back(cfg.seed);
    result.params = std::move(params);
    return result;
}

}  // namespace fst
