#pragma once

// Cross-attention similarity network.
//
// Scenarios are encoded by a tanh MLP. Test scenarios act as queries and every
// grid cell acts as a key; the raw score is the reciprocal feature distance,
// and a softmax over the *queries* turns each key column into a partition of
// unity. Fusion weights are the exposure-weighted row sums of that matrix.
//
// Gradients are hand-derived reverse mode, with respect to both network
// parameters and the (unit-square) query coordinates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fst/common.hpp"
#include "fst/scenario_space.hpp"

namespace fst {

struct DenseLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
};

struct NetArchitecture {
    std::vector<int> hidden{64, 64};
    int feature_dim = 16;

    void validate() const {
        require(feature_dim >= 1, "network: feature_dim must be >= 1");
        for (int h : hidden) require(h >= 1, "network: hidden widths must be >= 1");
    }
};

struct NetParams {
    std::vector<DenseLayer> layers;
    double temperature = 1.0;
    double epsilon_dist = 1e-3;
    std::vector<std::uint64_t> seed_lineage;

    static NetParams initialize(const NetArchitecture& arch, std::uint64_t seed, double temperature = 1.0,
                                double epsilon_dist = 1e-3) {
        arch.validate();
        NetParams p;
        p.temperature = temperature;
        p.epsilon_dist = epsilon_dist;
        p.seed_lineage = {seed};
        Rng rng(seed);
        int fan_in = 2;
        auto widths = arch.hidden;
        widths.push_back(arch.feature_dim);
        for (int fan_out : widths) {
            double bound = std::sqrt(6.0 / double(fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-bound, bound);
            DenseLayer layer{Eigen::MatrixXd(fan_out, fan_in), Eigen::VectorXd::Zero(fan_out)};
            for (int r = 0; r < fan_out; ++r)
                for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = dist(rng);
            p.layers.push_back(std::move(layer));
            fan_in = fan_out;
        }
        p.validate();
        return p;
    }

    /// Same shapes, all entries zero. Used as a gradient accumulator.
    NetParams zeros_like() const {
        NetParams z;
        z.temperature = temperature;
        z.epsilon_dist = epsilon_dist;
        for (const auto& l : layers)
            z.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                                Eigen::VectorXd::Zero(l.bias.size())});
        return z;
    }

    int feature_dim() const { return int(layers.back().weight.rows()); }

    void validate() const {
        require(!layers.empty(), "network: at least one layer required");
        require(temperature > 0.0 && std::isfinite(temperature), "network: temperature must be > 0");
        require(epsilon_dist > 0.0 && std::isfinite(epsilon_dist), "network: epsilon_dist must be > 0");
        Eigen::Index in = 2;
        for (const auto& l : layers) {
            require(l.weight.cols() == in && l.bias.size() == l.weight.rows(), "network: layer shapes inconsistent");
            require(l.weight.allFinite() && l.bias.allFinite(), "network: parameters must be finite");
            in = l.weight.rows();
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += std::size_t(l.weight.size() + l.bias.size());
        return n;
    }

    /// Flat view in layer order: weights (column-major) then bias.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto& l : layers) {
            out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
            out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
        }
        return out;
    }

    void unflatten(const std::vector<double>& flat) {
        require(flat.size() == parameter_count(), "network: flat parameter size mismatch");
        std::size_t at = 0;
        for (auto& l : layers) {
            std::copy_n(flat.begin() + long(at), l.weight.size(), l.weight.data());
            at += std::size_t(l.weight.size());
            std::copy_n(flat.begin() + long(at), l.bias.size(), l.bias.data());
            at += std::size_t(l.bias.size());
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        nlohmann::json hidden = nlohmann::json::array();
        for (std::size_t i = 0; i + 1 < layers.size(); ++i) hidden.push_back(layers[i].weight.rows());
        j["architecture"] = {{"input", 2},
                             {"hidden", hidden},
                             {"feature_dim", feature_dim()},
                             {"activation", "tanh"},
                             {"output", "linear"}};
        j["temperature"] = temperature;
        j["epsilon_dist"] = epsilon_dist;
        j["seed_lineage"] = seed_lineage;
        j["layers"] = nlohmann::json::array();
        for (const auto& l : layers) {
            std::vector<double> w;  // row-major
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
            j["layers"].push_back({{"rows", l.weight.rows()},
                                   {"cols", l.weight.cols()},
                                   {"weights", w},
                                   {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
        }
        return j;
    }

    static NetParams from_json(const nlohmann::json& j) {
        NetParams p;
        p.temperature = j.at("temperature").get<double>();
        p.epsilon_dist = j.at("epsilon_dist").get<double>();
        p.seed_lineage = j.value("seed_lineage", std::vector<std::uint64_t>{});
        for (const auto& lj : j.at("layers")) {
            auto rows = lj.at("rows").get<Eigen::Index>();
            auto cols = lj.at("cols").get<Eigen::Index>();
            auto w = lj.at("weights").get<std::vector<double>>();
            auto b = lj.at("bias").get<std::vector<double>>();
            if (w.size() != std::size_t(rows * cols) || b.size() != std::size_t(rows))
                throw ArtifactError("network json: layer arrays do not match declared shape");
            DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = 0; c < cols; ++c) layer.weight(r, c) = w[std::size_t(r * cols + c)];
                layer.bias(r) = b[std::size_t(r)];
            }
            p.layers.push_back(std::move(layer));
        }
        try {
            p.validate();
        } catch (const ValidationError& e) {
            throw ArtifactError(std::string("network json: ") + e.what());
        }
        return p;
    }
};

inline void check_finite(const Eigen::MatrixXd& m, const char* op) {
    if (!m.allFinite()) throw NumericalError(std::string("non-finite intermediate in ") + op);
}

/// Encoder activations for one batch of points (columns).
struct EncoderTrace {
    std::vector<Eigen::MatrixXd> activations;  // [0] = inputs (2 x M), last = features (d x M)

    const Eigen::MatrixXd& features() const { return activations.back(); }
};

inline Eigen::MatrixXd unit_matrix(const std::vector<UnitCoords>& points) {
    Eigen::MatrixXd x(2, Eigen::Index(points.size()));
    for (std::size_t k = 0; k < points.size(); ++k) {
        x(0, Eigen::Index(k)) = points[k][0];
        x(1, Eigen::Index(k)) = points[k][1];
    }
    return x;
}

inline EncoderTrace encode_trace(const NetParams& params, Eigen::MatrixXd inputs) {
    EncoderTrace trace;
    trace.activations.push_back(std::move(inputs));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& layer = params.layers[l];
        Eigen::MatrixXd z = layer.weight * trace.activations.back();
        z.colwise() += layer.bias;
        if (l + 1 < params.layers.size()) z = z.array().tanh().matrix();
        check_finite(z, "encode");
        trace.activations.push_back(std::move(z));
    }
    return trace;
}

/// Feature matrix with one row per scenario (rows x d).
inline Eigen::MatrixXd encode(const NetParams& params, const std::vector<Scenario>& scenarios) {
    params.validate();
    std::vector<UnitCoords> u;
    u.reserve(scenarios.size());
    for (const auto& s : scenarios) u.push_back(normalize_coords(s));
    return encode_trace(params, unit_matrix(u)).features().transpose();
}

/// Backpropagates d(loss)/d(features) through the encoder. Parameter
/// gradients are accumulated into `grads` when non-null; the input gradient
/// (2 x M) is returned.
inline Eigen::MatrixXd encoder_backward(const NetParams& params, const EncoderTrace& trace, Eigen::MatrixXd grad_out,
                                        NetParams* grads) {
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& a_prev = trace.activations[l];
        if (l + 1 < params.layers.size())
            grad_out.array() *= 1.0 - trace.activations[l + 1].array().square();
        if (grads) {
            grads->layers[l].weight.noalias() += grad_out * a_prev.transpose();
            grads->layers[l].bias += grad_out.rowwise().sum();
        }
        grad_out = params.layers[l].weight.transpose() * grad_out;
        check_finite(grad_out, "encoder backward");
    }
    return grad_out;
}

/// Column-stochastic n x N similarity matrix.
using SimilarityMatrix = Eigen::MatrixXd;

/// Fusion weights, one per query; non-negative and summing to one.
using FusionWeights = std::vector<double>;

/// Query/key attention with reciprocal-distance scores.
struct AttentionTrace {
    Eigen::MatrixXd queries;                // d x n
    const Eigen::MatrixXd* keys = nullptr;  // d x N, owned by the caller
    Eigen::MatrixXd dist;                   // n x N
    SimilarityMatrix S;                     // n x N
};

// Pairs whose squared distance falls below this fraction of |q|^2 + |k|^2 are
// recomputed from the difference vector; the expanded form loses digits there.
inline constexpr double kNearPairFraction = 1e-2;

/// `keys` must outlive the returned trace.
inline AttentionTrace attend(const NetParams& params, Eigen::MatrixXd queries, const Eigen::MatrixXd& keys) {
    AttentionTrace t;
    t.queries = std::move(queries);
    t.keys = &keys;
    const auto& Q = t.queries;
    const Eigen::Index n = Q.cols(), N = keys.cols();
    require(n >= 1, "similarity: at least one query required");
    require(Q.rows() == keys.rows(), "similarity: query and key feature sizes differ");
    const Eigen::VectorXd qn = Q.colwise().squaredNorm().transpose();
    const Eigen::RowVectorXd kn = keys.colwise().squaredNorm();
    t.dist.noalias() = -2.0 * (Q.transpose() * keys);
    t.S.resize(n, N);
    const double inv_t = 1.0 / params.temperature;
    for (Eigen::Index j = 0; j < N; ++j) {
        double* d = t.dist.col(j).data();
        double* s = t.S.col(j).data();
        double top = -INFINITY;
        for (Eigen::Index i = 0; i < n; ++i) {
            double d2 = d[i] + qn(i) + kn(j);
            if (d2 < kNearPairFraction * (qn(i) + kn(j))) d2 = (Q.col(i) - keys.col(j)).squaredNorm();
            d[i] = std::sqrt(std::max(d2, 0.0));
            s[i] = inv_t / (params.epsilon_dist + d[i]);
            top = std::max(top, s[i]);
        }
        // Terms below e^-40 of the largest vanish against it in double precision.
        double z = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            double x = s[i] - top;
            z += (s[i] = x > -40.0 ? std::exp(x) : 0.0);
        }
        for (Eigen::Index i = 0; i < n; ++i) s[i] /= z;
    }
    check_finite(t.S, "similarity");
    return t;
}

/// Gradients of the attention output S with respect to Q and K, given dL/dS.
/// Coincident query/key features have an undefined direction; they get zero.
inline void attention_backward(const NetParams& params, const AttentionTrace& t, const Eigen::MatrixXd& grad_S,
                               Eigen::MatrixXd& grad_Q, Eigen::MatrixXd* grad_K) {
    const auto& Q = t.queries;
    const auto& K = *t.keys;
    const Eigen::Index n = Q.cols(), N = K.cols();
    // c_ij = dL/d(dist_ij) / dist_ij, so that dL/dq_i = sum_j c_ij (q_i - k_j).
    Eigen::MatrixXd C(n, N);
    const double inv_t = 1.0 / params.temperature;
    for (Eigen::Index j = 0; j < N; ++j) {
        const double* s = t.S.col(j).data();
        const double* g = grad_S.col(j).data();
        const double* d = t.dist.col(j).data();
        double* c = C.col(j).data();
        double mean = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) mean += s[i] * g[i];
        for (Eigen::Index i = 0; i < n; ++i) {
            double g_logit = s[i] * (g[i] - mean);
            if (g_logit == 0.0 || d[i] == 0.0) {
                c[i] = 0.0;
                continue;
            }
            double denom = params.epsilon_dist + d[i];
            c[i] = -g_logit * inv_t / (denom * denom * d[i]);
        }
    }
    const Eigen::VectorXd row_sum = C.rowwise().sum();
    grad_Q = Q * row_sum.asDiagonal();
    grad_Q.noalias() -= K * C.transpose();
    if (grad_K) {
        const Eigen::VectorXd col_sum = C.colwise().sum().transpose();
        *grad_K = K * col_sum.asDiagonal();
        grad_K->noalias() -= Q * C;
    }
    check_finite(grad_Q, "attention backward");
}

/// w_i = sum_j S_ij p_j.
inline FusionWeights fusion_weights(const SimilarityMatrix& S, const std::vector<double>& exposure) {
    require(std::size_t(S.cols()) == exposure.size(), "fusion_weights: similarity columns must match grid cells");
    Eigen::Map<const Eigen::VectorXd> p(exposure.data(), Eigen::Index(exposure.size()));
    Eigen::VectorXd w = S * p;
    return FusionWeights(w.data(), w.data() + w.size());
}

inline FusionWeights fusion_weights(const SimilarityMatrix& S, const ScenarioGrid& grid) {
    return fusion_weights(S, grid.exposure());
}

inline double fuse_estimate(const FusionWeights& w, const std::vector<double>& outcomes) {
    require(w.size() == outcomes.size(), "fuse_estimate: weights and outcomes differ in length");
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * outcomes[i];
    return sum;
}

/// Weights whose fused estimate is `target`, for any target between the
/// smallest and largest outcome: all mass on the two bracketing extremes,
/// split by linear interpolation.
inline FusionWeights attaining_weights(const std::vector<double>& outcomes, double target) {
    require(!outcomes.empty(), "attaining_weights: no outcomes");
    auto [lo_it, hi_it] = std::minmax_element(outcomes.begin(), outcomes.end());
    const double lo = *lo_it, hi = *hi_it;
    require(target >= lo && target <= hi, "attaining_weights: target outside [min, max] of outcomes");
    FusionWeights w(outcomes.size(), 0.0);
    auto i = std::size_t(lo_it - outcomes.begin()), j = std::size_t(hi_it - outcomes.begin());
    if (hi == lo) {
        w[i] = 1.0;
        return w;
    }
    double t = (target - lo) / (hi - lo);
    w[j] = t;
    w[i] += 1.0 - t;
    return w;
}

/// Encoded grid keys for a fixed parameter set, reusable across query sets.
struct KeyCache {
    EncoderTrace trace;

    KeyCache() = default;
    KeyCache(const NetParams& params, const ScenarioGrid& grid) {
        std::vector<UnitCoords> u;
        u.reserve(grid.size());
        for (const auto& c : grid.cells()) u.push_back(normalize_coords(c));
        trace = encode_trace(params, unit_matrix(u));
    }

    const Eigen::MatrixXd& features() const { return trace.features(); }
};

struct Gradients {
    NetParams params;                     // empty layers when not requested
    std::vector<UnitCoords> query_unit;   // d/d(normalized coordinates)
    std::vector<Scenario> query_physical; // d/d(range), d/d(range rate)
};

/// One recorded forward pass: encoder over queries, attention against the
/// cached keys, fusion weights.
class ForwardPass {
public:
    ForwardPass(const NetParams& params, const std::vector<UnitCoords>& queries, const KeyCache& keys,
                const std::vector<double>& exposure)
        : params_(&params), keys_(&keys), exposure_(&exposure) {
        require(!queries.empty(), "similarity: at least one query required");
        require(std::size_t(keys.features().cols()) == exposure.size(), "similarity: keys and exposure differ");
        query_trace_ = encode_trace(params, unit_matrix(queries));
        attention_ = attend(params, query_trace_.features(), keys.features());
        weights_ = fusion_weights(attention_.S, exposure);
    }

    const SimilarityMatrix& similarity() const { return attention_.S; }
    const FusionWeights& weights() const { return weights_; }
    std::size_t queries() const { return weights_.size(); }

    /// Backward from dL/dw. With `wrt_params` the key encoder is also
    /// differentiated, which costs a full pass over the grid.
    Gradients backward_weights(const std::vector<double>& grad_w, bool wrt_params) const {
        require(grad_w.size() == weights_.size(), "backward: gradient seed size mismatch");
        Eigen::Map<const Eigen::VectorXd> g(grad_w.data(), Eigen::Index(grad_w.size()));
        Eigen::Map<const Eigen::RowVectorXd> p(exposure_->data(), Eigen::Index(exposure_->size()));
        return backward_similarity(g * p, wrt_params);
    }

    /// Backward from a full dL/dS seed.
    Gradients backward_similarity(const Eigen::MatrixXd& grad_S, bool wrt_params) const {
        Gradients out;
        Eigen::MatrixXd grad_Q, grad_K;
        attention_backward(*params_, attention_, grad_S, grad_Q, wrt_params ? &grad_K : nullptr);
        if (wrt_params) out.params = params_->zeros_like();
        Eigen::MatrixXd grad_in = encoder_backward(*params_, query_trace_, grad_Q, wrt_params ? &out.params : nullptr);
        if (wrt_params) encoder_backward(*params_, keys_->trace, grad_K, &out.params);
        for (Eigen::Index i = 0; i < grad_in.cols(); ++i) {
            out.query_unit.push_back({grad_in(0, i), grad_in(1, i)});
            out.query_physical.push_back({grad_in(0, i) / (kRangeMax - kRangeMin),
                                          grad_in(1, i) / (kRangeRateMax - kRangeRateMin)});
        }
        return out;
    }

    /// Adds the parameter gradient of the query path into `grads` and the key
    /// feature gradient into `grad_keys`, leaving the key encoder backward to
    /// the caller so several passes can share it.
    void accumulate_param_gradient(const std::vector<double>& grad_w, NetParams& grads,
                                   Eigen::MatrixXd& grad_keys) const {
        require(grad_w.size() == weights_.size(), "backward: gradient seed size mismatch");
        Eigen::Map<const Eigen::VectorXd> g(grad_w.data(), Eigen::Index(grad_w.size()));
        Eigen::Map<const Eigen::RowVectorXd> p(exposure_->data(), Eigen::Index(exposure_->size()));
        Eigen::MatrixXd grad_Q, grad_K;
        attention_backward(*params_, attention_, g * p, grad_Q, &grad_K);
        encoder_backward(*params_, query_trace_, grad_Q, &grads);
        grad_keys += grad_K;
    }

    /// Gradient of sum_i w_i * outcomes[i] scaled by `seed`, outcomes held constant.
    Gradients backward(const std::vector<double>& outcomes, double seed, bool wrt_params) const {
        require(outcomes.size() == weights_.size(), "backward: outcome count mismatch");
        std::vector<double> g(outcomes.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = seed * outcomes[i];
        return backward_weights(g, wrt_params);
    }

private:
    const NetParams* params_;
    const KeyCache* keys_;
    const std::vector<double>* exposure_;
    EncoderTrace query_trace_;
    AttentionTrace attention_;
    FusionWeights weights_;
};

/// Similarity between each query scenario and every grid cell.
inline SimilarityMatrix similarity(const NetParams& params, const std::vector<Scenario>& queries,
                                   const ScenarioGrid& grid) {
    params.validate();
    require(!queries.empty(), "similarity: at least one query required");
    std::vector<UnitCoords> u;
    for (const auto& q : queries) u.push_back(normalize_coords(q));
    KeyCache keys(params, grid);
    return ForwardPass(params, u, keys, grid.exposure()).similarity();
}

/// CSV `r,rdot,query_index,similarity`, one row per (cell, query).
inline std::string similarity_csv(const SimilarityMatrix& S, const ScenarioGrid& grid) {
    std::string out = "r,rdot,query_index,similarity\n";
    for (Eigen::Index j = 0; j < S.cols(); ++j)
        for (Eigen::Index i = 0; i < S.rows(); ++i)
            out += format_double(grid.cell(std::size_t(j)).range_m) + "," +
                   format_double(grid.cell(std::size_t(j)).range_rate_mps) + "," + std::to_string(i) + "," +
                   format_double(S(i, j)) + "\n";
    return out;
}

}  // namespace fst
