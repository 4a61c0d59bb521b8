#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "figpriv/graph.hpp"

namespace figpriv {

enum class ScoreAlgorithm { pagerank_standard, pagerank_literal, ehits };

inline const char* algorithm_name(ScoreAlgorithm a) {
    switch (a) {
        case ScoreAlgorithm::pagerank_standard: return "pagerank_standard";
        case ScoreAlgorithm::pagerank_literal: return "pagerank_literal";
        case ScoreAlgorithm::ehits: return "ehits";
    }
    return "?";
}

inline ScoreAlgorithm algorithm_from_name(std::string_view name) {
    if (name == "pagerank_standard") return ScoreAlgorithm::pagerank_standard;
    if (name == "pagerank_literal") return ScoreAlgorithm::pagerank_literal;
    if (name == "ehits") return ScoreAlgorithm::ehits;
    throw ConfigError("unknown scoring algorithm: " + std::string(name));
}

struct ScoreConfig {
    double damping = 0.85;
    double epsilon = 1e-8;
    int max_iterations = 1000;
    WeightChannel channel = WeightChannel::frequency;
    ScoreAlgorithm algorithm = ScoreAlgorithm::pagerank_standard;

    void validate() const {
        if (!(damping > 0.0 && damping < 1.0))
            throw ConfigError("damping factor must lie in (0,1)");
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
        if (max_iterations <= 0) throw ConfigError("max_iterations must be positive");
    }
};

struct ScoreVector {
    std::map<std::string, double> scores;  // node id -> score
    ScoreAlgorithm algorithm = ScoreAlgorithm::pagerank_standard;
    WeightChannel channel = WeightChannel::frequency;
    int iterations_used = 0;
    bool converged = false;

    double at(std::string_view id) const {
        auto it = scores.find(normalize_id(id));
        if (it == scores.end()) throw DataError("no score for node: " + std::string(id));
        return it->second;
    }
    std::optional<double> find(std::string_view id) const {
        auto it = scores.find(normalize_id(id));
        if (it == scores.end()) return std::nullopt;
        return it->second;
    }
};

namespace detail {

inline ScoreVector make_score_vector(const EcosystemGraph& g, const std::vector<double>& values,
                                     const ScoreConfig& cfg, int iterations, bool converged) {
    ScoreVector sv;
    sv.algorithm = cfg.algorithm;
    sv.channel = cfg.channel;
    sv.iterations_used = iterations;
    sv.converged = converged;
    for (size_t i = 0; i < g.node_count(); ++i) sv.scores[g.node(i).id] = values[i];
    return sv;
}

inline double linf_delta(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace detail

// Standard weighted PageRank: teleport (1-d)/N, transitions proportional to
// the selected channel's edge weight, dangling mass (no out-edges, or zero
// out-weight on the channel) redistributed uniformly over all nodes.
// Synchronous sweeps from a uniform 1/N start; stops when the L-inf change
// drops to epsilon or the iteration cap is hit.
inline ScoreVector pagerank_standard(const EcosystemGraph& g, const ScoreConfig& cfg) {
    cfg.validate();
    const size_t n = g.node_count();
    if (n == 0) throw DataError("pagerank on empty graph");
    const double d = cfg.damping;

    std::vector<double> out_weight(n, 0.0);
    for (size_t v = 0; v < n; ++v) out_weight[v] = g.out_weight(v, cfg.channel);

    std::vector<double> x(n, 1.0 / static_cast<double>(n));
    std::vector<double> next(n, 0.0);
    int iter = 0;
    bool converged = false;
    while (iter < cfg.max_iterations) {
        ++iter;
        double dangling = 0.0;
        for (size_t v = 0; v < n; ++v)
            if (out_weight[v] <= 0.0) dangling += x[v];
        const double base = (1.0 - d) / static_cast<double>(n) +
                            d * dangling / static_cast<double>(n);
        std::fill(next.begin(), next.end(), base);
        for (const auto& e : g.edges()) {
            double w = e.weight(cfg.channel);
            if (w <= 0.0 || out_weight[e.source] <= 0.0) continue;
            next[e.target] += d * x[e.source] * (w / out_weight[e.source]);
        }
        double delta = detail::linf_delta(next, x);
        x.swap(next);
        if (delta <= cfg.epsilon) {
            converged = true;
            break;
        }
    }
    return detail::make_score_vector(g, x, cfg, iter, converged);
}

// Verbatim transcription of the printed recurrence: no teleport term,
// per-edge share 1/outdegree(v), weights ignored. Has the zero vector as
// fixed point on most graphs; kept for fidelity checks next to the
// standard mode above. Sweeps are synchronous (each sweep reads the
// previous full vector).
inline ScoreVector pagerank_literal(const EcosystemGraph& g, const ScoreConfig& cfg) {
    cfg.validate();
    const size_t n = g.node_count();
    if (n == 0) throw DataError("pagerank on empty graph");
    const double d = cfg.damping;

    std::vector<double> x(n, 1.0 / static_cast<double>(n));
    std::vector<double> next(n, 0.0);
    int iter = 0;
    bool converged = false;
    while (iter < cfg.max_iterations) {
        ++iter;
        std::fill(next.begin(), next.end(), 0.0);
        for (const auto& e : g.edges())
            next[e.target] += d * x[e.source] / static_cast<double>(g.out_degree(e.source));
        double delta = detail::linf_delta(next, x);
        x.swap(next);
        if (delta <= cfg.epsilon) {
            converged = true;
            break;
        }
    }
    return detail::make_score_vector(g, x, cfg, iter, converged);
}

inline ScoreVector pagerank(const EcosystemGraph& g, const ScoreConfig& cfg) {
    if (cfg.algorithm == ScoreAlgorithm::pagerank_standard) return pagerank_standard(g, cfg);
    if (cfg.algorithm == ScoreAlgorithm::pagerank_literal) return pagerank_literal(g, cfg);
    throw ConfigError("pagerank called with non-pagerank algorithm");
}

struct EhitsResult {
    ScoreVector hub;
    ScoreVector authority;
    ScoreVector risk;  // hub + authority per node
};

// Edge-weighted HITS. Per sweep: hub from the previous authority, authority
// from the just-updated hub, both scaled by the listing's 1/maxDegree
// factors, then each vector L1-normalized. risk = hub + authority.
// Convergence is L-inf change on both normalized vectors.
inline EhitsResult ehits(const EcosystemGraph& g, const ScoreConfig& cfg) {
    cfg.validate();
    const size_t n = g.node_count();
    if (n == 0) throw DataError("ehits on empty graph");
    bool any_signal = false;
    for (const auto& e : g.edges())
        if (e.weight(cfg.channel) > 0.0) { any_signal = true; break; }
    if (!any_signal)
        throw DataError(std::string("no signal on channel ") + channel_name(cfg.channel));

    size_t max_in = 0, max_out = 0;
    for (size_t v = 0; v < n; ++v) {
        max_in = std::max(max_in, g.in_degree(v));
        max_out = std::max(max_out, g.out_degree(v));
    }
    const double in_scale = 1.0 / static_cast<double>(max_in);
    const double out_scale = 1.0 / static_cast<double>(max_out);

    auto l1_normalize = [](std::vector<double>& v) {
        double sum = std::accumulate(v.begin(), v.end(), 0.0);
        if (sum > 0.0)
            for (double& x : v) x /= sum;
    };

    std::vector<double> hub(n, 1.0), authority(n, 1.0);
    std::vector<double> new_hub(n), new_authority(n);
    int iter = 0;
    bool converged = false;
    while (iter < cfg.max_iterations) {
        ++iter;
        std::fill(new_hub.begin(), new_hub.end(), 0.0);
        for (const auto& e : g.edges())
            new_hub[e.source] += authority[e.target] * e.weight(cfg.channel) * out_scale;
        std::fill(new_authority.begin(), new_authority.end(), 0.0);
        for (const auto& e : g.edges())
            new_authority[e.target] += new_hub[e.source] * e.weight(cfg.channel) * in_scale;
        l1_normalize(new_hub);
        l1_normalize(new_authority);
        double delta = std::max(detail::linf_delta(new_hub, hub),
                                detail::linf_delta(new_authority, authority));
        hub = new_hub;
        authority = new_authority;
        if (delta <= cfg.epsilon) {
            converged = true;
            break;
        }
    }

    std::vector<double> risk(n);
    for (size_t v = 0; v < n; ++v) risk[v] = hub[v] + authority[v];

    ScoreConfig tagged = cfg;
    tagged.algorithm = ScoreAlgorithm::ehits;
    EhitsResult result;
    result.hub = detail::make_score_vector(g, hub, tagged, iter, converged);
    result.authority = detail::make_score_vector(g, authority, tagged, iter, converged);
    result.risk = detail::make_score_vector(g, risk, tagged, iter, converged);
    return result;
}

// Dispatches to the configured scorer; for ehits the risk component
// (hub + authority) is the score.
inline ScoreVector risk_scores(const EcosystemGraph& g, const ScoreConfig& cfg) {
    switch (cfg.algorithm) {
        case ScoreAlgorithm::pagerank_standard:
        case ScoreAlgorithm::pagerank_literal:
            return pagerank(g, cfg);
        case ScoreAlgorithm::ehits:
            return ehits(g, cfg).risk;
    }
    throw ConfigError("unknown scoring algorithm");
}

// Spearman rank correlation with average (fractional) ranks for ties.
inline double spearman(const ScoreVector& a, const ScoreVector& b) {
    if (a.scores.size() != b.scores.size() || a.scores.size() < 2)
        throw DataError("spearman requires two score vectors over the same nodes (>= 2)");
    std::vector<double> va, vb;
    va.reserve(a.scores.size());
    vb.reserve(b.scores.size());
    for (const auto& [id, score] : a.scores) {
        auto it = b.scores.find(id);
        if (it == b.scores.end()) throw DataError("spearman: node sets differ at '" + id + "'");
        va.push_back(score);
        vb.push_back(it->second);
    }

    auto ranks = [](const std::vector<double>& v) {
        const size_t n = v.size();
        std::vector<size_t> order(n);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n, 0.0);
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };

    std::vector<double> ra = ranks(va);
    std::vector<double> rb = ranks(vb);
    const double n = static_cast<double>(ra.size());
    double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double cov = 0.0, var_a = 0.0, var_b = 0.0;
    for (size_t i = 0; i < ra.size(); ++i) {
        double da = ra[i] - ma;
        double db = rb[i] - mb;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0)
        throw DataError("undefined correlation: constant score vector (all ranks tied)");
    double rho = cov / std::sqrt(var_a * var_b);
    return std::clamp(rho, -1.0, 1.0);
}

inline nlohmann::json score_export(const ScoreVector& sv) {
    nlohmann::json scores = nlohmann::json::object();
    for (const auto& [id, value] : sv.scores) scores[id] = value;
    return nlohmann::json{{"algorithm", algorithm_name(sv.algorithm)},
                          {"channel", channel_name(sv.channel)},
                          {"scores", scores},
                          {"converged", sv.converged},
                          {"iterations", sv.iterations_used}};
}

}  // namespace figpriv
