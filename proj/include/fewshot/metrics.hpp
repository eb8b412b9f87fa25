#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/graph.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

enum class Metric { cosine, euclid };

// Cosine similarities are sharpened by this factor before softmax so the
// resulting distribution is not stuck near uniform (similarities live in
// [-1, 1], which is too flat a range on its own).
inline constexpr double kCosineScoreScale = 5.0;

inline Metric parse_metric(const std::string& s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "euclid") return Metric::euclid;
    throw ConfigError("unknown metric '" + s + "' (expected cosine or euclid)");
}

inline const char* metric_name(Metric m) {
    return m == Metric::cosine ? "cosine" : "euclid";
}

inline double vec_dot(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double l2_norm(const std::vector<double>& a) { return std::sqrt(vec_dot(a, a)); }

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateInputError("cosine: zero-norm vector has no direction");
    }
    return vec_dot(a, b) / (na * nb);
}

inline double sq_euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ShapeError("sq_euclidean: length mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

inline std::vector<double> softmax_stable(const std::vector<double>& v) {
    if (v.empty()) throw ConfigError("softmax: empty input");
    const double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double total = 0.0;
    for (size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        total += out[i];
    }
    for (double& x : out) x /= total;
    return out;
}

// Turns raw per-class scores into a distribution. Cosine scores are
// similarities (higher = closer) and get sharpened; euclid scores are
// squared distances (lower = closer) and get negated.
inline std::vector<double> scores_to_probs(const std::vector<double>& scores, Metric m,
                                           double cosine_scale = kCosineScoreScale) {
    std::vector<double> z(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        z[i] = m == Metric::cosine ? cosine_scale * scores[i] : -scores[i];
    }
    return softmax_stable(z);
}

// ---- graph-level variants (differentiable) ----

inline Var cosine_g(Graph& g, Var a, Var b) {
    Var aa = g.dot(a, a);
    Var bb = g.dot(b, b);
    if (g.value(aa).data[0] == 0.0 || g.value(bb).data[0] == 0.0) {
        throw DegenerateInputError("cosine: zero-norm vector has no direction");
    }
    return g.div(g.dot(a, b), g.mul(g.sqrt(aa), g.sqrt(bb)));
}

inline Var sq_euclidean_g(Graph& g, Var a, Var b) {
    Var d = g.sub(a, b);
    return g.dot(d, d);
}

// Similarity under either metric with higher = closer, so a head can
// rank classes by one convention: cosine as-is, euclid negated.
inline Var metric_similarity_g(Graph& g, Metric m, Var a, Var b) {
    if (m == Metric::cosine) return cosine_g(g, a, b);
    return g.scale(sq_euclidean_g(g, a, b), -1.0);
}

// Softmax over raw similarity scores, applying the cosine sharpening.
inline Var similarity_probs_g(Graph& g, Var scores, Metric m,
                              double cosine_scale = kCosineScoreScale) {
    if (m == Metric::cosine) return g.softmax(g.scale(scores, cosine_scale));
    return g.softmax(scores);
}

}  // namespace fewshot
