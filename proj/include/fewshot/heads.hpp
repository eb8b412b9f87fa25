#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/graph.hpp"
#include "fewshot/metrics.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

enum class MethodKind { matching, proto, protopp, relation, induction, baseline, baselinepp };
enum class RelationModule { base, ntl };

struct MethodSpec {
    MethodKind kind;
    std::optional<RelationModule> module;  // set when spelled e.g. "relation-ntl"
};

inline MethodSpec parse_method(const std::string& s) {
    if (s == "matching") return {MethodKind::matching, {}};
    if (s == "proto") return {MethodKind::proto, {}};
    if (s == "protopp" || s == "proto++") return {MethodKind::protopp, {}};
    if (s == "relation") return {MethodKind::relation, {}};
    if (s == "relation-base") return {MethodKind::relation, RelationModule::base};
    if (s == "relation-ntl") return {MethodKind::relation, RelationModule::ntl};
    if (s == "induction") return {MethodKind::induction, {}};
    if (s == "baseline") return {MethodKind::baseline, {}};
    if (s == "baselinepp" || s == "baseline++") return {MethodKind::baselinepp, {}};
    throw ConfigError("unknown method '" + s +
                      "' (expected matching, proto, protopp, relation, relation-base, "
                      "relation-ntl, induction, baseline or baselinepp)");
}

inline const char* method_name(MethodKind m) {
    switch (m) {
        case MethodKind::matching: return "matching";
        case MethodKind::proto: return "proto";
        case MethodKind::protopp: return "protopp";
        case MethodKind::relation: return "relation";
        case MethodKind::induction: return "induction";
        case MethodKind::baseline: return "baseline";
        case MethodKind::baselinepp: return "baselinepp";
    }
    return "?";
}

inline RelationModule parse_relation_module(const std::string& s) {
    if (s == "base") return RelationModule::base;
    if (s == "ntl") return RelationModule::ntl;
    throw ConfigError("unknown relation module '" + s + "' (expected base or ntl)");
}

inline const char* relation_module_name(RelationModule m) {
    return m == RelationModule::base ? "base" : "ntl";
}

// Does the method compare against a metric, a relation module, or neither
// (the configuration matrix; other combinations are rejected).
inline bool method_takes_metric(MethodKind m) {
    return m == MethodKind::matching || m == MethodKind::proto || m == MethodKind::protopp ||
           m == MethodKind::baselinepp;
}
inline bool method_takes_relation_module(MethodKind m) {
    return m == MethodKind::relation || m == MethodKind::induction;
}

// ---- episode-level data, value form ----

struct SupportSet {
    Tensor vectors;  // [C, K, d]
    std::vector<std::string> class_names;

    int C() const { return vectors.shape[0]; }
    int K() const { return vectors.shape[1]; }
    int d() const { return vectors.shape[2]; }

    void validate() const {
        if (vectors.rank() != 3) {
            throw ShapeError("support set: expected [C,K,d] vectors, got " +
                             shape_str(vectors.shape));
        }
        if (C() < 2) throw ConfigError("support set: need C >= 2 classes");
        if (!class_names.empty() && static_cast<int>(class_names.size()) != C()) {
            throw ConfigError("support set: class name count does not match C");
        }
    }
};

struct QuerySet {
    Tensor vectors;               // [N_q, d]
    std::vector<int> true_labels;  // optional; class indices in [0, C)

    int size() const { return vectors.shape[0]; }
    int d() const { return vectors.shape[1]; }

    void validate(int C) const {
        if (vectors.rank() != 2) {
            throw ShapeError("query set: expected [N,d] vectors, got " + shape_str(vectors.shape));
        }
        if (!true_labels.empty()) {
            if (static_cast<int>(true_labels.size()) != size()) {
                throw ConfigError("query set: label count does not match vector count");
            }
            for (int l : true_labels) {
                if (l < 0 || l >= C) {
                    throw ConfigError("query set: label " + std::to_string(l) +
                                      " outside [0," + std::to_string(C) + ")");
                }
            }
        }
    }
};

struct UnlabeledSet {
    Tensor vectors;  // [U, d]; default-constructed means U = 0

    int size() const { return vectors.rank() == 2 ? vectors.shape[0] : 0; }
};

struct PrototypeSet {
    Tensor prototypes;  // [C, d]
    bool refined = false;
};

struct ScoreMatrix {
    Tensor scores;  // [N_q, C]
    bool normalized = false;
};

// ---- learnable parameter bundles ----

struct NtlParams {
    Tensor M;  // [h, d, d]
    Tensor w;  // [h]
    int h = 0;

    static NtlParams init(int h, int d, Rng& rng) {
        if (h < 1) throw ConfigError("ntl: h must be >= 1");
        NtlParams p;
        p.h = h;
        p.M = Tensor::glorot({h, d, d}, rng);
        p.M.make_param();
        p.w = Tensor::zeros({h});
        p.w.make_param();
        return p;
    }

    std::vector<Tensor*> params() { return {&M, &w}; }
};

struct RelationBaseParams {
    Tensor M1;  // [2d, h_b]
    Tensor M2;  // [h_b, h_b]
    Tensor w;   // [h_b]
    int hb = 0;

    static RelationBaseParams init(int d, int hb, Rng& rng) {
        if (hb < 1) throw ConfigError("relation-base: hidden width must be >= 1");
        RelationBaseParams p;
        p.hb = hb;
        p.M1 = Tensor::glorot({2 * d, hb}, rng);
        p.M1.make_param();
        p.M2 = Tensor::glorot({hb, hb}, rng);
        p.M2.make_param();
        p.w = Tensor::zeros({hb});
        p.w.make_param();
        return p;
    }

    std::vector<Tensor*> params() { return {&M1, &M2, &w}; }
};

struct InductionParams {
    Tensor Ws;  // [d, d] shared sample transform
    int routing_iters = 3;
    NtlParams ntl;

    static InductionParams init(int d, int h, int routing_iters, Rng& rng) {
        if (routing_iters < 1) throw ConfigError("induction: routing iterations must be >= 1");
        InductionParams p;
        p.Ws = Tensor::glorot({d, d}, rng);
        p.Ws.make_param();
        p.routing_iters = routing_iters;
        p.ntl = NtlParams::init(h, d, rng);
        return p;
    }

    std::vector<Tensor*> params() {
        std::vector<Tensor*> out = {&Ws};
        for (Tensor* t : ntl.params()) out.push_back(t);
        return out;
    }
};

struct BaselineParams {
    Tensor W;  // [C, d]
    Tensor b;  // [C]; unused rows-only variant leaves it empty
    bool has_bias = true;

    std::vector<Tensor*> params() {
        if (has_bias) return {&W, &b};
        return {&W};
    }
};

// ---- episode-level data, graph form ----
// One Var per sentence vector; how the Var was made (store leaf or
// encoder subgraph) is the provider's business.

struct EpisodeVars {
    std::vector<std::vector<Var>> support;  // [C][K]
    std::vector<Var> query;
    std::vector<int> query_labels;  // optional
    std::vector<Var> unlabeled;
    std::vector<std::string> class_names;

    int C() const { return static_cast<int>(support.size()); }
    int K() const { return support.empty() ? 0 : static_cast<int>(support[0].size()); }
};

inline EpisodeVars episode_vars(Graph& g, const SupportSet& s, const QuerySet& q,
                                const UnlabeledSet& u = {}) {
    s.validate();
    q.validate(s.C());
    EpisodeVars ep;
    ep.class_names = s.class_names;
    Var sv = g.leaf(s.vectors);
    for (int c = 0; c < s.C(); ++c) {
        Var cls = g.slice0(sv, c);
        std::vector<Var> members;
        for (int k = 0; k < s.K(); ++k) members.push_back(g.slice0(cls, k));
        ep.support.push_back(std::move(members));
    }
    Var qv = g.leaf(q.vectors);
    for (int i = 0; i < q.size(); ++i) ep.query.push_back(g.slice0(qv, i));
    ep.query_labels = q.true_labels;
    if (u.size() > 0) {
        Var uv = g.leaf(u.vectors);
        for (int i = 0; i < u.size(); ++i) ep.unlabeled.push_back(g.slice0(uv, i));
    }
    return ep;
}

// ---- score construction (shared by heads and the value-level ops) ----
// Raw rows use one convention: higher = closer, so euclidean entries are
// negated squared distances.

inline Var class_mean(Graph& g, const std::vector<Var>& members) {
    if (members.empty()) throw ConfigError("class mean: no members");
    Var acc = members[0];
    for (size_t i = 1; i < members.size(); ++i) acc = g.add(acc, members[i]);
    return g.scale(acc, 1.0 / static_cast<double>(members.size()));
}

inline std::vector<Var> prototype_vars(Graph& g, const std::vector<std::vector<Var>>& support) {
    std::vector<Var> protos;
    for (const auto& members : support) protos.push_back(class_mean(g, members));
    return protos;
}

// s_c = metric similarity between q and reference c
inline Var similarity_row(Graph& g, Metric m, const std::vector<Var>& refs, Var q) {
    std::vector<Var> cells;
    for (Var r : refs) cells.push_back(metric_similarity_g(g, m, q, r));
    return g.concat(cells);
}

// s_c = mean over the K support similarities of class c
inline Var matching_raw_row(Graph& g, Metric m, const std::vector<std::vector<Var>>& support,
                            Var q) {
    std::vector<Var> cells;
    for (const auto& members : support) {
        std::vector<Var> sims;
        for (Var v : members) sims.push_back(metric_similarity_g(g, m, q, v));
        cells.push_back(g.mean(g.concat(sims)));
    }
    return g.concat(cells);
}

// One soft k-means pass: assignment-weighted blend of supports and
// unlabeled points,
//   p~_c = (sum_k v^s_{c,k} + sum_i v^u_i s_{i,c}) / (K + sum_i s_{i,c}),
// where s_{i,c} are the normalized similarity scores of unlabeled point
// i against the current prototypes.
inline std::vector<Var> refine_pass(Graph& g, Metric m, double cosine_scale,
                                    const std::vector<std::vector<Var>>& support,
                                    const std::vector<Var>& unlabeled,
                                    const std::vector<Var>& protos) {
    if (unlabeled.empty()) return protos;
    std::vector<Var> assignments;  // one [C] distribution per unlabeled point
    for (Var u : unlabeled) {
        Var raw = similarity_row(g, m, protos, u);
        assignments.push_back(similarity_probs_g(g, raw, m, cosine_scale));
    }
    std::vector<Var> refined;
    for (size_t c = 0; c < support.size(); ++c) {
        Var num = support[c][0];
        for (size_t k = 1; k < support[c].size(); ++k) num = g.add(num, support[c][k]);
        Var den = g.leaf(static_cast<double>(support[c].size()));
        for (size_t i = 0; i < unlabeled.size(); ++i) {
            Var s_ic = g.slice0(assignments[i], static_cast<int>(c));
            num = g.add(num, g.mul(unlabeled[i], s_ic));
            den = g.add(den, s_ic);
        }
        refined.push_back(g.div(num, den));
    }
    return refined;
}

// w . M2 relu(M1 concat(v, p)) with the two linear layers as matrices
inline Var relation_base_raw(Graph& g, Var q, Var proto, Var M1, Var M2, Var w) {
    const int two_d = g.value(M1).shape[0];
    Var x = g.reshape(g.concat({q, proto}), {1, two_d});
    Var hidden = g.relu(g.matmul(x, M1));
    Var out = g.matmul(hidden, M2);
    return g.dot(w, g.reshape(out, {g.value(M2).shape[1]}));
}

// w . relu(v^T M_t p over the h slices)
inline Var ntl_raw(Graph& g, Var v, Var p, Var M, Var w) {
    return g.dot(w, g.relu(g.ntl_bilinear(v, M, p)));
}

// Capsule-style aggregation of one class's transformed supports. The
// transform output feeds routing unsquashed; squash applies to the
// coupling-weighted aggregate, so a single support reduces to
// squash(Ws v) exactly. Logits start at zero (uniform couplings) and
// move by the transformed-sample / aggregate dot product.
inline Var induced_prototype(Graph& g, const std::vector<Var>& members, Var Ws, int routing_iters,
                             std::vector<std::vector<double>>* coupling_trace = nullptr) {
    const int d = g.value(Ws).shape[0];
    std::vector<Var> transformed;
    for (Var v : members) {
        transformed.push_back(g.reshape(g.matmul(Ws, g.reshape(v, {d, 1})), {d}));
    }
    const int K = static_cast<int>(transformed.size());
    Var logits = g.leaf(Tensor::zeros({K}));
    Var class_vec{};
    for (int it = 0; it < routing_iters; ++it) {
        Var coupling = g.softmax(logits);
        if (coupling_trace) coupling_trace->push_back(g.value(coupling).data);
        Var agg = g.mul(transformed[0], g.slice0(coupling, 0));
        for (int k = 1; k < K; ++k) {
            agg = g.add(agg, g.mul(transformed[static_cast<size_t>(k)], g.slice0(coupling, k)));
        }
        class_vec = g.squash(agg);
        std::vector<Var> updates;
        for (int k = 0; k < K; ++k) updates.push_back(g.dot(transformed[static_cast<size_t>(k)], class_vec));
        logits = g.add(logits, g.concat(updates));
    }
    return class_vec;
}

// (W v + b)_j
inline Var affine_row(Graph& g, Var q, Var W, Var b) {
    const int d = g.value(W).shape[1];
    const int C = g.value(W).shape[0];
    Var logits = g.reshape(g.matmul(W, g.reshape(q, {d, 1})), {C});
    return g.add(logits, b);
}

// Per-class similarity of q against the weight rows of W.
inline Var weight_similarity_row(Graph& g, Metric m, Var q, Var W) {
    const int C = g.value(W).shape[0];
    std::vector<Var> cells;
    for (int j = 0; j < C; ++j) {
        Var wj = g.slice0(W, j);
        if (m == Metric::cosine && l2_norm(g.value(wj).data) == 0.0) {
            throw DegenerateInputError("class weight vector " + std::to_string(j) +
                                       " has zero norm");
        }
        cells.push_back(metric_similarity_g(g, m, q, wj));
    }
    return g.concat(cells);
}

// ---- heads ----

struct HeadConfig {
    MethodKind method = MethodKind::proto;
    Metric metric = Metric::euclid;
    RelationModule relation_module = RelationModule::ntl;
    int ntl_h = 100;
    int relation_hidden = 0;  // 0 means: use the embedding dimension
    int routing_iters = 3;
    int refine_passes = 1;
    double cosine_scale = kCosineScoreScale;
    int finetune_iters = 20;
    double finetune_lr = 0.1;
    uint64_t init_seed = 0;
};

// A classification head: builds per-query raw score rows inside a graph.
// Heads with persistent parameters (relation, induction) train across
// episodes; the baseline heads instead re-initialize and fine-tune their
// parameters within each episode.
class Head {
public:
    virtual ~Head() = default;
    virtual std::string label() const = 0;

    // One raw [C] score row per query; higher = closer.
    virtual std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) = 0;

    // Normalizes one raw row into class probabilities.
    virtual Var prob_row(Graph& g, Var raw) { return g.softmax(raw); }

    // Parameters trained across episodes, if any.
    virtual std::vector<Tensor*> trainable_params() { return {}; }

    // Per-episode fine-tuning lifecycle (baseline heads).
    virtual bool finetunes_per_episode() const { return false; }
    virtual void begin_episode(int /*C*/, uint64_t /*seed*/) {}
    virtual std::vector<Tensor*> episode_params() { return {}; }
    virtual Var score_row(Graph&, Var /*v*/) {
        throw ConfigError(label() + " head does not score single vectors");
    }

    virtual std::unique_ptr<Head> clone() const = 0;
};

class MetricProbMixin {
protected:
    MetricProbMixin(Metric m, double scale) : metric_(m), cosine_scale_(scale) {}
    Var metric_probs(Graph& g, Var raw) const {
        return similarity_probs_g(g, raw, metric_, cosine_scale_);
    }
    Metric metric_;
    double cosine_scale_;
};

class MatchingHead final : public Head, MetricProbMixin {
public:
    MatchingHead(Metric m, double scale) : MetricProbMixin(m, scale) {}
    std::string label() const override { return std::string("matching/") + metric_name(metric_); }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        std::vector<Var> rows;
        for (Var q : ep.query) rows.push_back(matching_raw_row(g, metric_, ep.support, q));
        return rows;
    }
    Var prob_row(Graph& g, Var raw) override { return metric_probs(g, raw); }
    std::unique_ptr<Head> clone() const override { return std::make_unique<MatchingHead>(*this); }
};

class ProtoHead final : public Head, MetricProbMixin {
public:
    ProtoHead(Metric m, double scale) : MetricProbMixin(m, scale) {}
    std::string label() const override { return std::string("proto/") + metric_name(metric_); }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        std::vector<Var> protos = prototype_vars(g, ep.support);
        std::vector<Var> rows;
        for (Var q : ep.query) rows.push_back(similarity_row(g, metric_, protos, q));
        return rows;
    }
    Var prob_row(Graph& g, Var raw) override { return metric_probs(g, raw); }
    std::unique_ptr<Head> clone() const override { return std::make_unique<ProtoHead>(*this); }
};

class ProtoppHead final : public Head, MetricProbMixin {
public:
    ProtoppHead(Metric m, double scale, int passes)
        : MetricProbMixin(m, scale), passes_(passes) {
        if (passes < 1) throw ConfigError("protopp: refinement passes must be >= 1");
    }
    std::string label() const override { return std::string("protopp/") + metric_name(metric_); }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        std::vector<Var> protos = prototype_vars(g, ep.support);
        for (int p = 0; p < passes_; ++p) {
            protos = refine_pass(g, metric_, cosine_scale_, ep.support, ep.unlabeled, protos);
        }
        std::vector<Var> rows;
        for (Var q : ep.query) rows.push_back(similarity_row(g, metric_, protos, q));
        return rows;
    }
    Var prob_row(Graph& g, Var raw) override { return metric_probs(g, raw); }
    std::unique_ptr<Head> clone() const override { return std::make_unique<ProtoppHead>(*this); }

private:
    int passes_;
};

class RelationBaseHead final : public Head {
public:
    RelationBaseHead(int d, int hb, uint64_t seed) {
        Rng rng(Rng::derive(seed, {seed_tag::init, 1}));
        params_ = RelationBaseParams::init(d, hb > 0 ? hb : d, rng);
    }
    std::string label() const override { return "relation/base"; }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        std::vector<Var> protos = prototype_vars(g, ep.support);
        Var M1 = g.param(params_.M1), M2 = g.param(params_.M2), w = g.param(params_.w);
        std::vector<Var> rows;
        for (Var q : ep.query) {
            std::vector<Var> cells;
            for (Var p : protos) cells.push_back(relation_base_raw(g, q, p, M1, M2, w));
            rows.push_back(g.concat(cells));
        }
        return rows;
    }
    std::vector<Tensor*> trainable_params() override { return params_.params(); }
    std::unique_ptr<Head> clone() const override {
        return std::make_unique<RelationBaseHead>(*this);
    }
    RelationBaseParams& params() { return params_; }

private:
    RelationBaseParams params_;
};

class RelationNtlHead final : public Head {
public:
    RelationNtlHead(int d, int h, uint64_t seed) {
        Rng rng(Rng::derive(seed, {seed_tag::init, 2}));
        params_ = NtlParams::init(h, d, rng);
    }
    std::string label() const override { return "relation/ntl"; }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        std::vector<Var> protos = prototype_vars(g, ep.support);
        Var M = g.param(params_.M), w = g.param(params_.w);
        std::vector<Var> rows;
        for (Var q : ep.query) {
            std::vector<Var> cells;
            for (Var p : protos) cells.push_back(ntl_raw(g, q, p, M, w));
            rows.push_back(g.concat(cells));
        }
        return rows;
    }
    std::vector<Tensor*> trainable_params() override { return params_.params(); }
    std::unique_ptr<Head> clone() const override { return std::make_unique<RelationNtlHead>(*this); }
    NtlParams& params() { return params_; }

private:
    NtlParams params_;
};

class InductionHead final : public Head {
public:
    InductionHead(int d, int h, int routing_iters, uint64_t seed) {
        Rng rng(Rng::derive(seed, {seed_tag::init, 3}));
        params_ = InductionParams::init(d, h, routing_iters, rng);
    }
    std::string label() const override { return "induction/ntl"; }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        last_trace_.clear();
        Var Ws = g.param(params_.Ws);
        Var M = g.param(params_.ntl.M), w = g.param(params_.ntl.w);
        std::vector<Var> protos;
        for (const auto& members : ep.support) {
            last_trace_.emplace_back();
            protos.push_back(
                induced_prototype(g, members, Ws, params_.routing_iters, &last_trace_.back()));
        }
        std::vector<Var> rows;
        for (Var q : ep.query) {
            std::vector<Var> cells;
            for (Var p : protos) cells.push_back(ntl_raw(g, q, p, M, w));
            rows.push_back(g.concat(cells));
        }
        return rows;
    }
    std::vector<Tensor*> trainable_params() override { return params_.params(); }
    std::unique_ptr<Head> clone() const override { return std::make_unique<InductionHead>(*this); }
    InductionParams& params() { return params_; }

    // Coupling distributions of the most recent raw_rows call, indexed
    // [class][iteration][k]. Single-writer like the head itself.
    const std::vector<std::vector<std::vector<double>>>& last_trace() const { return last_trace_; }

private:
    InductionParams params_;
    std::vector<std::vector<std::vector<double>>> last_trace_;
};

// Linear classifier re-initialized to zeros each episode, then fine-tuned
// on the support samples.
class BaselineHead final : public Head {
public:
    explicit BaselineHead(int d) : d_(d) {}
    std::string label() const override { return "baseline"; }
    bool finetunes_per_episode() const override { return true; }
    void begin_episode(int C, uint64_t /*seed*/) override {
        params_.W = Tensor::zeros({C, d_});
        params_.W.make_param();
        params_.b = Tensor::zeros({C});
        params_.b.make_param();
        params_.has_bias = true;
    }
    std::vector<Tensor*> episode_params() override { return params_.params(); }
    Var score_row(Graph& g, Var v) override {
        return affine_row(g, v, g.param(params_.W), g.param(params_.b));
    }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        require_ready(ep.C());
        std::vector<Var> rows;
        for (Var q : ep.query) rows.push_back(score_row(g, q));
        return rows;
    }
    std::unique_ptr<Head> clone() const override { return std::make_unique<BaselineHead>(*this); }
    BaselineParams& params() { return params_; }

private:
    void require_ready(int C) const {
        if (params_.W.numel() == 0 || params_.W.shape[0] != C) {
            throw ConfigError("baseline head: begin_episode(C) must run before scoring");
        }
    }
    int d_;
    BaselineParams params_;
};

// Per-class weight vectors compared to queries by metric similarity.
// Weight rows start from a random direction (zero rows would make the
// cosine comparison degenerate), then fine-tune on the supports.
class BaselineppHead final : public Head, MetricProbMixin {
public:
    BaselineppHead(Metric m, double scale, int d) : MetricProbMixin(m, scale), d_(d) {}
    std::string label() const override {
        return std::string("baselinepp/") + metric_name(metric_);
    }
    bool finetunes_per_episode() const override { return true; }
    void begin_episode(int C, uint64_t seed) override {
        Rng rng(Rng::derive(seed, {seed_tag::init, 4}));
        params_.W = Tensor::glorot({C, d_}, rng);
        params_.W.make_param();
        params_.b = Tensor();
        params_.has_bias = false;
    }
    std::vector<Tensor*> episode_params() override { return params_.params(); }
    Var score_row(Graph& g, Var v) override {
        return weight_similarity_row(g, metric_, v, g.param(params_.W));
    }
    std::vector<Var> raw_rows(Graph& g, const EpisodeVars& ep) override {
        if (params_.W.numel() == 0 || params_.W.shape[0] != ep.C()) {
            throw ConfigError("baselinepp head: begin_episode(C) must run before scoring");
        }
        std::vector<Var> rows;
        for (Var q : ep.query) rows.push_back(score_row(g, q));
        return rows;
    }
    Var prob_row(Graph& g, Var raw) override { return metric_probs(g, raw); }
    std::unique_ptr<Head> clone() const override { return std::make_unique<BaselineppHead>(*this); }
    BaselineParams& params() { return params_; }

private:
    int d_;
    BaselineParams params_;
};

inline std::unique_ptr<Head> make_head(const HeadConfig& cfg, int d) {
    switch (cfg.method) {
        case MethodKind::matching:
            return std::make_unique<MatchingHead>(cfg.metric, cfg.cosine_scale);
        case MethodKind::proto:
            return std::make_unique<ProtoHead>(cfg.metric, cfg.cosine_scale);
        case MethodKind::protopp:
            return std::make_unique<ProtoppHead>(cfg.metric, cfg.cosine_scale, cfg.refine_passes);
        case MethodKind::relation:
            if (cfg.relation_module == RelationModule::base) {
                return std::make_unique<RelationBaseHead>(d, cfg.relation_hidden, cfg.init_seed);
            }
            return std::make_unique<RelationNtlHead>(d, cfg.ntl_h, cfg.init_seed);
        case MethodKind::induction:
            return std::make_unique<InductionHead>(d, cfg.ntl_h, cfg.routing_iters, cfg.init_seed);
        case MethodKind::baseline:
            return std::make_unique<BaselineHead>(d);
        case MethodKind::baselinepp:
            return std::make_unique<BaselineppHead>(cfg.metric, cfg.cosine_scale, d);
    }
    throw ConfigError("unhandled method");
}

// ---- value-level entry points ----
// Thin wrappers that run the graph builders on constant inputs and pull
// the numbers out; tests and one-off scoring go through these.

inline PrototypeSet compute_prototypes(const SupportSet& s) {
    s.validate();
    Graph g;
    EpisodeVars ep = episode_vars(g, s, QuerySet{Tensor::zeros({1, s.d()}), {}});
    std::vector<Var> protos = prototype_vars(g, ep.support);
    PrototypeSet out;
    out.prototypes = Tensor::zeros({s.C(), s.d()});
    for (int c = 0; c < s.C(); ++c) {
        const Tensor& p = g.value(protos[static_cast<size_t>(c)]);
        for (int j = 0; j < s.d(); ++j) out.prototypes.at(c, j) = p.data[static_cast<size_t>(j)];
    }
    out.refined = false;
    return out;
}

namespace detail {
inline ScoreMatrix rows_to_matrix(Graph& g, const std::vector<Var>& prob_rows, int C) {
    ScoreMatrix sm;
    sm.scores = Tensor::zeros({static_cast<int>(prob_rows.size()), C});
    for (size_t i = 0; i < prob_rows.size(); ++i) {
        const Tensor& row = g.value(prob_rows[i]);
        for (int c = 0; c < C; ++c) {
            sm.scores.at(static_cast<int>(i), c) = row.data[static_cast<size_t>(c)];
        }
    }
    sm.normalized = true;
    return sm;
}
}  // namespace detail

inline ScoreMatrix matching_scores(const SupportSet& s, const QuerySet& q, Metric m) {
    Graph g;
    MatchingHead head(m, kCosineScoreScale);
    EpisodeVars ep = episode_vars(g, s, q);
    std::vector<Var> rows = head.raw_rows(g, ep);
    std::vector<Var> probs;
    for (Var r : rows) probs.push_back(head.prob_row(g, r));
    return detail::rows_to_matrix(g, probs, s.C());
}

inline ScoreMatrix proto_scores(const PrototypeSet& p, const QuerySet& q, Metric m) {
    const int C = p.prototypes.shape[0];
    const int d = p.prototypes.shape[1];
    q.validate(C);
    if (q.d() != d) {
        throw ShapeError("proto scores: query dimension " + std::to_string(q.d()) +
                         " vs prototype dimension " + std::to_string(d));
    }
    Graph g;
    Var pv = g.leaf(p.prototypes);
    std::vector<Var> protos;
    for (int c = 0; c < C; ++c) protos.push_back(g.slice0(pv, c));
    Var qv = g.leaf(q.vectors);
    std::vector<Var> probs;
    for (int i = 0; i < q.size(); ++i) {
        Var raw = similarity_row(g, m, protos, g.slice0(qv, i));
        probs.push_back(similarity_probs_g(g, raw, m));
    }
    return detail::rows_to_matrix(g, probs, C);
}

inline PrototypeSet refine_prototypes(const PrototypeSet& p, const SupportSet& s,
                                      const UnlabeledSet& u, Metric m, int passes = 1) {
    s.validate();
    const int C = s.C(), d = s.d();
    Graph g;
    EpisodeVars ep = episode_vars(g, s, QuerySet{Tensor::zeros({1, d}), {}}, u);
    Var pv = g.leaf(p.prototypes);
    std::vector<Var> protos;
    for (int c = 0; c < C; ++c) protos.push_back(g.slice0(pv, c));
    for (int pass = 0; pass < passes; ++pass) {
        protos = refine_pass(g, m, kCosineScoreScale, ep.support, ep.unlabeled, protos);
    }
    PrototypeSet out;
    out.prototypes = Tensor::zeros({C, d});
    for (int c = 0; c < C; ++c) {
        const Tensor& row = g.value(protos[static_cast<size_t>(c)]);
        for (int j = 0; j < d; ++j) out.prototypes.at(c, j) = row.data[static_cast<size_t>(j)];
    }
    out.refined = true;
    return out;
}

inline ScoreMatrix relation_base_scores(const SupportSet& s, const QuerySet& q,
                                        RelationBaseParams& params) {
    s.validate();
    q.validate(s.C());
    if (params.M1.shape[0] != 2 * s.d()) {
        throw ConfigError("relation-base: M1 expects input size " +
                          std::to_string(params.M1.shape[0]) + ", episode dimension gives " +
                          std::to_string(2 * s.d()));
    }
    Graph g;
    EpisodeVars ep = episode_vars(g, s, q);
    std::vector<Var> protos = prototype_vars(g, ep.support);
    Var M1 = g.param(params.M1), M2 = g.param(params.M2), w = g.param(params.w);
    std::vector<Var> probs;
    for (Var qv : ep.query) {
        std::vector<Var> cells;
        for (Var p : protos) cells.push_back(relation_base_raw(g, qv, p, M1, M2, w));
        probs.push_back(g.softmax(g.concat(cells)));
    }
    return detail::rows_to_matrix(g, probs, s.C());
}

inline double ntl_scores(const Tensor& v, const Tensor& p, NtlParams& params) {
    Graph g;
    return g.value(ntl_raw(g, g.leaf(v), g.leaf(p), g.param(params.M), g.param(params.w))).data[0];
}

inline PrototypeSet induction_prototypes(const SupportSet& s, InductionParams& params,
                                         std::vector<std::vector<std::vector<double>>>* trace = nullptr) {
    s.validate();
    Graph g;
    EpisodeVars ep = episode_vars(g, s, QuerySet{Tensor::zeros({1, s.d()}), {}});
    Var Ws = g.param(params.Ws);
    PrototypeSet out;
    out.prototypes = Tensor::zeros({s.C(), s.d()});
    for (int c = 0; c < s.C(); ++c) {
        std::vector<std::vector<double>> class_trace;
        Var proto = induced_prototype(g, ep.support[static_cast<size_t>(c)], Ws,
                                      params.routing_iters, trace ? &class_trace : nullptr);
        if (trace) trace->push_back(std::move(class_trace));
        const Tensor& row = g.value(proto);
        for (int j = 0; j < s.d(); ++j) out.prototypes.at(c, j) = row.data[static_cast<size_t>(j)];
    }
    out.refined = true;
    return out;
}

inline ScoreMatrix baseline_scores(const QuerySet& q, BaselineParams& params) {
    const int C = params.W.shape[0];
    q.validate(C);
    Graph g;
    Var W = g.param(params.W), b = g.param(params.b);
    Var qv = g.leaf(q.vectors);
    std::vector<Var> probs;
    for (int i = 0; i < q.size(); ++i) {
        probs.push_back(g.softmax(affine_row(g, g.slice0(qv, i), W, b)));
    }
    return detail::rows_to_matrix(g, probs, C);
}

inline ScoreMatrix baselinepp_scores(const QuerySet& q, BaselineParams& params, Metric m) {
    const int C = params.W.shape[0];
    q.validate(C);
    Graph g;
    Var W = g.param(params.W);
    Var qv = g.leaf(q.vectors);
    std::vector<Var> probs;
    for (int i = 0; i < q.size(); ++i) {
        Var raw = weight_similarity_row(g, m, g.slice0(qv, i), W);
        probs.push_back(similarity_probs_g(g, raw, m));
    }
    return detail::rows_to_matrix(g, probs, C);
}

// Deterministic argmax: ties resolve to the lowest index.
inline int argmax_lowest(const std::vector<double>& row) {
    if (row.empty()) throw ConfigError("argmax: empty row");
    int best = 0;
    for (int i = 1; i < static_cast<int>(row.size()); ++i) {
        if (row[static_cast<size_t>(i)] > row[static_cast<size_t>(best)]) best = i;
    }
    return best;
}

}  // namespace fewshot
