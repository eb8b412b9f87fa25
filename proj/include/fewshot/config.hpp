#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/heads.hpp"
#include "fewshot/train_eval.hpp"

namespace fewshot {

// Raw run options as they arrive from flags or a config file. Everything is
// kept in user-facing (string) form until resolve_run applies defaults and
// the method/metric/module compatibility rules.
struct RunConfig {
    std::string method = "proto";
    std::string metric;           // empty: default for the method
    std::string relation_module;  // empty: default for the method
    int K = 5;
    int Q = 5;
    int U = -1;  // -1: default (C*5 for protopp, otherwise 0)
    std::vector<int> C_values = {2, 3, 4, 5};
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
    int n_eval_episodes = 600;
    std::string shot_mode = "resampled";
    int jobs = 1;

    int train_episodes = 1000;
    double lr = 0.01;
    std::string loss = "ce";
    std::string optimizer = "sgd";
    int patience = 0;
    int valid_every = 100;
    int valid_episodes = 50;

    int ntl_h = 100;
    int relation_hidden = 0;
    int routing_iters = 3;
    int refine_passes = 1;
    double cosine_scale = kCosineScoreScale;
    int finetune_iters = 20;
    double finetune_lr = 0.1;

    uint64_t seed = 0;
};

inline const char* method_display_name(MethodKind m) {
    switch (m) {
        case MethodKind::matching: return "Matching";
        case MethodKind::proto: return "Proto";
        case MethodKind::protopp: return "Proto++";
        case MethodKind::relation: return "Relation";
        case MethodKind::induction: return "Induction";
        case MethodKind::baseline: return "Baseline";
        case MethodKind::baselinepp: return "Baseline++";
    }
    return "?";
}

struct ResolvedRun {
    MethodKind method = MethodKind::proto;
    std::optional<Metric> metric;
    std::optional<RelationModule> relation_module;
    HeadConfig head;
    TrainConfig train;
    EvalConfig eval;
    int K = 5;
    int Q = 5;
    int U = -1;
    uint64_t seed = 0;

    int unlabeled_for(int C) const {
        if (U >= 0) return U;
        return method == MethodKind::protopp ? C * 5 : 0;
    }
};

inline ResolvedRun resolve_run(const RunConfig& cfg) {
    ResolvedRun r;
    const MethodSpec spec = parse_method(cfg.method);
    r.method = spec.kind;
    const std::string display = method_display_name(r.method);

    if (method_takes_metric(r.method)) {
        if (!cfg.relation_module.empty()) {
            throw ConfigError(display + " takes a metric, not a relation module");
        }
        r.metric = cfg.metric.empty() ? Metric::euclid : parse_metric(cfg.metric);
    } else if (method_takes_relation_module(r.method)) {
        if (!cfg.metric.empty()) {
            throw ConfigError(display + " takes a relation module, not a metric");
        }
        std::optional<RelationModule> from_flag;
        if (!cfg.relation_module.empty()) from_flag = parse_relation_module(cfg.relation_module);
        if (spec.module && from_flag && *spec.module != *from_flag) {
            throw ConfigError("method '" + cfg.method + "' already names its relation module; " +
                              "conflicting relation-module '" + cfg.relation_module + "'");
        }
        if (r.method == MethodKind::induction) {
            const RelationModule m =
                from_flag ? *from_flag : (spec.module ? *spec.module : RelationModule::ntl);
            if (m != RelationModule::ntl) {
                throw ConfigError("Induction only supports the ntl relation module");
            }
            r.relation_module = RelationModule::ntl;
        } else {
            r.relation_module =
                from_flag ? *from_flag : (spec.module ? *spec.module : RelationModule::ntl);
        }
    } else {  // baseline
        if (!cfg.metric.empty() || !cfg.relation_module.empty()) {
            throw ConfigError(display + " takes neither a metric nor a relation module");
        }
    }

    if (cfg.K < 1) throw ConfigError("K must be >= 1");
    if (cfg.Q < 1) throw ConfigError("Q must be >= 1");
    if (cfg.C_values.empty()) throw ConfigError("need at least one C value");
    for (int c : cfg.C_values) {
        if (c < 2) throw ConfigError("C must be >= 2, got " + std::to_string(c));
    }
    if (cfg.seeds.empty()) throw ConfigError("need at least one seed");

    r.head.method = r.method;
    if (r.metric) r.head.metric = *r.metric;
    if (r.relation_module) r.head.relation_module = *r.relation_module;
    r.head.ntl_h = cfg.ntl_h;
    r.head.relation_hidden = cfg.relation_hidden;
    r.head.routing_iters = cfg.routing_iters;
    r.head.refine_passes = cfg.refine_passes;
    r.head.cosine_scale = cfg.cosine_scale;
    r.head.finetune_iters = cfg.finetune_iters;
    r.head.finetune_lr = cfg.finetune_lr;

    r.train.episodes = cfg.train_episodes;
    r.train.lr = cfg.lr;
    r.train.loss = parse_loss(cfg.loss);
    r.train.optimizer = cfg.optimizer;
    r.train.patience = cfg.patience;
    r.train.valid_every = cfg.valid_every;
    r.train.valid_episodes = cfg.valid_episodes;
    r.train.validate();

    r.eval.n_eval_episodes = cfg.n_eval_episodes;
    r.eval.seeds = cfg.seeds;
    r.eval.shot_mode = parse_shot_mode(cfg.shot_mode);
    r.eval.C_values = cfg.C_values;
    r.eval.jobs = cfg.jobs;
    r.eval.validate();

    r.K = cfg.K;
    r.Q = cfg.Q;
    r.U = cfg.U;
    r.seed = cfg.seed;
    return r;
}

}  // namespace fewshot
