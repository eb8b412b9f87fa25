#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "fewshot/episodes.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/heads.hpp"
#include "fewshot/log.hpp"
#include "fewshot/metrics.hpp"
#include "fewshot/optim.hpp"
#include "fewshot/provider.hpp"

namespace fewshot {

enum class LossKind { ce, mse };

inline LossKind parse_loss(const std::string& s) {
    if (s == "ce") return LossKind::ce;
    if (s == "mse") return LossKind::mse;
    throw ConfigError("unknown loss '" + s + "' (expected ce or mse)");
}

inline const char* loss_name(LossKind k) { return k == LossKind::ce ? "ce" : "mse"; }

enum class ShotMode { resampled, fixed };

inline ShotMode parse_shot_mode(const std::string& s) {
    if (s == "resampled") return ShotMode::resampled;
    if (s == "fixed") return ShotMode::fixed;
    throw ConfigError("unknown shot mode '" + s + "' (expected fixed or resampled)");
}

inline const char* shot_mode_name(ShotMode m) {
    return m == ShotMode::fixed ? "fixed" : "resampled";
}

// ---- losses ----

// -ln(p_target) with the probability clamped at 1e-12.
inline double cross_entropy(const Tensor& probs, int target) {
    if (target < 0 || target >= probs.numel()) {
        throw ConfigError("cross entropy: target " + std::to_string(target) + " out of range");
    }
    const double p = std::max(probs.data[static_cast<size_t>(target)], 1e-12);
    return -std::log(p);
}

// Mean squared difference between scores and the one-hot target.
inline double mse_loss(const Tensor& scores, int target) {
    if (target < 0 || target >= scores.numel()) {
        throw ConfigError("mse loss: target " + std::to_string(target) + " out of range");
    }
    double acc = 0.0;
    for (int i = 0; i < scores.numel(); ++i) {
        const double want = i == target ? 1.0 : 0.0;
        const double diff = scores.data[static_cast<size_t>(i)] - want;
        acc += diff * diff;
    }
    return acc / static_cast<double>(scores.numel());
}

inline Var ce_loss_g(Graph& g, Var probs, int target) {
    return g.scale(g.log_clamped(g.slice0(probs, target)), -1.0);
}

// Raw scores pass through a sigmoid so the one-hot targets are reachable.
inline Var mse_loss_g(Graph& g, Var raw, int target) {
    const int C = g.value(raw).numel();
    Tensor onehot = Tensor::zeros({C});
    onehot.data[static_cast<size_t>(target)] = 1.0;
    Var diff = g.sub(g.sigmoid(raw), g.leaf(std::move(onehot)));
    return g.scale(g.dot(diff, diff), 1.0 / static_cast<double>(C));
}

// Mean loss over an episode's query points.
inline Var episode_loss_g(Graph& g, Head& head, const std::vector<Var>& raw_rows,
                          const std::vector<int>& labels, LossKind kind) {
    if (raw_rows.size() != labels.size() || raw_rows.empty()) {
        throw ConfigError("episode loss: need one label per query row");
    }
    std::vector<Var> terms;
    for (size_t i = 0; i < raw_rows.size(); ++i) {
        if (kind == LossKind::ce) {
            terms.push_back(ce_loss_g(g, head.prob_row(g, raw_rows[i]), labels[i]));
        } else {
            terms.push_back(mse_loss_g(g, raw_rows[i], labels[i]));
        }
    }
    return g.mean(g.concat(terms));
}

// ---- configuration ----

struct TrainConfig {
    int episodes = 1000;
    double lr = 1e-2;
    LossKind loss = LossKind::ce;
    std::string optimizer = "sgd";
    int patience = 0;        // validation checks without improvement before stopping; 0 = off
    int valid_every = 100;   // training episodes between validation checks
    int valid_episodes = 50; // episodes per validation check

    void validate() const {
        if (episodes < 1) throw ConfigError("train config: episodes must be >= 1");
        if (lr <= 0) throw ConfigError("train config: lr must be positive");
        if (valid_every < 1) throw ConfigError("train config: valid-every must be >= 1");
        if (valid_episodes < 1) throw ConfigError("train config: valid-episodes must be >= 1");
    }
};

struct EvalConfig {
    int n_eval_episodes = 600;
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
    ShotMode shot_mode = ShotMode::resampled;
    std::vector<int> C_values = {2, 3, 4, 5};
    int jobs = 1;

    void validate() const {
        if (n_eval_episodes < 1) throw ConfigError("eval config: episodes must be >= 1");
        if (seeds.empty()) throw ConfigError("eval config: need at least one seed");
        if (C_values.empty()) throw ConfigError("eval config: need at least one C value");
        for (int c : C_values) {
            if (c < 2) throw ConfigError("eval config: C values must be >= 2");
        }
        if (jobs < 1) throw ConfigError("eval config: jobs must be >= 1");
    }
};

struct EvalRow {
    uint64_t seed = 0;
    int C = 0;
    long correct = 0;
    long total = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::string dataset;
    MethodKind method = MethodKind::proto;
    std::optional<Metric> metric;
    std::optional<RelationModule> relation_module;
    int K = 5, Q = 5, U = 0;
    int n_eval_episodes = 0;
    ShotMode shot_mode = ShotMode::resampled;
    std::vector<EvalRow> rows;  // seed-major, then C in C_values order

    double mean_accuracy(int C) const {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : rows) {
            if (r.C == C) {
                sum += r.accuracy;
                ++n;
            }
        }
        if (n == 0) throw ConfigError("report holds no rows for C=" + std::to_string(C));
        return sum / n;
    }
};

// ---- per-episode fine-tuning (the baseline protocol) ----

// Re-optimizes the head's episode parameters on the support samples with
// cross-entropy. With freeze_encoder the sentence vectors are constants;
// otherwise encoder parameters join the update (the training-time
// variant of the protocol).
inline void finetune_on_supports(Head& head, EmbeddingProvider& provider, const Episode& episode,
                                 int iters, double lr, bool freeze_encoder) {
    if (iters == 0) return;
    if (iters < 0) throw ConfigError("finetune: iterations must be >= 0");
    std::vector<int> targets;
    for (size_t c = 0; c < episode.support_ids.size(); ++c) {
        for (size_t k = 0; k < episode.support_ids[c].size(); ++k) {
            targets.push_back(static_cast<int>(c));
        }
    }
    for (int step = 0; step < iters; ++step) {
        Graph g;
        provider.bind(g);
        std::vector<Var> losses;
        size_t t = 0;
        for (size_t c = 0; c < episode.support_ids.size(); ++c) {
            for (size_t idx : episode.support_ids[c]) {
                Var v = provider.vector_var(g, idx, freeze_encoder);
                Var probs = head.prob_row(g, head.score_row(g, v));
                losses.push_back(ce_loss_g(g, probs, targets[t++]));
            }
        }
        Var loss = g.mean(g.concat(losses));
        if (!std::isfinite(g.value(loss).data[0])) {
            throw NumericError("fine-tuning diverged at step " + std::to_string(step) +
                               " (lr=" + std::to_string(lr) + ")");
        }
        g.backward(loss);
        std::vector<Tensor*> params = head.episode_params();
        if (!freeze_encoder) {
            for (Tensor* p : provider.trainable_params()) params.push_back(p);
        }
        sgd_step(params, lr);
    }
}

namespace detail {

struct EpisodeOutcome {
    long correct = 0;
    long total = 0;
};

// Scores one sampled episode with a worker-local head, fine-tuning first
// when the head wants it. Vectors are frozen: evaluation never trains
// the encoder.
inline EpisodeOutcome score_episode(Head& head, EmbeddingProvider& provider,
                                    const Episode& episode, const HeadConfig& head_cfg,
                                    uint64_t episode_seed) {
    if (head.finetunes_per_episode()) {
        head.begin_episode(static_cast<int>(episode.class_names.size()),
                           Rng::derive(episode_seed, {seed_tag::init}));
        finetune_on_supports(head, provider, episode, head_cfg.finetune_iters,
                             head_cfg.finetune_lr, /*freeze_encoder=*/true);
    }
    Graph g;
    EpisodeVars vars = realize_episode(g, provider, episode, /*freeze_encoder=*/true);
    std::vector<Var> rows = head.raw_rows(g, vars);
    EpisodeOutcome out;
    for (size_t i = 0; i < rows.size(); ++i) {
        const int pred = argmax_lowest(g.value(rows[i]).data);
        out.total += 1;
        if (pred == vars.query_labels[i]) out.correct += 1;
    }
    return out;
}

}  // namespace detail

// Mean accuracy over `episodes` freshly sampled episodes; utility for
// validation checkpoints and quick probes.
inline double quick_accuracy(const Head& head, const EmbeddingProvider& provider,
                             const LabeledIndex& index, EpisodeSpec spec,
                             const HeadConfig& head_cfg, int episodes, uint64_t seed_root) {
    std::unique_ptr<Head> local_head = head.clone();
    std::unique_ptr<EmbeddingProvider> local_provider = provider.clone();
    long correct = 0, total = 0;
    for (int e = 0; e < episodes; ++e) {
        spec.seed = Rng::derive(seed_root, {seed_tag::validation, static_cast<uint64_t>(e)});
        Episode ep = sample_episode(index, spec);
        auto outcome = detail::score_episode(*local_head, *local_provider, ep, head_cfg, spec.seed);
        correct += outcome.correct;
        total += outcome.total;
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// Episodic training. Heads with persistent parameters take one gradient
// step per episode on the query loss; per-episode fine-tuning heads
// instead run their support protocol (useful only when the encoder is
// trainable). When a validation partition is given, the best checkpoint
// (judged every valid_every episodes) is restored at the end.
inline void train_head(Head& head, EmbeddingProvider& provider, const LabeledIndex& train_index,
                       const LabeledIndex* valid_index, EpisodeSpec spec, const TrainConfig& cfg,
                       const HeadConfig& head_cfg, uint64_t run_seed) {
    cfg.validate();
    std::vector<Tensor*> params = head.trainable_params();
    std::vector<Tensor*> encoder_params = provider.trainable_params();
    params.insert(params.end(), encoder_params.begin(), encoder_params.end());

    const bool finetuner = head.finetunes_per_episode();
    if (params.empty() && !finetuner) {
        log_info("train: " + head.label() + " has no trainable parameters, skipping");
        return;
    }
    if (finetuner && encoder_params.empty()) {
        log_info("train: " + head.label() + " fine-tunes per episode and the embeddings are "
                 "frozen, skipping training phase");
        return;
    }

    std::unique_ptr<Optimizer> opt = make_optimizer(cfg.optimizer, cfg.lr);
    double best_valid = -1.0;
    std::vector<std::vector<double>> best_snapshot;
    int checks_since_best = 0;

    auto snapshot_params = [&]() {
        best_snapshot.clear();
        for (Tensor* p : params) best_snapshot.push_back(p->data);
    };
    auto restore_params = [&]() {
        for (size_t i = 0; i < params.size(); ++i) params[i]->data = best_snapshot[i];
    };

    for (int e = 0; e < cfg.episodes; ++e) {
        spec.seed = Rng::derive(run_seed, {seed_tag::train, static_cast<uint64_t>(e)});
        Episode episode = sample_episode(train_index, spec);

        if (finetuner) {
            head.begin_episode(spec.C, Rng::derive(spec.seed, {seed_tag::init}));
            finetune_on_supports(head, provider, episode, head_cfg.finetune_iters,
                                 head_cfg.finetune_lr, /*freeze_encoder=*/false);
        } else {
            Graph g;
            EpisodeVars vars = realize_episode(g, provider, episode, /*freeze_encoder=*/false);
            std::vector<Var> rows = head.raw_rows(g, vars);
            Var loss = episode_loss_g(g, head, rows, vars.query_labels, cfg.loss);
            const double loss_value = g.value(loss).data[0];
            if (!std::isfinite(loss_value)) {
                throw NumericError("training diverged: loss is not finite at episode " +
                                   std::to_string(e) + " (lr=" + std::to_string(cfg.lr) + ")");
            }
            g.backward(loss);
            opt->step(params);
        }

        if (valid_index && (e + 1) % cfg.valid_every == 0) {
            const double acc = quick_accuracy(head, provider, *valid_index, spec, head_cfg,
                                              cfg.valid_episodes,
                                              Rng::derive(run_seed, {seed_tag::validation,
                                                                     static_cast<uint64_t>(e)}));
            if (acc > best_valid) {
                best_valid = acc;
                snapshot_params();
                checks_since_best = 0;
            } else {
                ++checks_since_best;
                if (cfg.patience > 0 && checks_since_best >= cfg.patience) {
                    log_info("train: stopping early at episode " + std::to_string(e + 1) +
                             " (no validation improvement in " + std::to_string(cfg.patience) +
                             " checks)");
                    break;
                }
            }
        }
    }
    if (valid_index && !best_snapshot.empty()) restore_params();
}

// Multi-seed, multi-C evaluation over a test partition. Episodes run
// independently (optionally across threads) and aggregate by summing
// correct counts, so results do not depend on scheduling order.
inline EvalReport evaluate(const Head& head, const EmbeddingProvider& provider,
                           const LabeledIndex& test_index, EpisodeSpec spec,
                           const EvalConfig& cfg, const HeadConfig& head_cfg,
                           const std::vector<std::string>* train_classes = nullptr) {
    cfg.validate();
    if (train_classes) {
        std::set<std::string> test_set(test_index.classes().begin(), test_index.classes().end());
        for (const auto& c : *train_classes) {
            if (test_set.count(c)) {
                throw DataError("protocol violation: class '" + c +
                                "' appears in both train and test partitions");
            }
        }
    }

    EvalReport report;
    report.K = spec.K;
    report.Q = spec.Q;
    report.U = spec.U;
    report.n_eval_episodes = cfg.n_eval_episodes;
    report.shot_mode = cfg.shot_mode;

    for (uint64_t seed : cfg.seeds) {
        std::optional<FixedShotPlan> plan;
        if (cfg.shot_mode == ShotMode::fixed) {
            plan = make_fixed_shot_plan(test_index, spec.K, seed);
        }
        for (int C : cfg.C_values) {
            EpisodeSpec c_spec = spec;
            c_spec.C = C;

            const int n = cfg.n_eval_episodes;
            const int jobs = std::max(1, std::min(cfg.jobs, n));
            std::vector<detail::EpisodeOutcome> partial(static_cast<size_t>(jobs));
            std::exception_ptr first_error;
            std::mutex error_mutex;

            auto run_range = [&](int job, int lo, int hi) {
                try {
                    std::unique_ptr<Head> local_head = head.clone();
                    std::unique_ptr<EmbeddingProvider> local_provider = provider.clone();
                    detail::EpisodeOutcome acc;
                    for (int e = lo; e < hi; ++e) {
                        EpisodeSpec es = c_spec;
                        es.seed = Rng::derive(seed, {seed_tag::eval, static_cast<uint64_t>(C),
                                                     static_cast<uint64_t>(e)});
                        Episode episode =
                            sample_episode(test_index, es, plan ? &*plan : nullptr);
                        auto outcome = detail::score_episode(*local_head, *local_provider,
                                                             episode, head_cfg, es.seed);
                        acc.correct += outcome.correct;
                        acc.total += outcome.total;
                    }
                    partial[static_cast<size_t>(job)] = acc;
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            };

            if (jobs == 1) {
                run_range(0, 0, n);
            } else {
                std::vector<std::thread> workers;
                const int chunk = (n + jobs - 1) / jobs;
                for (int j = 0; j < jobs; ++j) {
                    const int lo = j * chunk;
                    const int hi = std::min(n, lo + chunk);
                    workers.emplace_back(run_range, j, lo, hi);
                }
                for (auto& w : workers) w.join();
            }
            if (first_error) std::rethrow_exception(first_error);

            EvalRow row;
            row.seed = seed;
            row.C = C;
            for (const auto& p : partial) {
                row.correct += p.correct;
                row.total += p.total;
            }
            row.accuracy =
                row.total == 0 ? 0.0 : static_cast<double>(row.correct) / static_cast<double>(row.total);
            report.rows.push_back(row);
        }
    }
    return report;
}

}  // namespace fewshot
