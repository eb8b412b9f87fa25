#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/embedding.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/log.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

// C-way K-shot episode request. `seed` pins the draw completely: two
// calls with equal spec and index yield identical episodes.
struct EpisodeSpec {
    int C = 2;
    int K = 5;
    int Q = 5;
    int U = 0;
    uint64_t seed = 0;

    void validate() const {
        if (C < 2) throw ConfigError("episode spec: C must be >= 2, got " + std::to_string(C));
        if (K < 1) throw ConfigError("episode spec: K must be >= 1, got " + std::to_string(K));
        if (Q < 1) throw ConfigError("episode spec: Q must be >= 1, got " + std::to_string(Q));
        if (U < 0) throw ConfigError("episode spec: U must be >= 0, got " + std::to_string(U));
    }
};

struct SplitRatios {
    double train = 0.5;
    double valid = 0.0;
    double test = 0.5;
};

struct ClassSplit {
    std::vector<std::string> train;
    std::vector<std::string> valid;
    std::vector<std::string> test;
};

// Partitions class names into disjoint train/valid/test universes.
// Classes without enough samples to fill an episode are dropped up
// front (with a warning) instead of failing runs later.
inline ClassSplit split_classes(const std::map<std::string, int>& label_counts,
                                const SplitRatios& ratios, int min_per_class, uint64_t seed) {
    if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0) {
        throw ConfigError("split: ratios must be non-negative");
    }
    const double total = ratios.train + ratios.valid + ratios.test;
    if (total <= 0) throw ConfigError("split: ratios sum to zero");

    std::vector<std::string> names;
    for (const auto& [label, count] : label_counts) {
        if (count < min_per_class) {
            log_warn("split: dropping class '" + label + "' (" + std::to_string(count) +
                     " samples, need " + std::to_string(min_per_class) + ")");
            continue;
        }
        names.push_back(label);
    }
    const size_t n = names.size();
    if (n == 0) {
        throw ConfigError("split: no classes with >= " + std::to_string(min_per_class) +
                          " samples remain");
    }

    Rng rng(Rng::derive(seed, {seed_tag::split}));
    rng.shuffle(names);

    auto share = [&](double r) {
        return static_cast<size_t>(std::llround(static_cast<double>(n) * r / total));
    };
    size_t n_train = share(ratios.train);
    size_t n_valid = share(ratios.valid);
    if (n_train + n_valid > n) n_valid = n - n_train;
    const size_t n_test = n - n_train - n_valid;

    auto check = [&](const char* part, double ratio, size_t got) {
        if (ratio > 0 && got == 0) {
            throw ConfigError(std::string("split: ") + part + " partition is empty (" +
                              std::to_string(n) + " usable classes are too few)");
        }
    };
    check("train", ratios.train, n_train);
    check("valid", ratios.valid, n_valid);
    check("test", ratios.test, n_test);

    ClassSplit split;
    split.train.assign(names.begin(), names.begin() + static_cast<long>(n_train));
    split.valid.assign(names.begin() + static_cast<long>(n_train),
                       names.begin() + static_cast<long>(n_train + n_valid));
    split.test.assign(names.begin() + static_cast<long>(n_train + n_valid), names.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.valid.begin(), split.valid.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

// Per-class sample indices for one partition of a store, in sorted class
// order so sampling is reproducible.
class LabeledIndex {
public:
    LabeledIndex(const EmbeddingStore& store, const std::vector<std::string>& classes)
        : store_(&store) {
        std::set<std::string> wanted(classes.begin(), classes.end());
        if (wanted.size() != classes.size()) {
            throw ConfigError("labeled index: duplicate class names in partition");
        }
        std::map<std::string, std::vector<size_t>> grouped;
        for (size_t i = 0; i < store.size(); ++i) {
            const std::string& label = store.at(i).label;
            if (wanted.count(label)) grouped[label].push_back(i);
        }
        for (const auto& name : wanted) {
            auto it = grouped.find(name);
            if (it == grouped.end()) {
                throw DataError("labeled index: class '" + name + "' has no samples in the store");
            }
            classes_.push_back(name);
            samples_.push_back(std::move(it->second));
        }
    }

    const EmbeddingStore& store() const { return *store_; }
    size_t class_count() const { return classes_.size(); }
    const std::vector<std::string>& classes() const { return classes_; }
    const std::vector<size_t>& samples(size_t class_idx) const { return samples_.at(class_idx); }

private:
    const EmbeddingStore* store_;
    std::vector<std::string> classes_;
    std::vector<std::vector<size_t>> samples_;
};

// One pinned support draw per class, reused across every episode of a
// run (the fixed-shot evaluation mode).
struct FixedShotPlan {
    int K = 0;
    std::unordered_map<std::string, std::vector<size_t>> pinned;  // class -> store indices
};

inline FixedShotPlan make_fixed_shot_plan(const LabeledIndex& index, int K, uint64_t run_seed) {
    FixedShotPlan plan;
    plan.K = K;
    for (size_t c = 0; c < index.class_count(); ++c) {
        const auto& pool = index.samples(c);
        if (static_cast<int>(pool.size()) < K) {
            throw DataError("fixed shots: class '" + index.classes()[c] + "' has " +
                            std::to_string(pool.size()) + " samples, need K=" + std::to_string(K));
        }
        Rng rng(Rng::derive(run_seed, {seed_tag::fixed_shots, static_cast<uint64_t>(c)}));
        std::vector<int> picks = rng.sample_indices(static_cast<int>(pool.size()), K);
        std::vector<size_t>& ids = plan.pinned[index.classes()[c]];
        for (int p : picks) ids.push_back(pool[static_cast<size_t>(p)]);
        std::sort(ids.begin(), ids.end());
    }
    return plan;
}

// One sampled task: class names plus store indices for support, query
// and unlabeled samples. Index sets are pairwise disjoint.
struct Episode {
    std::vector<std::string> class_names;
    std::vector<std::vector<size_t>> support_ids;  // [C][K]
    std::vector<std::vector<size_t>> query_ids;    // [C][Q]
    std::vector<size_t> unlabeled_ids;             // [U]
};

inline Episode sample_episode(const LabeledIndex& index, const EpisodeSpec& spec,
                              const FixedShotPlan* plan = nullptr) {
    spec.validate();
    if (index.class_count() < static_cast<size_t>(spec.C)) {
        throw ConfigError("episode needs C=" + std::to_string(spec.C) +
                          " distinct classes, partition has " +
                          std::to_string(index.class_count()));
    }
    if (plan && plan->K != spec.K) {
        throw ConfigError("fixed-shot plan was built for K=" + std::to_string(plan->K) +
                          ", episode wants K=" + std::to_string(spec.K));
    }

    Rng rng(spec.seed);
    Episode ep;
    std::vector<int> class_picks = rng.sample_indices(static_cast<int>(index.class_count()), spec.C);
    std::vector<size_t> leftover;  // per-class remainder, pooled for the unlabeled draw
    for (int pick : class_picks) {
        const size_t ci = static_cast<size_t>(pick);
        const std::string& name = index.classes()[ci];
        const std::vector<size_t>& pool = index.samples(ci);
        ep.class_names.push_back(name);

        std::vector<size_t> support, query, rest;
        if (plan) {
            auto it = plan->pinned.find(name);
            if (it == plan->pinned.end()) {
                throw DataError("fixed shots: no pinned supports for class '" + name + "'");
            }
            support = it->second;
            std::unordered_set<size_t> taken(support.begin(), support.end());
            for (size_t s : pool) {
                if (!taken.count(s)) rest.push_back(s);
            }
            if (rest.size() < static_cast<size_t>(spec.Q)) {
                throw DataError("class '" + name + "' has " + std::to_string(rest.size()) +
                                " samples beyond the pinned supports, episode needs Q=" +
                                std::to_string(spec.Q));
            }
            for (int p : rng.sample_indices(static_cast<int>(rest.size()), spec.Q)) {
                query.push_back(rest[static_cast<size_t>(p)]);
            }
        } else {
            if (pool.size() < static_cast<size_t>(spec.K + spec.Q)) {
                throw DataError("class '" + name + "' has " + std::to_string(pool.size()) +
                                " samples, episode needs K+Q=" + std::to_string(spec.K + spec.Q));
            }
            std::vector<int> picks =
                rng.sample_indices(static_cast<int>(pool.size()), spec.K + spec.Q);
            for (int k = 0; k < spec.K; ++k) {
                support.push_back(pool[static_cast<size_t>(picks[static_cast<size_t>(k)])]);
            }
            for (int q = 0; q < spec.Q; ++q) {
                query.push_back(pool[static_cast<size_t>(picks[static_cast<size_t>(spec.K + q)])]);
            }
        }

        std::unordered_set<size_t> used(support.begin(), support.end());
        used.insert(query.begin(), query.end());
        for (size_t s : pool) {
            if (!used.count(s)) leftover.push_back(s);
        }
        ep.support_ids.push_back(std::move(support));
        ep.query_ids.push_back(std::move(query));
    }

    if (spec.U > 0) {
        if (leftover.size() < static_cast<size_t>(spec.U)) {
            throw DataError("episode wants U=" + std::to_string(spec.U) +
                            " unlabeled samples but only " + std::to_string(leftover.size()) +
                            " remain in its classes");
        }
        for (int p : rng.sample_indices(static_cast<int>(leftover.size()), spec.U)) {
            ep.unlabeled_ids.push_back(leftover[static_cast<size_t>(p)]);
        }
    }
    return ep;
}

// Review-style binary task: one (category, star-threshold) pair with
// reviews labeled negative (< t) or positive (>= t).
struct BinaryTaskSpec {
    std::string category;
    int threshold = 0;

    std::string name() const { return category + ".t" + std::to_string(threshold); }
};

struct BinaryTask {
    BinaryTaskSpec spec;
    std::vector<size_t> record_indices;     // into the source record list
    std::vector<std::string> binary_labels;  // aligned with record_indices
};

inline const std::vector<int>& allowed_thresholds() {
    static const std::vector<int> t = {2, 4, 5};
    return t;
}

inline std::vector<BinaryTask> build_arsc_tasks(const std::vector<DataRecord>& records,
                                                const std::vector<std::string>& categories,
                                                const std::vector<int>& thresholds) {
    for (int t : thresholds) {
        const auto& ok = allowed_thresholds();
        if (std::find(ok.begin(), ok.end(), t) == ok.end()) {
            throw ConfigError("task threshold must be one of {2,4,5}, got " + std::to_string(t));
        }
    }
    std::set<std::string> present;
    for (const auto& r : records) {
        if (!r.category.empty()) present.insert(r.category);
    }
    std::vector<BinaryTask> tasks;
    for (const auto& cat : categories) {
        if (!present.count(cat)) {
            throw ConfigError("unknown review category '" + cat + "'");
        }
        for (int t : thresholds) {
            BinaryTask task;
            task.spec = BinaryTaskSpec{cat, t};
            for (size_t i = 0; i < records.size(); ++i) {
                const DataRecord& r = records[i];
                if (r.category != cat) continue;
                if (r.stars < 1) {
                    throw DataError("record '" + r.id + "' in category '" + cat +
                                    "' has no star rating");
                }
                task.record_indices.push_back(i);
                task.binary_labels.push_back(r.stars >= t ? "positive" : "negative");
            }
            tasks.push_back(std::move(task));
        }
    }
    return tasks;
}

}  // namespace fewshot
