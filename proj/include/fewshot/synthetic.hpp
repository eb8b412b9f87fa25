#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/embedding.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

// Gaussian cluster benchmark. Class centers live on a sphere of radius
// 1.2 * center_dist inside a `latent_dim`-dimensional coordinate subspace,
// rejection-sampled so every pair of centers is at least `center_dist`
// apart; per-sample noise is isotropic over all `dim` coordinates. The
// shared latent subspace matters: once a handful of training classes span
// it, relations learned on them carry over to held-out classes instead of
// being blind to directions no training class ever used.
inline EmbeddingStore make_cluster_store(int n_classes, int per_class, int dim,
                                         double center_dist, double sigma, uint64_t seed,
                                         int latent_dim = 6) {
    if (n_classes < 2) throw ConfigError("cluster store: need at least 2 classes");
    if (per_class < 1) throw ConfigError("cluster store: need at least 1 sample per class");
    if (dim < 2) throw ConfigError("cluster store: dimension must be >= 2");
    if (latent_dim < 2 || latent_dim > dim) {
        throw ConfigError("cluster store: latent_dim must be between 2 and dim");
    }
    if (center_dist <= 0) throw ConfigError("cluster store: center_dist must be positive");

    Rng center_rng(Rng::derive(seed, {seed_tag::synth, 0, 0}));
    const double radius = 1.2 * center_dist;
    std::vector<std::vector<double>> centers;
    int attempts = 0;
    while (static_cast<int>(centers.size()) < n_classes) {
        if (++attempts > 200000) {
            throw ConfigError("cluster store: cannot place " + std::to_string(n_classes) +
                              " centers at distance " + std::to_string(center_dist) +
                              " in a " + std::to_string(latent_dim) +
                              "-dimensional latent space; fewer classes or a larger "
                              "latent_dim would fit");
        }
        std::vector<double> c(static_cast<size_t>(dim), 0.0);
        double norm2 = 0.0;
        for (int i = 0; i < latent_dim; ++i) {
            c[static_cast<size_t>(i)] = center_rng.normal();
            norm2 += c[static_cast<size_t>(i)] * c[static_cast<size_t>(i)];
        }
        if (norm2 <= 0) continue;
        const double scale = radius / std::sqrt(norm2);
        for (int i = 0; i < latent_dim; ++i) c[static_cast<size_t>(i)] *= scale;
        bool far_enough = true;
        for (const auto& o : centers) {
            double d2 = 0.0;
            for (int i = 0; i < dim; ++i) {
                const double diff = c[static_cast<size_t>(i)] - o[static_cast<size_t>(i)];
                d2 += diff * diff;
            }
            if (d2 < center_dist * center_dist) {
                far_enough = false;
                break;
            }
        }
        if (far_enough) centers.push_back(std::move(c));
    }

    EmbeddingStore store(dim);
    char name[32];
    for (int c = 0; c < n_classes; ++c) {
        std::snprintf(name, sizeof(name), "cls%02d", c);
        Rng rng(Rng::derive(seed, {seed_tag::synth, 1, static_cast<uint64_t>(c)}));
        for (int s = 0; s < per_class; ++s) {
            EmbeddingRecord rec;
            char id[48];
            std::snprintf(id, sizeof(id), "%s-s%03d", name, s);
            rec.id = id;
            rec.label = name;
            rec.vector = centers[static_cast<size_t>(c)];
            for (double& v : rec.vector) v += sigma * rng.normal();
            store.add(std::move(rec));
        }
    }
    return store;
}

// Review fixture with a pinned star distribution: stars cycle 1..5 within
// each category, so per-task label counts are computable by hand.
inline std::vector<DataRecord> make_review_fixture(const std::vector<std::string>& categories,
                                                   int per_category, uint64_t seed) {
    if (per_category < 1) throw ConfigError("review fixture: need at least 1 review per category");
    static const char* kWords[] = {"battery", "great",  "broke",   "sturdy", "slow",
                                   "bright",  "cheap",  "quality", "loud",   "works"};
    std::vector<DataRecord> records;
    for (size_t ci = 0; ci < categories.size(); ++ci) {
        Rng rng(Rng::derive(seed, {seed_tag::synth, 0xa5, ci}));
        for (int i = 0; i < per_category; ++i) {
            DataRecord rec;
            rec.id = categories[ci] + "-r" + std::to_string(i);
            rec.category = categories[ci];
            rec.stars = 1 + i % 5;
            rec.label = "stars" + std::to_string(rec.stars);
            std::string text;
            const int len = 3 + static_cast<int>(rng.below(5));
            for (int w = 0; w < len; ++w) {
                if (w) text += ' ';
                text += kWords[rng.below(10)];
            }
            rec.text = text;
            records.push_back(std::move(rec));
        }
    }
    return records;
}

inline void save_jsonl(const std::vector<DataRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (const auto& r : records) {
        nlohmann::json obj;
        obj["id"] = r.id;
        obj["text"] = r.text;
        obj["label"] = r.label;
        if (!r.category.empty()) obj["category"] = r.category;
        if (r.stars > 0) obj["stars"] = r.stars;
        if (r.has_vector) obj["vector"] = r.vector;
        out << obj.dump() << "\n";
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace fewshot
