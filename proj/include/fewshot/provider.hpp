#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fewshot/dataset.hpp"
#include "fewshot/embedding.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/heads.hpp"

namespace fewshot {

// Source of sentence vectors for episode construction. The frozen
// provider serves constant store rows; the trainable provider runs the
// toy encoder inside the graph so gradients reach its tables.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual int dim() const = 0;

    // Graph node for the store record at `index`. When `frozen` is set,
    // the vector enters as a constant even if the provider is trainable.
    virtual Var vector_var(Graph& g, size_t index, bool frozen) = 0;

    virtual std::vector<Tensor*> trainable_params() { return {}; }

    // Providers are stateful per graph (parameter bindings are cached);
    // call once per new graph before vector_var.
    virtual void bind(Graph& g) { (void)g; }

    virtual std::unique_ptr<EmbeddingProvider> clone() const = 0;
};

class FrozenProvider final : public EmbeddingProvider {
public:
    explicit FrozenProvider(const EmbeddingStore& store) : store_(&store) {}
    int dim() const override { return store_->dim(); }
    Var vector_var(Graph& g, size_t index, bool /*frozen*/) override {
        const auto& vec = store_->at(index).vector;
        return g.leaf(Tensor::row(vec));
    }
    std::unique_ptr<EmbeddingProvider> clone() const override {
        return std::make_unique<FrozenProvider>(*this);
    }

private:
    const EmbeddingStore* store_;
};

// Encodes record texts through the toy encoder. The store passed in is
// only consulted for ids/labels; vectors come from the encoder.
class TrainableProvider final : public EmbeddingProvider {
public:
    TrainableProvider(const EmbeddingStore& store, std::shared_ptr<ToyEncoder> encoder,
                      std::vector<std::string> texts)
        : store_(&store), encoder_(std::move(encoder)), texts_(std::move(texts)) {
        if (texts_.size() != store_->size()) {
            throw ConfigError("trainable provider: text count does not match store size");
        }
        encoder_->token_table().make_param();
        encoder_->projection().make_param();
    }

    int dim() const override { return encoder_->out_dim(); }

    void bind(Graph& g) override {
        bound_graph_ = &g;
        table_ = g.param(encoder_->token_table());
        proj_ = g.param(encoder_->projection());
    }

    Var vector_var(Graph& g, size_t index, bool frozen) override {
        if (frozen) return g.leaf(encoder_->encode(texts_.at(index)));
        if (bound_graph_ != &g) {
            throw ConfigError("trainable provider: bind(graph) must run before vector_var");
        }
        return encoder_->encode_g(g, table_, proj_, texts_.at(index));
    }

    std::vector<Tensor*> trainable_params() override {
        return {&encoder_->token_table(), &encoder_->projection()};
    }

    std::unique_ptr<EmbeddingProvider> clone() const override {
        // The encoder is shared, not copied: evaluation clones freeze it,
        // so concurrent readers are safe.
        return std::make_unique<TrainableProvider>(*this);
    }

    ToyEncoder& encoder() { return *encoder_; }

private:
    const EmbeddingStore* store_;
    std::shared_ptr<ToyEncoder> encoder_;
    std::vector<std::string> texts_;
    Graph* bound_graph_ = nullptr;
    Var table_{}, proj_{};
};

// Materializes a sampled episode inside a graph. `freeze_encoder` makes
// every vector a constant (the evaluation-time contract).
inline EpisodeVars realize_episode(Graph& g, EmbeddingProvider& provider, const Episode& episode,
                                   bool freeze_encoder) {
    EpisodeVars ep;
    ep.class_names = episode.class_names;
    provider.bind(g);
    for (size_t c = 0; c < episode.support_ids.size(); ++c) {
        std::vector<Var> members;
        for (size_t idx : episode.support_ids[c]) {
            members.push_back(provider.vector_var(g, idx, freeze_encoder));
        }
        ep.support.push_back(std::move(members));
    }
    for (size_t c = 0; c < episode.query_ids.size(); ++c) {
        for (size_t idx : episode.query_ids[c]) {
            ep.query.push_back(provider.vector_var(g, idx, freeze_encoder));
            ep.query_labels.push_back(static_cast<int>(c));
        }
    }
    for (size_t idx : episode.unlabeled_ids) {
        ep.unlabeled.push_back(provider.vector_var(g, idx, freeze_encoder));
    }
    return ep;
}

}  // namespace fewshot
