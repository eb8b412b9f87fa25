#pragma once

#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "fewshot/errors.hpp"
#include "fewshot/graph.hpp"
#include "fewshot/rng.hpp"
#include "fewshot/tensor.hpp"

namespace fewshot {

struct EmbeddingRecord {
    std::string id;
    std::string label;
    std::vector<double> vector;
};

// Shortest decimal form that parses back to the identical double, so
// store files round-trip bit-exactly.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw DataError(context + ": bad number '" + std::string(s) + "'");
    }
    return v;
}

// In-memory collection of embedding rows sharing one dimension, with
// unique ids. This is the currency between encoders and heads.
class EmbeddingStore {
public:
    EmbeddingStore() = default;
    explicit EmbeddingStore(int dim) : dim_(dim) {
        if (dim <= 0) throw ConfigError("embedding store: dimension must be positive");
    }

    void add(EmbeddingRecord rec) {
        if (rec.id.empty() || rec.label.empty()) {
            throw DataError("embedding store: record needs non-empty id and label");
        }
        if (rec.id.find_first_of("\t\n") != std::string::npos ||
            rec.label.find_first_of("\t\n") != std::string::npos) {
            throw DataError("embedding store: id/label may not contain tabs or newlines (id '" +
                            rec.id + "')");
        }
        if (dim_ == 0) dim_ = static_cast<int>(rec.vector.size());
        if (static_cast<int>(rec.vector.size()) != dim_) {
            throw DataError("embedding store: record '" + rec.id + "' has " +
                            std::to_string(rec.vector.size()) + " values, store dimension is " +
                            std::to_string(dim_));
        }
        auto [it, inserted] = by_id_.emplace(rec.id, records_.size());
        if (!inserted) throw DataError("embedding store: duplicate id '" + rec.id + "'");
        records_.push_back(std::move(rec));
    }

    int dim() const { return dim_; }
    size_t size() const { return records_.size(); }
    const std::vector<EmbeddingRecord>& records() const { return records_; }
    const EmbeddingRecord& at(size_t i) const { return records_.at(i); }

    const EmbeddingRecord* find(const std::string& id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &records_[it->second];
    }

    // label -> sample count, ordered by label for deterministic iteration
    std::map<std::string, int> label_counts() const {
        std::map<std::string, int> counts;
        for (const auto& r : records_) ++counts[r.label];
        return counts;
    }

private:
    int dim_ = 0;
    std::vector<EmbeddingRecord> records_;
    std::unordered_map<std::string, size_t> by_id_;
};

// Text format: header line `dim=<d>`, then `<id>\t<label>\t<v1> <v2> ...`
// per record. UTF-8, LF line endings.
inline void save_store(const EmbeddingStore& store, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "dim=" << store.dim() << "\n";
    for (const auto& rec : store.records()) {
        out << rec.id << '\t' << rec.label << '\t';
        for (size_t i = 0; i < rec.vector.size(); ++i) {
            if (i > 0) out << ' ';
            out << format_double(rec.vector[i]);
        }
        out << '\n';
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline EmbeddingStore load_store(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open embedding store '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ":1: empty file, expected `dim=<d>` header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("dim=", 0) != 0) {
        throw DataError(path + ":1: expected `dim=<d>` header, got '" + line + "'");
    }
    int dim = 0;
    {
        std::string_view rest(line);
        rest.remove_prefix(4);
        auto res = std::from_chars(rest.data(), rest.data() + rest.size(), dim);
        if (res.ec != std::errc{} || res.ptr != rest.data() + rest.size() || dim <= 0) {
            throw DataError(path + ":1: bad dimension '" + std::string(rest) + "'");
        }
    }
    EmbeddingStore store(dim);
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw DataError(where + ": expected `id<TAB>label<TAB>values`");
        }
        EmbeddingRecord rec;
        rec.id = line.substr(0, t1);
        rec.label = line.substr(t1 + 1, t2 - t1 - 1);
        std::string_view values(line);
        values.remove_prefix(t2 + 1);
        size_t pos = 0;
        while (pos < values.size()) {
            while (pos < values.size() && values[pos] == ' ') ++pos;
            if (pos >= values.size()) break;
            size_t end = values.find(' ', pos);
            if (end == std::string_view::npos) end = values.size();
            rec.vector.push_back(parse_double(values.substr(pos, end - pos), where));
            pos = end;
        }
        if (static_cast<int>(rec.vector.size()) != dim) {
            throw DataError(where + ": expected " + std::to_string(dim) + " values, got " +
                            std::to_string(rec.vector.size()));
        }
        try {
            store.add(std::move(rec));
        } catch (const DataError& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    return store;
}

// Bag-of-embeddings sentence encoder: lowercase whitespace tokens, mean
// of per-token rows, one linear projection. Unknown tokens share row 0.
// It exists so the fine-tuning protocols can push gradients through an
// encoder without a transformer in the loop.
class ToyEncoder {
public:
    ToyEncoder(const std::vector<std::string>& texts, int token_dim, int out_dim, uint64_t seed) {
        if (token_dim <= 0 || out_dim <= 0) {
            throw ConfigError("toy encoder: dimensions must be positive");
        }
        std::map<std::string, int> seen;
        for (const auto& t : texts) {
            for (const auto& tok : tokenize(t)) seen.emplace(tok, 0);
        }
        int next = 1;  // row 0 is reserved for UNK
        for (auto& [tok, idx] : seen) idx = next++;
        vocab_ = std::move(seen);
        Rng table_rng(Rng::derive(seed, {seed_tag::encoder, 1}));
        Rng proj_rng(Rng::derive(seed, {seed_tag::encoder, 2}));
        token_table_ = Tensor::glorot({next, token_dim}, table_rng);
        projection_ = Tensor::glorot({token_dim, out_dim}, proj_rng);
    }

    static std::vector<std::string> tokenize(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        for (unsigned char c : text) {
            if (std::isspace(c)) {
                if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
            } else {
                cur.push_back(static_cast<char>(std::tolower(c)));
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }

    std::vector<int> token_indices(const std::string& text) const {
        std::vector<int> idx;
        for (const auto& tok : tokenize(text)) {
            auto it = vocab_.find(tok);
            idx.push_back(it == vocab_.end() ? 0 : it->second);
        }
        if (idx.empty()) idx.push_back(0);  // empty text encodes as a lone UNK
        return idx;
    }

    Tensor encode(const std::string& text) const {
        const std::vector<int> idx = token_indices(text);
        const int d0 = token_table_.shape[1];
        const int d = projection_.shape[1];
        std::vector<double> mean(static_cast<size_t>(d0), 0.0);
        for (int i : idx) {
            for (int j = 0; j < d0; ++j) mean[static_cast<size_t>(j)] += token_table_.at(i, j);
        }
        for (double& v : mean) v /= static_cast<double>(idx.size());
        Tensor out = Tensor::zeros({d});
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int i = 0; i < d0; ++i) acc += mean[static_cast<size_t>(i)] * projection_.at(i, j);
            out.data[static_cast<size_t>(j)] = acc;
        }
        return out;
    }

    // Differentiable path. `table` and `proj` are the graph bindings of
    // token_table()/projection(), created once per graph by the caller.
    Var encode_g(Graph& g, Var table, Var proj, const std::string& text) const {
        const std::vector<int> idx = token_indices(text);
        Var acc = g.slice0(table, idx[0]);
        for (size_t i = 1; i < idx.size(); ++i) acc = g.add(acc, g.slice0(table, idx[i]));
        Var mean = g.scale(acc, 1.0 / static_cast<double>(idx.size()));
        Var row = g.reshape(mean, {1, token_table_.shape[1]});
        return g.reshape(g.matmul(row, proj), {projection_.shape[1]});
    }

    int out_dim() const { return projection_.shape[1]; }
    size_t vocab_size() const { return vocab_.size(); }
    Tensor& token_table() { return token_table_; }
    Tensor& projection() { return projection_; }
    const Tensor& token_table() const { return token_table_; }
    const Tensor& projection() const { return projection_; }

private:
    std::map<std::string, int> vocab_;
    Tensor token_table_;
    Tensor projection_;
};

}  // namespace fewshot
