#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fewshot/errors.hpp"

namespace fewshot {

// One ingested example. `category` and `stars` only matter for review-style
// binary task construction; `vector` carries a precomputed embedding when
// the exporter already ran an external encoder.
struct DataRecord {
    std::string id;
    std::string text;
    std::string label;
    std::string category;
    int stars = 0;  // 0 = absent; valid values are 1..5
    std::vector<double> vector;
    bool has_vector = false;
};

// JSON Lines: one object per line with `text` and `label`, optional
// `category`, `stars`, `id`, `vector`. UTF-8.
inline std::vector<DataRecord> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset '" + path + "'");
    std::vector<DataRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(where + ": malformed JSON: " + e.what());
        }
        if (!obj.is_object()) throw DataError(where + ": expected a JSON object");
        DataRecord rec;
        if (!obj.contains("text") || !obj["text"].is_string()) {
            throw DataError(where + ": missing string field `text`");
        }
        if (!obj.contains("label") || !obj["label"].is_string()) {
            throw DataError(where + ": missing string field `label`");
        }
        rec.text = obj["text"].get<std::string>();
        rec.label = obj["label"].get<std::string>();
        if (obj.contains("id")) {
            if (!obj["id"].is_string()) throw DataError(where + ": `id` must be a string");
            rec.id = obj["id"].get<std::string>();
        } else {
            rec.id = "r" + std::to_string(line_no);
        }
        if (obj.contains("category")) {
            if (!obj["category"].is_string()) {
                throw DataError(where + ": `category` must be a string");
            }
            rec.category = obj["category"].get<std::string>();
        }
        if (obj.contains("stars")) {
            if (!obj["stars"].is_number_integer()) {
                throw DataError(where + ": `stars` must be an integer");
            }
            rec.stars = obj["stars"].get<int>();
            if (rec.stars < 1 || rec.stars > 5) {
                throw DataError(where + ": `stars` must be in [1,5], got " +
                                std::to_string(rec.stars));
            }
        }
        if (obj.contains("vector")) {
            if (!obj["vector"].is_array()) throw DataError(where + ": `vector` must be an array");
            for (const auto& v : obj["vector"]) {
                if (!v.is_number()) throw DataError(where + ": `vector` entries must be numbers");
                rec.vector.push_back(v.get<double>());
            }
            rec.has_vector = true;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace fewshot
