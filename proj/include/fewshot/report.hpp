#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fewshot/embedding.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/train_eval.hpp"

namespace fewshot {

inline const char* kCsvHeader = "dataset,method,metric,relation_module,C,K,Q,seed,accuracy";

struct CsvRow {
    std::string dataset;
    std::string method;
    std::string metric;           // empty when the method takes none
    std::string relation_module;  // empty when the method takes none
    int C = 0;
    int K = 0;
    int Q = 0;
    uint64_t seed = 0;
    double accuracy = 0.0;
};

struct CsvFile {
    std::string fingerprint;  // "dataset=<d>;K=<k>;Q=<q>"
    std::vector<CsvRow> rows;
};

inline std::string result_fingerprint(const std::string& dataset, int K, int Q) {
    return "dataset=" + dataset + ";K=" + std::to_string(K) + ";Q=" + std::to_string(Q);
}

inline std::vector<CsvRow> report_to_rows(const EvalReport& report) {
    std::vector<CsvRow> rows;
    rows.reserve(report.rows.size());
    for (const auto& r : report.rows) {
        CsvRow row;
        row.dataset = report.dataset;
        row.method = method_name(report.method);
        if (report.metric) row.metric = metric_name(*report.metric);
        if (report.relation_module) row.relation_module = relation_module_name(*report.relation_module);
        row.C = r.C;
        row.K = report.K;
        row.Q = report.Q;
        row.seed = r.seed;
        row.accuracy = r.accuracy;
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void write_result_csv(const std::vector<CsvRow>& rows, const std::string& path) {
    if (rows.empty()) throw ConfigError("refusing to write an empty result file");
    const std::string& dataset = rows.front().dataset;
    if (dataset.find(',') != std::string::npos || dataset.find('\n') != std::string::npos) {
        throw ConfigError("dataset name '" + dataset + "' must not contain ',' or newlines");
    }
    for (const auto& r : rows) {
        if (r.dataset != dataset || r.K != rows.front().K || r.Q != rows.front().Q) {
            throw ConfigError("result rows disagree on dataset/K/Q; write one file per protocol");
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "# fingerprint=" << result_fingerprint(dataset, rows.front().K, rows.front().Q) << "\n";
    out << kCsvHeader << "\n";
    for (const auto& r : rows) {
        out << r.dataset << ',' << r.method << ',' << r.metric << ',' << r.relation_module << ','
            << r.C << ',' << r.K << ',' << r.Q << ',' << r.seed << ','
            << format_double(r.accuracy) << "\n";
    }
    if (!out) throw DataError("write failed for '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline int parse_int_field(const std::string& s, const std::string& where) {
    try {
        size_t pos = 0;
        int v = std::stoi(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(where + ": expected an integer, got '" + s + "'");
    }
}

}  // namespace detail

inline CsvFile read_result_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    CsvFile file;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    const std::string fp_prefix = "# fingerprint=";
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        if (line[0] == '#') {
            if (line.compare(0, fp_prefix.size(), fp_prefix) == 0) {
                file.fingerprint = line.substr(fp_prefix.size());
            }
            continue;
        }
        if (!header_seen) {
            if (line != kCsvHeader) {
                throw DataError(where + ": unexpected column header '" + line + "'");
            }
            header_seen = true;
            continue;
        }
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 9) {
            throw DataError(where + ": expected 9 fields, got " + std::to_string(fields.size()));
        }
        CsvRow row;
        row.dataset = fields[0];
        row.method = fields[1];
        row.metric = fields[2];
        row.relation_module = fields[3];
        row.C = detail::parse_int_field(fields[4], where);
        row.K = detail::parse_int_field(fields[5], where);
        row.Q = detail::parse_int_field(fields[6], where);
        try {
            row.seed = std::stoull(fields[7]);
        } catch (const std::exception&) {
            throw DataError(where + ": expected a seed, got '" + fields[7] + "'");
        }
        row.accuracy = parse_double(fields[8], where + ": accuracy");
        file.rows.push_back(std::move(row));
    }
    if (!header_seen) throw DataError(path + ": not a result file (no column header)");
    if (file.fingerprint.empty()) throw DataError(path + ": missing fingerprint comment");
    return file;
}

// Pools rows from several result files after checking they describe the same
// protocol (same dataset, K and Q). Seeds may differ between files; the table
// renderer averages over whatever union of seeds it is handed.
inline std::vector<CsvRow> merge_result_files(const std::vector<CsvFile>& files,
                                              const std::vector<std::string>& names) {
    if (files.empty()) throw ConfigError("no result files to merge");
    std::vector<CsvRow> rows;
    for (size_t i = 0; i < files.size(); ++i) {
        if (files[i].fingerprint != files[0].fingerprint) {
            throw DataError("'" + names[i] + "' holds results for a different protocol (" +
                            files[i].fingerprint + ") than '" + names[0] + "' (" +
                            files[0].fingerprint + ")");
        }
        rows.insert(rows.end(), files[i].rows.begin(), files[i].rows.end());
    }
    return rows;
}

namespace detail {

// Row order of the summary table: metric methods first (euclid before
// cosine), then relation heads, induction, and the fine-tuned baselines.
inline int pivot_rank(const std::string& method, const std::string& metric,
                      const std::string& module_) {
    static const struct {
        const char *method, *metric, *module_;
    } kOrder[] = {
        {"matching", "euclid", ""},   {"matching", "cosine", ""},
        {"proto", "euclid", ""},      {"proto", "cosine", ""},
        {"protopp", "euclid", ""},    {"protopp", "cosine", ""},
        {"relation", "", "base"},     {"relation", "", "ntl"},
        {"induction", "", "ntl"},     {"baseline", "", ""},
        {"baselinepp", "euclid", ""}, {"baselinepp", "cosine", ""},
    };
    for (int i = 0; i < static_cast<int>(std::size(kOrder)); ++i) {
        if (method == kOrder[i].method && metric == kOrder[i].metric &&
            module_ == kOrder[i].module_) {
            return i;
        }
    }
    return static_cast<int>(std::size(kOrder));
}

inline std::string format_percent(double accuracy) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * accuracy);
    return buf;
}

}  // namespace detail

// Renders accuracies as a method x C table. Cells show the mean over all
// pooled seeds as a percentage with one decimal; the best cell per column
// gets a '*' (first listed wins ties); configurations that were never run
// under some C show '-'.
inline std::string render_pivot_table(const std::vector<CsvRow>& rows) {
    if (rows.empty()) throw ConfigError("no rows to render");

    struct Group {
        std::string method, metric, module_;
        int rank;
        size_t order;  // tie-break: first appearance
        std::map<int, std::pair<double, int>> cells;  // C -> (sum, count)
    };
    std::vector<Group> groups;
    std::set<int> c_values;
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        c_values.insert(r.C);
        Group* g = nullptr;
        for (auto& cand : groups) {
            if (cand.method == r.method && cand.metric == r.metric &&
                cand.module_ == r.relation_module) {
                g = &cand;
                break;
            }
        }
        if (!g) {
            groups.push_back({r.method, r.metric, r.relation_module,
                              detail::pivot_rank(r.method, r.metric, r.relation_module), i, {}});
            g = &groups.back();
        }
        auto& cell = g->cells[r.C];
        cell.first += r.accuracy;
        cell.second += 1;
    }
    std::stable_sort(groups.begin(), groups.end(), [](const Group& a, const Group& b) {
        if (a.rank != b.rank) return a.rank < b.rank;
        return a.order < b.order;
    });

    const std::vector<int> cs(c_values.begin(), c_values.end());

    // pick the best mean per column, scanning in display order
    std::map<int, int> best;  // C -> group index
    for (int c : cs) {
        int best_idx = -1;
        double best_mean = 0.0;
        for (size_t gi = 0; gi < groups.size(); ++gi) {
            auto it = groups[gi].cells.find(c);
            if (it == groups[gi].cells.end()) continue;
            const double mean = it->second.first / it->second.second;
            if (best_idx < 0 || mean > best_mean) {
                best_idx = static_cast<int>(gi);
                best_mean = mean;
            }
        }
        best[c] = best_idx;
    }

    std::vector<std::vector<std::string>> table;
    std::vector<std::string> head = {"method", "metric", "module"};
    for (int c : cs) head.push_back("C=" + std::to_string(c));
    table.push_back(head);
    for (size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        std::vector<std::string> out = {g.method, g.metric.empty() ? "-" : g.metric,
                                        g.module_.empty() ? "-" : g.module_};
        for (int c : cs) {
            auto it = g.cells.find(c);
            if (it == g.cells.end()) {
                out.push_back("-");
            } else {
                std::string cell = detail::format_percent(it->second.first / it->second.second);
                if (best[c] == static_cast<int>(gi)) cell = "*" + cell;
                out.push_back(cell);
            }
        }
        table.push_back(std::move(out));
    }

    std::vector<size_t> width(table[0].size(), 0);
    for (const auto& row : table) {
        for (size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
    }
    std::ostringstream out;
    for (const auto& row : table) {
        for (size_t i = 0; i < row.size(); ++i) {
            if (i) out << "  ";
            if (i < 3) {
                out << row[i] << std::string(width[i] - row[i].size(), ' ');
            } else {
                out << std::string(width[i] - row[i].size(), ' ') << row[i];
            }
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace fewshot
