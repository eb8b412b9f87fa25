#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fewshot/config.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/embedding.hpp"
#include "fewshot/episodes.hpp"
#include "fewshot/errors.hpp"
#include "fewshot/heads.hpp"
#include "fewshot/log.hpp"
#include "fewshot/provider.hpp"
#include "fewshot/report.hpp"
#include "fewshot/synthetic.hpp"
#include "fewshot/train_eval.hpp"

namespace fewshot {

// ---- class split files: `<partition>\t<class>` per line ----

inline void save_split(const ClassSplit& split, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << "# class split: train=" << split.train.size() << " valid=" << split.valid.size()
        << " test=" << split.test.size() << "\n";
    for (const auto& c : split.train) out << "train\t" << c << "\n";
    for (const auto& c : split.valid) out << "valid\t" << c << "\n";
    for (const auto& c : split.test) out << "test\t" << c << "\n";
    if (!out) throw DataError("write failed for '" + path + "'");
}

inline ClassSplit load_split(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open split file '" + path + "'");
    ClassSplit split;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const std::string where = path + ":" + std::to_string(line_no);
        const size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw DataError(where + ": expected `<partition>\\t<class>`");
        }
        const std::string part = line.substr(0, tab);
        const std::string name = line.substr(tab + 1);
        if (name.empty()) throw DataError(where + ": empty class name");
        if (part == "train") {
            split.train.push_back(name);
        } else if (part == "valid") {
            split.valid.push_back(name);
        } else if (part == "test") {
            split.test.push_back(name);
        } else {
            throw DataError(where + ": unknown partition '" + part +
                            "' (expected train, valid or test)");
        }
    }
    if (split.train.empty() && split.valid.empty() && split.test.empty()) {
        throw DataError(path + ": split file lists no classes");
    }
    return split;
}

// ---- ingest ----

struct IngestOptions {
    std::string data;
    std::string out;
    std::string encoder = "toy";
    int dim = 16;
    int token_dim = 32;
    uint64_t seed = 0;
};

inline int cmd_ingest(const IngestOptions& o) {
    const auto records = load_jsonl(o.data);
    if (records.empty()) throw DataError("'" + o.data + "' holds no records");
    EmbeddingStore store;
    if (o.encoder == "toy") {
        std::vector<std::string> texts;
        texts.reserve(records.size());
        for (const auto& r : records) texts.push_back(r.text);
        ToyEncoder enc(texts, o.token_dim, o.dim, o.seed);
        store = EmbeddingStore(enc.out_dim());
        for (const auto& r : records) {
            const Tensor v = enc.encode(r.text);
            store.add({r.id, r.label, v.data});
        }
    } else if (o.encoder == "frozen") {
        for (const auto& r : records) {
            if (!r.has_vector) {
                throw DataError("record '" + r.id +
                                "': no `vector` field; frozen ingest expects precomputed "
                                "embeddings in the input");
            }
            if (store.size() == 0) store = EmbeddingStore(static_cast<int>(r.vector.size()));
            store.add({r.id, r.label, r.vector});
        }
    } else {
        throw ConfigError("unknown encoder '" + o.encoder + "' (expected toy or frozen)");
    }
    save_store(store, o.out);
    log_info("ingested " + std::to_string(store.size()) + " records (dim " +
             std::to_string(store.dim()) + ", " + std::to_string(store.label_counts().size()) +
             " classes) into " + o.out);
    return 0;
}

// ---- split ----

struct SplitOptions {
    std::string store;
    std::string out;
    double train = 0.5;
    double valid = 0.0;
    double test = 0.5;
    int min_per_class = 10;
    uint64_t seed = 0;
};

inline int cmd_split(const SplitOptions& o) {
    const EmbeddingStore store = load_store(o.store);
    const ClassSplit split = split_classes(store.label_counts(), {o.train, o.valid, o.test},
                                           o.min_per_class, o.seed);
    save_split(split, o.out);
    log_info("split " + std::to_string(split.train.size()) + " train / " +
             std::to_string(split.valid.size()) + " valid / " +
             std::to_string(split.test.size()) + " test classes into " + o.out);
    return 0;
}

// ---- run ----

struct RunOptions {
    RunConfig run;
    std::string store;  // frozen embeddings
    std::string data;   // JSONL with a trainable toy encoder
    int dim = 16;
    int token_dim = 32;
    std::string split;  // optional split file
    double train_frac = 0.5;
    double valid_frac = 0.0;
    double test_frac = 0.5;
    uint64_t split_seed = 0;
    int min_per_class = 0;  // 0: use K+Q
    std::string out = "out";
    std::string dataset;  // defaults to the input file stem
};

inline int cmd_run(const RunOptions& o) {
    const ResolvedRun rr = resolve_run(o.run);

    if (!o.store.empty() && !o.data.empty()) {
        throw ConfigError("give either --store or --data, not both");
    }
    if (o.store.empty() && o.data.empty()) {
        throw ConfigError("run needs an input: --store <embeddings> or --data <jsonl>");
    }
    const bool trainable = !o.data.empty();
    const std::string input = trainable ? o.data : o.store;

    EmbeddingStore store;
    std::vector<std::string> texts;
    if (trainable) {
        const auto records = load_jsonl(o.data);
        if (records.empty()) throw DataError("'" + o.data + "' holds no records");
        texts.reserve(records.size());
        for (const auto& r : records) texts.push_back(r.text);
        ToyEncoder initial(texts, o.token_dim, o.dim, rr.seed);
        store = EmbeddingStore(initial.out_dim());
        for (const auto& r : records) store.add({r.id, r.label, initial.encode(r.text).data});
    } else {
        store = load_store(o.store);
    }

    ClassSplit split;
    if (!o.split.empty()) {
        split = load_split(o.split);
    } else {
        const int min_samples = o.min_per_class > 0 ? o.min_per_class : rr.K + rr.Q;
        split = split_classes(store.label_counts(), {o.train_frac, o.valid_frac, o.test_frac},
                              min_samples, o.split_seed);
    }
    if (split.test.empty()) throw ConfigError("the test partition is empty; nothing to evaluate");
    const LabeledIndex test_index(store, split.test);
    std::optional<LabeledIndex> train_index;
    if (!split.train.empty()) train_index.emplace(store, split.train);
    std::optional<LabeledIndex> valid_index;
    if (!split.valid.empty()) valid_index.emplace(store, split.valid);

    const std::string dataset_name =
        o.dataset.empty() ? std::filesystem::path(input).stem().string() : o.dataset;

    EvalReport combined;
    combined.dataset = dataset_name;
    combined.method = rr.method;
    combined.metric = rr.metric;
    combined.relation_module = rr.relation_module;
    combined.K = rr.K;
    combined.Q = rr.Q;
    combined.U = rr.U < 0 ? 0 : rr.U;
    combined.n_eval_episodes = rr.eval.n_eval_episodes;
    combined.shot_mode = rr.eval.shot_mode;

    // One run per (seed, C): parametric heads are re-initialized and trained
    // from scratch for each, so seeds really are independent replications.
    HeadConfig head_cfg = rr.head;
    for (uint64_t seed : rr.eval.seeds) {
        for (int C : rr.eval.C_values) {
            head_cfg.init_seed = Rng::derive(seed, {seed_tag::init, static_cast<uint64_t>(C)});
            auto head = make_head(head_cfg, store.dim());

            std::shared_ptr<ToyEncoder> encoder;
            std::unique_ptr<EmbeddingProvider> provider;
            if (trainable) {
                encoder = std::make_shared<ToyEncoder>(
                    texts, o.token_dim, o.dim,
                    Rng::derive(seed, {seed_tag::encoder, static_cast<uint64_t>(C)}));
                provider = std::make_unique<TrainableProvider>(store, encoder, texts);
            } else {
                provider = std::make_unique<FrozenProvider>(store);
            }

            EpisodeSpec spec;
            spec.C = C;
            spec.K = rr.K;
            spec.Q = rr.Q;
            spec.U = rr.unlabeled_for(C);

            if (train_index) {
                train_head(*head, *provider, *train_index,
                           valid_index ? &*valid_index : nullptr, spec, rr.train, head_cfg, seed);
            } else if (!head->trainable_params().empty()) {
                log_warn("no train partition; evaluating an untrained " +
                         std::string(method_name(rr.method)) + " head");
            }

            EvalConfig one = rr.eval;
            one.seeds = {seed};
            one.C_values = {C};
            EvalReport part = evaluate(*head, *provider, test_index, spec, one, head_cfg,
                                       split.train.empty() ? nullptr : &split.train);
            combined.rows.insert(combined.rows.end(), part.rows.begin(), part.rows.end());
            log_info("seed " + std::to_string(seed) + " C=" + std::to_string(C) + ": accuracy " +
                     format_double(part.rows.front().accuracy));
        }
    }

    std::error_code ec;
    std::filesystem::create_directories(o.out, ec);
    if (ec) throw DataError("cannot create output directory '" + o.out + "': " + ec.message());
    const auto rows = report_to_rows(combined);
    write_result_csv(rows, o.out + "/results.csv");
    const std::string table = render_pivot_table(rows);
    {
        std::ofstream tf(o.out + "/table.txt", std::ios::binary);
        if (!tf) throw DataError("cannot open '" + o.out + "/table.txt' for writing");
        tf << table;
    }
    std::fputs(table.c_str(), stdout);
    return 0;
}

// ---- report ----

struct ReportOptions {
    std::vector<std::string> inputs;
    std::string out;  // empty: stdout
};

inline int cmd_report(const ReportOptions& o) {
    if (o.inputs.empty()) throw ConfigError("report needs at least one results file");
    std::vector<CsvFile> files;
    files.reserve(o.inputs.size());
    for (const auto& path : o.inputs) files.push_back(read_result_csv(path));
    const auto rows = merge_result_files(files, o.inputs);
    const std::string table = render_pivot_table(rows);
    if (o.out.empty()) {
        std::fputs(table.c_str(), stdout);
    } else {
        std::ofstream out(o.out, std::ios::binary);
        if (!out) throw DataError("cannot open '" + o.out + "' for writing");
        out << table;
    }
    return 0;
}

// ---- synth ----

struct SynthOptions {
    std::string out_store;
    std::string out_reviews;
    int classes = 20;
    int per_class = 40;
    int dim = 16;
    int latent_dim = 6;
    double center_dist = 10.0;
    double sigma = 1.0;
    std::vector<std::string> categories = {"books", "dvd", "electronics", "kitchen"};
    int per_category = 50;
    uint64_t seed = 0;
};

inline int cmd_synth(const SynthOptions& o) {
    if (o.out_store.empty() && o.out_reviews.empty()) {
        throw ConfigError("synth: nothing to do (give --out-store and/or --out-reviews)");
    }
    if (!o.out_store.empty()) {
        const EmbeddingStore store = make_cluster_store(o.classes, o.per_class, o.dim,
                                                        o.center_dist, o.sigma, o.seed,
                                                        o.latent_dim);
        save_store(store, o.out_store);
        log_info("wrote " + std::to_string(store.size()) + " cluster samples to " + o.out_store);
    }
    if (!o.out_reviews.empty()) {
        const auto records = make_review_fixture(o.categories, o.per_category, o.seed);
        save_jsonl(records, o.out_reviews);
        log_info("wrote " + std::to_string(records.size()) + " reviews to " + o.out_reviews);
    }
    return 0;
}

// ---- CLI wiring ----

// Expands `--config FILE` on the run subcommand into ordinary CLI tokens.
// The file holds one flat `key=value` per line (keys are the long option
// names without dashes; `#` starts a comment). Keys that were also given
// explicitly on the command line are skipped, so flags override the file.
inline std::vector<std::string> expand_run_config(std::vector<std::string> args) {
    std::string path;
    for (size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        }
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file '" + path + "'");

    auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const auto a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        return s.substr(a, s.find_last_not_of(ws) - a + 1);
    };
    auto given = [&](const std::string& flag) {
        for (size_t i = 1; i < args.size(); ++i) {
            if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
        }
        return false;
    };

    std::vector<std::string> extra;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? "" : trim(line.substr(0, eq));
        if (key.empty() || key[0] == '-') {
            throw ConfigError("config " + path + ":" + std::to_string(lineno) +
                              ": expected `key=value` with a bare option name");
        }
        if (given("--" + key)) continue;
        extra.push_back("--" + key);
        extra.push_back(trim(line.substr(eq + 1)));
    }
    args.insert(args.begin() + 1, extra.begin(), extra.end());
    return args;
}

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"episodic few-shot text classification"};
    app.require_subcommand(1);

    IngestOptions ingest;
    auto* cmd_in = app.add_subcommand("ingest", "encode a JSONL dataset into an embedding store");
    cmd_in->add_option("--data", ingest.data, "input JSONL file")->required();
    cmd_in->add_option("--out", ingest.out, "embedding store to write")->required();
    cmd_in->add_option("--encoder", ingest.encoder, "toy (seeded bag of tokens) or frozen "
                       "(pass through precomputed `vector` fields)");
    cmd_in->add_option("--dim", ingest.dim, "toy encoder output dimension");
    cmd_in->add_option("--token-dim", ingest.token_dim, "toy encoder token dimension");
    cmd_in->add_option("--seed", ingest.seed, "toy encoder init seed");

    SplitOptions split;
    auto* cmd_sp = app.add_subcommand("split", "partition classes into train/valid/test");
    cmd_sp->add_option("--store", split.store, "embedding store")->required();
    cmd_sp->add_option("--out", split.out, "split file to write")->required();
    cmd_sp->add_option("--train", split.train, "train fraction of classes");
    cmd_sp->add_option("--valid", split.valid, "valid fraction of classes");
    cmd_sp->add_option("--test", split.test, "test fraction of classes");
    cmd_sp->add_option("--min-per-class", split.min_per_class,
                       "drop classes with fewer samples than this");
    cmd_sp->add_option("--seed", split.seed, "shuffle seed");

    RunOptions run;
    auto* cmd_rn = app.add_subcommand("run", "train (when applicable) and evaluate one method");
    std::string config_path;
    cmd_rn->add_option("--config", config_path,
                       "flat key=value file of run options; explicit flags override");
    cmd_rn->add_option("--store", run.store, "frozen embedding store");
    cmd_rn->add_option("--data", run.data, "JSONL input; trains the toy encoder episodically");
    cmd_rn->add_option("--dim", run.dim, "toy encoder output dimension (with --data)");
    cmd_rn->add_option("--token-dim", run.token_dim, "toy encoder token dimension (with --data)");
    cmd_rn->add_option("--split", run.split, "class split file; omit to split on the fly");
    cmd_rn->add_option("--train-frac", run.train_frac, "on-the-fly split: train fraction");
    cmd_rn->add_option("--valid-frac", run.valid_frac, "on-the-fly split: valid fraction");
    cmd_rn->add_option("--test-frac", run.test_frac, "on-the-fly split: test fraction");
    cmd_rn->add_option("--split-seed", run.split_seed, "on-the-fly split: shuffle seed");
    cmd_rn->add_option("--min-per-class", run.min_per_class,
                       "on-the-fly split: drop small classes (0: K+Q)");
    cmd_rn->add_option("--out", run.out, "output directory");
    cmd_rn->add_option("--dataset", run.dataset, "dataset name for reports (default: input stem)");
    cmd_rn->add_option("--method", run.run.method,
                       "matching|proto|protopp|relation[-base|-ntl]|induction|baseline|baselinepp");
    cmd_rn->add_option("--metric", run.run.metric, "cosine or euclid (metric methods only)");
    cmd_rn->add_option("--relation-module", run.run.relation_module,
                       "base or ntl (relation methods only)");
    cmd_rn->add_option("--k-shots", run.run.K, "support samples per class");
    cmd_rn->add_option("--q-queries", run.run.Q, "query samples per class");
    cmd_rn->add_option("--unlabeled", run.run.U, "unlabeled samples per episode (-1: default)");
    cmd_rn->add_option("--c-ways", run.run.C_values, "episode way counts")->delimiter(',');
    cmd_rn->add_option("--seeds", run.run.seeds, "evaluation run seeds")->delimiter(',');
    cmd_rn->add_option("--eval-episodes", run.run.n_eval_episodes, "episodes per (seed, C) cell");
    cmd_rn->add_option("--shot-mode", run.run.shot_mode, "resampled or fixed support draws");
    cmd_rn->add_option("--jobs", run.run.jobs, "worker threads for evaluation");
    cmd_rn->add_option("--train-episodes", run.run.train_episodes, "training episodes per run");
    cmd_rn->add_option("--lr", run.run.lr, "training learning rate");
    cmd_rn->add_option("--loss", run.run.loss, "ce or mse");
    cmd_rn->add_option("--optimizer", run.run.optimizer, "sgd or adam");
    cmd_rn->add_option("--patience", run.run.patience,
                       "validation checks without improvement before stopping (0: off)");
    cmd_rn->add_option("--valid-every", run.run.valid_every, "episodes between validation checks");
    cmd_rn->add_option("--valid-episodes", run.run.valid_episodes, "episodes per validation check");
    cmd_rn->add_option("--ntl-hidden", run.run.ntl_h, "tensor layer slice count");
    cmd_rn->add_option("--relation-hidden", run.run.relation_hidden,
                       "relation-base hidden width (0: embedding dim)");
    cmd_rn->add_option("--routing-iters", run.run.routing_iters, "induction routing iterations");
    cmd_rn->add_option("--refine-passes", run.run.refine_passes, "prototype refinement passes");
    cmd_rn->add_option("--cosine-scale", run.run.cosine_scale,
                       "sharpening factor for cosine scores");
    cmd_rn->add_option("--finetune-iters", run.run.finetune_iters,
                       "per-episode fine-tune steps (baseline heads)");
    cmd_rn->add_option("--finetune-lr", run.run.finetune_lr,
                       "per-episode fine-tune learning rate");
    cmd_rn->add_option("--seed", run.run.seed, "master seed (encoder init)");

    ReportOptions report;
    auto* cmd_rp = app.add_subcommand("report", "merge result files and render the summary table");
    cmd_rp->add_option("inputs", report.inputs, "results.csv files")->required();
    cmd_rp->add_option("--out", report.out, "write the table here instead of stdout");

    SynthOptions synth;
    auto* cmd_sy = app.add_subcommand("synth", "generate synthetic benchmark data");
    cmd_sy->add_option("--out-store", synth.out_store, "write a Gaussian cluster store");
    cmd_sy->add_option("--out-reviews", synth.out_reviews, "write a review-style JSONL fixture");
    cmd_sy->add_option("--classes", synth.classes, "cluster count");
    cmd_sy->add_option("--per-class", synth.per_class, "samples per cluster");
    cmd_sy->add_option("--dim", synth.dim, "cluster dimension");
    cmd_sy->add_option("--latent-dim", synth.latent_dim,
                       "dimension of the subspace holding the cluster centers");
    cmd_sy->add_option("--center-dist", synth.center_dist, "minimum distance between centers");
    cmd_sy->add_option("--sigma", synth.sigma, "within-cluster standard deviation");
    cmd_sy->add_option("--categories", synth.categories, "review categories")->delimiter(',');
    cmd_sy->add_option("--per-category", synth.per_category, "reviews per category");
    cmd_sy->add_option("--seed", synth.seed, "generator seed");

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        if (!args.empty() && args[0] == "run") args = expand_run_config(std::move(args));
        std::vector<const char*> ptrs;
        ptrs.push_back(argv[0]);
        for (const auto& a : args) ptrs.push_back(a.c_str());
        app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const Error& e) {
        log_error(e.what());
        return e.exit_code();
    }

    try {
        if (*cmd_in) return cmd_ingest(ingest);
        if (*cmd_sp) return cmd_split(split);
        if (*cmd_rn) return cmd_run(run);
        if (*cmd_rp) return cmd_report(report);
        return cmd_synth(synth);
    } catch (const Error& e) {
        log_error(e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        log_error(e.what());
        return 1;
    }
}

}  // namespace fewshot
