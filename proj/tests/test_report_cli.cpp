#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fewshot/commands.hpp"
#include "test_util.hpp"

using namespace fewshot;
using Catch::Approx;

namespace {

namespace fs = std::filesystem;

CsvRow row(const std::string& dataset, const std::string& method, const std::string& metric,
           const std::string& module_, int C, uint64_t seed, double acc, int K = 5, int Q = 5) {
    CsvRow r;
    r.dataset = dataset;
    r.method = method;
    r.metric = metric;
    r.relation_module = module_;
    r.C = C;
    r.K = K;
    r.Q = Q;
    r.seed = seed;
    r.accuracy = acc;
    return r;
}

std::vector<std::vector<std::string>> tokenize_table(const std::string& table) {
    std::vector<std::vector<std::string>> lines;
    std::istringstream in(table);
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<std::string> tokens;
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
        lines.push_back(std::move(tokens));
    }
    return lines;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

int cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv = {"fewshot"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::path(test_util::temp_path(name))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& child) const { return (path / child).string(); }
};

}  // namespace

TEST_CASE("result csv round-trips rows and fingerprint", "[report]") {
    const std::string path = test_util::temp_path("results.csv");
    std::vector<CsvRow> rows = {
        row("bench", "proto", "euclid", "", 2, 0, 0.875),
        row("bench", "proto", "euclid", "", 3, 0, 2.0 / 3.0),
        row("bench", "relation", "", "ntl", 2, 1, 0.9125),
    };
    write_result_csv(rows, path);
    const CsvFile file = read_result_csv(path);
    REQUIRE(file.fingerprint == "dataset=bench;K=5;Q=5");
    REQUIRE(file.rows.size() == 3);
    for (size_t i = 0; i < rows.size(); ++i) {
        REQUIRE(file.rows[i].dataset == rows[i].dataset);
        REQUIRE(file.rows[i].method == rows[i].method);
        REQUIRE(file.rows[i].metric == rows[i].metric);
        REQUIRE(file.rows[i].relation_module == rows[i].relation_module);
        REQUIRE(file.rows[i].C == rows[i].C);
        REQUIRE(file.rows[i].K == rows[i].K);
        REQUIRE(file.rows[i].Q == rows[i].Q);
        REQUIRE(file.rows[i].seed == rows[i].seed);
        REQUIRE(file.rows[i].accuracy == rows[i].accuracy);  // bit-exact round trip
    }
    std::remove(path.c_str());
}

TEST_CASE("result csv writer rejects inconsistent batches", "[report]") {
    const std::string path = test_util::temp_path("bad_results.csv");
    REQUIRE_THROWS_AS(write_result_csv({}, path), ConfigError);
    REQUIRE_THROWS_AS(
        write_result_csv({row("a,b", "proto", "euclid", "", 2, 0, 0.5)}, path), ConfigError);
    REQUIRE_THROWS_AS(write_result_csv({row("a", "proto", "euclid", "", 2, 0, 0.5),
                                        row("b", "proto", "euclid", "", 2, 0, 0.5)},
                                       path),
                      ConfigError);
    REQUIRE_THROWS_AS(write_result_csv({row("a", "proto", "euclid", "", 2, 0, 0.5, 5, 5),
                                        row("a", "proto", "euclid", "", 2, 0, 0.5, 1, 5)},
                                       path),
                      ConfigError);
}

TEST_CASE("result csv reader pins parse errors to lines", "[report]") {
    const std::string path = test_util::temp_path("parse.csv");
    auto write_file = [&](const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        out << content;
    };
    write_file("dataset,method\n");
    REQUIRE_THROWS_AS(read_result_csv(path), DataError);
    write_file(std::string("# fingerprint=dataset=x;K=5;Q=5\n") + kCsvHeader +
               "\nx,proto,euclid,,2,5\n");
    REQUIRE_THROWS_AS(read_result_csv(path), DataError);  // 6 fields
    write_file(std::string("# fingerprint=dataset=x;K=5;Q=5\n") + kCsvHeader +
               "\nx,proto,euclid,,two,5,5,0,0.5\n");
    REQUIRE_THROWS_AS(read_result_csv(path), DataError);  // bad C
    write_file(std::string("# fingerprint=dataset=x;K=5;Q=5\n") + kCsvHeader +
               "\nx,proto,euclid,,2,5,5,0,junk\n");
    REQUIRE_THROWS_AS(read_result_csv(path), DataError);  // bad accuracy
    write_file(std::string(kCsvHeader) + "\nx,proto,euclid,,2,5,5,0,0.5\n");
    REQUIRE_THROWS_AS(read_result_csv(path), DataError);  // no fingerprint
    REQUIRE_THROWS_AS(read_result_csv(test_util::temp_path("missing.csv")), DataError);
    std::remove(path.c_str());
}

TEST_CASE("merging result files pools rows and checks protocols", "[report]") {
    CsvFile a, b, c;
    a.fingerprint = "dataset=x;K=5;Q=5";
    a.rows = {row("x", "proto", "euclid", "", 2, 0, 0.5)};
    b.fingerprint = a.fingerprint;
    b.rows = {row("x", "proto", "euclid", "", 2, 1, 0.7),
              row("x", "matching", "euclid", "", 2, 1, 0.6)};
    const auto merged = merge_result_files({a, b}, {"a.csv", "b.csv"});
    REQUIRE(merged.size() == 3);
    c.fingerprint = "dataset=x;K=1;Q=5";
    try {
        merge_result_files({a, c}, {"a.csv", "c.csv"});
        FAIL("expected a protocol mismatch");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("a.csv") != std::string::npos);
        REQUIRE(msg.find("c.csv") != std::string::npos);
    }
    REQUIRE_THROWS_AS(merge_result_files({}, {}), ConfigError);
}

TEST_CASE("pivot table averages seeds and marks column winners", "[report]") {
    const std::vector<CsvRow> rows = {
        row("x", "proto", "euclid", "", 2, 0, 0.92),
        row("x", "proto", "euclid", "", 2, 1, 0.916),
        row("x", "proto", "euclid", "", 3, 0, 0.8),
        row("x", "matching", "euclid", "", 2, 0, 0.875),
    };
    const std::string table = render_pivot_table(rows);
    const auto lines = tokenize_table(table);
    REQUIRE(lines.size() == 3);
    REQUIRE(lines[0] == std::vector<std::string>{"method", "metric", "module", "C=2", "C=3"});
    // matching precedes proto in the canonical order; its C=3 cell is missing
    REQUIRE(lines[1] == std::vector<std::string>{"matching", "euclid", "-", "87.5", "-"});
    // proto wins both columns; C=2 averages the two seeds to 91.8
    REQUIRE(lines[2] == std::vector<std::string>{"proto", "euclid", "-", "*91.8", "*80.0"});
    // aligned rendering: every line has the same width
    std::istringstream in(table);
    std::string raw;
    size_t width = 0;
    while (std::getline(in, raw)) {
        if (width == 0) width = raw.size();
        REQUIRE(raw.size() == width);
    }
    REQUIRE_THROWS_AS(render_pivot_table({}), ConfigError);
}

TEST_CASE("pivot table resolves ties to the first listed method", "[report]") {
    const std::vector<CsvRow> rows = {
        row("x", "proto", "euclid", "", 2, 0, 0.9),
        row("x", "matching", "euclid", "", 2, 0, 0.9),
        row("x", "zzz-custom", "", "", 2, 0, 0.1),
    };
    const auto lines = tokenize_table(render_pivot_table(rows));
    REQUIRE(lines[1][0] == "matching");
    REQUIRE(lines[1][3] == "*90.0");
    REQUIRE(lines[2][0] == "proto");
    REQUIRE(lines[2][3] == "90.0");
    // unknown methods list after every canonical row
    REQUIRE(lines[3][0] == "zzz-custom");
}

TEST_CASE("eval reports map onto csv rows", "[report]") {
    EvalReport report;
    report.dataset = "bench";
    report.method = MethodKind::relation;
    report.relation_module = RelationModule::ntl;
    report.K = 5;
    report.Q = 5;
    EvalRow r;
    r.seed = 3;
    r.C = 4;
    r.correct = 57;
    r.total = 60;
    r.accuracy = 0.95;
    report.rows.push_back(r);
    const auto rows = report_to_rows(report);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].method == "relation");
    REQUIRE(rows[0].metric.empty());
    REQUIRE(rows[0].relation_module == "ntl");
    REQUIRE(rows[0].C == 4);
    REQUIRE(rows[0].seed == 3);
    REQUIRE(rows[0].accuracy == 0.95);
    REQUIRE(result_fingerprint("bench", 5, 5) == "dataset=bench;K=5;Q=5");
}

TEST_CASE("run resolution fills method-appropriate defaults", "[config]") {
    RunConfig cfg;
    const ResolvedRun proto = resolve_run(cfg);
    REQUIRE(proto.method == MethodKind::proto);
    REQUIRE(proto.metric == Metric::euclid);
    REQUIRE_FALSE(proto.relation_module.has_value());
    REQUIRE(proto.unlabeled_for(4) == 0);

    cfg.method = "protopp";
    const ResolvedRun pp = resolve_run(cfg);
    REQUIRE(pp.unlabeled_for(4) == 20);  // defaults to five unlabeled points per way
    REQUIRE(pp.unlabeled_for(2) == 10);
    cfg.U = 7;
    REQUIRE(resolve_run(cfg).unlabeled_for(4) == 7);
    cfg.U = -1;

    cfg.method = "relation";
    const ResolvedRun rel = resolve_run(cfg);
    REQUIRE(rel.relation_module == RelationModule::ntl);
    REQUIRE_FALSE(rel.metric.has_value());

    cfg.method = "relation-base";
    REQUIRE(resolve_run(cfg).relation_module == RelationModule::base);
    cfg.relation_module = "base";  // same module spelled twice is fine
    REQUIRE(resolve_run(cfg).relation_module == RelationModule::base);
    cfg.relation_module.clear();

    cfg.method = "baselinepp";
    cfg.metric = "cosine";
    const ResolvedRun bpp = resolve_run(cfg);
    REQUIRE(bpp.metric == Metric::cosine);
    REQUIRE(bpp.head.metric == Metric::cosine);
    cfg.metric.clear();

    cfg.method = "proto";
    cfg.train_episodes = 77;
    cfg.lr = 0.5;
    cfg.shot_mode = "fixed";
    cfg.jobs = 3;
    const ResolvedRun r = resolve_run(cfg);
    REQUIRE(r.train.episodes == 77);
    REQUIRE(r.train.lr == 0.5);
    REQUIRE(r.eval.shot_mode == ShotMode::fixed);
    REQUIRE(r.eval.jobs == 3);
}

TEST_CASE("run resolution rejects incompatible combinations", "[config]") {
    auto expect_error = [](RunConfig cfg, const std::string& want) {
        try {
            resolve_run(cfg);
            FAIL("expected ConfigError: " << want);
        } catch (const ConfigError& e) {
            REQUIRE(std::string(e.what()) == want);
        }
    };
    RunConfig cfg;
    cfg.method = "proto";
    cfg.relation_module = "ntl";
    expect_error(cfg, "Proto takes a metric, not a relation module");

    cfg = RunConfig();
    cfg.method = "induction";
    cfg.metric = "euclid";
    expect_error(cfg, "Induction takes a relation module, not a metric");

    cfg = RunConfig();
    cfg.method = "relation-base";
    cfg.relation_module = "ntl";
    expect_error(cfg, "method 'relation-base' already names its relation module; "
                      "conflicting relation-module 'ntl'");

    cfg = RunConfig();
    cfg.method = "baseline";
    cfg.metric = "euclid";
    expect_error(cfg, "Baseline takes neither a metric nor a relation module");

    cfg = RunConfig();
    cfg.method = "induction";
    cfg.relation_module = "base";
    expect_error(cfg, "Induction only supports the ntl relation module");

    cfg = RunConfig();
    cfg.K = 0;
    expect_error(cfg, "K must be >= 1");

    cfg = RunConfig();
    cfg.C_values = {2, 1};
    expect_error(cfg, "C must be >= 2, got 1");

    cfg = RunConfig();
    cfg.seeds.clear();
    expect_error(cfg, "need at least one seed");

    cfg = RunConfig();
    cfg.loss = "hinge";
    REQUIRE_THROWS_AS(resolve_run(cfg), ConfigError);
    cfg = RunConfig();
    cfg.shot_mode = "sticky";
    REQUIRE_THROWS_AS(resolve_run(cfg), ConfigError);
}

TEST_CASE("split files round-trip and validate", "[cli]") {
    const std::string path = test_util::temp_path("split.tsv");
    ClassSplit split;
    split.train = {"a", "b"};
    split.valid = {"c"};
    split.test = {"d", "e"};
    save_split(split, path);
    const ClassSplit back = load_split(path);
    REQUIRE(back.train == split.train);
    REQUIRE(back.valid == split.valid);
    REQUIRE(back.test == split.test);

    auto write_file = [&](const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        out << content;
    };
    write_file("train only-spaces-no-tab\n");
    REQUIRE_THROWS_AS(load_split(path), DataError);
    write_file("holdout\tx\n");
    REQUIRE_THROWS_AS(load_split(path), DataError);
    write_file("# just a comment\n");
    REQUIRE_THROWS_AS(load_split(path), DataError);
    write_file("train\t\n");
    REQUIRE_THROWS_AS(load_split(path), DataError);
    REQUIRE_THROWS_AS(load_split(test_util::temp_path("no_such_split.tsv")), DataError);
    std::remove(path.c_str());
}

TEST_CASE("cli drives synth, split, run and report end to end", "[cli]") {
    TempDir dir("cli_e2e");
    const std::string store = dir / "store.tsv";
    const std::string split = dir / "split.tsv";
    const std::string outdir = dir / "out";

    REQUIRE(cli({"synth", "--out-store", store, "--classes", "6", "--per-class", "14", "--dim",
                 "8", "--latent-dim", "4", "--center-dist", "6", "--sigma", "0.5", "--seed",
                 "1"}) == 0);
    REQUIRE(fs::exists(store));

    REQUIRE(cli({"split", "--store", store, "--out", split, "--min-per-class", "10", "--seed",
                 "0"}) == 0);
    const ClassSplit cs = load_split(split);
    REQUIRE(cs.train.size() == 3);
    REQUIRE(cs.test.size() == 3);

    REQUIRE(cli({"run", "--store", store, "--split", split, "--method", "proto", "--c-ways",
                 "2,3", "--seeds", "0,1", "--eval-episodes", "20", "--k-shots", "2",
                 "--q-queries", "2", "--out", outdir}) == 0);
    const CsvFile results = read_result_csv(outdir + "/results.csv");
    REQUIRE(results.fingerprint == "dataset=store;K=2;Q=2");
    REQUIRE(results.rows.size() == 4);  // two seeds x two ways
    for (const auto& r : results.rows) {
        REQUIRE(r.method == "proto");
        REQUIRE(r.metric == "euclid");
        REQUIRE(r.accuracy >= 0.9);  // clusters are well separated
    }

    const std::string table = dir / "table.txt";
    REQUIRE(cli({"report", outdir + "/results.csv", "--out", table}) == 0);
    REQUIRE(slurp(table) == slurp(outdir + "/table.txt"));
    const auto lines = tokenize_table(slurp(table));
    REQUIRE(lines[0] == std::vector<std::string>{"method", "metric", "module", "C=2", "C=3"});
    REQUIRE(lines[1][0] == "proto");
}

TEST_CASE("cli maps error categories onto exit codes", "[cli]") {
    TempDir dir("cli_err");
    // config error: unknown method
    REQUIRE(cli({"run", "--store", dir / "absent.tsv", "--method", "nope"}) == 1);
    // data error: missing store file
    REQUIRE(cli({"run", "--store", dir / "absent.tsv", "--method", "proto"}) == 2);
    // flag parse error
    REQUIRE(cli({"run", "--no-such-flag"}) == 1);
    // a subcommand is required
    REQUIRE(cli({}) == 1);
    // synth without outputs has nothing to do
    REQUIRE(cli({"synth"}) == 1);
    // report with a missing input
    REQUIRE(cli({"report", dir / "absent.csv"}) == 2);
}

TEST_CASE("cli ingest encodes reviews deterministically", "[cli]") {
    TempDir dir("cli_ingest");
    const std::string reviews = dir / "reviews.jsonl";
    REQUIRE(cli({"synth", "--out-reviews", reviews, "--categories", "books,dvd",
                 "--per-category", "10", "--seed", "3"}) == 0);

    const std::string store_a = dir / "a.tsv";
    const std::string store_b = dir / "b.tsv";
    REQUIRE(cli({"ingest", "--data", reviews, "--out", store_a, "--dim", "8", "--seed", "5"}) ==
            0);
    REQUIRE(cli({"ingest", "--data", reviews, "--out", store_b, "--dim", "8", "--seed", "5"}) ==
            0);
    REQUIRE(slurp(store_a) == slurp(store_b));
    const EmbeddingStore store = load_store(store_a);
    REQUIRE(store.size() == 20);
    REQUIRE(store.dim() == 8);
    REQUIRE(store.label_counts().size() == 5);  // stars1..stars5

    // frozen ingest requires precomputed vectors
    REQUIRE(cli({"ingest", "--data", reviews, "--out", dir / "c.tsv", "--encoder", "frozen"}) ==
            2);
    // unknown encoder name
    REQUIRE(cli({"ingest", "--data", reviews, "--out", dir / "c.tsv", "--encoder", "bert"}) == 1);
}

TEST_CASE("cli run reads options from a config file", "[cli]") {
    TempDir dir("cli_cfg");
    const std::string store = dir / "store.tsv";
    REQUIRE(cli({"synth", "--out-store", store, "--classes", "6", "--per-class", "12", "--dim",
                 "8", "--latent-dim", "4", "--center-dist", "6", "--sigma", "0.5", "--seed",
                 "2"}) == 0);
    const std::string cfg_path = dir / "run.cfg";
    {
        std::ofstream cfg(cfg_path, std::ios::binary);
        cfg << "method=matching\n";
        cfg << "k-shots=2\n";
        cfg << "q-queries=2\n";
        cfg << "eval-episodes=10\n";
        cfg << "c-ways=2\n";
        cfg << "seeds=0\n";
    }
    const std::string outdir = dir / "out";
    REQUIRE(cli({"run", "--store", store, "--config", cfg_path, "--out", outdir,
                 "--min-per-class", "4"}) == 0);
    const CsvFile results = read_result_csv(outdir + "/results.csv");
    REQUIRE(results.rows.size() == 1);
    REQUIRE(results.rows[0].method == "matching");
    REQUIRE(results.rows[0].K == 2);
    REQUIRE(results.rows[0].C == 2);
}
