#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "fewshot/heads.hpp"
#include "test_util.hpp"

using namespace fewshot;
using Catch::Approx;

namespace {

SupportSet make_support(const std::vector<std::vector<std::vector<double>>>& by_class) {
    const int C = static_cast<int>(by_class.size());
    const int K = static_cast<int>(by_class[0].size());
    const int d = static_cast<int>(by_class[0][0].size());
    SupportSet s;
    s.vectors = Tensor::zeros({C, K, d});
    for (int c = 0; c < C; ++c) {
        for (int k = 0; k < K; ++k) {
            for (int j = 0; j < d; ++j) s.vectors.at(c, k, j) = by_class[c][k][j];
        }
    }
    return s;
}

QuerySet make_queries(const std::vector<std::vector<double>>& rows) {
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());
    QuerySet q;
    q.vectors = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) q.vectors.at(i, j) = rows[i][j];
    }
    return q;
}

UnlabeledSet make_unlabeled(const std::vector<std::vector<double>>& rows) {
    UnlabeledSet u;
    if (rows.empty()) return u;
    const int n = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows[0].size());
    u.vectors = Tensor::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) u.vectors.at(i, j) = rows[i][j];
    }
    return u;
}

EpisodeVars random_episode(Graph& g, Rng& rng, int C, int K, int Q, int d, int U = 0) {
    SupportSet s;
    s.vectors = Tensor::zeros({C, K, d});
    for (double& v : s.vectors.data) v = rng.normal();
    QuerySet q;
    q.vectors = Tensor::zeros({Q, d});
    for (double& v : q.vectors.data) v = rng.normal();
    UnlabeledSet u;
    if (U > 0) {
        u.vectors = Tensor::zeros({U, d});
        for (double& v : u.vectors.data) v = rng.normal();
    }
    return episode_vars(g, s, q, u);
}

}  // namespace

TEST_CASE("prototypes are exact class means", "[heads]") {
    const SupportSet s =
        make_support({{{1.0, 2.0}, {3.0, 6.0}}, {{-1.0, 0.0}, {0.0, -4.0}}});
    const PrototypeSet p = compute_prototypes(s);
    REQUIRE_FALSE(p.refined);
    REQUIRE(p.prototypes.shape == std::vector<int>{2, 2});
    REQUIRE(p.prototypes.at(0, 0) == Approx(2.0));
    REQUIRE(p.prototypes.at(0, 1) == Approx(4.0));
    REQUIRE(p.prototypes.at(1, 0) == Approx(-0.5));
    REQUIRE(p.prototypes.at(1, 1) == Approx(-2.0));
    // a mean is a convex combination: inside the coordinate-wise hull box
    for (int c = 0; c < 2; ++c) {
        for (int j = 0; j < 2; ++j) {
            const double lo = std::min(s.vectors.at(c, 0, j), s.vectors.at(c, 1, j));
            const double hi = std::max(s.vectors.at(c, 0, j), s.vectors.at(c, 1, j));
            REQUIRE(p.prototypes.at(c, j) >= lo - 1e-12);
            REQUIRE(p.prototypes.at(c, j) <= hi + 1e-12);
        }
    }
}

TEST_CASE("one refinement pass matches the hand-computed update", "[heads]") {
    // 1-d, K=1: supports at 0 and 4, one unlabeled point at 2 sits exactly
    // between the prototypes, so its soft assignment is (0.5, 0.5) and
    // p~_0 = (0 + 2*0.5)/(1 + 0.5) = 2/3, p~_1 = (4 + 2*0.5)/(1 + 0.5) = 10/3.
    const SupportSet s = make_support({{{0.0}}, {{4.0}}});
    const PrototypeSet p = compute_prototypes(s);
    const UnlabeledSet u = make_unlabeled({{2.0}});
    const PrototypeSet r = refine_prototypes(p, s, u, Metric::euclid);
    REQUIRE(r.refined);
    REQUIRE(r.prototypes.at(0, 0) == Approx(2.0 / 3.0).margin(1e-12));
    REQUIRE(r.prototypes.at(1, 0) == Approx(10.0 / 3.0).margin(1e-12));
}

TEST_CASE("refinement with no unlabeled points is the identity", "[heads]") {
    Rng rng(5);
    SupportSet s;
    s.vectors = Tensor::zeros({3, 4, 5});
    for (double& v : s.vectors.data) v = rng.normal();
    const PrototypeSet p = compute_prototypes(s);
    const PrototypeSet r = refine_prototypes(p, s, UnlabeledSet{}, Metric::euclid, 3);
    for (size_t i = 0; i < p.prototypes.data.size(); ++i) {
        REQUIRE(r.prototypes.data[i] == Approx(p.prototypes.data[i]).margin(1e-12));
    }
}

TEST_CASE("refined prototypes stay in the support+unlabeled hull box", "[heads]") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        SupportSet s;
        s.vectors = Tensor::zeros({2, 3, 4});
        for (double& v : s.vectors.data) v = rng.normal();
        UnlabeledSet u;
        u.vectors = Tensor::zeros({5, 4});
        for (double& v : u.vectors.data) v = rng.normal();
        const PrototypeSet r =
            refine_prototypes(compute_prototypes(s), s, u, Metric::euclid);
        for (int c = 0; c < 2; ++c) {
            for (int j = 0; j < 4; ++j) {
                double lo = 1e30, hi = -1e30;
                for (int k = 0; k < 3; ++k) {
                    lo = std::min(lo, s.vectors.at(c, k, j));
                    hi = std::max(hi, s.vectors.at(c, k, j));
                }
                for (int i = 0; i < 5; ++i) {
                    lo = std::min(lo, u.vectors.at(i, j));
                    hi = std::max(hi, u.vectors.at(i, j));
                }
                REQUIRE(r.prototypes.at(c, j) >= lo - 1e-9);
                REQUIRE(r.prototypes.at(c, j) <= hi + 1e-9);
            }
        }
    }
}

TEST_CASE("matching scores average per-class support similarities", "[heads]") {
    const SupportSet s =
        make_support({{{0.0, 0.0}, {1.0, 0.0}}, {{4.0, 4.0}, {5.0, 4.0}}});
    const QuerySet q = make_queries({{0.5, 0.0}});
    const ScoreMatrix sm = matching_scores(s, q, Metric::euclid);
    REQUIRE(sm.normalized);
    // raw row by hand: mean of negated squared distances per class
    const double r0 = -(0.25 + 0.25) / 2.0;
    const double r1 = -((12.25 + 16.0) + (20.25 + 16.0)) / 2.0;
    const double z = std::exp(r0) + std::exp(r1);
    REQUIRE(sm.scores.at(0, 0) == Approx(std::exp(r0) / z).margin(1e-12));
    REQUIRE(sm.scores.at(0, 1) == Approx(std::exp(r1) / z).margin(1e-12));
}

TEST_CASE("proto scores softmax negated distances to prototypes", "[heads]") {
    const SupportSet s = make_support({{{0.0, 0.0}, {2.0, 0.0}}, {{4.0, 2.0}, {4.0, 4.0}}});
    const PrototypeSet p = compute_prototypes(s);  // (1,0) and (4,3)
    const QuerySet q = make_queries({{1.0, 1.0}, {4.0, 2.0}});
    const ScoreMatrix sm = proto_scores(p, q, Metric::euclid);
    const double a0 = -1.0, a1 = -13.0;  // query 0 vs the two prototypes
    const double z = std::exp(a0) + std::exp(a1);
    REQUIRE(sm.scores.at(0, 0) == Approx(std::exp(a0) / z).margin(1e-12));
    // query 1 is closer to prototype 1
    REQUIRE(sm.scores.at(1, 1) > sm.scores.at(1, 0));
    const double sum = sm.scores.at(1, 0) + sm.scores.at(1, 1);
    REQUIRE(sum == Approx(1.0).margin(1e-9));
}

TEST_CASE("cosine scoring applies the fixed sharpening scale", "[heads]") {
    const SupportSet s = make_support({{{1.0, 0.0}}, {{0.0, 1.0}}});
    const PrototypeSet p = compute_prototypes(s);
    const QuerySet q = make_queries({{1.0, 0.0}});
    const ScoreMatrix sm = proto_scores(p, q, Metric::cosine);
    const double z = std::exp(5.0 * 1.0) + std::exp(5.0 * 0.0);
    REQUIRE(sm.scores.at(0, 0) == Approx(std::exp(5.0) / z).margin(1e-12));
}

TEST_CASE("ntl scores match an explicit slice loop", "[heads]") {
    const int d = 3, h = 2;
    Rng rng(21);
    NtlParams params = NtlParams::init(h, d, rng);
    for (double& v : params.w.data) v = rng.normal();  // zeros would hide M
    Tensor v = Tensor::zeros({d}), p = Tensor::zeros({d});
    for (double& x : v.data) x = rng.normal();
    for (double& x : p.data) x = rng.normal();
    double expected = 0.0;
    for (int t = 0; t < h; ++t) {
        double bilinear = 0.0;
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                bilinear += v.data[static_cast<size_t>(i)] * params.M.at(t, i, j) *
                            p.data[static_cast<size_t>(j)];
            }
        }
        expected += params.w.data[static_cast<size_t>(t)] * std::max(0.0, bilinear);
    }
    REQUIRE(ntl_scores(v, p, params) == Approx(expected).margin(1e-12));
}

TEST_CASE("relation-base scores match an explicit two-layer loop", "[heads]") {
    const int d = 2, hb = 3;
    Rng rng(31);
    RelationBaseParams params = RelationBaseParams::init(d, hb, rng);
    for (double& v : params.w.data) v = rng.normal();
    const SupportSet s = make_support({{{0.3, -0.2}}, {{-0.5, 0.9}}});
    const QuerySet q = make_queries({{0.1, 0.4}});
    const ScoreMatrix sm = relation_base_scores(s, q, params);
    std::vector<double> raw(2);
    for (int c = 0; c < 2; ++c) {
        const std::vector<double> x = {0.1, 0.4, s.vectors.at(c, 0, 0), s.vectors.at(c, 0, 1)};
        std::vector<double> hidden(hb, 0.0);
        for (int j = 0; j < hb; ++j) {
            for (int i = 0; i < 2 * d; ++i) hidden[static_cast<size_t>(j)] +=
                x[static_cast<size_t>(i)] * params.M1.at(i, j);
            hidden[static_cast<size_t>(j)] = std::max(0.0, hidden[static_cast<size_t>(j)]);
        }
        double score = 0.0;
        for (int j = 0; j < hb; ++j) {
            double out_j = 0.0;
            for (int i = 0; i < hb; ++i) out_j += hidden[static_cast<size_t>(i)] * params.M2.at(i, j);
            score += params.w.data[static_cast<size_t>(j)] * out_j;
        }
        raw[static_cast<size_t>(c)] = score;
    }
    const double z = std::exp(raw[0]) + std::exp(raw[1]);
    REQUIRE(sm.scores.at(0, 0) == Approx(std::exp(raw[0]) / z).margin(1e-12));
    REQUIRE(sm.scores.at(0, 1) == Approx(std::exp(raw[1]) / z).margin(1e-12));
}

TEST_CASE("induction with one support reduces to squash of the transform", "[heads]") {
    const int d = 3;
    Rng rng(41);
    for (int iters : {1, 4}) {
        InductionParams params = InductionParams::init(d, 2, iters, rng);
        SupportSet s;
        s.vectors = Tensor::zeros({2, 1, d});
        for (double& v : s.vectors.data) v = rng.normal();
        const PrototypeSet p = induction_prototypes(s, params);
        for (int c = 0; c < 2; ++c) {
            // squash(Ws v) by hand
            std::vector<double> t(d, 0.0);
            double n2 = 0.0;
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j < d; ++j) t[static_cast<size_t>(i)] +=
                    params.Ws.at(i, j) * s.vectors.at(c, 0, j);
                n2 += t[static_cast<size_t>(i)] * t[static_cast<size_t>(i)];
            }
            const double coef = n2 / ((1.0 + n2) * std::sqrt(n2));
            for (int i = 0; i < d; ++i) {
                REQUIRE(p.prototypes.at(c, i) ==
                        Approx(coef * t[static_cast<size_t>(i)]).margin(1e-10));
            }
        }
    }
}

TEST_CASE("routing couplings are distributions at every iteration", "[heads]") {
    Rng rng(43);
    InductionParams params = InductionParams::init(4, 2, 3, rng);
    SupportSet s;
    s.vectors = Tensor::zeros({2, 5, 4});
    for (double& v : s.vectors.data) v = rng.normal();
    std::vector<std::vector<std::vector<double>>> trace;
    const PrototypeSet p = induction_prototypes(s, params, &trace);
    REQUIRE(trace.size() == 2);
    for (const auto& class_trace : trace) {
        REQUIRE(class_trace.size() == 3);
        // first iteration starts from zero logits: uniform couplings
        for (double c : class_trace[0]) REQUIRE(c == Approx(0.2).margin(1e-12));
        for (const auto& coupling : class_trace) {
            REQUIRE(coupling.size() == 5);
            double sum = 0.0;
            for (double c : coupling) {
                REQUIRE(c >= 0.0);
                sum += c;
            }
            REQUIRE(sum == Approx(1.0).margin(1e-9));
        }
    }
    // squash keeps induced prototypes strictly inside the unit ball
    for (int c = 0; c < 2; ++c) {
        double n2 = 0.0;
        for (int j = 0; j < 4; ++j) n2 += p.prototypes.at(c, j) * p.prototypes.at(c, j);
        REQUIRE(std::sqrt(n2) < 1.0);
    }
}

TEST_CASE("relation hidden width defaults to the embedding dimension", "[heads]") {
    HeadConfig cfg;
    cfg.method = MethodKind::relation;
    cfg.relation_module = RelationModule::base;
    cfg.relation_hidden = 0;
    cfg.init_seed = 7;
    auto head = make_head(cfg, 6);
    auto* base = dynamic_cast<RelationBaseHead*>(head.get());
    REQUIRE(base != nullptr);
    REQUIRE(base->params().M1.shape == std::vector<int>{12, 6});
    REQUIRE(base->params().M2.shape == std::vector<int>{6, 6});
    REQUIRE(base->params().w.shape == std::vector<int>{6});
    cfg.relation_hidden = 9;
    auto wide = make_head(cfg, 6);
    REQUIRE(dynamic_cast<RelationBaseHead*>(wide.get())->params().M1.shape ==
            std::vector<int>{12, 9});
}

TEST_CASE("make_head dispatches on the method matrix", "[heads]") {
    HeadConfig cfg;
    cfg.init_seed = 3;
    const std::vector<std::pair<MethodKind, std::string>> expect = {
        {MethodKind::matching, "matching/euclid"}, {MethodKind::proto, "proto/euclid"},
        {MethodKind::protopp, "protopp/euclid"},   {MethodKind::relation, "relation/ntl"},
        {MethodKind::induction, "induction/ntl"},  {MethodKind::baseline, "baseline"},
        {MethodKind::baselinepp, "baselinepp/euclid"},
    };
    for (const auto& [kind, label] : expect) {
        cfg.method = kind;
        REQUIRE(make_head(cfg, 4)->label() == label);
    }
    cfg.method = MethodKind::relation;
    cfg.relation_module = RelationModule::base;
    REQUIRE(make_head(cfg, 4)->label() == "relation/base");
    cfg.method = MethodKind::matching;
    cfg.metric = Metric::cosine;
    REQUIRE(make_head(cfg, 4)->label() == "matching/cosine");
}

TEST_CASE("freshly initialized parametric heads score uniformly", "[heads]") {
    // zero readout weights mean every class gets the same raw score, so the
    // first training episode starts from an exactly uniform prediction
    HeadConfig cfg;
    cfg.init_seed = 11;
    cfg.ntl_h = 3;
    for (MethodKind kind : {MethodKind::relation, MethodKind::induction}) {
        for (RelationModule module : {RelationModule::base, RelationModule::ntl}) {
            if (kind == MethodKind::induction && module == RelationModule::base) continue;
            cfg.method = kind;
            cfg.relation_module = module;
            auto head = make_head(cfg, 4);
            Graph g;
            Rng rng(13);
            EpisodeVars ep = random_episode(g, rng, 3, 2, 2, 4);
            const auto rows = head->raw_rows(g, ep);
            REQUIRE(rows.size() == 2);
            for (Var row : rows) {
                for (double v : g.value(row).data) REQUIRE(v == Approx(0.0).margin(1e-12));
                const Tensor& probs = g.value(head->prob_row(g, row));
                for (double pv : probs.data) REQUIRE(pv == Approx(1.0 / 3.0).margin(1e-9));
            }
        }
    }
}

TEST_CASE("every head emits normalized probability rows", "[heads]") {
    HeadConfig cfg;
    cfg.init_seed = 17;
    cfg.ntl_h = 3;
    const std::vector<MethodKind> kinds = {
        MethodKind::matching, MethodKind::proto,    MethodKind::protopp,
        MethodKind::relation, MethodKind::induction, MethodKind::baseline,
        MethodKind::baselinepp,
    };
    for (MethodKind kind : kinds) {
        for (Metric m : {Metric::euclid, Metric::cosine}) {
            if (!method_takes_metric(kind) && m == Metric::cosine) continue;
            cfg.method = kind;
            cfg.metric = m;
            auto head = make_head(cfg, 4);
            if (head->finetunes_per_episode()) head->begin_episode(3, 99);
            Graph g;
            Rng rng(19);
            EpisodeVars ep = random_episode(g, rng, 3, 2, 4, 4, kind == MethodKind::protopp ? 6 : 0);
            for (Var row : head->raw_rows(g, ep)) {
                const Tensor& probs = g.value(head->prob_row(g, row));
                REQUIRE(probs.shape == std::vector<int>{3});
                double sum = 0.0;
                for (double v : probs.data) {
                    REQUIRE(v >= 0.0);
                    sum += v;
                }
                REQUIRE(sum == Approx(1.0).margin(1e-9));
            }
        }
    }
}

TEST_CASE("baseline head zero-initializes per episode and guards ordering", "[heads]") {
    BaselineHead head(3);
    Graph g;
    Rng rng(23);
    EpisodeVars ep = random_episode(g, rng, 2, 2, 2, 3);
    REQUIRE_THROWS_AS(head.raw_rows(g, ep), ConfigError);
    head.begin_episode(2, 0);
    REQUIRE(head.params().W.shape == std::vector<int>{2, 3});
    for (double v : head.params().W.data) REQUIRE(v == 0.0);
    for (double v : head.params().b.data) REQUIRE(v == 0.0);
    for (Var row : head.raw_rows(g, ep)) {
        for (double v : g.value(row).data) REQUIRE(v == 0.0);
    }
    REQUIRE(head.episode_params().size() == 2);
    REQUIRE(head.trainable_params().empty());
    // C changed: the old parameter block is refused
    EpisodeVars ep3 = random_episode(g, rng, 3, 2, 2, 3);
    REQUIRE_THROWS_AS(head.raw_rows(g, ep3), ConfigError);
}

TEST_CASE("baselinepp seeds nonzero weight rows and scores by metric", "[heads]") {
    BaselineppHead head(Metric::cosine, 5.0, 3);
    Graph g;
    Rng rng(29);
    EpisodeVars ep = random_episode(g, rng, 2, 2, 1, 3);
    REQUIRE_THROWS_AS(head.raw_rows(g, ep), ConfigError);
    head.begin_episode(2, 7);
    REQUIRE(head.params().W.shape == std::vector<int>{2, 3});
    double norm = 0.0;
    for (double v : head.params().W.data) norm += v * v;
    REQUIRE(norm > 0.0);
    REQUIRE_FALSE(head.params().has_bias);
    // same seed reproduces the same initialization
    BaselineppHead again(Metric::cosine, 5.0, 3);
    again.begin_episode(2, 7);
    REQUIRE(again.params().W.data == head.params().W.data);
    // raw rows are plain cosine similarities in [-1, 1]
    for (Var row : head.raw_rows(g, ep)) {
        for (double v : g.value(row).data) {
            REQUIRE(v >= -1.0 - 1e-12);
            REQUIRE(v <= 1.0 + 1e-12);
        }
    }
    // zeroed weight rows make cosine comparison degenerate
    for (double& v : head.params().W.data) v = 0.0;
    REQUIRE_THROWS_AS(head.raw_rows(g, ep), DegenerateInputError);
    // euclidean variant scores by negated squared distance
    BaselineppHead euclid_head(Metric::euclid, 5.0, 3);
    euclid_head.begin_episode(2, 7);
    for (Var row : euclid_head.raw_rows(g, ep)) {
        for (double v : g.value(row).data) REQUIRE(v <= 0.0);
    }
}

TEST_CASE("baselinepp value-level scores agree with the head", "[heads]") {
    Rng rng(57);
    BaselineParams params;
    params.W = Tensor::glorot({2, 3}, rng);
    params.W.make_param();
    params.has_bias = false;
    const QuerySet q = make_queries({{0.2, -0.4, 0.8}, {1.0, 0.0, 0.0}});
    const ScoreMatrix sm = baselinepp_scores(q, params, Metric::cosine);
    for (int i = 0; i < 2; ++i) {
        double sum = 0.0;
        for (int c = 0; c < 2; ++c) sum += sm.scores.at(i, c);
        REQUIRE(sum == Approx(1.0).margin(1e-9));
    }
    BaselineParams zb;
    zb.W = Tensor::zeros({2, 3});
    zb.W.make_param();
    zb.b = Tensor::zeros({2});
    zb.b.make_param();
    const ScoreMatrix uniform = baseline_scores(q, zb);
    for (int i = 0; i < 2; ++i) {
        for (int c = 0; c < 2; ++c) REQUIRE(uniform.scores.at(i, c) == Approx(0.5).margin(1e-12));
    }
}

TEST_CASE("clone detaches parameter storage", "[heads]") {
    RelationNtlHead head(3, 2, 7);
    auto copy = head.clone();
    auto* copy_ntl = dynamic_cast<RelationNtlHead*>(copy.get());
    REQUIRE(copy_ntl != nullptr);
    REQUIRE(copy_ntl->params().M.data == head.params().M.data);
    head.params().M.data[0] += 1.0;
    REQUIRE(copy_ntl->params().M.data[0] != head.params().M.data[0]);
}

TEST_CASE("argmax breaks ties toward the lowest index", "[heads]") {
    REQUIRE(argmax_lowest({0.2, 0.5, 0.3}) == 1);
    REQUIRE(argmax_lowest({0.5, 0.5, 0.5}) == 0);
    REQUIRE(argmax_lowest({0.1, 0.4, 0.4}) == 1);
    REQUIRE_THROWS_AS(argmax_lowest({}), ConfigError);
}

TEST_CASE("method parsing covers aliases and rejects junk", "[heads]") {
    REQUIRE(parse_method("proto++").kind == MethodKind::protopp);
    REQUIRE(parse_method("baseline++").kind == MethodKind::baselinepp);
    REQUIRE_FALSE(parse_method("relation").module.has_value());
    REQUIRE(parse_method("relation-base").module == RelationModule::base);
    REQUIRE(parse_method("relation-ntl").module == RelationModule::ntl);
    REQUIRE_THROWS_AS(parse_method("prototype"), ConfigError);
    REQUIRE_THROWS_AS(parse_relation_module("mlp"), ConfigError);
    REQUIRE(method_takes_metric(MethodKind::baselinepp));
    REQUIRE_FALSE(method_takes_metric(MethodKind::baseline));
    REQUIRE(method_takes_relation_module(MethodKind::induction));
    REQUIRE_FALSE(method_takes_relation_module(MethodKind::proto));
}
