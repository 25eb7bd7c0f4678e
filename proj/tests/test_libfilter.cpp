#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "epi/common.hpp"
#include "epi/libfilter.hpp"
#include "epi/tinylm.hpp"

using namespace epi;
using namespace epi::libfilter;
namespace fs = std::filesystem;

namespace {

// Separable synthetic embeddings: class means +/- mu on a random subset of
// coordinates plus unit noise.
void make_separable(std::size_t n, int d, double mu, std::uint64_t seed,
                    Eigen::MatrixXd& x, std::vector<int>& y) {
    Rng rng(seed);
    x.resize(static_cast<Eigen::Index>(n), d);
    y.resize(n);
    std::vector<double> direction(static_cast<std::size_t>(d));
    for (auto& v : direction) v = rng.uniform01() < 0.5 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = i % 2 == 0 ? 1 : 0;
        const double sign = y[i] == 1 ? mu : -mu;
        for (int j = 0; j < d; ++j) {
            x(static_cast<Eigen::Index>(i), j) =
                sign * direction[static_cast<std::size_t>(j)] + rng.normal();
        }
    }
}

// Classifier with one hand-built member: positive iff v(0) > 0.
EnsembleClassifier threshold_classifier(double bias = 1.0) {
    EnsembleClassifier c;
    c.input_dim = 2;
    c.config.n_members = 1;
    c.config.slice_size = 1;
    c.config.bias = bias;
    LogisticModel l;
    l.weights = Eigen::VectorXd::Ones(1);
    l.intercept = 0.0;
    EnsembleMember m;
    m.slice = {0};
    m.learner = l;
    c.members.push_back(std::move(m));
    return c;
}

double brute_force_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / pairs;
}

}  // namespace

TEST_CASE("pooling modes collapse hidden states as specified") {
    Eigen::MatrixXd hidden(2, 2);
    hidden << 1, 2, 3, 4;
    const Eigen::VectorXd rightmost = pool_hidden(hidden, Pooling::rightmost);
    CHECK(rightmost(0) == 3.0);
    CHECK(rightmost(1) == 4.0);
    const Eigen::VectorXd sum = pool_hidden(hidden, Pooling::sum);
    CHECK(sum(0) == 4.0);
    CHECK(sum(1) == 6.0);
    const Eigen::VectorXd weighted = pool_hidden(hidden, Pooling::weighted_sum, 2.0);
    CHECK(weighted(0) == 7.0);
    CHECK(weighted(1) == 10.0);
}

TEST_CASE("embed produces model-width vectors tagged with the model id") {
    tinylm::ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_context = 12;
    cfg.seed = 4;
    const auto m = tinylm::init_model(cfg);
    const auto e = embed(m, "ACDEF", Pooling::sum);
    CHECK(e.values.size() == 16);
    CHECK(e.source_model == m.id());
    CHECK(e.values.allFinite());
    CHECK_THROWS_AS(embed(m, "ACXE", Pooling::sum), seqdata::NonCanonicalResidue);
}

TEST_CASE("biased voting weights positives by the bias") {
    const auto a = biased_vote({true, true, false}, 2.0);
    CHECK(a.positive_weight == 4.0);
    CHECK(a.negative_weight == 1.0);
    CHECK(a.positive);

    const auto b = biased_vote({true, false, false, false}, 3.0);
    CHECK(b.positive_weight == 3.0);
    CHECK(b.negative_weight == 3.0);
    CHECK(b.positive);  // tie resolves positive

    const auto c = biased_vote({true, false, false}, 1.0);
    CHECK(c.positive_weight == 1.0);
    CHECK(c.negative_weight == 2.0);
    CHECK(!c.positive);
}

TEST_CASE("bias 1 equals plain majority voting, exhaustively to 15 members") {
    for (int n = 1; n <= 15; ++n) {
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            std::vector<bool> votes;
            int positives = 0;
            for (int k = 0; k < n; ++k) {
                const bool v = (mask >> k) & 1u;
                votes.push_back(v);
                positives += v ? 1 : 0;
            }
            const auto r = biased_vote(votes, 1.0);
            const bool majority = 2 * positives >= n;  // tie goes positive
            CHECK(r.positive == majority);
        }
    }
}

TEST_CASE("raising the bias never flips a positive decision to negative") {
    for (int n = 1; n <= 12; ++n) {
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
            std::vector<bool> votes;
            for (int k = 0; k < n; ++k) votes.push_back((mask >> k) & 1u);
            const auto low = biased_vote(votes, 1.5);
            const auto high = biased_vote(votes, 4.0);
            if (low.positive) CHECK(high.positive);
            CHECK(high.positive_weight >= low.positive_weight);
            CHECK(high.negative_weight == low.negative_weight);
        }
    }
}

TEST_CASE("slices are disjoint while indices remain and cover the space") {
    Eigen::MatrixXd x;
    std::vector<int> y;
    make_separable(60, 300, 2.0, 10, x, y);
    EnsembleConfig cfg;
    cfg.n_members = 3;
    cfg.slice_size = 100;
    cfg.rounds = 5;
    cfg.seed = 9;
    const auto clf = train_ensemble(x, y, cfg);
    REQUIRE(clf.members.size() == 3);
    std::set<int> all;
    for (const auto& m : clf.members) {
        CHECK(m.slice.size() == 100);
        std::set<int> unique(m.slice.begin(), m.slice.end());
        CHECK(unique.size() == 100);
        for (const int i : m.slice) {
            CHECK(i >= 0);
            CHECK(i < 300);
            CHECK(all.insert(i).second);  // disjoint across members
        }
    }
    CHECK(all.size() == 300);

    // beyond the disjoint budget, slices are drawn without replacement
    EnsembleConfig cfg5 = cfg;
    cfg5.n_members = 5;
    const auto clf5 = train_ensemble(x, y, cfg5);
    for (const auto& m : clf5.members) {
        std::set<int> unique(m.slice.begin(), m.slice.end());
        CHECK(unique.size() == 100);
    }
}

TEST_CASE("separable data trains to perfect accuracy") {
    Eigen::MatrixXd x;
    std::vector<int> y;
    make_separable(200, 120, 3.0, 11, x, y);
    EnsembleConfig cfg;
    cfg.n_members = 3;
    cfg.slice_size = 40;
    cfg.rounds = 30;
    cfg.seed = 2;
    const auto clf = train_ensemble(x, y, cfg);
    const auto metrics = evaluate(clf, x, y);
    CHECK(metrics.accuracy == 1.0);
    CHECK(metrics.roc_auc == 1.0);
    CHECK(metrics.pr_auc == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("training is deterministic given the seed") {
    Eigen::MatrixXd x;
    std::vector<int> y;
    make_separable(80, 60, 1.0, 12, x, y);
    EnsembleConfig cfg;
    cfg.n_members = 4;
    cfg.slice_size = 20;
    cfg.rounds = 10;
    cfg.seed = 33;
    const auto a = train_ensemble(x, y, cfg);
    const auto b = train_ensemble(x, y, cfg);
    REQUIRE(a.members.size() == b.members.size());
    for (std::size_t i = 0; i < a.members.size(); ++i) {
        CHECK(a.members[i].slice == b.members[i].slice);
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Eigen::VectorXd v = x.row(i).transpose();
        CHECK(predict(a, v).positive == predict(b, v).positive);
        CHECK(positive_score(a, v) == positive_score(b, v));
    }
}

TEST_CASE("ensemble training rejects bad input") {
    Eigen::MatrixXd x(10, 5);
    x.setRandom();
    std::vector<int> ones(10, 1);
    EnsembleConfig cfg;
    cfg.slice_size = 3;
    CHECK_THROWS_AS(train_ensemble(x, ones, cfg), SingleClassData);

    std::vector<int> y(10);
    for (std::size_t i = 0; i < 10; ++i) y[i] = i % 2;
    cfg.slice_size = 6;
    CHECK_THROWS_AS(train_ensemble(x, y, cfg), SliceTooLarge);
    cfg.slice_size = 3;
    cfg.bias = 0.5;
    CHECK_THROWS(train_ensemble(x, y, cfg));
}

TEST_CASE("predict validates the embedding dimension") {
    const auto c = threshold_classifier();
    CHECK_THROWS_AS(predict(c, Eigen::VectorXd::Zero(5)), DimensionMismatch);
}

TEST_CASE("confusion arithmetic on a hand-built classifier") {
    const auto c = threshold_classifier();
    // 10 points: tp=2, fp=1, fn=1, tn=6
    Eigen::MatrixXd x(10, 2);
    std::vector<int> y(10);
    const double pos = 1.0, neg = -1.0;
    struct Row { double v; int label; };
    const Row rows[10] = {{pos, 1}, {pos, 1}, {neg, 1},              // tp tp fn
                          {pos, 0},                                  // fp
                          {neg, 0}, {neg, 0}, {neg, 0}, {neg, 0},    // tn
                          {neg, 0}, {neg, 0}};
    for (int i = 0; i < 10; ++i) {
        x(i, 0) = rows[i].v;
        x(i, 1) = 0.0;
        y[static_cast<std::size_t>(i)] = rows[i].label;
    }
    const auto m = evaluate(c, x, y);
    CHECK(m.tp == 2);
    CHECK(m.fp == 1);
    CHECK(m.fn == 1);
    CHECK(m.tn == 6);
    CHECK(m.precision == doctest::Approx(2.0 / 3.0));
    CHECK(m.recall == doctest::Approx(2.0 / 3.0));
    CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(m.fpr == doctest::Approx(1.0 / 7.0));
    CHECK(m.lr_plus == doctest::Approx((2.0 / 3.0) / (1.0 / 7.0)));
    CHECK(m.lr_plus == doctest::Approx(14.0 / 3.0));
    CHECK(m.accuracy == doctest::Approx(0.8));

    // rank-based AUC equals the probability-of-correct-ordering brute force
    std::vector<double> scores;
    for (int i = 0; i < 10; ++i) {
        scores.push_back(positive_score(c, x.row(i).transpose()));
    }
    CHECK(m.roc_auc == doctest::Approx(brute_force_auc(scores, y)).epsilon(1e-12));
}

TEST_CASE("lr_plus becomes an infinity marker when fpr is zero") {
    const auto c = threshold_classifier();
    Eigen::MatrixXd x(4, 2);
    x << 1, 0, 1, 0, -1, 0, -1, 0;
    const std::vector<int> y{1, 1, 0, 0};  // perfect separation
    const auto m = evaluate(c, x, y);
    CHECK(m.fpr == 0.0);
    CHECK(std::isinf(m.lr_plus));

    const auto dir = fs::temp_directory_path() / "epikit_test_filter";
    fs::create_directories(dir);
    const auto path = (dir / "metrics.json").string();
    write_metrics_json(m, path);
    std::ifstream in(path);
    const std::string text((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    CHECK(text.find("\"lr_plus\": \"inf\"") != std::string::npos);
}

TEST_CASE("single-class evaluation flags the AUCs as undefined") {
    const auto c = threshold_classifier();
    Eigen::MatrixXd x(3, 2);
    x << 1, 0, -1, 0, 1, 0;
    const std::vector<int> y{1, 1, 1};
    const auto m = evaluate(c, x, y);
    CHECK(!m.auc_defined);
    CHECK(std::isnan(m.roc_auc));
    CHECK(std::isnan(m.pr_auc));
    CHECK(m.recall == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("recall and fpr are non-decreasing in the bias") {
    Eigen::MatrixXd x;
    std::vector<int> y;
    make_separable(300, 60, 0.25, 21, x, y);  // noisy, imperfect
    EnsembleConfig cfg;
    cfg.n_members = 5;
    cfg.slice_size = 12;
    cfg.rounds = 8;
    cfg.seed = 3;
    const auto clf = train_ensemble(x, y, cfg);
    double last_recall = -1.0, last_fpr = -1.0;
    for (const double bias : {1.0, 1.5, 2.0, 3.0, 5.0}) {
        const auto m = evaluate(clf, x, y, bias);
        CHECK(m.recall >= last_recall);
        CHECK(m.fpr >= last_fpr);
        last_recall = m.recall;
        last_fpr = m.fpr;
    }
}

TEST_CASE("filter_with reports compositions and the empirical LR+") {
    // alternate keep/drop within each class: TPR == FPR == 0.5, so the
    // composition is unchanged
    const std::size_t n = 400;
    std::vector<int> truth(n);
    for (std::size_t i = 0; i < n; ++i) truth[i] = i < n / 4 ? 1 : 0;  // 1:3
    std::size_t seen_pos = 0, seen_neg = 0;
    const auto outcome = filter_with(
        n,
        [&](std::size_t i) {
            return truth[i] == 1 ? (seen_pos++ % 2 == 0) : (seen_neg++ % 2 == 0);
        },
        &truth);
    CHECK(outcome.has_truth);
    CHECK(outcome.before.p_plus == doctest::Approx(0.25));
    CHECK(outcome.after.p_plus == doctest::Approx(0.25));
    CHECK(outcome.empirical_lr_plus == doctest::Approx(1.0));

    // perfect classifier: everything kept is positive
    const auto perfect = filter_with(
        n, [&](std::size_t i) { return truth[i] == 1; }, &truth);
    CHECK(perfect.after.p_plus == 1.0);
    CHECK(perfect.after.p_minus == 0.0);
    CHECK(std::isinf(perfect.empirical_lr_plus));

    // rejecting everything is legal and flagged
    const auto none = filter_with(n, [](std::size_t) { return false; }, &truth);
    CHECK(none.all_rejected);
    CHECK(none.kept.empty());
}

TEST_CASE("classifier files round-trip and reject corruption") {
    Eigen::MatrixXd x;
    std::vector<int> y;
    make_separable(60, 50, 2.0, 14, x, y);
    EnsembleConfig cfg;
    cfg.n_members = 3;
    cfg.slice_size = 15;
    cfg.rounds = 6;
    cfg.seed = 8;

    const auto dir = fs::temp_directory_path() / "epikit_test_filter";
    fs::create_directories(dir);

    for (const auto kind : {BaseLearnerKind::boosted_stumps, BaseLearnerKind::logistic}) {
        cfg.base_learner = kind;
        const auto clf = train_ensemble(x, y, cfg);
        const auto path = (dir / "clf.epcl").string();
        save_classifier(clf, path);
        const auto loaded = load_classifier(path);
        CHECK(loaded.input_dim == clf.input_dim);
        CHECK(loaded.config.n_members == clf.config.n_members);
        CHECK(loaded.config.bias == clf.config.bias);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const Eigen::VectorXd v = x.row(i).transpose();
            CHECK(predict(loaded, v).positive == predict(clf, v).positive);
            CHECK(positive_score(loaded, v) == positive_score(clf, v));
        }

        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        }
        bytes[bytes.size() - 6] ^= 0x10;
        const auto bad_path = (dir / "clf_bad.epcl").string();
        std::ofstream out(bad_path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(load_classifier(bad_path), CorruptModelFile);
    }
}
