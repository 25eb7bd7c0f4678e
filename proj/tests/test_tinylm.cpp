#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "epi/seqdata.hpp"
#include "epi/tinylm.hpp"

using namespace epi;
namespace fs = std::filesystem;

namespace {

tinylm::ModelConfig tiny_config() {
    tinylm::ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.max_context = 12;
    cfg.seed = 11;
    return cfg;
}

std::vector<seqdata::TokenSequence> encode_all(const std::vector<std::string>& seqs) {
    std::vector<seqdata::TokenSequence> out;
    for (const auto& s : seqs) out.push_back(seqdata::encode(s));
    return out;
}

void zero_output_projection(tinylm::LanguageModel& m) {
    const auto layout = tinylm::param_layout(m.config());
    auto& p = m.parameters();
    std::fill(p.begin() + static_cast<std::ptrdiff_t>(layout.output_weight),
              p.begin() + static_cast<std::ptrdiff_t>(layout.total), 0.0);
}

seqdata::Dataset dataset_of(const std::vector<std::string>& seqs) {
    seqdata::Dataset d;
    for (const auto& s : seqs) {
        seqdata::EpitopeRecord rec;
        rec.sequence = s;
        d.records.push_back(rec);
    }
    return d;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
    tinylm::ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.d_ff = 64;
    cfg.max_context = 16;
    // hand count: embeddings + per-layer attention/ff/norms + final norm + head
    const std::size_t tok = 23 * 32;
    const std::size_t pos = 16 * 32;
    const std::size_t per_layer = 2 * 32            // ln1
                                  + 4 * (32 * 32 + 32)  // q,k,v,o
                                  + 2 * 32              // ln2
                                  + (32 * 64 + 64) + (64 * 32 + 32);
    const std::size_t head = 2 * 32 + (32 * 23 + 23);
    CHECK(tinylm::parameter_count(cfg) == tok + pos + 2 * per_layer + head);
    CHECK(tinylm::parameter_count(cfg) == 19159);
}

TEST_CASE("init rejects bad configs") {
    tinylm::ModelConfig cfg = tiny_config();
    cfg.d_model = 12;
    cfg.n_heads = 5;
    CHECK_THROWS_AS(tinylm::init_model(cfg), tinylm::BadConfig);
    cfg = tiny_config();
    cfg.n_layers = 0;
    CHECK_THROWS_AS(tinylm::init_model(cfg), tinylm::BadConfig);
}

TEST_CASE("init is deterministic in the seed") {
    const auto a = tinylm::init_model(tiny_config());
    const auto b = tinylm::init_model(tiny_config());
    CHECK(a.parameters() == b.parameters());
    auto cfg = tiny_config();
    cfg.seed = 12;
    const auto c = tinylm::init_model(cfg);
    CHECK(a.parameters() != c.parameters());
}

TEST_CASE("zeroed output projection gives the uniform distribution") {
    auto m = tinylm::init_model(tiny_config());
    zero_output_projection(m);
    const auto t = seqdata::encode("ACDEF");
    const auto lp = tinylm::forward_log_probs(m, t.ids);
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
        for (Eigen::Index j = 0; j < lp.cols(); ++j) {
            CHECK(std::exp(lp(i, j)) == doctest::Approx(1.0 / 23.0).epsilon(1e-12));
        }
    }
    // analytic log-prob and loss for the uniform model
    CHECK(tinylm::sequence_log_prob(m, t) ==
          doctest::Approx(6.0 * std::log(1.0 / 23.0)).epsilon(1e-12));
    CHECK(tinylm::clm_loss(m, {t}) == doctest::Approx(std::log(23.0)).epsilon(1e-12));
}

TEST_CASE("per-position probabilities sum to one") {
    const auto m = tinylm::init_model(tiny_config());
    const auto t = seqdata::encode("WYACDEFGH");
    const auto lp = tinylm::forward_log_probs(m, t.ids);
    for (Eigen::Index i = 0; i < lp.rows(); ++i) {
        double sum = 0.0;
        for (Eigen::Index j = 0; j < lp.cols(); ++j) sum += std::exp(lp(i, j));
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("causality: perturbing a token leaves earlier outputs bit-identical") {
    const auto m = tinylm::init_model(tiny_config());
    auto a = seqdata::encode("ACDEFGHI").ids;
    auto b = a;
    const std::size_t j = 4;
    b[j] = b[j] == 0 ? 1 : 0;
    const auto lp_a = tinylm::forward_log_probs(m, a);
    const auto lp_b = tinylm::forward_log_probs(m, b);
    for (std::size_t i = 0; i < j; ++i) {
        for (Eigen::Index v = 0; v < lp_a.cols(); ++v) {
            CHECK(lp_a(static_cast<Eigen::Index>(i), v) ==
                  lp_b(static_cast<Eigen::Index>(i), v));
        }
    }
    bool changed = false;
    for (Eigen::Index v = 0; v < lp_a.cols(); ++v) {
        if (lp_a(static_cast<Eigen::Index>(j), v) !=
            lp_b(static_cast<Eigen::Index>(j), v)) {
            changed = true;
        }
    }
    CHECK(changed);
}

TEST_CASE("sequence_log_prob ignores trailing PAD") {
    const auto m = tinylm::init_model(tiny_config());
    auto tokens = seqdata::encode("ACD").ids;
    const double base = tinylm::sequence_log_prob(m, tokens);
    tokens.push_back(seqdata::kPad);
    tokens.push_back(seqdata::kPad);
    CHECK(tinylm::sequence_log_prob(m, tokens) == base);
}

TEST_CASE("clm_loss equals the mean of per-sequence log-probs") {
    const auto m = tinylm::init_model(tiny_config());
    const auto batch = encode_all({"ACD", "WYSTV", "KLMNP", "GG"});
    double nll = 0.0;
    std::size_t tokens = 0;
    for (const auto& t : batch) {
        nll -= tinylm::sequence_log_prob(m, t);
        tokens += t.ids.size() - 1;
    }
    CHECK(tinylm::clm_loss(m, batch) ==
          doctest::Approx(nll / static_cast<double>(tokens)).epsilon(1e-9));
}

TEST_CASE("total probability of short sequences stays below one") {
    auto cfg = tiny_config();
    cfg.n_layers = 1;
    const auto m = tinylm::init_model(cfg);
    double total = 0.0;
    for (int a = 0; a < 20; ++a) {
        const std::string s1(1, seqdata::residue_char(a));
        total += std::exp(tinylm::sequence_log_prob(m, seqdata::encode(s1)));
        for (int b = 0; b < 20; ++b) {
            const std::string s2 = s1 + seqdata::residue_char(b);
            total += std::exp(tinylm::sequence_log_prob(m, seqdata::encode(s2)));
        }
    }
    CHECK(total > 0.0);
    CHECK(total <= 1.0);
}

TEST_CASE("grad check: analytic gradients match central differences") {
    const auto m = tinylm::init_model(tiny_config());
    const auto batch = encode_all({"ACDEF", "WWYK", "MNPQRST"});
    const double err = tinylm::grad_check(m, batch, 1e-5, 300, 5);
    CHECK(err < 1e-4);
}

TEST_CASE("grad check conventions") {
    const auto m = tinylm::init_model(tiny_config());
    const auto batch = encode_all({"ACD"});
    CHECK(tinylm::grad_check(m, batch, 1e-5, 0) == 0.0);
    CHECK_THROWS_AS(tinylm::grad_check(m, batch, 0.0, 10), tinylm::BadConfig);
}

TEST_CASE("context overflow is reported") {
    auto cfg = tiny_config();
    cfg.max_context = 6;
    const auto m = tinylm::init_model(cfg);
    const auto t = seqdata::encode("ACDEFGHIK");  // 11 tokens
    CHECK_THROWS_AS(tinylm::forward_log_probs(m, t.ids), tinylm::ContextOverflow);
}

TEST_CASE("training memorizes a single sequence") {
    auto cfg = tiny_config();
    const auto m = tinylm::init_model(cfg);
    tinylm::TrainConfig tc;
    tc.learning_rate = 5e-3;
    tc.epochs = 300;
    tc.weight_decay = 0.0;
    tc.batch_size = 1;
    tc.seed = 3;
    const auto outcome = tinylm::train(m, dataset_of({"ACDEFG"}), {}, tc);
    CHECK(outcome.report.train_loss.back() < 0.01);
    CHECK(outcome.report.best_epoch == tc.epochs - 1);  // no val set
}

TEST_CASE("training is deterministic") {
    const auto m = tinylm::init_model(tiny_config());
    const auto data = dataset_of({"ACDEF", "WYKLM", "GHIKL", "PQRST", "VVAAC"});
    const auto val = dataset_of({"ACDEG", "WYKLN"});
    tinylm::TrainConfig tc;
    tc.learning_rate = 1e-3;
    tc.epochs = 4;
    tc.batch_size = 2;
    tc.seed = 9;
    const auto a = tinylm::train(m, data, val, tc);
    const auto b = tinylm::train(m, data, val, tc);
    CHECK(a.report.train_loss == b.report.train_loss);
    CHECK(a.report.val_loss == b.report.val_loss);
    CHECK(a.model.parameters() == b.model.parameters());
    CHECK(a.report.best_epoch == b.report.best_epoch);
}

TEST_CASE("divergence aborts with a partial report") {
    const auto m = tinylm::init_model(tiny_config());
    const auto data = dataset_of({"ACDEF", "WYKLM", "GHIKL", "PQRST"});
    tinylm::TrainConfig tc;
    tc.learning_rate = 100.0;
    tc.weight_decay = 1.0;  // decay factor far past stability
    tc.epochs = 60;
    tc.batch_size = 1;
    tc.seed = 1;
    CHECK_THROWS_AS(tinylm::train(m, data, {}, tc), tinylm::DivergenceDetected);
    try {
        tinylm::train(m, data, {}, tc);
    } catch (const tinylm::DivergenceDetected& e) {
        CHECK(e.partial.diverged);
        CHECK(e.partial.train_loss.size() < 60);
    }
}

TEST_CASE("checkpoint round-trip is bit exact") {
    const auto dir = fs::temp_directory_path() / "epikit_test_ckpt";
    fs::create_directories(dir);
    const auto path = (dir / "model.eplm").string();

    const auto m = tinylm::init_model(tiny_config());
    tinylm::save_checkpoint(m, path);
    const auto loaded = tinylm::load_checkpoint(path);
    CHECK(loaded.config() == m.config());
    CHECK(loaded.parameters() == m.parameters());

    const auto t = seqdata::encode("ACDWY");
    const auto lp_a = tinylm::forward_log_probs(m, t.ids);
    const auto lp_b = tinylm::forward_log_probs(loaded, t.ids);
    CHECK((lp_a - lp_b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const auto dir = fs::temp_directory_path() / "epikit_test_ckpt";
    fs::create_directories(dir);
    const auto path = (dir / "model2.eplm").string();
    const auto m = tinylm::init_model(tiny_config());
    tinylm::save_checkpoint(m, path);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    }

    SUBCASE("truncated file") {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS_AS(tinylm::load_checkpoint(path), tinylm::CorruptCheckpoint);
    }
    SUBCASE("flipped parameter byte fails the checksum") {
        bytes[bytes.size() / 2] ^= 0x40;
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(tinylm::load_checkpoint(path), tinylm::CorruptCheckpoint);
    }
    SUBCASE("vocab mismatch names the problem") {
        const std::uint32_t bogus = 30;
        std::memcpy(bytes.data() + 28, &bogus, sizeof(bogus));  // vocab_size field
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        try {
            tinylm::load_checkpoint(path);
            FAIL("expected CorruptCheckpoint");
        } catch (const tinylm::CorruptCheckpoint& e) {
            CHECK(std::string(e.what()).find("vocab") != std::string::npos);
        }
    }
    SUBCASE("bad magic") {
        bytes[0] = 'X';
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(tinylm::load_checkpoint(path), tinylm::CorruptCheckpoint);
    }
}
