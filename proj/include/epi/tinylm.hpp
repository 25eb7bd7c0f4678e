#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epi/seqdata.hpp"

// Small decoder-only causal transformer over the residue vocabulary.
// Pre-LN blocks, learned positional embeddings, exact-GELU feed-forward,
// untied output projection. All math is double precision and single
// threaded so results are reproducible bit for bit.
//
// A LanguageModel is immutable during inference: forward_*, sequence_log_prob,
// and clm_loss may run concurrently on a shared model. train() works on its
// own copy.

namespace epi::tinylm {

struct BadConfig : std::runtime_error {
    explicit BadConfig(const std::string& what) : std::runtime_error(what) {}
};

struct ContextOverflow : std::runtime_error {
    ContextOverflow(std::size_t have, std::size_t max)
        : std::runtime_error("sequence of " + std::to_string(have) +
                             " tokens exceeds max_context " + std::to_string(max)) {}
};

struct CorruptCheckpoint : std::runtime_error {
    explicit CorruptCheckpoint(const std::string& what) : std::runtime_error(what) {}
};

struct ModelConfig {
    int n_layers = 4;
    int d_model = 128;
    int n_heads = 4;
    int d_ff = 512;
    int max_context = 32;
    int vocab_size = seqdata::kVocabSize;
    std::uint64_t seed = 0;

    void validate() const;  // throws BadConfig
    bool operator==(const ModelConfig&) const = default;
};

// Byte offsets (in doubles) into the flat parameter store. Matrices are
// row major: token_embedding is V x d, wq/wk/wv/wo are d x d, w1 is d x ff,
// w2 is ff x d, output_weight is d x V.
struct ParamLayout {
    struct LayerOffsets {
        std::size_t ln1_gain, ln1_bias;
        std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
        std::size_t ln2_gain, ln2_bias;
        std::size_t w1, b1, w2, b2;
    };
    std::size_t token_embedding = 0;
    std::size_t position_embedding = 0;
    std::vector<LayerOffsets> layers;
    std::size_t final_ln_gain = 0, final_ln_bias = 0;
    std::size_t output_weight = 0, output_bias = 0;
    std::size_t total = 0;
};

ParamLayout param_layout(const ModelConfig& cfg);
std::size_t parameter_count(const ModelConfig& cfg);

class LanguageModel {
public:
    LanguageModel() = default;

    const ModelConfig& config() const { return cfg_; }
    const std::vector<double>& parameters() const { return params_; }
    std::vector<double>& parameters() { return params_; }

    // Content fingerprint over config and parameters.
    std::string id() const;

    friend LanguageModel init_model(const ModelConfig&);
    friend LanguageModel load_checkpoint(const std::string&);

private:
    ModelConfig cfg_{};
    std::vector<double> params_;
};

// Deterministic scaled-normal initialization (seeded); biases zero,
// layer-norm gains one.
LanguageModel init_model(const ModelConfig& cfg);

// --- inference ---

// T x V raw logits for one token array. Throws ContextOverflow.
Eigen::MatrixXd forward_logits(const LanguageModel& m, std::span<const int> tokens);

// T x V log-probabilities (log-softmax rows of forward_logits).
Eigen::MatrixXd forward_log_probs(const LanguageModel& m, std::span<const int> tokens);

// Per-sequence log-probability matrices for a batch.
std::vector<Eigen::MatrixXd> forward(const LanguageModel& m,
                                     const std::vector<seqdata::TokenSequence>& batch);

// T x d final-layer hidden states (after the last layer norm).
Eigen::MatrixXd final_hidden_states(const LanguageModel& m, std::span<const int> tokens);

// Sum over predicted positions of log p(w_i | w_<i), EOS included.
// Trailing PAD after EOS is ignored.
double sequence_log_prob(const LanguageModel& m, const std::vector<int>& tokens);
inline double sequence_log_prob(const LanguageModel& m, const seqdata::TokenSequence& t) {
    return sequence_log_prob(m, t.ids);
}

// Mean negative log-likelihood per predicted token over the batch.
double clm_loss(const LanguageModel& m, const std::vector<seqdata::TokenSequence>& batch);

// clm_loss and its gradient with respect to every parameter.
double clm_loss_grad(const LanguageModel& m,
                     const std::vector<seqdata::TokenSequence>& batch,
                     std::vector<double>& grad);

// Max relative error between analytic and central-difference gradients on a
// random parameter subset. subset_size 0 returns 0; epsilon <= 0 is BadConfig.
double grad_check(LanguageModel m, const std::vector<seqdata::TokenSequence>& batch,
                  double epsilon, std::size_t subset_size = 200,
                  std::uint64_t seed = 1);

// --- training ---

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 10;
    double weight_decay = 0.01;
    int batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainReport {
    std::vector<double> train_loss;  // one entry per completed epoch
    std::vector<double> val_loss;    // empty when no validation set
    int best_epoch = -1;             // argmin val loss (last epoch if no val)
    std::vector<double> epoch_ms;
    bool diverged = false;
};

struct DivergenceDetected : std::runtime_error {
    explicit DivergenceDetected(TrainReport r)
        : std::runtime_error("loss became non-finite"), partial(std::move(r)) {}
    TrainReport partial;
};

struct TrainOutcome {
    LanguageModel model;  // best-epoch checkpoint
    TrainReport report;
};

// AdamW (first-order, decoupled weight decay) on the causal LM objective.
// Deterministic given config seeds and input order.
TrainOutcome train(const LanguageModel& m, const seqdata::Dataset& train_set,
                   const seqdata::Dataset& val_set, const TrainConfig& tc);

void write_train_report_json(const TrainReport& r, const std::string& path);
void write_train_report_tsv(const TrainReport& r, const std::string& path);

// --- persistence ---
// Binary format: "EPLM" magic, u32 version, config block, row-major f64
// parameter array (little endian), trailing CRC32.

void save_checkpoint(const LanguageModel& m, const std::string& path);
LanguageModel load_checkpoint(const std::string& path);

}  // namespace epi::tinylm
