#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "epi/common.hpp"
#include "epi/tinylm.hpp"

// Autoregressive sampling with temperature and repetition penalty, library
// assembly, and perplexity scoring.

namespace epi::generator {

struct DegenerateModel : std::runtime_error {
    DegenerateModel() : std::runtime_error("model produced non-finite logits") {}
};

struct SamplingParams {
    double temperature = 1.0;
    double repetition_penalty = 2.0;
    std::size_t max_len = 14;  // residue cap
    std::uint64_t seed = 0;

    void validate() const;  // throws std::invalid_argument
};

// Per-step distribution over the vocabulary: repetition penalty on tokens
// already emitted in this sequence (positive logit divided by the penalty,
// negative multiplied), then temperature, then softmax. BOS and PAD can
// never be sampled. temperature < 1e-6 collapses to argmax.
Eigen::VectorXd sampling_distribution(
    const Eigen::VectorXd& logits,
    const std::array<bool, seqdata::kVocabSize>& emitted, double temperature,
    double repetition_penalty);

// One sequence from BOS; stops at EOS or the residue cap. May return an
// empty string when EOS is the first sample.
std::string sample_one(const tinylm::LanguageModel& m, const SamplingParams& p,
                       Rng& rng);

struct GeneratedLibrary {
    std::vector<std::string> sequences;  // distinct, in draw order
    SamplingParams params;
    std::string source_model;
    std::size_t attempts = 0;
    bool complete = true;  // false when max_attempts ran out first
};

GeneratedLibrary generate_library(const tinylm::LanguageModel& m,
                                  const SamplingParams& p, std::size_t n_unique,
                                  std::size_t max_attempts);

// exp of mean NLL per predicted token (residues + EOS); >= 1.
double perplexity(const tinylm::LanguageModel& m, const std::string& sequence);

struct PerplexityComparison {
    double mean_a = 0.0, mean_b = 0.0;
    double u_statistic = 0.0, p_value = 1.0;
    std::size_t n_a = 0, n_b = 0;
    double alpha = 0.05;
    bool reject = false;
};

PerplexityComparison compare_perplexities(const tinylm::LanguageModel& m,
                                          const std::vector<std::string>& lib_a,
                                          const std::vector<std::string>& lib_b,
                                          double alpha = 0.05);

void write_comparison_json(const PerplexityComparison& c, const std::string& path);

// TSV with columns sequence, length, perplexity.
void write_library_tsv(const tinylm::LanguageModel& m,
                       const std::vector<std::string>& seqs,
                       const std::string& path);

}  // namespace epi::generator
