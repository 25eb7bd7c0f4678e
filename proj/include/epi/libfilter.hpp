#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "epi/seqdata.hpp"
#include "epi/tinylm.hpp"

// Sequence embeddings, the ensemble-of-ensembles classifier over feature
// slices with biased majority voting, evaluation metrics including LR+,
// and library filtering.

namespace epi::libfilter {

struct SingleClassData : std::runtime_error {
    SingleClassData() : std::runtime_error("training data contains a single class") {}
};

struct SliceTooLarge : std::runtime_error {
    SliceTooLarge(int slice, int dim)
        : std::runtime_error("slice_size " + std::to_string(slice) +
                             " exceeds embedding dimension " + std::to_string(dim)) {}
};

struct DimensionMismatch : std::runtime_error {
    DimensionMismatch(Eigen::Index have, Eigen::Index want)
        : std::runtime_error("embedding dimension " + std::to_string(have) +
                             " does not match classifier dimension " +
                             std::to_string(want)) {}
};

struct CorruptModelFile : std::runtime_error {
    explicit CorruptModelFile(const std::string& what) : std::runtime_error(what) {}
};

enum class Pooling { rightmost, sum, weighted_sum };

std::string to_string(Pooling p);
std::optional<Pooling> parse_pooling(std::string_view s);

struct EmbeddingVector {
    Eigen::VectorXd values;
    Pooling pooling = Pooling::sum;
    std::string source_model;
};

// Collapse per-token hidden states (rows) into one vector. weighted_sum puts
// `rightmost_weight` on the last row and 1 on the rest.
Eigen::VectorXd pool_hidden(const Eigen::MatrixXd& hidden, Pooling mode,
                            double rightmost_weight = 2.0);

// Final-layer hidden states of the encoded sequence, pooled.
EmbeddingVector embed(const tinylm::LanguageModel& m, const std::string& sequence,
                      Pooling mode, double rightmost_weight = 2.0);

struct LabeledEmbeddings {
    Eigen::MatrixXd x;                   // one row per labeled record
    std::vector<int> y;                  // 1 positive, 0 negative
    std::vector<std::string> sequences;  // unlabeled records are skipped
};

LabeledEmbeddings embed_labeled_dataset(const tinylm::LanguageModel& m,
                                        const seqdata::Dataset& d, Pooling mode,
                                        double rightmost_weight = 2.0);

// --- base learners ---

struct TreeNode {
    int feature = -1;  // index into the member's slice; -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
};

struct BoostedTrees {
    double base_score = 0.0;
    double shrinkage = 0.3;
    std::vector<std::vector<TreeNode>> trees;

    double score(const Eigen::VectorXd& x) const;
};

struct LogisticModel {
    Eigen::VectorXd weights;
    double intercept = 0.0;

    double score(const Eigen::VectorXd& x) const {
        return weights.dot(x) + intercept;
    }
};

using BaseLearner = std::variant<BoostedTrees, LogisticModel>;

enum class BaseLearnerKind { boosted_stumps, logistic };

struct EnsembleConfig {
    int n_members = 3;
    int slice_size = 100;
    double bias = 2.0;  // weight of a positive member vote; >= 1
    BaseLearnerKind base_learner = BaseLearnerKind::boosted_stumps;
    int rounds = 40;
    double shrinkage = 0.3;
    int max_depth = 2;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EnsembleMember {
    std::vector<int> slice;  // sorted feature indices into the full embedding
    BaseLearner learner;
};

struct EnsembleClassifier {
    EnsembleConfig config;
    int input_dim = 0;
    std::vector<EnsembleMember> members;
};

// Disjoint slices while indices remain, then seeded sampling without
// replacement; one base learner per slice. labels are 1 (positive) / 0.
EnsembleClassifier train_ensemble(const Eigen::MatrixXd& embeddings,
                                  const std::vector<int>& labels,
                                  const EnsembleConfig& cfg);

struct VoteResult {
    bool positive = false;
    double positive_weight = 0.0;
    double negative_weight = 0.0;
};

// Positive votes weigh `bias`, negative votes weigh 1; ties go positive.
VoteResult biased_vote(const std::vector<bool>& votes, double bias);

VoteResult predict(const EnsembleClassifier& c, const Eigen::VectorXd& v,
                   std::optional<double> bias_override = std::nullopt);

// Fraction of vote weight on the positive side; used as the ranking score
// for the AUCs.
double positive_score(const EnsembleClassifier& c, const Eigen::VectorXd& v,
                      std::optional<double> bias_override = std::nullopt);

struct MetricsReport {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double precision = 0.0, recall = 0.0, fpr = 0.0, f1 = 0.0, accuracy = 0.0;
    double roc_auc = 0.0, pr_auc = 0.0;
    double lr_plus = 0.0;  // +inf when fpr == 0 and tpr > 0, NaN when both 0
    bool auc_defined = true;  // false when evaluation labels are single-class
};

MetricsReport evaluate(const EnsembleClassifier& c, const Eigen::MatrixXd& embeddings,
                       const std::vector<int>& labels,
                       std::optional<double> bias_override = std::nullopt);

// Rank-based helpers, exposed for reuse and testing.
double roc_auc_score(const std::vector<double>& scores, const std::vector<int>& labels);
double pr_auc_score(const std::vector<double>& scores, const std::vector<int>& labels);

void write_metrics_json(const MetricsReport& m, const std::string& path);

struct LibraryComposition {
    double p_plus = 0.0;
    double p_minus = 0.0;
};

struct FilterOutcome {
    std::vector<std::size_t> kept;  // indices into the input library
    bool all_rejected = false;
    bool has_truth = false;
    LibraryComposition before{}, after{};    // populated when truth is known
    double empirical_lr_plus = 0.0;          // TPR/FPR estimate from truth
    std::size_t kept_positive = 0, kept_negative = 0;
};

// Core filtering rule over any per-item predictor (index -> keep?).
FilterOutcome filter_with(std::size_t n,
                          const std::function<bool(std::size_t)>& predict_positive,
                          const std::vector<int>* truth_labels);

// Keeps predicted positives. With truth labels (simulation mode) the
// before/after compositions and the empirical LR+ are reported.
FilterOutcome filter_library(const EnsembleClassifier& c,
                             const tinylm::LanguageModel& m, Pooling pooling,
                             const std::vector<std::string>& library,
                             const std::vector<int>* truth_labels = nullptr,
                             double rightmost_weight = 2.0);

void write_composition_json(const FilterOutcome& o, std::size_t total,
                            const std::string& path,
                            std::optional<double> held_out_lr_plus = std::nullopt);

// Versioned model file: JSON header (config, slices) followed by one binary
// blob per base learner and a trailing CRC32.
void save_classifier(const EnsembleClassifier& c, const std::string& path);
EnsembleClassifier load_classifier(const std::string& path);

}  // namespace epi::libfilter
