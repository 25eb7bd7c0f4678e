#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

// Statistical characterization of sequence sets: positional frequencies,
// relative entropy, propensity, Shannon entropy, mutual information,
// Mann-Whitney U, and PCA. All entropies are in nats. Every operation is a
// pure function of its inputs and safe to call from multiple threads.

namespace epi::seqstats {

struct NoSequencesOfLength : std::runtime_error {
    explicit NoSequencesOfLength(std::size_t n)
        : std::runtime_error("no sequences of length " + std::to_string(n)) {}
};

struct UnsupportedMass : std::runtime_error {
    explicit UnsupportedMass(int symbol)
        : std::runtime_error("P has mass where Q is zero (symbol id " +
                             std::to_string(symbol) + ")") {}
};

struct ZeroBackground : std::runtime_error {
    ZeroBackground() : std::runtime_error("background has a zero entry") {}
};

struct EmptySample : std::runtime_error {
    EmptySample() : std::runtime_error("empty sample") {}
};

struct DegenerateData : std::runtime_error {
    DegenerateData() : std::runtime_error("all rows identical; zero variance") {}
};

// Distribution over the 20 residues, indexed by alphabet id.
using ProbabilityVector = std::array<double, 20>;

bool is_probability_vector(const ProbabilityVector& p, double tol = 1e-9);
ProbabilityVector uniform_residue_distribution();

struct PositionFrequencyMatrix {
    std::size_t length = 0;
    std::vector<ProbabilityVector> rows;  // one per position
    std::size_t support = 0;              // sequences observed (same at every position)
};

// Per-position background. Either one shared distribution or a full matrix.
class BackgroundModel {
public:
    static BackgroundModel uniform();
    static BackgroundModel from_vector(const ProbabilityVector& q);
    static BackgroundModel from_matrix(std::vector<ProbabilityVector> rows);

    // q_{X,y}; position is ignored for shared-vector backgrounds.
    double at(std::size_t position, int residue) const;
    bool positional() const { return !rows_.empty(); }
    std::size_t positions() const { return rows_.size(); }

private:
    ProbabilityVector shared_{};
    std::vector<ProbabilityVector> rows_;
};

struct MutualInformationMatrix {
    std::size_t length = 0;
    Eigen::MatrixXd values;  // n x n, nats; diagonal is per-position entropy
    std::size_t support = 0;
};

std::map<std::size_t, std::size_t> length_histogram(const std::vector<std::string>& seqs);

// Maximum-likelihood per-position frequencies over the length-n subset.
// alpha > 0 applies add-alpha smoothing: (count + alpha) / (total + 20*alpha).
PositionFrequencyMatrix positional_frequencies(const std::vector<std::string>& seqs,
                                               std::size_t n, double alpha = 0.0);

// KL(P || Q) in nats, with 0 ln(0/q) := 0.
double relative_entropy(const ProbabilityVector& p, const ProbabilityVector& q);

// n x 20 ratios p_{X,y} / q_{X,y}.
Eigen::MatrixXd propensity(const PositionFrequencyMatrix& p, const BackgroundModel& q);

double shannon_entropy(const ProbabilityVector& p);

// Plug-in estimate H(i) + H(j) - H(i,j) from empirical joint counts; tiny
// negative floating noise is clamped to zero.
MutualInformationMatrix mutual_information(const std::vector<std::string>& seqs,
                                           std::size_t n);

// Empirical pairwise joint entropies H(i,j); diagonal is H(i).
MutualInformationMatrix joint_entropy(const std::vector<std::string>& seqs,
                                      std::size_t n);

enum class MwMethod { automatic, exact, normal_approx };

struct MwResult {
    double u;            // U of the first sample, midrank ties
    double p_two_sided;
    bool exact = false;  // permutation enumeration was used
};

// Exact permutation p when pooled n <= 12, else tie-corrected normal
// approximation with continuity correction. Two-sided p for the exact path
// is P(|U' - n1*n2/2| >= |U - n1*n2/2|) over all labelings.
MwResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
                        MwMethod method = MwMethod::automatic);

struct PcaResult {
    Eigen::MatrixXd components;         // k x d, orthonormal rows
    Eigen::VectorXd explained_variance; // k, non-increasing
    Eigen::MatrixXd projection;         // m x k
};

// Covariance eigendecomposition of the column-centered data. Sign convention:
// the largest-magnitude entry of each component is positive.
PcaResult pca(const Eigen::MatrixXd& data, int k);

// --- report bundle ---

// Writes report.json plus flat TSV matrices (length histogram, and per
// observed length the positional KL, propensity, Shannon entropy, and MI).
void write_stats_bundle(const std::vector<std::string>& seqs,
                        const BackgroundModel& background,
                        const std::string& out_dir,
                        std::size_t min_support = 2);

}  // namespace epi::seqstats
