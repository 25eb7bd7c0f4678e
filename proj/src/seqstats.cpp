#include "epi/seqstats.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "epi/seqdata.hpp"
#include "json.hpp"

namespace epi::seqstats {

namespace {

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

std::vector<const std::string*> of_length(const std::vector<std::string>& seqs,
                                          std::size_t n) {
    std::vector<const std::string*> out;
    for (const auto& s : seqs) {
        if (s.size() == n) out.push_back(&s);
    }
    return out;
}

int residue_or_throw(char c) {
    const int id = seqdata::residue_id(c);
    if (id < 0) throw seqdata::NonCanonicalResidue(0, c);
    return id;
}

}  // namespace

bool is_probability_vector(const ProbabilityVector& p, double tol) {
    double sum = 0.0;
    for (const double v : p) {
        if (v < 0.0) return false;
        sum += v;
    }
    return std::abs(sum - 1.0) <= tol;
}

ProbabilityVector uniform_residue_distribution() {
    ProbabilityVector p;
    p.fill(1.0 / 20.0);
    return p;
}

BackgroundModel BackgroundModel::uniform() {
    return from_vector(uniform_residue_distribution());
}

BackgroundModel BackgroundModel::from_vector(const ProbabilityVector& q) {
    BackgroundModel m;
    m.shared_ = q;
    return m;
}

BackgroundModel BackgroundModel::from_matrix(std::vector<ProbabilityVector> rows) {
    BackgroundModel m;
    m.rows_ = std::move(rows);
    return m;
}

double BackgroundModel::at(std::size_t position, int residue) const {
    if (rows_.empty()) return shared_[static_cast<std::size_t>(residue)];
    return rows_.at(position)[static_cast<std::size_t>(residue)];
}

std::map<std::size_t, std::size_t> length_histogram(const std::vector<std::string>& seqs) {
    std::map<std::size_t, std::size_t> hist;
    for (const auto& s : seqs) ++hist[s.size()];
    return hist;
}

PositionFrequencyMatrix positional_frequencies(const std::vector<std::string>& seqs,
                                               std::size_t n, double alpha) {
    const auto subset = of_length(seqs, n);
    if (subset.empty()) throw NoSequencesOfLength(n);

    PositionFrequencyMatrix m;
    m.length = n;
    m.support = subset.size();
    m.rows.assign(n, ProbabilityVector{});
    const double total = static_cast<double>(subset.size()) + 20.0 * alpha;
    std::vector<std::array<std::size_t, 20>> counts(n, std::array<std::size_t, 20>{});
    for (const auto* s : subset) {
        for (std::size_t pos = 0; pos < n; ++pos) {
            ++counts[pos][static_cast<std::size_t>(residue_or_throw((*s)[pos]))];
        }
    }
    for (std::size_t pos = 0; pos < n; ++pos) {
        for (std::size_t aa = 0; aa < 20; ++aa) {
            m.rows[pos][aa] = (static_cast<double>(counts[pos][aa]) + alpha) / total;
        }
    }
    return m;
}

double relative_entropy(const ProbabilityVector& p, const ProbabilityVector& q) {
    double kl = 0.0;
    for (std::size_t x = 0; x < 20; ++x) {
        if (p[x] > 0.0) {
            if (q[x] <= 0.0) throw UnsupportedMass(static_cast<int>(x));
            kl += p[x] * std::log(p[x] / q[x]);
        }
    }
    return kl;
}

Eigen::MatrixXd propensity(const PositionFrequencyMatrix& p, const BackgroundModel& q) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(p.length), 20);
    for (std::size_t pos = 0; pos < p.length; ++pos) {
        for (int aa = 0; aa < 20; ++aa) {
            const double denom = q.at(pos, aa);
            if (denom <= 0.0) throw ZeroBackground();
            out(static_cast<Eigen::Index>(pos), aa) =
                p.rows[pos][static_cast<std::size_t>(aa)] / denom;
        }
    }
    return out;
}

double shannon_entropy(const ProbabilityVector& p) {
    double h = 0.0;
    for (const double v : p) h -= xlogx(v);
    return h;
}

namespace {

// Shared machinery for MI and pairwise joint entropy.
struct JointCounts {
    std::size_t support = 0;
    std::vector<std::string> encoded;  // residue ids per sequence

    static JointCounts build(const std::vector<std::string>& seqs, std::size_t n) {
        const auto subset = of_length(seqs, n);
        if (subset.empty()) throw NoSequencesOfLength(n);
        JointCounts jc;
        jc.support = subset.size();
        jc.encoded.reserve(subset.size());
        for (const auto* s : subset) {
            std::string ids(n, '\0');
            for (std::size_t pos = 0; pos < n; ++pos) {
                ids[pos] = static_cast<char>(residue_or_throw((*s)[pos]));
            }
            jc.encoded.push_back(std::move(ids));
        }
        return jc;
    }

    double pair_entropy(std::size_t i, std::size_t j) const {
        std::array<std::size_t, 400> counts{};
        for (const auto& s : encoded) {
            ++counts[static_cast<std::size_t>(s[i]) * 20 +
                     static_cast<std::size_t>(s[j])];
        }
        const double total = static_cast<double>(encoded.size());
        double h = 0.0;
        for (const std::size_t c : counts) {
            if (c > 0) h -= xlogx(static_cast<double>(c) / total);
        }
        return h;
    }

    double single_entropy(std::size_t i) const {
        std::array<std::size_t, 20> counts{};
        for (const auto& s : encoded) ++counts[static_cast<std::size_t>(s[i])];
        const double total = static_cast<double>(encoded.size());
        double h = 0.0;
        for (const std::size_t c : counts) {
            if (c > 0) h -= xlogx(static_cast<double>(c) / total);
        }
        return h;
    }
};

}  // namespace

MutualInformationMatrix mutual_information(const std::vector<std::string>& seqs,
                                           std::size_t n) {
    const auto jc = JointCounts::build(seqs, n);
    if (jc.support < 2) {
        throw NoSequencesOfLength(n);  // MI needs at least two observations
    }
    MutualInformationMatrix m;
    m.length = n;
    m.support = jc.support;
    m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = jc.single_entropy(i);
    for (std::size_t i = 0; i < n; ++i) {
        m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = h[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            double mi = h[i] + h[j] - jc.pair_entropy(i, j);
            if (mi < 0.0) mi = 0.0;  // plug-in MI is non-negative up to noise
            m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = mi;
            m.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = mi;
        }
    }
    return m;
}

MutualInformationMatrix joint_entropy(const std::vector<std::string>& seqs,
                                      std::size_t n) {
    const auto jc = JointCounts::build(seqs, n);
    MutualInformationMatrix m;
    m.length = n;
    m.support = jc.support;
    m.values.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
            jc.single_entropy(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double h = jc.pair_entropy(i, j);
            m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h;
            m.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = h;
        }
    }
    return m;
}

namespace {

// Midranks of the pooled sample, and U for the first n1 entries.
double u_statistic(const std::vector<double>& pooled, std::size_t n1,
                   const std::vector<std::size_t>& order) {
    const std::size_t n = pooled.size();
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = midrank;
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < n1; ++k) rank_sum += ranks[k];
    return rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
}

std::vector<std::size_t> sort_order(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    return order;
}

}  // namespace

MwResult mann_whitney_u(const std::vector<double>& a, const std::vector<double>& b,
                        MwMethod method) {
    if (a.empty() || b.empty()) throw EmptySample();
    const std::size_t n1 = a.size();
    const std::size_t n2 = b.size();
    const std::size_t n = n1 + n2;

    std::vector<double> pooled;
    pooled.reserve(n);
    pooled.insert(pooled.end(), a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    const auto order = sort_order(pooled);

    MwResult result;
    result.u = u_statistic(pooled, n1, order);

    const bool exact = method == MwMethod::exact ||
                       (method == MwMethod::automatic && n <= 12);
    const double mu = 0.5 * static_cast<double>(n1) * static_cast<double>(n2);

    if (exact) {
        // Enumerate all labelings of the pooled values; two-sided p by
        // distance of U from its null mean.
        std::vector<double> sorted(n);
        for (std::size_t k = 0; k < n; ++k) sorted[k] = pooled[order[k]];
        // Midranks of the sorted pooled sample are shared by every labeling.
        std::vector<double> ranks(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
            const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) ranks[k] = midrank;
            i = j + 1;
        }
        const double observed = std::abs(result.u - mu);
        std::size_t hit = 0;
        std::size_t total = 0;
        std::vector<bool> mask(n, false);
        std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(n1), true);
        std::sort(mask.begin(), mask.end());  // lexicographically first combo
        do {
            double rank_sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                if (mask[k]) rank_sum += ranks[k];
            }
            const double u = rank_sum - 0.5 * static_cast<double>(n1) *
                                             static_cast<double>(n1 + 1);
            if (std::abs(u - mu) >= observed - 1e-12) ++hit;
            ++total;
        } while (std::next_permutation(mask.begin(), mask.end()));
        result.p_two_sided = static_cast<double>(hit) / static_cast<double>(total);
        result.exact = true;
        return result;
    }

    // Tie-corrected normal approximation with continuity correction.
    double tie_sum = 0.0;
    {
        std::size_t i2 = 0;
        while (i2 < n) {
            std::size_t j = i2;
            while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i2]]) ++j;
            const double t = static_cast<double>(j - i2 + 1);
            tie_sum += t * t * t - t;
            i2 = j + 1;
        }
    }
    const double nd = static_cast<double>(n);
    double var = (static_cast<double>(n1) * static_cast<double>(n2) / 12.0) *
                 (nd + 1.0 - tie_sum / (nd * (nd - 1.0)));
    if (var <= 0.0) {
        result.p_two_sided = 1.0;  // all pooled values identical
        return result;
    }
    double diff = std::abs(result.u - mu) - 0.5;
    if (diff < 0.0) diff = 0.0;
    result.p_two_sided = std::min(1.0, 2.0 * normal_sf(diff / std::sqrt(var)));
    return result;
}

PcaResult pca(const Eigen::MatrixXd& data, int k) {
    const Eigen::Index m = data.rows();
    const Eigen::Index d = data.cols();
    if (m < 2) throw std::invalid_argument("pca: need at least 2 rows");
    if (k < 1 || k > std::min<Eigen::Index>(m, d)) {
        throw std::invalid_argument("pca: k out of range");
    }

    Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
    if (centered.cwiseAbs().maxCoeff() == 0.0) throw DegenerateData();

    const Eigen::MatrixXd cov =
        centered.transpose() * centered / static_cast<double>(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) {
        throw std::runtime_error("pca: eigendecomposition failed");
    }

    PcaResult result;
    result.components.resize(k, d);
    result.explained_variance.resize(k);
    // Eigenvalues come back ascending; take the top k in descending order.
    for (int c = 0; c < k; ++c) {
        const Eigen::Index src = d - 1 - c;
        Eigen::VectorXd v = solver.eigenvectors().col(src);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0.0) v = -v;
        result.components.row(c) = v.transpose();
        result.explained_variance(c) = std::max(0.0, solver.eigenvalues()(src));
    }
    result.projection = centered * result.components.transpose();
    return result;
}

namespace {

void write_matrix_tsv(const Eigen::MatrixXd& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(12);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j) out << '\t';
            out << m(i, j);
        }
        out << '\n';
    }
}

}  // namespace

void write_stats_bundle(const std::vector<std::string>& seqs,
                        const BackgroundModel& background,
                        const std::string& out_dir, std::size_t min_support) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    const auto hist = length_histogram(seqs);
    nlohmann::json report;
    nlohmann::json hist_json = nlohmann::json::object();
    std::size_t modal_length = 0, modal_count = 0;
    {
        std::ofstream out(fs::path(out_dir) / "length_histogram.tsv");
        out << "length\tcount\n";
        for (const auto& [len, count] : hist) {
            out << len << '\t' << count << '\n';
            hist_json[std::to_string(len)] = count;
            if (count > modal_count) {
                modal_length = len;
                modal_count = count;
            }
        }
    }
    report["length_histogram"] = hist_json;
    report["total_sequences"] = seqs.size();
    if (modal_count > 0) report["modal_length"] = modal_length;

    nlohmann::json per_length = nlohmann::json::object();
    for (const auto& [len, count] : hist) {
        if (len == 0 || count < min_support) continue;
        const auto freq = positional_frequencies(seqs, len);
        const auto prop = propensity(freq, background);
        const auto mi = mutual_information(seqs, len);

        Eigen::MatrixXd kl_row(1, static_cast<Eigen::Index>(len));
        Eigen::MatrixXd shannon_row(1, static_cast<Eigen::Index>(len));
        for (std::size_t pos = 0; pos < len; ++pos) {
            ProbabilityVector q;
            for (int aa = 0; aa < 20; ++aa) {
                q[static_cast<std::size_t>(aa)] = background.at(pos, aa);
            }
            kl_row(0, static_cast<Eigen::Index>(pos)) =
                relative_entropy(freq.rows[pos], q);
            shannon_row(0, static_cast<Eigen::Index>(pos)) =
                shannon_entropy(freq.rows[pos]);
        }

        const std::string tag = std::to_string(len);
        write_matrix_tsv(kl_row, (fs::path(out_dir) / ("relative_entropy_n" + tag + ".tsv")).string());
        write_matrix_tsv(shannon_row, (fs::path(out_dir) / ("shannon_n" + tag + ".tsv")).string());
        write_matrix_tsv(prop, (fs::path(out_dir) / ("propensity_n" + tag + ".tsv")).string());
        write_matrix_tsv(mi.values, (fs::path(out_dir) / ("mi_n" + tag + ".tsv")).string());

        nlohmann::json entry;
        entry["support"] = freq.support;
        entry["relative_entropy"] = std::vector<double>(
            kl_row.data(), kl_row.data() + kl_row.size());
        entry["shannon_entropy"] = std::vector<double>(
            shannon_row.data(), shannon_row.data() + shannon_row.size());
        nlohmann::json prop_rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < prop.rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(prop.cols()));
            for (Eigen::Index j = 0; j < prop.cols(); ++j) {
                row[static_cast<std::size_t>(j)] = prop(i, j);
            }
            prop_rows.push_back(row);
        }
        entry["propensity"] = prop_rows;
        nlohmann::json mi_rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < mi.values.rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(mi.values.cols()));
            for (Eigen::Index j = 0; j < mi.values.cols(); ++j) {
                row[static_cast<std::size_t>(j)] = mi.values(i, j);
            }
            mi_rows.push_back(row);
        }
        entry["mutual_information"] = mi_rows;
        per_length[tag] = entry;
    }
    report["per_length"] = per_length;

    std::ofstream out(fs::path(out_dir) / "report.json");
    if (!out) throw std::runtime_error("cannot write stats report");
    out << report.dump(2) << '\n';
}

}  // namespace epi::seqstats
