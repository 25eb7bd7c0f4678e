#include "epi/libfilter.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "epi/common.hpp"
#include "json.hpp"

namespace epi::libfilter {

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::rightmost: return "rightmost";
        case Pooling::sum: return "sum";
        default: return "weighted_sum";
    }
}

std::optional<Pooling> parse_pooling(std::string_view s) {
    if (s == "rightmost") return Pooling::rightmost;
    if (s == "sum") return Pooling::sum;
    if (s == "weighted_sum") return Pooling::weighted_sum;
    return std::nullopt;
}

Eigen::VectorXd pool_hidden(const Eigen::MatrixXd& hidden, Pooling mode,
                            double rightmost_weight) {
    if (hidden.rows() == 0) throw std::invalid_argument("no hidden states to pool");
    switch (mode) {
        case Pooling::rightmost:
            return hidden.row(hidden.rows() - 1).transpose();
        case Pooling::sum:
            return hidden.colwise().sum().transpose();
        case Pooling::weighted_sum: {
            Eigen::VectorXd out = hidden.colwise().sum().transpose();
            out += (rightmost_weight - 1.0) * hidden.row(hidden.rows() - 1).transpose();
            return out;
        }
    }
    throw std::logic_error("unreachable pooling mode");
}

EmbeddingVector embed(const tinylm::LanguageModel& m, const std::string& sequence,
                      Pooling mode, double rightmost_weight) {
    const auto tokens = seqdata::encode(sequence);
    const Eigen::MatrixXd hidden = tinylm::final_hidden_states(m, tokens.ids);
    EmbeddingVector e;
    e.values = pool_hidden(hidden, mode, rightmost_weight);
    e.pooling = mode;
    e.source_model = m.id();
    return e;
}

LabeledEmbeddings embed_labeled_dataset(const tinylm::LanguageModel& m,
                                        const seqdata::Dataset& d, Pooling mode,
                                        double rightmost_weight) {
    LabeledEmbeddings out;
    for (const auto& rec : d.records) {
        if (rec.label == seqdata::Label::unlabeled) continue;
        out.sequences.push_back(rec.sequence);
        out.y.push_back(rec.label == seqdata::Label::positive ? 1 : 0);
    }
    if (out.sequences.empty()) {
        throw std::invalid_argument("dataset has no labeled records");
    }
    out.x.resize(static_cast<Eigen::Index>(out.sequences.size()), m.config().d_model);
    for (std::size_t i = 0; i < out.sequences.size(); ++i) {
        out.x.row(static_cast<Eigen::Index>(i)) =
            embed(m, out.sequences[i], mode, rightmost_weight).values.transpose();
    }
    return out;
}

double BoostedTrees::score(const Eigen::VectorXd& x) const {
    double total = base_score;
    for (const auto& tree : trees) {
        int at = 0;
        while (tree[static_cast<std::size_t>(at)].feature >= 0) {
            const auto& node = tree[static_cast<std::size_t>(at)];
            at = x(node.feature) < node.threshold ? node.left : node.right;
        }
        total += tree[static_cast<std::size_t>(at)].value;
    }
    return total;
}

void EnsembleConfig::validate() const {
    if (n_members < 1) throw std::invalid_argument("n_members must be >= 1");
    if (slice_size < 1) throw std::invalid_argument("slice_size must be >= 1");
    if (bias < 1.0) throw std::invalid_argument("bias must be >= 1");
    if (rounds < 1) throw std::invalid_argument("rounds must be >= 1");
    if (!(shrinkage > 0.0)) throw std::invalid_argument("shrinkage must be > 0");
    if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
}

namespace {

constexpr double kTreeLambda = 1.0;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Greedy second-order regression tree on (grad, hess); leaf values carry the
// shrinkage factor already.
class TreeBuilder {
public:
    TreeBuilder(const Eigen::MatrixXd& x, const std::vector<double>& grad,
                const std::vector<double>& hess, int max_depth, double shrinkage)
        : x_(x), grad_(grad), hess_(hess), max_depth_(max_depth),
          shrinkage_(shrinkage) {}

    std::vector<TreeNode> build() {
        std::vector<int> all(static_cast<std::size_t>(x_.rows()));
        std::iota(all.begin(), all.end(), 0);
        nodes_.clear();
        grow(std::move(all), 0);
        return std::move(nodes_);
    }

private:
    int grow(std::vector<int> samples, int depth) {
        double g = 0.0, h = 0.0;
        for (const int i : samples) {
            g += grad_[static_cast<std::size_t>(i)];
            h += hess_[static_cast<std::size_t>(i)];
        }

        int best_feature = -1;
        double best_threshold = 0.0;
        double best_gain = 1e-12;
        if (depth < max_depth_ && samples.size() >= 2) {
            const double parent = g * g / (h + kTreeLambda);
            std::vector<int> order(samples);
            for (int f = 0; f < static_cast<int>(x_.cols()); ++f) {
                std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                    return x_(a, f) < x_(b, f);
                });
                double gl = 0.0, hl = 0.0;
                for (std::size_t k = 0; k + 1 < order.size(); ++k) {
                    gl += grad_[static_cast<std::size_t>(order[k])];
                    hl += hess_[static_cast<std::size_t>(order[k])];
                    const double left_x = x_(order[k], f);
                    const double right_x = x_(order[k + 1], f);
                    if (left_x == right_x) continue;
                    const double gr = g - gl;
                    const double hr = h - hl;
                    const double gain = gl * gl / (hl + kTreeLambda) +
                                        gr * gr / (hr + kTreeLambda) - parent;
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_feature = f;
                        best_threshold = 0.5 * (left_x + right_x);
                    }
                }
            }
        }

        const int at = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        if (best_feature < 0) {
            nodes_[static_cast<std::size_t>(at)].value =
                shrinkage_ * g / (h + kTreeLambda);
            return at;
        }

        std::vector<int> left, right;
        for (const int i : samples) {
            (x_(i, best_feature) < best_threshold ? left : right).push_back(i);
        }
        nodes_[static_cast<std::size_t>(at)].feature = best_feature;
        nodes_[static_cast<std::size_t>(at)].threshold = best_threshold;
        const int l = grow(std::move(left), depth + 1);
        nodes_[static_cast<std::size_t>(at)].left = l;
        const int r = grow(std::move(right), depth + 1);
        nodes_[static_cast<std::size_t>(at)].right = r;
        return at;
    }

    const Eigen::MatrixXd& x_;
    const std::vector<double>& grad_;
    const std::vector<double>& hess_;
    int max_depth_;
    double shrinkage_;
    std::vector<TreeNode> nodes_;
};

BoostedTrees train_boosted(const Eigen::MatrixXd& x, const std::vector<int>& y,
                           const EnsembleConfig& cfg) {
    const std::size_t m = static_cast<std::size_t>(x.rows());
    BoostedTrees model;
    model.shrinkage = cfg.shrinkage;
    double positives = 0.0;
    for (const int v : y) positives += v;
    double prior = positives / static_cast<double>(m);
    prior = std::clamp(prior, 1e-6, 1.0 - 1e-6);
    model.base_score = std::log(prior / (1.0 - prior));

    std::vector<double> margin(m, model.base_score);
    std::vector<double> grad(m), hess(m);
    for (int round = 0; round < cfg.rounds; ++round) {
        for (std::size_t i = 0; i < m; ++i) {
            const double p = sigmoid(margin[i]);
            grad[i] = static_cast<double>(y[i]) - p;
            hess[i] = std::max(p * (1.0 - p), 1e-12);
        }
        TreeBuilder builder(x, grad, hess, cfg.max_depth, cfg.shrinkage);
        auto tree = builder.build();
        for (std::size_t i = 0; i < m; ++i) {
            int at = 0;
            while (tree[static_cast<std::size_t>(at)].feature >= 0) {
                const auto& node = tree[static_cast<std::size_t>(at)];
                at = x(static_cast<Eigen::Index>(i), node.feature) < node.threshold
                         ? node.left
                         : node.right;
            }
            margin[i] += tree[static_cast<std::size_t>(at)].value;
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

LogisticModel train_logistic(const Eigen::MatrixXd& x, const std::vector<int>& y,
                             const EnsembleConfig& cfg) {
    const Eigen::Index m = x.rows();
    const Eigen::Index d = x.cols();
    LogisticModel model;
    model.weights = Eigen::VectorXd::Zero(d);
    model.intercept = 0.0;

    const double lr = 0.5;
    const double l2 = 1e-4;
    const int iters = std::max(cfg.rounds * 5, 100);
    Eigen::VectorXd yv(m);
    for (Eigen::Index i = 0; i < m; ++i) yv(i) = y[static_cast<std::size_t>(i)];
    for (int it = 0; it < iters; ++it) {
        Eigen::VectorXd margin = x * model.weights;
        margin.array() += model.intercept;
        Eigen::VectorXd residual =
            yv - margin.unaryExpr([](double z) { return sigmoid(z); });
        model.weights += lr * (x.transpose() * residual / static_cast<double>(m) -
                               l2 * model.weights);
        model.intercept += lr * residual.mean();
    }
    return model;
}

double learner_score(const BaseLearner& learner, const Eigen::VectorXd& x) {
    return std::visit([&](const auto& l) { return l.score(x); }, learner);
}

Eigen::VectorXd slice_vector(const Eigen::VectorXd& v, const std::vector<int>& slice) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(slice.size()));
    for (std::size_t j = 0; j < slice.size(); ++j) out(static_cast<Eigen::Index>(j)) = v(slice[j]);
    return out;
}

}  // namespace

EnsembleClassifier train_ensemble(const Eigen::MatrixXd& embeddings,
                                  const std::vector<int>& labels,
                                  const EnsembleConfig& cfg) {
    cfg.validate();
    if (embeddings.rows() < 2 ||
        static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
        throw std::invalid_argument("need >= 2 labeled embeddings");
    }
    const int d = static_cast<int>(embeddings.cols());
    if (cfg.slice_size > d) throw SliceTooLarge(cfg.slice_size, d);
    const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (!has_pos || !has_neg) throw SingleClassData();

    // Disjoint chunks of one seeded permutation first, fresh draws after.
    std::vector<int> permutation(static_cast<std::size_t>(d));
    std::iota(permutation.begin(), permutation.end(), 0);
    Rng slice_rng(derive_seed(cfg.seed, "slices"));
    slice_rng.shuffle(permutation);
    const int disjoint = d / cfg.slice_size;

    EnsembleClassifier clf;
    clf.config = cfg;
    clf.input_dim = d;
    for (int member = 0; member < cfg.n_members; ++member) {
        std::vector<int> slice;
        if (member < disjoint) {
            const auto begin = permutation.begin() + member * cfg.slice_size;
            slice.assign(begin, begin + cfg.slice_size);
        } else {
            std::vector<int> pool(static_cast<std::size_t>(d));
            std::iota(pool.begin(), pool.end(), 0);
            Rng member_rng(derive_seed(cfg.seed, "member" + std::to_string(member)));
            for (int j = 0; j < cfg.slice_size; ++j) {
                const auto pick = static_cast<std::size_t>(
                    member_rng.uniform_int(pool.size() - static_cast<std::size_t>(j)) +
                    static_cast<std::size_t>(j));
                std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
                slice.push_back(pool[static_cast<std::size_t>(j)]);
            }
        }
        std::sort(slice.begin(), slice.end());

        Eigen::MatrixXd x(embeddings.rows(), cfg.slice_size);
        for (int j = 0; j < cfg.slice_size; ++j) {
            x.col(j) = embeddings.col(slice[static_cast<std::size_t>(j)]);
        }
        EnsembleMember em;
        em.slice = std::move(slice);
        if (cfg.base_learner == BaseLearnerKind::boosted_stumps) {
            em.learner = train_boosted(x, labels, cfg);
        } else {
            em.learner = train_logistic(x, labels, cfg);
        }
        clf.members.push_back(std::move(em));
    }
    return clf;
}

VoteResult biased_vote(const std::vector<bool>& votes, double bias) {
    VoteResult r;
    for (const bool v : votes) {
        if (v) {
            r.positive_weight += bias;
        } else {
            r.negative_weight += 1.0;
        }
    }
    r.positive = r.positive_weight >= r.negative_weight;
    return r;
}

namespace {

std::vector<bool> member_votes(const EnsembleClassifier& c, const Eigen::VectorXd& v) {
    if (v.size() != c.input_dim) throw DimensionMismatch(v.size(), c.input_dim);
    std::vector<bool> votes;
    votes.reserve(c.members.size());
    for (const auto& member : c.members) {
        votes.push_back(learner_score(member.learner, slice_vector(v, member.slice)) > 0.0);
    }
    return votes;
}

}  // namespace

VoteResult predict(const EnsembleClassifier& c, const Eigen::VectorXd& v,
                   std::optional<double> bias_override) {
    return biased_vote(member_votes(c, v), bias_override.value_or(c.config.bias));
}

double positive_score(const EnsembleClassifier& c, const Eigen::VectorXd& v,
                      std::optional<double> bias_override) {
    const auto r = biased_vote(member_votes(c, v), bias_override.value_or(c.config.bias));
    return r.positive_weight / (r.positive_weight + r.negative_weight);
}

double roc_auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = midrank;
        i = j + 1;
    }
    double rank_sum = 0.0;
    double n_pos = 0.0, n_neg = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == 1) {
            rank_sum += ranks[k];
            n_pos += 1.0;
        } else {
            n_neg += 1.0;
        }
    }
    return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double pr_auc_score(const std::vector<double>& scores, const std::vector<int>& labels) {
    // Average precision over distinct-score groups (ties handled as a block).
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });
    double n_pos = 0.0;
    for (const int l : labels) n_pos += l;
    double tp = 0.0, fp = 0.0, ap = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        double group_tp = 0.0, group_fp = 0.0;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] == 1) {
                group_tp += 1.0;
            } else {
                group_fp += 1.0;
            }
            ++j;
        }
        tp += group_tp;
        fp += group_fp;
        ap += (group_tp / n_pos) * (tp / (tp + fp));
        i = j;
    }
    return ap;
}

MetricsReport evaluate(const EnsembleClassifier& c, const Eigen::MatrixXd& embeddings,
                       const std::vector<int>& labels,
                       std::optional<double> bias_override) {
    if (static_cast<std::size_t>(embeddings.rows()) != labels.size()) {
        throw std::invalid_argument("labels do not match embeddings");
    }
    MetricsReport r;
    std::vector<double> scores(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const Eigen::VectorXd v = embeddings.row(static_cast<Eigen::Index>(i)).transpose();
        const auto vote = predict(c, v, bias_override);
        scores[i] = positive_score(c, v, bias_override);
        if (labels[i] == 1) {
            vote.positive ? ++r.tp : ++r.fn;
        } else {
            vote.positive ? ++r.fp : ++r.tn;
        }
    }
    const double tp = static_cast<double>(r.tp), fp = static_cast<double>(r.fp);
    const double tn = static_cast<double>(r.tn), fn = static_cast<double>(r.fn);
    r.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    r.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    r.fpr = fp + tn > 0.0 ? fp / (fp + tn) : 0.0;
    r.f1 = r.precision + r.recall > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    r.accuracy = (tp + tn) / (tp + fp + tn + fn);
    if (r.fpr > 0.0) {
        r.lr_plus = r.recall / r.fpr;
    } else {
        r.lr_plus = r.recall > 0.0 ? std::numeric_limits<double>::infinity()
                                   : std::numeric_limits<double>::quiet_NaN();
    }

    const bool has_pos = r.tp + r.fn > 0;
    const bool has_neg = r.fp + r.tn > 0;
    r.auc_defined = has_pos && has_neg;
    if (r.auc_defined) {
        r.roc_auc = roc_auc_score(scores, labels);
        r.pr_auc = pr_auc_score(scores, labels);
    } else {
        r.roc_auc = std::numeric_limits<double>::quiet_NaN();
        r.pr_auc = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

namespace {

nlohmann::json ratio_json(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return "inf";
    return v;
}

}  // namespace

void write_metrics_json(const MetricsReport& m, const std::string& path) {
    nlohmann::json j{{"tp", m.tp},
                     {"fp", m.fp},
                     {"tn", m.tn},
                     {"fn", m.fn},
                     {"precision", m.precision},
                     {"recall", m.recall},
                     {"fpr", m.fpr},
                     {"f1", m.f1},
                     {"accuracy", m.accuracy},
                     {"lr_plus", ratio_json(m.lr_plus)},
                     {"auc_defined", m.auc_defined}};
    if (m.auc_defined) {
        j["roc_auc"] = m.roc_auc;
        j["pr_auc"] = m.pr_auc;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

FilterOutcome filter_with(std::size_t n,
                          const std::function<bool(std::size_t)>& predict_positive,
                          const std::vector<int>* truth_labels) {
    FilterOutcome o;
    std::size_t truth_pos = 0, truth_neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool keep = predict_positive(i);
        const int truth = truth_labels ? (*truth_labels)[i] : -1;
        if (truth == 1) ++truth_pos;
        if (truth == 0) ++truth_neg;
        if (!keep) continue;
        o.kept.push_back(i);
        if (truth == 1) ++o.kept_positive;
        if (truth == 0) ++o.kept_negative;
    }
    o.all_rejected = o.kept.empty();
    o.has_truth = truth_labels != nullptr;
    if (o.has_truth && n > 0) {
        o.before.p_plus = static_cast<double>(truth_pos) / static_cast<double>(n);
        o.before.p_minus = static_cast<double>(truth_neg) / static_cast<double>(n);
        if (!o.kept.empty()) {
            o.after.p_plus = static_cast<double>(o.kept_positive) /
                             static_cast<double>(o.kept.size());
            o.after.p_minus = static_cast<double>(o.kept_negative) /
                              static_cast<double>(o.kept.size());
        }
        const double tpr = truth_pos > 0 ? static_cast<double>(o.kept_positive) /
                                               static_cast<double>(truth_pos)
                                         : 0.0;
        const double fpr = truth_neg > 0 ? static_cast<double>(o.kept_negative) /
                                               static_cast<double>(truth_neg)
                                         : 0.0;
        if (fpr > 0.0) {
            o.empirical_lr_plus = tpr / fpr;
        } else {
            o.empirical_lr_plus = tpr > 0.0 ? std::numeric_limits<double>::infinity()
                                            : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return o;
}

FilterOutcome filter_library(const EnsembleClassifier& c,
                             const tinylm::LanguageModel& m, Pooling pooling,
                             const std::vector<std::string>& library,
                             const std::vector<int>* truth_labels,
                             double rightmost_weight) {
    if (library.empty()) throw std::invalid_argument("empty library");
    if (truth_labels && truth_labels->size() != library.size()) {
        throw std::invalid_argument("truth labels do not match library size");
    }
    return filter_with(
        library.size(),
        [&](std::size_t i) {
            return predict(c, embed(m, library[i], pooling, rightmost_weight).values)
                .positive;
        },
        truth_labels);
}

void write_composition_json(const FilterOutcome& o, std::size_t total,
                            const std::string& path,
                            std::optional<double> held_out_lr_plus) {
    nlohmann::json j{{"total", total},
                     {"kept", o.kept.size()},
                     {"all_rejected", o.all_rejected}};
    if (o.has_truth) {
        j["before"] = {{"p_plus", o.before.p_plus}, {"p_minus", o.before.p_minus}};
        j["after"] = {{"p_plus", o.after.p_plus}, {"p_minus", o.after.p_minus}};
        j["empirical_lr_plus"] = ratio_json(o.empirical_lr_plus);
    }
    if (held_out_lr_plus) {
        j["held_out_lr_plus"] = ratio_json(*held_out_lr_plus);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

// --- persistence ---

namespace {

constexpr char kClfMagic[4] = {'E', 'P', 'C', 'L'};
constexpr std::uint32_t kClfVersion = 1;

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t& at) {
    if (at + sizeof(T) > buf.size()) throw CorruptModelFile("truncated model file");
    T v;
    std::memcpy(&v, buf.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
}

std::string kind_name(BaseLearnerKind k) {
    return k == BaseLearnerKind::boosted_stumps ? "boosted_stumps" : "logistic";
}

BaseLearnerKind kind_from_name(const std::string& s) {
    if (s == "boosted_stumps") return BaseLearnerKind::boosted_stumps;
    if (s == "logistic") return BaseLearnerKind::logistic;
    throw CorruptModelFile("unknown base learner '" + s + "'");
}

}  // namespace

void save_classifier(const EnsembleClassifier& c, const std::string& path) {
    nlohmann::json header;
    header["version"] = kClfVersion;
    header["input_dim"] = c.input_dim;
    header["config"] = {{"n_members", c.config.n_members},
                        {"slice_size", c.config.slice_size},
                        {"slice_strategy", "random_disjoint_where_possible"},
                        {"bias", c.config.bias},
                        {"base_learner", kind_name(c.config.base_learner)},
                        {"rounds", c.config.rounds},
                        {"shrinkage", c.config.shrinkage},
                        {"max_depth", c.config.max_depth},
                        {"seed", c.config.seed}};
    nlohmann::json slices = nlohmann::json::array();
    for (const auto& m : c.members) slices.push_back(m.slice);
    header["slices"] = slices;
    const std::string header_text = header.dump();

    std::string buf;
    buf.append(kClfMagic, 4);
    put<std::uint32_t>(buf, kClfVersion);
    put<std::uint64_t>(buf, header_text.size());
    buf += header_text;
    for (const auto& m : c.members) {
        if (const auto* trees = std::get_if<BoostedTrees>(&m.learner)) {
            put<std::uint8_t>(buf, 0);
            put<double>(buf, trees->base_score);
            put<double>(buf, trees->shrinkage);
            put<std::uint32_t>(buf, static_cast<std::uint32_t>(trees->trees.size()));
            for (const auto& tree : trees->trees) {
                put<std::uint32_t>(buf, static_cast<std::uint32_t>(tree.size()));
                for (const auto& node : tree) {
                    put<std::int32_t>(buf, node.feature);
                    put<double>(buf, node.threshold);
                    put<std::int32_t>(buf, node.left);
                    put<std::int32_t>(buf, node.right);
                    put<double>(buf, node.value);
                }
            }
        } else {
            const auto& logistic = std::get<LogisticModel>(m.learner);
            put<std::uint8_t>(buf, 1);
            put<std::uint32_t>(buf, static_cast<std::uint32_t>(logistic.weights.size()));
            put<double>(buf, logistic.intercept);
            for (Eigen::Index i = 0; i < logistic.weights.size(); ++i) {
                put<double>(buf, logistic.weights(i));
            }
        }
    }
    put<std::uint32_t>(buf, crc32(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

EnsembleClassifier load_classifier(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptModelFile("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    if (buf.size() < 12 || std::memcmp(buf.data(), kClfMagic, 4) != 0) {
        throw CorruptModelFile("bad magic bytes");
    }
    std::size_t at = 4;
    if (get<std::uint32_t>(buf, at) != kClfVersion) {
        throw CorruptModelFile("unsupported version");
    }
    const auto header_len = get<std::uint64_t>(buf, at);
    if (at + header_len > buf.size()) throw CorruptModelFile("truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(at, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptModelFile(std::string("bad header json: ") + e.what());
    }
    at += header_len;

    EnsembleClassifier c;
    try {
        c.input_dim = header.at("input_dim").get<int>();
        const auto& cfg = header.at("config");
        c.config.n_members = cfg.at("n_members").get<int>();
        c.config.slice_size = cfg.at("slice_size").get<int>();
        c.config.bias = cfg.at("bias").get<double>();
        c.config.base_learner = kind_from_name(cfg.at("base_learner").get<std::string>());
        c.config.rounds = cfg.at("rounds").get<int>();
        c.config.shrinkage = cfg.at("shrinkage").get<double>();
        c.config.max_depth = cfg.at("max_depth").get<int>();
        c.config.seed = cfg.at("seed").get<std::uint64_t>();
        for (const auto& slice : header.at("slices")) {
            EnsembleMember m;
            m.slice = slice.get<std::vector<int>>();
            c.members.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptModelFile(std::string("incomplete header: ") + e.what());
    }

    for (auto& m : c.members) {
        const auto kind = get<std::uint8_t>(buf, at);
        if (kind == 0) {
            BoostedTrees trees;
            trees.base_score = get<double>(buf, at);
            trees.shrinkage = get<double>(buf, at);
            const auto n_trees = get<std::uint32_t>(buf, at);
            for (std::uint32_t t = 0; t < n_trees; ++t) {
                const auto n_nodes = get<std::uint32_t>(buf, at);
                std::vector<TreeNode> tree(n_nodes);
                for (auto& node : tree) {
                    node.feature = get<std::int32_t>(buf, at);
                    node.threshold = get<double>(buf, at);
                    node.left = get<std::int32_t>(buf, at);
                    node.right = get<std::int32_t>(buf, at);
                    node.value = get<double>(buf, at);
                }
                trees.trees.push_back(std::move(tree));
            }
            m.learner = std::move(trees);
        } else if (kind == 1) {
            LogisticModel logistic;
            const auto dim = get<std::uint32_t>(buf, at);
            logistic.intercept = get<double>(buf, at);
            logistic.weights.resize(dim);
            for (std::uint32_t i = 0; i < dim; ++i) {
                logistic.weights(i) = get<double>(buf, at);
            }
            m.learner = std::move(logistic);
        } else {
            throw CorruptModelFile("unknown learner tag");
        }
    }
    if (at + sizeof(std::uint32_t) != buf.size()) {
        throw CorruptModelFile("unexpected file size");
    }
    const auto stored = get<std::uint32_t>(buf, at);
    if (stored != crc32(buf.data(), buf.size() - sizeof(std::uint32_t))) {
        throw CorruptModelFile("checksum mismatch");
    }
    return c;
}

}  // namespace epi::libfilter
