#include "epi/generator.hpp"

#include <cmath>
#include <fstream>
#include <unordered_set>

#include "epi/seqdata.hpp"
#include "epi/seqstats.hpp"
#include "json.hpp"

namespace epi::generator {

namespace {

constexpr double kGreedyTemperature = 1e-6;

bool feasible(int id) { return id != seqdata::kBos && id != seqdata::kPad; }

}  // namespace

void SamplingParams::validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
    if (repetition_penalty < 1.0) {
        throw std::invalid_argument("repetition_penalty must be >= 1");
    }
    if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
}

Eigen::VectorXd sampling_distribution(
    const Eigen::VectorXd& logits,
    const std::array<bool, seqdata::kVocabSize>& emitted, double temperature,
    double repetition_penalty) {
    const Eigen::Index v = logits.size();
    Eigen::VectorXd adjusted = logits;
    if (repetition_penalty != 1.0) {
        for (Eigen::Index i = 0; i < v; ++i) {
            if (!emitted[static_cast<std::size_t>(i)]) continue;
            if (adjusted(i) > 0.0) {
                adjusted(i) /= repetition_penalty;
            } else if (adjusted(i) < 0.0) {
                adjusted(i) *= repetition_penalty;
            }
        }
    }

    bool any_finite = false;
    for (Eigen::Index i = 0; i < v; ++i) {
        if (!feasible(static_cast<int>(i))) continue;
        if (std::isnan(adjusted(i))) throw DegenerateModel();
        if (std::isfinite(adjusted(i))) any_finite = true;
    }
    if (!any_finite) throw DegenerateModel();

    Eigen::VectorXd probs = Eigen::VectorXd::Zero(v);
    if (temperature < kGreedyTemperature) {
        Eigen::Index best = -1;
        for (Eigen::Index i = 0; i < v; ++i) {
            if (!feasible(static_cast<int>(i))) continue;
            if (best < 0 || adjusted(i) > adjusted(best)) best = i;
        }
        probs(best) = 1.0;
        return probs;
    }
    if (temperature != 1.0) adjusted /= temperature;

    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < v; ++i) {
        if (feasible(static_cast<int>(i))) mx = std::max(mx, adjusted(i));
    }
    double sum = 0.0;
    for (Eigen::Index i = 0; i < v; ++i) {
        if (!feasible(static_cast<int>(i))) continue;
        const double e = std::exp(adjusted(i) - mx);
        probs(i) = e;
        sum += e;
    }
    for (Eigen::Index i = 0; i < v; ++i) probs(i) /= sum;
    return probs;
}

std::string sample_one(const tinylm::LanguageModel& m, const SamplingParams& p,
                       Rng& rng) {
    p.validate();
    const auto& cfg = m.config();
    const std::size_t cap =
        std::min(p.max_len, static_cast<std::size_t>(cfg.max_context) - 2);

    std::vector<int> tokens{seqdata::kBos};
    std::array<bool, seqdata::kVocabSize> emitted{};
    std::string out;

    while (out.size() < cap) {
        const Eigen::MatrixXd logits = tinylm::forward_logits(m, tokens);
        const Eigen::VectorXd row = logits.row(logits.rows() - 1).transpose();
        const Eigen::VectorXd probs =
            sampling_distribution(row, emitted, p.temperature, p.repetition_penalty);

        // CDF walk in id order; guard against accumulated rounding at the top.
        const double u = rng.uniform01();
        double acc = 0.0;
        int pick = -1;
        for (Eigen::Index i = 0; i < probs.size(); ++i) {
            if (probs(i) <= 0.0) continue;
            acc += probs(i);
            pick = static_cast<int>(i);
            if (u < acc) break;
        }
        if (pick == seqdata::kEos) break;
        tokens.push_back(pick);
        emitted[static_cast<std::size_t>(pick)] = true;
        out.push_back(seqdata::residue_char(pick));
    }
    return out;
}

GeneratedLibrary generate_library(const tinylm::LanguageModel& m,
                                  const SamplingParams& p, std::size_t n_unique,
                                  std::size_t max_attempts) {
    if (n_unique < 1) throw std::invalid_argument("n_unique must be >= 1");
    p.validate();

    GeneratedLibrary lib;
    lib.params = p;
    lib.source_model = m.id();

    Rng rng(p.seed);
    std::unordered_set<std::string> seen;
    seen.reserve(n_unique * 2);
    while (lib.sequences.size() < n_unique && lib.attempts < max_attempts) {
        ++lib.attempts;
        std::string s = sample_one(m, p, rng);
        if (s.empty()) continue;
        if (seen.insert(s).second) {
            lib.sequences.push_back(std::move(s));
        }
    }
    lib.complete = lib.sequences.size() == n_unique;
    return lib;
}

double perplexity(const tinylm::LanguageModel& m, const std::string& sequence) {
    const auto tokens = seqdata::encode(sequence);
    const double lp = tinylm::sequence_log_prob(m, tokens);
    const double t = static_cast<double>(sequence.size()) + 1.0;  // EOS included
    return std::exp(-lp / t);
}

PerplexityComparison compare_perplexities(const tinylm::LanguageModel& m,
                                          const std::vector<std::string>& lib_a,
                                          const std::vector<std::string>& lib_b,
                                          double alpha) {
    if (lib_a.empty() || lib_b.empty()) throw seqstats::EmptySample();
    auto score = [&](const std::vector<std::string>& lib) {
        std::vector<double> ppl;
        ppl.reserve(lib.size());
        for (const auto& s : lib) ppl.push_back(perplexity(m, s));
        return ppl;
    };
    const auto ppl_a = score(lib_a);
    const auto ppl_b = score(lib_b);

    PerplexityComparison c;
    c.n_a = ppl_a.size();
    c.n_b = ppl_b.size();
    c.alpha = alpha;
    for (const double v : ppl_a) c.mean_a += v;
    c.mean_a /= static_cast<double>(ppl_a.size());
    for (const double v : ppl_b) c.mean_b += v;
    c.mean_b /= static_cast<double>(ppl_b.size());

    const auto mw = seqstats::mann_whitney_u(ppl_a, ppl_b);
    c.u_statistic = mw.u;
    c.p_value = mw.p_two_sided;
    c.reject = c.p_value < alpha;
    return c;
}

void write_comparison_json(const PerplexityComparison& c, const std::string& path) {
    nlohmann::json j{{"mean_a", c.mean_a},   {"mean_b", c.mean_b},
                     {"u_statistic", c.u_statistic}, {"p_value", c.p_value},
                     {"n_a", c.n_a},         {"n_b", c.n_b},
                     {"alpha", c.alpha},     {"reject", c.reject}};
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

void write_library_tsv(const tinylm::LanguageModel& m,
                       const std::vector<std::string>& seqs,
                       const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.precision(12);
    out << "sequence\tlength\tperplexity\n";
    for (const auto& s : seqs) {
        out << s << '\t' << s.size() << '\t' << perplexity(m, s) << '\n';
    }
}

}  // namespace epi::generator
