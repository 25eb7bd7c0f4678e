#include "epi/toycorpus.hpp"

#include <fstream>
#include <numeric>

#include "epi/common.hpp"

namespace epi::toy {

namespace {

// Rough natural residue usage, alphabet order ACDEFGHIKLMNPQRSTVWY,
// with cysteine scaled down tenfold before normalization.
std::array<double, 20> make_background() {
    std::array<double, 20> f = {0.083, 0.0014, 0.055, 0.067, 0.039, 0.071, 0.023,
                                0.059, 0.058, 0.097, 0.024, 0.041, 0.047, 0.039,
                                0.055, 0.066, 0.053, 0.069, 0.011, 0.029};
    const double sum = std::accumulate(f.begin(), f.end(), 0.0);
    for (auto& v : f) v /= sum;
    return f;
}

std::array<double, 20> make_final() {
    auto f = make_background();
    for (auto& v : f) v *= 0.55;
    f[static_cast<std::size_t>(seqdata::residue_id('F'))] += 0.20;
    f[static_cast<std::size_t>(seqdata::residue_id('W'))] += 0.10;
    f[static_cast<std::size_t>(seqdata::residue_id('Y'))] += 0.15;
    return f;
}

std::array<double, 20> make_positive_start() {
    auto f = make_background();
    for (auto& v : f) v *= 0.5;
    f[static_cast<std::size_t>(seqdata::residue_id('K'))] += 0.25;
    f[static_cast<std::size_t>(seqdata::residue_id('R'))] += 0.25;
    return f;
}

int sample_categorical(const std::array<double, 20>& p, Rng& rng) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (int i = 0; i < 20; ++i) {
        acc += p[static_cast<std::size_t>(i)];
        if (u < acc) return i;
    }
    return 19;
}

std::size_t sample_length(Rng& rng, const std::array<double, 6>& w) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (u < acc) return 6 + i;
    }
    return 11;
}

std::string sample_one(Rng& rng, bool positive,
                       const std::array<double, 6>& weights = length_weights()) {
    const std::size_t len = sample_length(rng, weights);
    std::string s;
    s.reserve(len);
    for (std::size_t pos = 0; pos < len; ++pos) {
        const auto& dist = pos + 1 == len ? final_position_distribution()
                           : (pos == 0 && positive) ? positive_start_distribution()
                                                    : background_distribution();
        s.push_back(seqdata::residue_char(sample_categorical(dist, rng)));
    }
    return s;
}

}  // namespace

const std::array<double, 20>& background_distribution() {
    static const auto f = make_background();
    return f;
}

const std::array<double, 20>& final_position_distribution() {
    static const auto f = make_final();
    return f;
}

const std::array<double, 20>& positive_start_distribution() {
    static const auto f = make_positive_start();
    return f;
}

const std::array<double, 6>& length_weights() {
    static const std::array<double, 6> w = {0.05, 0.15, 0.30, 0.30, 0.15, 0.05};
    return w;
}

seqdata::Dataset make_corpus(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    seqdata::Dataset d;
    d.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const bool positive = i % 2 == 0;
        seqdata::EpitopeRecord rec;
        rec.sequence = sample_one(rng, positive);
        rec.host = "human";
        rec.organism = rng.uniform01() < 0.5 ? seqdata::Organism::bacterial
                                             : seqdata::Organism::viral;
        const double a = rng.uniform01();
        rec.assay = a < 1.0 / 3 ? seqdata::Assay::tcell
                    : a < 2.0 / 3 ? seqdata::Assay::bcell
                                  : seqdata::Assay::mhc;
        rec.structure = seqdata::Structure::linear;
        rec.label = positive ? seqdata::Label::positive : seqdata::Label::negative;
        d.records.push_back(std::move(rec));
    }
    d.provenance.push_back({"toy corpus seed=" + std::to_string(seed), 0, n});
    return d;
}

std::vector<std::string> sample_sequences(std::size_t n, std::uint64_t seed,
                                           const std::array<double, 6>& weights) {
    Rng rng(seed);
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(sample_one(rng, false, weights));
    }
    return out;
}

void write_toy_table(const std::string& path, std::size_t n, std::uint64_t seed,
                     bool with_noise) {
    const auto corpus = make_corpus(n, seed);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "sequence\thost\torganism\tassay\tstructure\tlabel\n";
    auto emit = [&](const seqdata::EpitopeRecord& rec) {
        out << rec.sequence << '\t' << rec.host << '\t'
            << seqdata::to_string(rec.organism) << '\t'
            << seqdata::to_string(rec.assay) << '\t'
            << seqdata::to_string(rec.structure) << '\t'
            << seqdata::to_string(rec.label) << '\n';
    };
    for (const auto& rec : corpus.records) emit(rec);

    if (!with_noise) return;
    Rng rng(derive_seed(seed, "noise"));
    // duplicates of early rows
    for (std::size_t i = 0; i < 8 && i < corpus.records.size(); ++i) {
        emit(corpus.records[i * 3 % corpus.records.size()]);
    }
    // over-length sequences (should fall to the max_len filter)
    for (int i = 0; i < 6; ++i) {
        std::string s;
        for (int j = 0; j < 12 + i % 3; ++j) {
            s.push_back(seqdata::residue_char(
                sample_categorical(background_distribution(), rng)));
        }
        out << s << "\thuman\tviral\tTCell\tlinear\tpositive\n";
    }
    // non-human hosts and conformational records
    out << "ACDEFGHI\tmouse\tbacterial\tBCell\tlinear\tnegative\n";
    out << "KLMNPQRS\tmouse\tviral\tMHC\tlinear\tpositive\n";
    out << "TVWYACDE\thuman\tbacterial\tTCell\tconformational\tnegative\n";
    // rows the parser must reject
    out << "ACXDE\thuman\tviral\tTCell\tlinear\tpositive\n";
    out << "acdef\thuman\tviral\tBCell\tlinear\tnegative\n";
    out << "KLBNQ\thuman\tbacterial\tMHC\tlinear\tpositive\n";
}

}  // namespace epi::toy
