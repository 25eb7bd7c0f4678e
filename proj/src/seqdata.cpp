#include "epi/seqdata.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "epi/common.hpp"
#include "json.hpp"

namespace epi::seqdata {

NonCanonicalResidue::NonCanonicalResidue(std::size_t pos, char c)
    : std::runtime_error("non-canonical residue '" + std::string(1, c) +
                         "' at position " + std::to_string(pos)),
      position(pos),
      character(c) {}

namespace {

constexpr std::array<int, 26> build_residue_lut() {
    std::array<int, 26> lut{};
    for (auto& v : lut) v = -1;
    for (int i = 0; i < kNumResidues; ++i) {
        lut[kResidues[static_cast<std::size_t>(i)] - 'A'] = i;
    }
    return lut;
}

constexpr auto kResidueLut = build_residue_lut();

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

}  // namespace

int residue_id(char c) {
    if (c < 'A' || c > 'Z') return -1;
    return kResidueLut[static_cast<std::size_t>(c - 'A')];
}

char residue_char(int id) {
    if (id < 0 || id >= kNumResidues) {
        throw MalformedTokenStream("token id " + std::to_string(id) +
                                   " is not a residue");
    }
    return kResidues[static_cast<std::size_t>(id)];
}

TokenSequence encode(std::string_view sequence) {
    if (sequence.empty()) {
        throw NonCanonicalResidue(0, '\0');
    }
    TokenSequence t;
    t.ids.reserve(sequence.size() + 2);
    t.ids.push_back(kBos);
    for (std::size_t i = 0; i < sequence.size(); ++i) {
        const int id = residue_id(sequence[i]);
        if (id < 0) throw NonCanonicalResidue(i, sequence[i]);
        t.ids.push_back(id);
    }
    t.ids.push_back(kEos);
    return t;
}

std::string decode(const std::vector<int>& tokens) {
    // Strip trailing PAD first; PAD anywhere else breaks framing.
    std::size_t end = tokens.size();
    while (end > 0 && tokens[end - 1] == kPad) --end;
    if (end < 3) {
        throw MalformedTokenStream("token stream too short for BOS/body/EOS");
    }
    if (tokens[0] != kBos) {
        throw MalformedTokenStream("missing BOS");
    }
    if (tokens[end - 1] != kEos) {
        throw MalformedTokenStream("missing EOS");
    }
    std::string out;
    out.reserve(end - 2);
    for (std::size_t i = 1; i + 1 < end; ++i) {
        const int id = tokens[i];
        if (id < 0 || id >= kNumResidues) {
            throw MalformedTokenStream("special token inside sequence body at " +
                                       std::to_string(i));
        }
        out.push_back(kResidues[static_cast<std::size_t>(id)]);
    }
    return out;
}

std::string to_string(Organism v) {
    switch (v) {
        case Organism::bacterial: return "bacterial";
        case Organism::viral: return "viral";
        default: return "other";
    }
}

std::string to_string(Assay v) {
    switch (v) {
        case Assay::tcell: return "TCell";
        case Assay::bcell: return "BCell";
        case Assay::mhc: return "MHC";
        default: return "other";
    }
}

std::string to_string(Structure v) {
    return v == Structure::linear ? "linear" : "conformational";
}

std::string to_string(Label v) {
    switch (v) {
        case Label::positive: return "positive";
        case Label::negative: return "negative";
        default: return "unlabeled";
    }
}

std::optional<Organism> parse_organism(std::string_view s) {
    const std::string v = lower(s);
    if (v == "bacterial" || v == "bacteria") return Organism::bacterial;
    if (v == "viral" || v == "virus") return Organism::viral;
    if (v == "other" || v.empty()) return Organism::other;
    return std::nullopt;
}

std::optional<Assay> parse_assay(std::string_view s) {
    std::string v = lower(s);
    v.erase(std::remove_if(v.begin(), v.end(),
                           [](char c) { return c == ' ' || c == '-' || c == '_'; }),
            v.end());
    if (v == "tcell" || v == "t") return Assay::tcell;
    if (v == "bcell" || v == "b") return Assay::bcell;
    if (v == "mhc") return Assay::mhc;
    if (v == "other" || v.empty()) return Assay::other;
    return std::nullopt;
}

std::optional<Structure> parse_structure(std::string_view s) {
    const std::string v = lower(s);
    if (v == "linear") return Structure::linear;
    if (v == "conformational" || v == "discontinuous") return Structure::conformational;
    return std::nullopt;
}

std::optional<Label> parse_label(std::string_view s) {
    const std::string v = lower(s);
    if (v == "positive" || v == "pos" || v == "1") return Label::positive;
    if (v == "negative" || v == "neg" || v == "0") return Label::negative;
    if (v == "unlabeled" || v == "unknown" || v.empty()) return Label::unlabeled;
    return std::nullopt;
}

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(delim, start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    // Tolerate CRLF input.
    if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
        out.back().pop_back();
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

ParseResult parse_epitope_table(const std::string& path, const ColumnMap& columns,
                                std::optional<char> delimiter) {
    std::ifstream in(path);
    if (!in) throw EmptyFile(path);

    std::string header;
    if (!std::getline(in, header) || trim(header).empty()) {
        throw EmptyFile(path);
    }

    const char delim = delimiter.value_or(
        header.find('\t') != std::string::npos ? '\t' : ',');

    const auto header_fields = split_fields(header, delim);
    auto column_index = [&](const std::string& name) -> std::optional<std::size_t> {
        if (name.empty()) return std::nullopt;
        for (std::size_t i = 0; i < header_fields.size(); ++i) {
            if (trim(header_fields[i]) == name) return i;
        }
        return std::nullopt;
    };

    const auto seq_col = column_index(columns.sequence);
    if (!seq_col) throw MissingColumn(columns.sequence);
    auto require = [&](const std::string& name) -> std::optional<std::size_t> {
        if (name.empty()) return std::nullopt;
        const auto idx = column_index(name);
        if (!idx) throw MissingColumn(name);
        return idx;
    };
    const auto host_col = require(columns.host);
    const auto organism_col = require(columns.organism);
    const auto assay_col = require(columns.assay);
    const auto structure_col = require(columns.structure);
    const auto label_col = require(columns.label);

    ParseResult result;
    result.delimiter = delim;

    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto fields = split_fields(line, delim);
        auto field = [&](std::optional<std::size_t> idx) -> std::string {
            if (!idx || *idx >= fields.size()) return "";
            return trim(fields[*idx]);
        };

        if (*seq_col >= fields.size()) {
            result.rejects.push_back({row, "too few fields"});
            continue;
        }

        EpitopeRecord rec;
        rec.sequence = field(seq_col);
        if (rec.sequence.empty()) {
            result.rejects.push_back({row, "empty sequence"});
            continue;
        }
        bool bad = false;
        for (std::size_t i = 0; i < rec.sequence.size(); ++i) {
            if (residue_id(rec.sequence[i]) < 0) {
                result.rejects.push_back(
                    {row, "non-canonical residue '" + std::string(1, rec.sequence[i]) +
                              "' at position " + std::to_string(i)});
                bad = true;
                break;
            }
        }
        if (bad) continue;

        rec.host = field(host_col);
        if (const auto v = parse_organism(field(organism_col))) {
            rec.organism = *v;
        } else {
            result.rejects.push_back({row, "unrecognized organism '" + field(organism_col) + "'"});
            continue;
        }
        if (const auto v = parse_assay(field(assay_col))) {
            rec.assay = *v;
        } else {
            result.rejects.push_back({row, "unrecognized assay '" + field(assay_col) + "'"});
            continue;
        }
        const std::string structure_text = field(structure_col);
        if (structure_text.empty()) {
            rec.structure = Structure::linear;
        } else if (const auto v = parse_structure(structure_text)) {
            rec.structure = *v;
        } else {
            result.rejects.push_back({row, "unrecognized structure '" + structure_text + "'"});
            continue;
        }
        if (const auto v = parse_label(field(label_col))) {
            rec.label = *v;
        } else {
            result.rejects.push_back({row, "unrecognized label '" + field(label_col) + "'"});
            continue;
        }
        result.dataset.records.push_back(std::move(rec));
    }
    result.dataset.provenance.push_back(
        {"parse " + path, row, result.dataset.records.size()});
    return result;
}

std::string FilterSpec::describe() const {
    std::ostringstream os;
    os << "filter{";
    bool first = true;
    auto sep = [&]() {
        if (!first) os << ", ";
        first = false;
    };
    if (host) {
        sep();
        os << "host=" << *host;
    }
    if (assays) {
        sep();
        os << "assay in {";
        bool f2 = true;
        for (const auto a : *assays) {
            if (!f2) os << ",";
            f2 = false;
            os << to_string(a);
        }
        os << "}";
    }
    if (structure) {
        sep();
        os << "structure=" << to_string(*structure);
    }
    if (organisms) {
        sep();
        os << "organism in {";
        bool f2 = true;
        for (const auto o : *organisms) {
            if (!f2) os << ",";
            f2 = false;
            os << to_string(o);
        }
        os << "}";
    }
    if (max_len) {
        sep();
        os << "max_len=" << *max_len;
    }
    os << "}";
    return os.str();
}

Dataset filter_dataset(const Dataset& d, const FilterSpec& spec) {
    Dataset out;
    out.provenance = d.provenance;
    for (const auto& rec : d.records) {
        if (spec.host && rec.host != *spec.host) continue;
        if (spec.assays && !spec.assays->count(rec.assay)) continue;
        if (spec.structure && rec.structure != *spec.structure) continue;
        if (spec.organisms && !spec.organisms->count(rec.organism)) continue;
        if (spec.max_len && rec.sequence.size() > *spec.max_len) continue;
        out.records.push_back(rec);
    }
    out.provenance.push_back({spec.describe(), d.records.size(), out.records.size()});
    return out;
}

Dataset deduplicate(const Dataset& d) {
    Dataset out;
    out.provenance = d.provenance;
    std::unordered_set<std::string> seen;
    seen.reserve(d.records.size());
    for (const auto& rec : d.records) {
        if (seen.insert(rec.sequence).second) {
            out.records.push_back(rec);
        }
    }
    out.provenance.push_back({"deduplicate", d.records.size(), out.records.size()});
    return out;
}

SplitResult split(const Dataset& d, std::array<double, 3> ratios, std::uint64_t seed) {
    double sum = 0.0;
    for (const double r : ratios) {
        if (!(r > 0.0)) throw BadRatios("ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw BadRatios("ratios must sum to 1");
    }

    const std::size_t n = d.records.size();
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double quota = static_cast<double>(n) * ratios[static_cast<std::size_t>(i)];
        sizes[static_cast<std::size_t>(i)] = static_cast<std::size_t>(quota);
        frac[static_cast<std::size_t>(i)] = quota - std::floor(quota);
        assigned += sizes[static_cast<std::size_t>(i)];
    }
    // Leftover seats to largest fractional parts; ties resolve train-first.
    std::size_t remainder = n - assigned;
    while (remainder > 0) {
        int best = 0;
        for (int i = 1; i < 3; ++i) {
            if (frac[static_cast<std::size_t>(i)] > frac[static_cast<std::size_t>(best)]) best = i;
        }
        sizes[static_cast<std::size_t>(best)] += 1;
        frac[static_cast<std::size_t>(best)] = -1.0;
        --remainder;
    }

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    SplitResult result;
    auto emit = [&](Dataset& target, std::size_t begin, std::size_t count,
                    const char* name) {
        target.provenance = d.provenance;
        for (std::size_t i = begin; i < begin + count; ++i) {
            target.records.push_back(d.records[order[i]]);
        }
        target.provenance.push_back(
            {std::string("split:") + name + " seed=" + std::to_string(seed), n, count});
    };
    emit(result.train, 0, sizes[0], "train");
    emit(result.val, sizes[0], sizes[1], "val");
    emit(result.test, sizes[0] + sizes[1], sizes[2], "test");
    return result;
}

void write_dataset_tsv(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "sequence\thost\torganism\tassay\tstructure\tlabel\n";
    for (const auto& rec : d.records) {
        out << rec.sequence << '\t' << rec.host << '\t' << to_string(rec.organism)
            << '\t' << to_string(rec.assay) << '\t' << to_string(rec.structure)
            << '\t' << to_string(rec.label) << '\n';
    }
}

Dataset read_dataset_tsv(const std::string& path) {
    const auto parsed = parse_epitope_table(path, ColumnMap{}, '\t');
    if (!parsed.rejects.empty()) {
        throw std::runtime_error(path + ": " + std::to_string(parsed.rejects.size()) +
                                 " malformed rows in dataset file");
    }
    return parsed.dataset;
}

void write_provenance_json(const Dataset& d, const std::string& path) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& p : d.provenance) {
        entries.push_back({{"filter", p.description},
                           {"before", p.before},
                           {"after", p.after}});
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << nlohmann::json{{"provenance", entries}}.dump(2) << '\n';
}

std::vector<std::string> read_fasta(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EmptyFile(path);
    std::vector<std::string> seqs;
    std::string line;
    std::string current;
    bool have_any = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '>') {
            if (have_any && !current.empty()) seqs.push_back(current);
            current.clear();
            have_any = true;
        } else {
            current += trim(line);
        }
    }
    if (have_any && !current.empty()) seqs.push_back(current);
    if (!have_any && seqs.empty()) throw EmptyFile(path);
    return seqs;
}

void write_fasta(const std::vector<std::string>& seqs, const std::string& path,
                 std::string_view id_prefix) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char id[32];
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        std::snprintf(id, sizeof(id), "%06zu", i + 1);
        out << '>' << id_prefix << '_' << id << '\n' << seqs[i] << '\n';
    }
}

}  // namespace epi::seqdata
