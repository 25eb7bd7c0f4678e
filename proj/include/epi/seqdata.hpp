#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Amino-acid alphabet, tokenization, epitope tables, and dataset transforms.

namespace epi::seqdata {

// Fixed alphabetical order; token ids are stable across builds.
inline constexpr std::string_view kResidues = "ACDEFGHIKLMNPQRSTVWY";
inline constexpr int kNumResidues = 20;
inline constexpr int kBos = 20;
inline constexpr int kEos = 21;
inline constexpr int kPad = 22;
inline constexpr int kVocabSize = 23;

struct NonCanonicalResidue : std::runtime_error {
    NonCanonicalResidue(std::size_t position, char c);
    std::size_t position;
    char character;
};

struct MalformedTokenStream : std::runtime_error {
    explicit MalformedTokenStream(const std::string& what)
        : std::runtime_error(what) {}
};

struct MissingColumn : std::runtime_error {
    explicit MissingColumn(const std::string& name)
        : std::runtime_error("missing column: " + name) {}
};

struct EmptyFile : std::runtime_error {
    explicit EmptyFile(const std::string& path)
        : std::runtime_error("empty file: " + path) {}
};

struct BadRatios : std::runtime_error {
    explicit BadRatios(const std::string& what) : std::runtime_error(what) {}
};

// -1 for non-canonical characters.
int residue_id(char c);
char residue_char(int id);

// BOS + residue ids + EOS. Throws NonCanonicalResidue.
struct TokenSequence {
    std::vector<int> ids;

    // Residue count, specials excluded.
    std::size_t length() const { return ids.size() - 2; }
};

TokenSequence encode(std::string_view sequence);

// Inverse of encode. Trailing PAD after EOS is tolerated; anything else
// violating BOS/body/EOS framing throws MalformedTokenStream.
std::string decode(const std::vector<int>& tokens);
inline std::string decode(const TokenSequence& t) { return decode(t.ids); }

enum class Organism { bacterial, viral, other };
enum class Assay { tcell, bcell, mhc, other };
enum class Structure { linear, conformational };
enum class Label { positive, negative, unlabeled };

std::string to_string(Organism v);
std::string to_string(Assay v);
std::string to_string(Structure v);
std::string to_string(Label v);

std::optional<Organism> parse_organism(std::string_view s);
std::optional<Assay> parse_assay(std::string_view s);
std::optional<Structure> parse_structure(std::string_view s);
std::optional<Label> parse_label(std::string_view s);

struct EpitopeRecord {
    std::string sequence;
    std::string host;  // free-form tag, e.g. "human"
    Organism organism = Organism::other;
    Assay assay = Assay::other;
    Structure structure = Structure::linear;
    Label label = Label::unlabeled;
};

struct ProvenanceEntry {
    std::string description;
    std::size_t before = 0;
    std::size_t after = 0;
};

struct Dataset {
    std::vector<EpitopeRecord> records;
    std::vector<ProvenanceEntry> provenance;

    std::size_t size() const { return records.size(); }
};

// Column-name lookup for delimited tables. Only `sequence` is mandatory;
// empty entries fall back to defaults (host "", organism/assay other,
// structure linear, label unlabeled).
struct ColumnMap {
    std::string sequence = "sequence";
    std::string host = "host";
    std::string organism = "organism";
    std::string assay = "assay";
    std::string structure = "structure";
    std::string label = "label";
};

struct RowReject {
    std::size_t row;  // 1-based data row number (header excluded)
    std::string reason;
};

struct ParseResult {
    Dataset dataset;
    std::vector<RowReject> rejects;
    char delimiter = '\t';
};

// Header row required; delimiter auto-detected from it unless forced.
// Bad rows are reported, never fatal.
ParseResult parse_epitope_table(const std::string& path, const ColumnMap& columns,
                                std::optional<char> delimiter = std::nullopt);

struct FilterSpec {
    std::optional<std::string> host;
    std::optional<std::set<Assay>> assays;
    std::optional<Structure> structure;
    std::optional<std::set<Organism>> organisms;
    std::optional<std::size_t> max_len;

    std::string describe() const;
};

// Keeps records matching every provided criterion, order preserved.
Dataset filter_dataset(const Dataset& d, const FilterSpec& spec);

// Keep-first, stable.
Dataset deduplicate(const Dataset& d);

struct SplitResult {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Seeded shuffle, then largest-remainder apportionment of the three quota
// floors with leftover seats resolved in (train, val, test) order.
SplitResult split(const Dataset& d, std::array<double, 3> ratios, std::uint64_t seed);

// --- file I/O ---

void write_dataset_tsv(const Dataset& d, const std::string& path);
Dataset read_dataset_tsv(const std::string& path);

// Sidecar provenance report (filters applied, counts before/after).
void write_provenance_json(const Dataset& d, const std::string& path);

std::vector<std::string> read_fasta(const std::string& path);
void write_fasta(const std::vector<std::string>& seqs, const std::string& path,
                 std::string_view id_prefix = "seq");

}  // namespace epi::seqdata
