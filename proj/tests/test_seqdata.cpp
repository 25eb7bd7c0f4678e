#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "epi/common.hpp"
#include "epi/seqdata.hpp"

using namespace epi;
using namespace epi::seqdata;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
    const auto dir = fs::temp_directory_path() / "epikit_test_seqdata";
    fs::create_directories(dir);
    const auto path = dir / name;
    std::ofstream out(path);
    out << content;
    return path;
}

Dataset dataset_of(const std::vector<std::string>& seqs) {
    Dataset d;
    for (const auto& s : seqs) {
        EpitopeRecord rec;
        rec.sequence = s;
        rec.host = "human";
        d.records.push_back(rec);
    }
    return d;
}

}  // namespace

TEST_CASE("encode maps residues to the fixed alphabet ids") {
    CHECK(encode("ACD").ids == std::vector<int>{20, 0, 1, 2, 21});
    CHECK(encode("Y").ids == std::vector<int>{20, 19, 21});
    CHECK(encode("Y").length() == 1);
}

TEST_CASE("encode rejects non-canonical characters with position info") {
    try {
        encode("ACXD");
        FAIL("expected NonCanonicalResidue");
    } catch (const NonCanonicalResidue& e) {
        CHECK(e.position == 2);
        CHECK(e.character == 'X');
    }
    CHECK_THROWS_AS(encode("acd"), NonCanonicalResidue);
    CHECK_THROWS_AS(encode("AC D"), NonCanonicalResidue);
    CHECK_THROWS_AS(encode("ABC"), NonCanonicalResidue);
    CHECK_THROWS_AS(encode(""), NonCanonicalResidue);
}

TEST_CASE("decode inverts encode and validates framing") {
    CHECK(decode(std::vector<int>{20, 0, 1, 2, 21}) == "ACD");
    CHECK_THROWS_AS(decode(std::vector<int>{20, 21}), MalformedTokenStream);
    CHECK_THROWS_AS(decode(std::vector<int>{0, 1, 21}), MalformedTokenStream);
    CHECK_THROWS_AS(decode(std::vector<int>{20, 0, 22, 1, 21}), MalformedTokenStream);
    // trailing PAD is tolerated
    CHECK(decode(std::vector<int>{20, 0, 1, 2, 21, 22, 22}) == "ACD");
}

TEST_CASE("encode/decode round-trip on random canonical strings") {
    Rng rng(42);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t len = 1 + rng.uniform_int(14);
        std::string s;
        for (std::size_t i = 0; i < len; ++i) {
            s.push_back(kResidues[rng.uniform_int(20)]);
        }
        CHECK(decode(encode(s)) == s);
    }
}

TEST_CASE("parse_epitope_table keeps good rows and reports bad ones") {
    const auto path = temp_file("basic.tsv",
                                "sequence\thost\torganism\tassay\tstructure\tlabel\n"
                                "ACDEF\thuman\tviral\tTCell\tlinear\tpositive\n"
                                "ACXEF\thuman\tviral\tTCell\tlinear\tpositive\n"
                                "WYKLM\tmouse\tbacterial\tBCell\tconformational\tnegative\n");
    const auto result = parse_epitope_table(path.string(), ColumnMap{});
    CHECK(result.dataset.size() == 2);
    REQUIRE(result.rejects.size() == 1);
    CHECK(result.rejects[0].row == 2);
    CHECK(result.rejects[0].reason.find("X") != std::string::npos);
    CHECK(result.dataset.records[1].organism == Organism::bacterial);
    CHECK(result.dataset.records[1].structure == Structure::conformational);
}

TEST_CASE("parse detects comma delimiters from the header") {
    const auto path = temp_file("comma.csv",
                                "sequence,host,organism,assay,structure,label\n"
                                "ACDEF,human,viral,TCell,linear,positive\n");
    const auto result = parse_epitope_table(path.string(), ColumnMap{});
    CHECK(result.delimiter == ',');
    CHECK(result.dataset.size() == 1);
}

TEST_CASE("missing sequence column is fatal") {
    const auto path = temp_file("noseq.tsv", "host\torganism\nhuman\tviral\n");
    CHECK_THROWS_AS(parse_epitope_table(path.string(), ColumnMap{}), MissingColumn);
}

TEST_CASE("empty file is fatal") {
    const auto path = temp_file("empty.tsv", "");
    CHECK_THROWS_AS(parse_epitope_table(path.string(), ColumnMap{}), EmptyFile);
}

TEST_CASE("duplicates survive parsing; dedup is separate") {
    const auto path = temp_file("dups.tsv",
                                "sequence\thost\torganism\tassay\tstructure\tlabel\n"
                                "AAA\thuman\tviral\tTCell\tlinear\tpositive\n"
                                "AAA\thuman\tviral\tTCell\tlinear\tpositive\n");
    const auto result = parse_epitope_table(path.string(), ColumnMap{});
    CHECK(result.dataset.size() == 2);
}

TEST_CASE("filter_dataset applies every provided criterion") {
    Dataset d;
    EpitopeRecord a;
    a.sequence = "ACDEF";
    a.host = "human";
    a.assay = Assay::tcell;
    a.structure = Structure::linear;
    EpitopeRecord b = a;
    b.sequence = "WYKLM";
    b.host = "mouse";
    EpitopeRecord c = a;
    c.sequence = "ACDEFGHIKLMN";  // 12 residues
    d.records = {a, b, c};

    FilterSpec host_only;
    host_only.host = "human";
    const auto filtered = filter_dataset(d, host_only);
    CHECK(filtered.size() == 2);

    FilterSpec with_len = host_only;
    with_len.max_len = 11;
    const auto shorter = filter_dataset(d, with_len);
    CHECK(shorter.size() == 1);
    CHECK(shorter.records[0].sequence == "ACDEF");

    // empty spec is the identity
    const auto identity = filter_dataset(d, FilterSpec{});
    CHECK(identity.size() == d.size());

    // idempotence
    const auto twice = filter_dataset(shorter, with_len);
    REQUIRE(twice.size() == shorter.size());
    for (std::size_t i = 0; i < twice.size(); ++i) {
        CHECK(twice.records[i].sequence == shorter.records[i].sequence);
    }
}

TEST_CASE("deduplicate keeps first occurrences in order") {
    const auto d = dataset_of({"AAA", "AAC", "AAA", "AAC", "AAD"});
    const auto deduped = deduplicate(d);
    REQUIRE(deduped.size() == 3);
    CHECK(deduped.records[0].sequence == "AAA");
    CHECK(deduped.records[1].sequence == "AAC");
    CHECK(deduped.records[2].sequence == "AAD");
    // idempotent
    CHECK(deduplicate(deduped).size() == 3);
    CHECK(deduplicate(dataset_of({"AAA", "AAA"})).size() == 1);
}

TEST_CASE("split sizes follow the quota rule") {
    SUBCASE("10 records, 0.8/0.1/0.1") {
        const auto d = dataset_of({"AA", "AC", "AD", "AE", "AF", "AG", "AH", "AI",
                                   "AK", "AL"});
        const auto parts = split(d, {0.8, 0.1, 0.1}, 7);
        CHECK(parts.train.size() == 8);
        CHECK(parts.val.size() == 1);
        CHECK(parts.test.size() == 1);
        // determinism
        const auto again = split(d, {0.8, 0.1, 0.1}, 7);
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(parts.train.records[i].sequence == again.train.records[i].sequence);
        }
    }
    SUBCASE("3 records, near-thirds") {
        const auto d = dataset_of({"AA", "AC", "AD"});
        const auto parts = split(d, {0.34, 0.33, 0.33}, 1);
        CHECK(parts.train.size() == 1);
        CHECK(parts.val.size() == 1);
        CHECK(parts.test.size() == 1);
    }
}

TEST_CASE("split rejects bad ratios") {
    const auto d = dataset_of({"AA", "AC"});
    CHECK_THROWS_AS(split(d, {0.5, 0.5, 0.1}, 0), BadRatios);
    CHECK_THROWS_AS(split(d, {1.0, 0.0, 0.0}, 0), BadRatios);
    CHECK_THROWS_AS(split(d, {-0.2, 0.6, 0.6}, 0), BadRatios);
}

TEST_CASE("split partitions the dataset as a multiset") {
    Rng rng(5);
    std::vector<std::string> seqs;
    for (int i = 0; i < 57; ++i) {
        std::string s;
        for (int j = 0; j < 6; ++j) s.push_back(kResidues[rng.uniform_int(20)]);
        seqs.push_back(s);  // duplicates possible and fine
    }
    const auto d = dataset_of(seqs);
    const auto parts = split(d, {0.6, 0.2, 0.2}, 99);
    std::multiset<std::string> before(seqs.begin(), seqs.end());
    std::multiset<std::string> after;
    for (const auto* part : {&parts.train, &parts.val, &parts.test}) {
        for (const auto& rec : part->records) after.insert(rec.sequence);
    }
    CHECK(before == after);
    CHECK(parts.train.size() + parts.val.size() + parts.test.size() == d.size());
}

TEST_CASE("paper-style filter chain leaves short unique human linear records") {
    const auto path = temp_file("chain.tsv",
                                "sequence\thost\torganism\tassay\tstructure\tlabel\n"
                                "ACDEF\thuman\tviral\tTCell\tlinear\tpositive\n"
                                "ACDEF\thuman\tviral\tTCell\tlinear\tpositive\n"
                                "ACDEFGHIKLMN\thuman\tviral\tMHC\tlinear\tpositive\n"
                                "WYKLM\tmouse\tviral\tTCell\tlinear\tpositive\n"
                                "MMMMM\thuman\tbacterial\tother\tlinear\tnegative\n"
                                "PPPPP\thuman\tbacterial\tBCell\tconformational\tnegative\n"
                                "QQQQQ\thuman\tbacterial\tMHC\tlinear\tnegative\n");
    const auto parsed = parse_epitope_table(path.string(), ColumnMap{});
    FilterSpec spec;
    spec.host = "human";
    spec.assays = {Assay::tcell, Assay::bcell, Assay::mhc};
    spec.structure = Structure::linear;
    spec.max_len = 11;
    const auto filtered = deduplicate(filter_dataset(parsed.dataset, spec));
    CHECK(filtered.size() == 2);
    std::set<std::string> seen;
    for (const auto& rec : filtered.records) {
        CHECK(rec.sequence.size() <= 11);
        CHECK(seen.insert(rec.sequence).second);
    }
    // provenance recorded filter then dedup
    REQUIRE(filtered.provenance.size() >= 2);
}

TEST_CASE("dataset TSV round-trips") {
    const auto dir = fs::temp_directory_path() / "epikit_test_seqdata";
    fs::create_directories(dir);
    auto d = dataset_of({"ACDEF", "WYKLM"});
    d.records[0].label = Label::positive;
    d.records[1].organism = Organism::viral;
    const auto path = (dir / "roundtrip.tsv").string();
    write_dataset_tsv(d, path);
    const auto back = read_dataset_tsv(path);
    REQUIRE(back.size() == 2);
    CHECK(back.records[0].sequence == "ACDEF");
    CHECK(back.records[0].label == Label::positive);
    CHECK(back.records[1].organism == Organism::viral);
}

TEST_CASE("fasta round-trips sequences") {
    const auto dir = fs::temp_directory_path() / "epikit_test_seqdata";
    fs::create_directories(dir);
    const std::vector<std::string> seqs{"ACDEF", "WWYK", "MNPQRST"};
    const auto path = (dir / "lib.fasta").string();
    write_fasta(seqs, path, "gen");
    CHECK(read_fasta(path) == seqs);

    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    CHECK(first == ">gen_000001");
}
