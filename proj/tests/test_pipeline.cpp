#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "epi/pipeline.hpp"
#include "epi/toycorpus.hpp"
#include "json.hpp"

using namespace epi;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
    const auto dir = fs::temp_directory_path() / "epikit_test_pipeline";
    fs::create_directories(dir);
    return dir;
}

// Small-but-complete config over a generated toy table.
std::string write_test_config(const fs::path& dir, const std::string& name,
                              const std::string& out_name) {
    const auto data = dir / "toy.tsv";
    if (!fs::exists(data)) {
        toy::write_toy_table(data.string(), 240, 5, true);
    }
    nlohmann::json cfg{
        {"seed", 11},
        {"io", {{"data", data.string()}, {"out", (dir / out_name).string()}}},
        {"ingest",
         {{"host", "human"},
          {"assays", {"TCell", "BCell", "MHC"}},
          {"structure", "linear"},
          {"max_len", 11},
          {"dedup", true},
          {"split", {0.7, 0.15, 0.15}}}},
        {"model",
         {{"n_layers", 1}, {"d_model", 32}, {"n_heads", 2}, {"d_ff", 64},
          {"max_context", 16}}},
        {"train",
         {{"learning_rate", 0.003}, {"epochs", 2}, {"weight_decay", 0.01},
          {"batch_size", 32}}},
        {"generate",
         {{"temperature", 1.0}, {"repetition_penalty", 2.0}, {"max_len", 14},
          {"n_sequences", 50}, {"max_attempts", 2000}}},
        {"stats", {{"background", "uniform"}, {"min_support", 3}}},
        {"classifier",
         {{"n_members", 2}, {"slice_size", 8}, {"bias", 2.0},
          {"base_learner", "boosted_stumps"}, {"rounds", 5}, {"shrinkage", 0.3},
          {"max_depth", 2}, {"pooling", "sum"}}}};
    const auto path = dir / name;
    std::ofstream out(path);
    out << cfg.dump(2);
    return path.string();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config parsing is strict about keys") {
    const auto dir = work_dir();
    const auto good = write_test_config(dir, "good.json", "out_cfg");
    CHECK_NOTHROW(pipeline::load_config(good));

    {
        std::ofstream out(dir / "bad_root.json");
        out << R"({"seed": 1, "io": {"data": "x", "out": "y"}, "typo_section": {}})";
    }
    CHECK_THROWS_AS(pipeline::load_config((dir / "bad_root.json").string()),
                    pipeline::ConfigError);

    {
        std::ofstream out(dir / "bad_nested.json");
        out << R"({"io": {"data": "x", "out": "y"}, "train": {"learning_rte": 0.1}})";
    }
    CHECK_THROWS_AS(pipeline::load_config((dir / "bad_nested.json").string()),
                    pipeline::ConfigError);

    {
        std::ofstream out(dir / "no_io.json");
        out << R"({"seed": 1})";
    }
    CHECK_THROWS_AS(pipeline::load_config((dir / "no_io.json").string()),
                    pipeline::ConfigError);
}

TEST_CASE("full run produces every stage's report files") {
    const auto dir = work_dir();
    const auto cfg = write_test_config(dir, "full.json", "out_full");
    const auto manifest = pipeline::run(cfg);
    CHECK(manifest.stages.size() == 7);

    const fs::path out = dir / "out_full";
    for (const char* f :
         {"ingest/dataset.tsv", "ingest/provenance.json", "ingest/rejects.tsv",
          "ingest/train.tsv", "ingest/val.tsv", "ingest/test.tsv",
          "train/model.eplm", "train/train_report.json", "train/train_report.tsv",
          "generate/library.fasta", "generate/library.tsv", "generate/generation.json",
          "stats/report.json", "stats/length_histogram.tsv",
          "classifier/classifier.epcl", "evaluate/metrics.json",
          "filter/filtered.fasta", "filter/composition.json", "manifest.json",
          "timings.tsv"}) {
        CHECK_MESSAGE(fs::exists(out / f), f);
    }

    // the ingest stage saw the planted noise rows
    const auto rejects = slurp(out / "ingest" / "rejects.tsv");
    CHECK(rejects.find("non-canonical") != std::string::npos);
}

TEST_CASE("reruns are byte-identical, manifest included") {
    const auto dir = work_dir();
    const auto cfg = write_test_config(dir, "det.json", "out_det_a");
    pipeline::run(cfg);
    const auto manifest_a = slurp(dir / "out_det_a" / "manifest.json");
    const auto library_a = slurp(dir / "out_det_a" / "generate" / "library.fasta");

    // second run into a different root via the override
    pipeline::run(cfg, {}, (dir / "out_det_b").string());
    const auto manifest_b = slurp(dir / "out_det_b" / "manifest.json");
    const auto library_b = slurp(dir / "out_det_b" / "generate" / "library.fasta");

    CHECK(manifest_a == manifest_b);
    CHECK(library_a == library_b);
}

TEST_CASE("a stage with missing inputs fails by name without writing") {
    const auto dir = work_dir();
    const auto cfg = write_test_config(dir, "missing.json", "out_missing");
    try {
        pipeline::run(cfg, {"stats"});
        FAIL("expected StageError");
    } catch (const pipeline::StageError& e) {
        CHECK(e.stage == "stats");
        CHECK(std::string(e.what()).find("missing input") != std::string::npos);
    }
    CHECK(!fs::exists(dir / "out_missing" / "stats"));
}

TEST_CASE("stage isolation: a downstream stage reruns bit-identically") {
    const auto dir = work_dir();
    const auto cfg = write_test_config(dir, "iso.json", "out_iso");
    pipeline::run(cfg);
    const auto before = slurp(dir / "out_iso" / "stats" / "report.json");
    fs::remove_all(dir / "out_iso" / "stats");
    pipeline::run(cfg, {"stats"});
    CHECK(slurp(dir / "out_iso" / "stats" / "report.json") == before);
}

TEST_CASE("failed stages quarantine partial output and keep previous results") {
    const auto dir = work_dir();
    const auto cfg = write_test_config(dir, "quar.json", "out_quar");
    pipeline::run(cfg);
    const auto good_report = slurp(dir / "out_quar" / "stats" / "report.json");

    // corrupt the generated library so the stats stage throws midway
    // (enough length-5 rows to clear min_support, one with a bad residue)
    {
        std::ofstream out(dir / "out_quar" / "generate" / "library.fasta");
        out << ">gen_000001\nACDEF\n>gen_000002\nACXEF\n>gen_000003\nWYKLM\n"
            << ">gen_000004\nMNPQR\n";
    }
    CHECK_THROWS_AS(pipeline::run(cfg, {"stats"}), pipeline::StageError);
    // previous stats output is untouched
    CHECK(slurp(dir / "out_quar" / "stats" / "report.json") == good_report);
}

TEST_CASE("unknown stage names are rejected") {
    const auto dir = work_dir();
    const auto cfg = write_test_config(dir, "stages.json", "out_stages");
    CHECK_THROWS_AS(pipeline::run(cfg, {"polish"}), pipeline::ConfigError);
}

#ifdef EPIKIT_BIN
TEST_CASE("cli exit codes: 0 success, 1 domain error, 2 usage error") {
    const auto dir = work_dir();
    const std::string bin = EPIKIT_BIN;
    const std::string devnull = " > /dev/null 2>&1";

    auto run = [&](const std::string& args) {
        const int status = std::system((bin + " " + args + devnull).c_str());
        return WEXITSTATUS(status);
    };

    CHECK(run("--version") == 0);
    CHECK(run("--help") == 0);
    CHECK(run("generate --help") == 0);
    CHECK(run("definitely-not-a-command") == 2);
    CHECK(run("generate --model x.eplm --bogus-flag 1") == 2);
    CHECK(run("generate") == 2);  // missing required --model
    CHECK(run("generate --model " + (dir / "nope.eplm").string()) == 1);

    // a real end-to-end CLI pass: ingest -> train -> generate -> stats
    const auto data = dir / "toy.tsv";
    if (!fs::exists(data)) toy::write_toy_table(data.string(), 240, 5, true);
    const auto cli_out = dir / "cli";
    fs::create_directories(cli_out);
    CHECK(run("ingest --in " + data.string() + " --out " + (cli_out / "ingest").string() +
              " --host human --structure linear --max-len 11 --split 0.8 0.1 0.1 --seed 3") == 0);
    CHECK(run("train --train " + (cli_out / "ingest/train.tsv").string() + " --val " +
              (cli_out / "ingest/val.tsv").string() + " --out " +
              (cli_out / "m.eplm").string() +
              " --layers 1 --d-model 32 --heads 2 --d-ff 64 --max-context 16"
              " --epochs 2 --lr 0.003 --batch-size 32 --seed 5") == 0);
    CHECK(run("generate --model " + (cli_out / "m.eplm").string() +
              " --n 30 --temperature 1 --repetition-penalty 2 --seed 7 --out " +
              (cli_out / "lib.fasta").string()) == 0);
    CHECK(fs::exists(cli_out / "lib.fasta"));
    CHECK(run("stats --in " + (cli_out / "lib.fasta").string() +
              " --background uniform --out " + (cli_out / "report").string()) == 0);
    CHECK(fs::exists(cli_out / "report" / "report.json"));
}
#endif
