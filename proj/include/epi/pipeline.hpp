#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "epi/generator.hpp"
#include "epi/libfilter.hpp"
#include "epi/seqdata.hpp"
#include "epi/seqstats.hpp"
#include "epi/tinylm.hpp"

// End-to-end orchestration: ingest -> train -> generate -> stats ->
// train-classifier -> evaluate -> filter, driven by one typed JSON config.
// Every stage derives its seed from the global seed and the stage name, and
// writes through a quarantine directory so failed runs never clobber
// previous outputs.

namespace epi::pipeline {

inline constexpr std::string_view kToolVersion = "epikit 0.1.0";

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct StageError : std::runtime_error {
    StageError(const std::string& stage_name, const std::string& what)
        : std::runtime_error(stage_name + ": " + what), stage(stage_name) {}
    std::string stage;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    int workers = 1;
    std::string data_path;
    std::string out_dir;

    seqdata::FilterSpec filter;
    bool dedup = true;
    std::array<double, 3> split_ratios{0.8, 0.1, 0.1};

    tinylm::ModelConfig model;
    tinylm::TrainConfig train;

    generator::SamplingParams sampling;
    std::size_t n_sequences = 500;
    std::size_t max_attempts = 0;  // 0 means 20 * n_sequences

    std::string background = "uniform";  // "uniform" or a frequency-table path
    std::size_t min_support = 2;

    libfilter::EnsembleConfig ensemble;
    libfilter::Pooling pooling = libfilter::Pooling::sum;
    double rightmost_weight = 2.0;
};

// Strict parse: unknown keys anywhere are hard errors.
PipelineConfig load_config(const std::string& path);

// "uniform" or a whitespace-separated 20-entry frequency table.
seqstats::BackgroundModel load_background(const std::string& spec);

struct StageRecord {
    std::string name;
    std::map<std::string, std::string> inputs;   // path -> content digest
    std::map<std::string, std::string> outputs;  // out-relative path -> digest
};

struct RunManifest {
    std::string tool_version{kToolVersion};
    std::string config_digest;
    std::optional<std::uint64_t> seed_override;  // recorded so the manifest
                                                 // stays sufficient to rerun
    std::vector<StageRecord> stages;
};

const std::vector<std::string>& stage_names();  // fixed execution order

// Runs the requested stages (all when empty) and writes manifest.json last.
// Wall-clock timings go to timings.tsv and stderr, never into the manifest.
RunManifest run(const std::string& config_path,
                const std::vector<std::string>& stages = {},
                const std::string& out_override = "",
                std::optional<std::uint64_t> seed_override = std::nullopt);

void write_manifest_json(const RunManifest& m, const std::string& path);

std::string file_digest(const std::string& path);

}  // namespace epi::pipeline
