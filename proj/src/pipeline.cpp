#include "epi/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "epi/common.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace epi::pipeline {

namespace {

void check_keys(const nlohmann::json& obj, const std::string& section,
                std::initializer_list<std::string_view> allowed) {
    if (!obj.is_object()) throw ConfigError(section + " must be a json object");
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown key '" + key + "' in " + section);
        }
    }
}

template <typename T>
T get_or(const nlohmann::json& obj, const char* key, T fallback) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("bad value for '") + key + "'");
    }
}

}  // namespace

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid json: ") + e.what());
    }

    check_keys(j, "config root",
               {"seed", "workers", "io", "ingest", "model", "train", "generate",
                "stats", "classifier"});

    PipelineConfig cfg;
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    cfg.workers = get_or<int>(j, "workers", 1);
    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");

    if (!j.contains("io")) throw ConfigError("missing 'io' section");
    const auto& io = j.at("io");
    check_keys(io, "io", {"data", "out"});
    cfg.data_path = get_or<std::string>(io, "data", "");
    cfg.out_dir = get_or<std::string>(io, "out", "");
    if (cfg.data_path.empty()) throw ConfigError("io.data is required");
    if (cfg.out_dir.empty()) throw ConfigError("io.out is required");

    if (j.contains("ingest")) {
        const auto& s = j.at("ingest");
        check_keys(s, "ingest",
                   {"host", "assays", "structure", "organisms", "max_len", "dedup",
                    "split"});
        if (s.contains("host")) cfg.filter.host = s.at("host").get<std::string>();
        if (s.contains("assays") && !s.at("assays").empty()) {
            std::set<seqdata::Assay> assays;
            for (const auto& a : s.at("assays")) {
                const auto parsed = seqdata::parse_assay(a.get<std::string>());
                if (!parsed) throw ConfigError("unknown assay '" + a.get<std::string>() + "'");
                assays.insert(*parsed);
            }
            cfg.filter.assays = assays;
        }
        if (s.contains("structure")) {
            const auto parsed = seqdata::parse_structure(s.at("structure").get<std::string>());
            if (!parsed) throw ConfigError("unknown structure");
            cfg.filter.structure = parsed;
        }
        if (s.contains("organisms") && !s.at("organisms").empty()) {
            std::set<seqdata::Organism> organisms;
            for (const auto& o : s.at("organisms")) {
                const auto parsed = seqdata::parse_organism(o.get<std::string>());
                if (!parsed) throw ConfigError("unknown organism '" + o.get<std::string>() + "'");
                organisms.insert(*parsed);
            }
            cfg.filter.organisms = organisms;
        }
        if (s.contains("max_len")) cfg.filter.max_len = s.at("max_len").get<std::size_t>();
        cfg.dedup = get_or<bool>(s, "dedup", true);
        if (s.contains("split")) {
            const auto ratios = s.at("split").get<std::vector<double>>();
            if (ratios.size() != 3) throw ConfigError("split needs 3 ratios");
            cfg.split_ratios = {ratios[0], ratios[1], ratios[2]};
        }
    }

    if (j.contains("model")) {
        const auto& s = j.at("model");
        check_keys(s, "model", {"n_layers", "d_model", "n_heads", "d_ff", "max_context"});
        cfg.model.n_layers = get_or<int>(s, "n_layers", cfg.model.n_layers);
        cfg.model.d_model = get_or<int>(s, "d_model", cfg.model.d_model);
        cfg.model.n_heads = get_or<int>(s, "n_heads", cfg.model.n_heads);
        cfg.model.d_ff = get_or<int>(s, "d_ff", cfg.model.d_ff);
        cfg.model.max_context = get_or<int>(s, "max_context", cfg.model.max_context);
    }

    if (j.contains("train")) {
        const auto& s = j.at("train");
        check_keys(s, "train", {"learning_rate", "epochs", "weight_decay", "batch_size"});
        cfg.train.learning_rate = get_or<double>(s, "learning_rate", cfg.train.learning_rate);
        cfg.train.epochs = get_or<int>(s, "epochs", cfg.train.epochs);
        cfg.train.weight_decay = get_or<double>(s, "weight_decay", cfg.train.weight_decay);
        cfg.train.batch_size = get_or<int>(s, "batch_size", cfg.train.batch_size);
    }

    if (j.contains("generate")) {
        const auto& s = j.at("generate");
        check_keys(s, "generate",
                   {"temperature", "repetition_penalty", "max_len", "n_sequences",
                    "max_attempts"});
        cfg.sampling.temperature = get_or<double>(s, "temperature", cfg.sampling.temperature);
        cfg.sampling.repetition_penalty =
            get_or<double>(s, "repetition_penalty", cfg.sampling.repetition_penalty);
        cfg.sampling.max_len = get_or<std::size_t>(s, "max_len", cfg.sampling.max_len);
        cfg.n_sequences = get_or<std::size_t>(s, "n_sequences", cfg.n_sequences);
        cfg.max_attempts = get_or<std::size_t>(s, "max_attempts", cfg.max_attempts);
    }

    if (j.contains("stats")) {
        const auto& s = j.at("stats");
        check_keys(s, "stats", {"background", "min_support"});
        cfg.background = get_or<std::string>(s, "background", cfg.background);
        cfg.min_support = get_or<std::size_t>(s, "min_support", cfg.min_support);
    }

    if (j.contains("classifier")) {
        const auto& s = j.at("classifier");
        check_keys(s, "classifier",
                   {"n_members", "slice_size", "bias", "base_learner", "rounds",
                    "shrinkage", "max_depth", "pooling", "rightmost_weight"});
        cfg.ensemble.n_members = get_or<int>(s, "n_members", cfg.ensemble.n_members);
        cfg.ensemble.slice_size = get_or<int>(s, "slice_size", cfg.ensemble.slice_size);
        cfg.ensemble.bias = get_or<double>(s, "bias", cfg.ensemble.bias);
        if (s.contains("base_learner")) {
            const auto name = s.at("base_learner").get<std::string>();
            if (name == "boosted_stumps") {
                cfg.ensemble.base_learner = libfilter::BaseLearnerKind::boosted_stumps;
            } else if (name == "logistic") {
                cfg.ensemble.base_learner = libfilter::BaseLearnerKind::logistic;
            } else {
                throw ConfigError("unknown base_learner '" + name + "'");
            }
        }
        cfg.ensemble.rounds = get_or<int>(s, "rounds", cfg.ensemble.rounds);
        cfg.ensemble.shrinkage = get_or<double>(s, "shrinkage", cfg.ensemble.shrinkage);
        cfg.ensemble.max_depth = get_or<int>(s, "max_depth", cfg.ensemble.max_depth);
        if (s.contains("pooling")) {
            const auto parsed = libfilter::parse_pooling(s.at("pooling").get<std::string>());
            if (!parsed) throw ConfigError("unknown pooling mode");
            cfg.pooling = *parsed;
        }
        cfg.rightmost_weight = get_or<double>(s, "rightmost_weight", cfg.rightmost_weight);
    }

    return cfg;
}

seqstats::BackgroundModel load_background(const std::string& spec) {
    if (spec == "uniform") return seqstats::BackgroundModel::uniform();
    std::ifstream in(spec);
    if (!in) throw ConfigError("cannot open background table " + spec);
    seqstats::ProbabilityVector q{};
    double sum = 0.0;
    for (auto& v : q) {
        if (!(in >> v)) throw ConfigError("background table needs 20 values");
        if (v <= 0.0) throw ConfigError("background entries must be positive");
        sum += v;
    }
    for (auto& v : q) v /= sum;
    return seqstats::BackgroundModel::from_vector(q);
}

std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    return to_hex(fnv1a64(bytes.data(), bytes.size()));
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {
        "ingest", "train", "generate", "stats", "train-classifier", "evaluate",
        "filter"};
    return names;
}

namespace {

// Directory each stage owns under the run root.
std::string stage_dir_name(const std::string& stage) {
    return stage == "train-classifier" ? "classifier" : stage;
}

struct StageContext {
    const PipelineConfig& cfg;
    fs::path out_root;
    fs::path work;  // quarantine dir while the stage is running
};

void stage_ingest(const StageContext& ctx) {
    const auto parsed =
        seqdata::parse_epitope_table(ctx.cfg.data_path, seqdata::ColumnMap{});
    {
        std::ofstream rejects(ctx.work / "rejects.tsv");
        rejects << "row\treason\n";
        for (const auto& r : parsed.rejects) {
            rejects << r.row << '\t' << r.reason << '\n';
        }
    }
    auto filtered = seqdata::filter_dataset(parsed.dataset, ctx.cfg.filter);
    if (ctx.cfg.dedup) filtered = seqdata::deduplicate(filtered);
    seqdata::write_dataset_tsv(filtered, (ctx.work / "dataset.tsv").string());
    seqdata::write_provenance_json(filtered, (ctx.work / "provenance.json").string());

    const auto parts = seqdata::split(filtered, ctx.cfg.split_ratios,
                                      derive_seed(ctx.cfg.seed, "ingest"));
    seqdata::write_dataset_tsv(parts.train, (ctx.work / "train.tsv").string());
    seqdata::write_dataset_tsv(parts.val, (ctx.work / "val.tsv").string());
    seqdata::write_dataset_tsv(parts.test, (ctx.work / "test.tsv").string());
}

void stage_train(const StageContext& ctx) {
    auto model_cfg = ctx.cfg.model;
    model_cfg.seed = derive_seed(ctx.cfg.seed, "model");
    auto train_cfg = ctx.cfg.train;
    train_cfg.seed = derive_seed(ctx.cfg.seed, "train");

    const auto train_set =
        seqdata::read_dataset_tsv((ctx.out_root / "ingest" / "train.tsv").string());
    const auto val_set =
        seqdata::read_dataset_tsv((ctx.out_root / "ingest" / "val.tsv").string());

    const auto model = tinylm::init_model(model_cfg);
    const auto outcome = tinylm::train(model, train_set, val_set, train_cfg);
    tinylm::save_checkpoint(outcome.model, (ctx.work / "model.eplm").string());
    tinylm::write_train_report_json(outcome.report,
                                    (ctx.work / "train_report.json").string());
    tinylm::write_train_report_tsv(outcome.report,
                                   (ctx.work / "train_report.tsv").string());
}

void stage_generate(const StageContext& ctx) {
    const auto model =
        tinylm::load_checkpoint((ctx.out_root / "train" / "model.eplm").string());
    auto params = ctx.cfg.sampling;
    params.seed = derive_seed(ctx.cfg.seed, "generate");
    const std::size_t attempts =
        ctx.cfg.max_attempts > 0 ? ctx.cfg.max_attempts : 20 * ctx.cfg.n_sequences;
    const auto lib = generator::generate_library(model, params, ctx.cfg.n_sequences,
                                                 attempts);
    if (!lib.complete) {
        std::cerr << "[generate] warning: only " << lib.sequences.size() << " of "
                  << ctx.cfg.n_sequences << " unique sequences after " << lib.attempts
                  << " attempts\n";
    }
    seqdata::write_fasta(lib.sequences, (ctx.work / "library.fasta").string(), "gen");
    generator::write_library_tsv(model, lib.sequences,
                                 (ctx.work / "library.tsv").string());
    nlohmann::json j{{"requested", ctx.cfg.n_sequences},
                     {"generated", lib.sequences.size()},
                     {"attempts", lib.attempts},
                     {"complete", lib.complete},
                     {"source_model", lib.source_model},
                     {"temperature", params.temperature},
                     {"repetition_penalty", params.repetition_penalty},
                     {"max_len", params.max_len}};
    std::ofstream out(ctx.work / "generation.json");
    out << j.dump(2) << '\n';
}

void stage_stats(const StageContext& ctx) {
    const auto seqs =
        seqdata::read_fasta((ctx.out_root / "generate" / "library.fasta").string());
    const auto background = load_background(ctx.cfg.background);
    seqstats::write_stats_bundle(seqs, background, ctx.work.string(),
                                 ctx.cfg.min_support);
}

void stage_train_classifier(const StageContext& ctx) {
    const auto model =
        tinylm::load_checkpoint((ctx.out_root / "train" / "model.eplm").string());
    const auto train_set =
        seqdata::read_dataset_tsv((ctx.out_root / "ingest" / "train.tsv").string());
    const auto emb = libfilter::embed_labeled_dataset(model, train_set, ctx.cfg.pooling,
                                                      ctx.cfg.rightmost_weight);
    auto cfg = ctx.cfg.ensemble;
    cfg.seed = derive_seed(ctx.cfg.seed, "classifier");
    const auto clf = libfilter::train_ensemble(emb.x, emb.y, cfg);
    libfilter::save_classifier(clf, (ctx.work / "classifier.epcl").string());
}

void stage_evaluate(const StageContext& ctx) {
    const auto clf = libfilter::load_classifier(
        (ctx.out_root / "classifier" / "classifier.epcl").string());
    const auto model =
        tinylm::load_checkpoint((ctx.out_root / "train" / "model.eplm").string());
    const auto test_set =
        seqdata::read_dataset_tsv((ctx.out_root / "ingest" / "test.tsv").string());
    const auto emb = libfilter::embed_labeled_dataset(model, test_set, ctx.cfg.pooling,
                                                      ctx.cfg.rightmost_weight);
    const auto metrics = libfilter::evaluate(clf, emb.x, emb.y);
    libfilter::write_metrics_json(metrics, (ctx.work / "metrics.json").string());
}

void stage_filter(const StageContext& ctx) {
    const auto clf = libfilter::load_classifier(
        (ctx.out_root / "classifier" / "classifier.epcl").string());
    const auto model =
        tinylm::load_checkpoint((ctx.out_root / "train" / "model.eplm").string());
    const auto library =
        seqdata::read_fasta((ctx.out_root / "generate" / "library.fasta").string());

    const auto outcome = libfilter::filter_library(clf, model, ctx.cfg.pooling,
                                                   library, nullptr,
                                                   ctx.cfg.rightmost_weight);
    if (outcome.all_rejected) {
        std::cerr << "[filter] warning: classifier rejected every sequence\n";
    }
    std::vector<std::string> kept;
    kept.reserve(outcome.kept.size());
    for (const auto i : outcome.kept) kept.push_back(library[i]);
    seqdata::write_fasta(kept, (ctx.work / "filtered.fasta").string(), "gen");
    generator::write_library_tsv(model, kept, (ctx.work / "filtered.tsv").string());

    std::optional<double> held_out;
    {
        std::ifstream metrics_in(ctx.out_root / "evaluate" / "metrics.json");
        nlohmann::json metrics;
        metrics_in >> metrics;
        if (metrics.contains("lr_plus") && metrics.at("lr_plus").is_number()) {
            held_out = metrics.at("lr_plus").get<double>();
        }
    }
    libfilter::write_composition_json(outcome, library.size(),
                                      (ctx.work / "composition.json").string(),
                                      held_out);
}

struct StageSpec {
    std::string name;
    std::vector<std::string> inputs;  // out-relative, or "@data" for the config table
    void (*fn)(const StageContext&);
};

const std::vector<StageSpec>& stage_specs() {
    static const std::vector<StageSpec> specs = {
        {"ingest", {"@data"}, stage_ingest},
        {"train", {"ingest/train.tsv", "ingest/val.tsv"}, stage_train},
        {"generate", {"train/model.eplm"}, stage_generate},
        {"stats", {"generate/library.fasta"}, stage_stats},
        {"train-classifier",
         {"train/model.eplm", "ingest/train.tsv"},
         stage_train_classifier},
        {"evaluate",
         {"classifier/classifier.epcl", "train/model.eplm", "ingest/test.tsv"},
         stage_evaluate},
        {"filter",
         {"classifier/classifier.epcl", "train/model.eplm", "generate/library.fasta",
          "evaluate/metrics.json"},
         stage_filter},
    };
    return specs;
}

}  // namespace

RunManifest run(const std::string& config_path, const std::vector<std::string>& stages,
                const std::string& out_override,
                std::optional<std::uint64_t> seed_override) {
    auto cfg = load_config(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (seed_override) cfg.seed = *seed_override;

    std::vector<std::string> selected = stages;
    if (selected.empty()) selected = stage_names();
    for (const auto& s : selected) {
        if (std::find(stage_names().begin(), stage_names().end(), s) ==
            stage_names().end()) {
            throw ConfigError("unknown stage '" + s + "'");
        }
    }

    const fs::path out_root(cfg.out_dir);
    fs::create_directories(out_root);

    RunManifest manifest;
    manifest.config_digest = file_digest(config_path);
    manifest.seed_override = seed_override;

    std::vector<std::pair<std::string, double>> timings;
    for (const auto& spec : stage_specs()) {
        if (std::find(selected.begin(), selected.end(), spec.name) == selected.end()) {
            continue;
        }

        // Resolve and verify inputs before any side effect.
        StageRecord record;
        record.name = spec.name;
        for (const auto& input : spec.inputs) {
            const std::string path =
                input == "@data" ? cfg.data_path : (out_root / input).string();
            const std::string label = input == "@data" ? cfg.data_path : input;
            if (!fs::exists(path)) {
                throw StageError(spec.name, "missing input " + label);
            }
            record.inputs[label] = file_digest(path);
        }

        const fs::path final_dir = out_root / stage_dir_name(spec.name);
        const fs::path work = out_root / ".quarantine" / stage_dir_name(spec.name);
        fs::remove_all(work);
        fs::create_directories(work);

        const auto t0 = std::chrono::steady_clock::now();
        try {
            spec.fn({cfg, out_root, work});
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(spec.name, e.what());
        }
        const auto t1 = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        timings.emplace_back(spec.name, ms);
        std::cerr << "[" << spec.name << "] done in " << ms << " ms\n";

        fs::remove_all(final_dir);
        fs::rename(work, final_dir);

        std::vector<fs::path> files;
        for (const auto& entry : fs::recursive_directory_iterator(final_dir)) {
            if (entry.is_regular_file()) files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            record.outputs[fs::relative(f, out_root).generic_string()] =
                file_digest(f.string());
        }
        manifest.stages.push_back(std::move(record));
    }

    {
        std::ofstream t(out_root / "timings.tsv");
        t << "stage\twall_ms\n";
        for (const auto& [name, ms] : timings) t << name << '\t' << ms << '\n';
    }
    write_manifest_json(manifest, (out_root / "manifest.json").string());
    return manifest;
}

void write_manifest_json(const RunManifest& m, const std::string& path) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : m.stages) {
        stages.push_back({{"name", s.name},
                          {"inputs", s.inputs},
                          {"outputs", s.outputs}});
    }
    nlohmann::json j{{"tool_version", m.tool_version},
                     {"config_digest", m.config_digest},
                     {"stages", stages}};
    if (m.seed_override) j["seed_override"] = *m.seed_override;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << '\n';
}

}  // namespace epi::pipeline
