// epikit command-line interface.
//
// Exit codes: 0 success, 1 domain/runtime error, 2 usage error.
// Diagnostics go to stderr; data goes to files or stdout.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epi/generator.hpp"
#include "epi/libfilter.hpp"
#include "epi/pipeline.hpp"
#include "epi/seqdata.hpp"
#include "epi/seqstats.hpp"
#include "epi/tinylm.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace epi;

namespace {

// FASTA when the file starts with '>', otherwise a TSV with a header.
std::vector<std::string> read_sequences(const std::string& path) {
    std::ifstream probe(path);
    if (!probe) throw std::runtime_error("cannot open " + path);
    if (probe.peek() == '>') return seqdata::read_fasta(path);
    const auto d = seqdata::read_dataset_tsv(path);
    std::vector<std::string> seqs;
    seqs.reserve(d.records.size());
    for (const auto& rec : d.records) seqs.push_back(rec.sequence);
    return seqs;
}

std::optional<pipeline::PipelineConfig> maybe_config(const std::string& path) {
    if (path.empty()) return std::nullopt;
    return pipeline::load_config(path);
}

libfilter::Pooling pooling_from(const std::string& name) {
    const auto p = libfilter::parse_pooling(name);
    if (!p) throw CLI::ValidationError("--pooling", "unknown pooling mode '" + name + "'");
    return *p;
}

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

struct IngestArgs {
    std::string in, out_dir, config;
    std::string delimiter = "auto";
    std::string host, structure;
    std::vector<std::string> assays, organisms;
    std::size_t max_len = 0;
    bool no_dedup = false;
    std::vector<double> split;
    std::uint64_t seed = 0;
    std::string fasta_out;
};

void run_ingest(const IngestArgs& a, const CLI::App* cmd) {
    const auto cfg = maybe_config(a.config);
    seqdata::FilterSpec spec;
    bool dedup = !a.no_dedup;
    std::array<double, 3> ratios{};
    bool do_split = false;
    if (cfg) {
        spec = cfg->filter;
        dedup = cfg->dedup;
        ratios = cfg->split_ratios;
        do_split = true;
    }
    if (!a.host.empty()) spec.host = a.host;
    if (!a.assays.empty()) {
        std::set<seqdata::Assay> set;
        for (const auto& name : a.assays) {
            const auto v = seqdata::parse_assay(name);
            if (!v) throw CLI::ValidationError("--assay", "unknown assay '" + name + "'");
            set.insert(*v);
        }
        spec.assays = set;
    }
    if (!a.structure.empty()) {
        const auto v = seqdata::parse_structure(a.structure);
        if (!v) throw CLI::ValidationError("--structure", "unknown structure");
        spec.structure = v;
    }
    if (!a.organisms.empty()) {
        std::set<seqdata::Organism> set;
        for (const auto& name : a.organisms) {
            const auto v = seqdata::parse_organism(name);
            if (!v) throw CLI::ValidationError("--organism", "unknown organism '" + name + "'");
            set.insert(*v);
        }
        spec.organisms = set;
    }
    if (cmd->count("--max-len")) spec.max_len = a.max_len;
    if (cmd->count("--no-dedup")) dedup = false;
    if (!a.split.empty()) {
        if (a.split.size() != 3) {
            throw CLI::ValidationError("--split", "expected 3 ratios");
        }
        ratios = {a.split[0], a.split[1], a.split[2]};
        do_split = true;
    }

    std::optional<char> delim;
    if (a.delimiter == "tab") delim = '\t';
    else if (a.delimiter == "comma") delim = ',';
    else if (a.delimiter != "auto") {
        throw CLI::ValidationError("--delimiter", "use auto, tab, or comma");
    }

    const auto parsed = seqdata::parse_epitope_table(a.in, seqdata::ColumnMap{}, delim);
    std::cerr << "parsed " << parsed.dataset.size() << " records, "
              << parsed.rejects.size() << " rejected rows\n";

    fs::create_directories(a.out_dir);
    {
        std::ofstream rej(fs::path(a.out_dir) / "rejects.tsv");
        rej << "row\treason\n";
        for (const auto& r : parsed.rejects) rej << r.row << '\t' << r.reason << '\n';
    }
    auto d = seqdata::filter_dataset(parsed.dataset, spec);
    if (dedup) d = seqdata::deduplicate(d);
    seqdata::write_dataset_tsv(d, (fs::path(a.out_dir) / "dataset.tsv").string());
    seqdata::write_provenance_json(d, (fs::path(a.out_dir) / "provenance.json").string());
    if (!a.fasta_out.empty()) {
        std::vector<std::string> seqs;
        for (const auto& rec : d.records) seqs.push_back(rec.sequence);
        seqdata::write_fasta(seqs, a.fasta_out);
    }
    if (do_split) {
        const std::uint64_t global_seed =
            cmd->count("--seed") || !cfg ? a.seed : cfg->seed;
        const auto parts = seqdata::split(d, ratios, derive_seed(global_seed, "ingest"));
        seqdata::write_dataset_tsv(parts.train, (fs::path(a.out_dir) / "train.tsv").string());
        seqdata::write_dataset_tsv(parts.val, (fs::path(a.out_dir) / "val.tsv").string());
        seqdata::write_dataset_tsv(parts.test, (fs::path(a.out_dir) / "test.tsv").string());
    }
    std::cerr << "kept " << d.size() << " records -> " << a.out_dir << '\n';
}

struct TrainArgs {
    std::string train_path, val_path, out = "model.eplm", report, config;
    tinylm::ModelConfig model;
    tinylm::TrainConfig tc;
    std::uint64_t seed = 0;
};

void run_train(const TrainArgs& a, const CLI::App* cmd) {
    tinylm::ModelConfig mc = a.model;
    tinylm::TrainConfig tc = a.tc;
    std::uint64_t global_seed = a.seed;
    if (const auto cfg = maybe_config(a.config)) {
        auto effective = [&](const char* flag) { return cmd->count(flag) > 0; };
        if (!effective("--layers")) mc.n_layers = cfg->model.n_layers;
        if (!effective("--d-model")) mc.d_model = cfg->model.d_model;
        if (!effective("--heads")) mc.n_heads = cfg->model.n_heads;
        if (!effective("--d-ff")) mc.d_ff = cfg->model.d_ff;
        if (!effective("--max-context")) mc.max_context = cfg->model.max_context;
        if (!effective("--lr")) tc.learning_rate = cfg->train.learning_rate;
        if (!effective("--epochs")) tc.epochs = cfg->train.epochs;
        if (!effective("--weight-decay")) tc.weight_decay = cfg->train.weight_decay;
        if (!effective("--batch-size")) tc.batch_size = cfg->train.batch_size;
        if (!effective("--seed")) global_seed = cfg->seed;
    }
    mc.seed = derive_seed(global_seed, "model");
    tc.seed = derive_seed(global_seed, "train");

    const auto train_set = seqdata::read_dataset_tsv(a.train_path);
    seqdata::Dataset val_set;
    if (!a.val_path.empty()) val_set = seqdata::read_dataset_tsv(a.val_path);

    const auto model = tinylm::init_model(mc);
    std::cerr << "training on " << train_set.size() << " sequences ("
              << tinylm::parameter_count(mc) << " parameters)\n";
    const auto outcome = tinylm::train(model, train_set, val_set, tc);
    tinylm::save_checkpoint(outcome.model, a.out);
    std::cerr << "best epoch " << outcome.report.best_epoch << ", saved " << a.out << '\n';
    if (!a.report.empty()) {
        tinylm::write_train_report_json(outcome.report, a.report);
        std::string tsv = a.report;
        if (tsv.ends_with(".json")) tsv.resize(tsv.size() - 5);
        tinylm::write_train_report_tsv(outcome.report, tsv + ".tsv");
    }
}

struct GenerateArgs {
    std::string model_path, out, tsv, config;
    std::size_t n = 100;
    generator::SamplingParams params;
    std::size_t max_attempts = 0;
    std::uint64_t seed = 0;
};

void run_generate(const GenerateArgs& a, const CLI::App* cmd) {
    auto params = a.params;
    std::size_t n = a.n;
    std::size_t max_attempts = a.max_attempts;
    std::uint64_t global_seed = a.seed;
    if (const auto cfg = maybe_config(a.config)) {
        if (!cmd->count("--temperature")) params.temperature = cfg->sampling.temperature;
        if (!cmd->count("--repetition-penalty")) {
            params.repetition_penalty = cfg->sampling.repetition_penalty;
        }
        if (!cmd->count("--max-len")) params.max_len = cfg->sampling.max_len;
        if (!cmd->count("--n")) n = cfg->n_sequences;
        if (!cmd->count("--max-attempts")) max_attempts = cfg->max_attempts;
        if (!cmd->count("--seed")) global_seed = cfg->seed;
    }
    params.seed = derive_seed(global_seed, "generate");
    if (max_attempts == 0) max_attempts = 20 * n;

    const auto model = tinylm::load_checkpoint(a.model_path);
    const auto lib = generator::generate_library(model, params, n, max_attempts);
    if (!lib.complete) {
        std::cerr << "warning: only " << lib.sequences.size() << " of " << n
                  << " unique sequences after " << lib.attempts << " attempts\n";
    }
    if (a.out.empty()) {
        char id[16];
        for (std::size_t i = 0; i < lib.sequences.size(); ++i) {
            std::snprintf(id, sizeof(id), "%06zu", i + 1);
            std::cout << ">gen_" << id << '\n' << lib.sequences[i] << '\n';
        }
    } else {
        seqdata::write_fasta(lib.sequences, a.out, "gen");
        std::cerr << "wrote " << lib.sequences.size() << " sequences to " << a.out << '\n';
    }
    if (!a.tsv.empty()) generator::write_library_tsv(model, lib.sequences, a.tsv);
}

struct StatsArgs {
    std::string in, out_dir = "stats", background = "uniform", config;
    std::size_t min_support = 2;
    std::uint64_t seed = 0;
};

void run_stats(const StatsArgs& a, const CLI::App* cmd) {
    std::string background = a.background;
    std::size_t min_support = a.min_support;
    if (const auto cfg = maybe_config(a.config)) {
        if (!cmd->count("--background")) background = cfg->background;
        if (!cmd->count("--min-support")) min_support = cfg->min_support;
    }
    const auto seqs = read_sequences(a.in);
    seqstats::write_stats_bundle(seqs, pipeline::load_background(background),
                                 a.out_dir, min_support);
    std::cerr << "stats bundle for " << seqs.size() << " sequences -> " << a.out_dir
              << '\n';
}

struct ClassifierArgs {
    std::string model_path, data, out = "classifier.epcl", config;
    std::string pooling = "sum";
    libfilter::EnsembleConfig ens;
    double rightmost_weight = 2.0;
    std::string base_learner = "boosted_stumps";
    std::uint64_t seed = 0;
};

void run_train_classifier(const ClassifierArgs& a, const CLI::App* cmd) {
    auto ens = a.ens;
    auto pooling = a.pooling;
    double w = a.rightmost_weight;
    if (const auto cfg = maybe_config(a.config)) {
        if (!cmd->count("--members")) ens.n_members = cfg->ensemble.n_members;
        if (!cmd->count("--slice-size")) ens.slice_size = cfg->ensemble.slice_size;
        if (!cmd->count("--bias")) ens.bias = cfg->ensemble.bias;
        if (!cmd->count("--rounds")) ens.rounds = cfg->ensemble.rounds;
        if (!cmd->count("--shrinkage")) ens.shrinkage = cfg->ensemble.shrinkage;
        if (!cmd->count("--max-depth")) ens.max_depth = cfg->ensemble.max_depth;
        if (!cmd->count("--base-learner")) {
            ens.base_learner = cfg->ensemble.base_learner;
        }
        if (!cmd->count("--pooling")) pooling = libfilter::to_string(cfg->pooling);
        if (!cmd->count("--rightmost-weight")) w = cfg->rightmost_weight;
    }
    if (cmd->count("--base-learner")) {
        if (a.base_learner == "boosted_stumps") {
            ens.base_learner = libfilter::BaseLearnerKind::boosted_stumps;
        } else if (a.base_learner == "logistic") {
            ens.base_learner = libfilter::BaseLearnerKind::logistic;
        } else {
            throw CLI::ValidationError("--base-learner",
                                       "use boosted_stumps or logistic");
        }
    }
    {
        std::uint64_t global_seed = a.seed;
        if (!cmd->count("--seed")) {
            if (const auto cfg = maybe_config(a.config)) global_seed = cfg->seed;
        }
        ens.seed = derive_seed(global_seed, "classifier");
    }

    const auto model = tinylm::load_checkpoint(a.model_path);
    const auto data = seqdata::read_dataset_tsv(a.data);
    const auto emb =
        libfilter::embed_labeled_dataset(model, data, pooling_from(pooling), w);
    std::cerr << "training ensemble on " << emb.y.size() << " labeled embeddings\n";
    const auto clf = libfilter::train_ensemble(emb.x, emb.y, ens);
    libfilter::save_classifier(clf, a.out);
    std::cerr << "saved " << a.out << '\n';
}

struct EvaluateArgs {
    std::string model_path, classifier, data, out, config;
    std::string pooling = "sum";
    double rightmost_weight = 2.0;
    double bias = -1.0;  // <0 means classifier default
    std::uint64_t seed = 0;
};

void run_evaluate(const EvaluateArgs& a, const CLI::App* cmd) {
    auto pooling = a.pooling;
    double w = a.rightmost_weight;
    if (const auto cfg = maybe_config(a.config)) {
        if (!cmd->count("--pooling")) pooling = libfilter::to_string(cfg->pooling);
        if (!cmd->count("--rightmost-weight")) w = cfg->rightmost_weight;
    }
    const auto model = tinylm::load_checkpoint(a.model_path);
    const auto clf = libfilter::load_classifier(a.classifier);
    const auto data = seqdata::read_dataset_tsv(a.data);
    const auto emb =
        libfilter::embed_labeled_dataset(model, data, pooling_from(pooling), w);
    std::optional<double> bias;
    if (cmd->count("--bias")) {
        if (a.bias < 1.0) throw CLI::ValidationError("--bias", "bias must be >= 1");
        bias = a.bias;
    }
    const auto metrics = libfilter::evaluate(clf, emb.x, emb.y, bias);
    if (a.out.empty()) {
        libfilter::write_metrics_json(metrics, "/dev/stdout");
    } else {
        libfilter::write_metrics_json(metrics, a.out);
        std::cerr << "wrote " << a.out << '\n';
    }
}

struct FilterArgs {
    std::string model_path, classifier, in, out_dir = "filtered", config;
    std::string pooling = "sum";
    double rightmost_weight = 2.0;
    std::uint64_t seed = 0;
};

void run_filter(const FilterArgs& a, const CLI::App* cmd) {
    auto pooling = a.pooling;
    double w = a.rightmost_weight;
    if (const auto cfg = maybe_config(a.config)) {
        if (!cmd->count("--pooling")) pooling = libfilter::to_string(cfg->pooling);
        if (!cmd->count("--rightmost-weight")) w = cfg->rightmost_weight;
    }
    const auto model = tinylm::load_checkpoint(a.model_path);
    const auto clf = libfilter::load_classifier(a.classifier);

    // A labeled TSV switches on simulation mode (composition + empirical LR+).
    std::vector<std::string> library;
    std::vector<int> truth;
    bool has_truth = false;
    {
        std::ifstream probe(a.in);
        if (!probe) throw std::runtime_error("cannot open " + a.in);
        if (probe.peek() == '>') {
            library = seqdata::read_fasta(a.in);
        } else {
            const auto d = seqdata::read_dataset_tsv(a.in);
            for (const auto& rec : d.records) {
                library.push_back(rec.sequence);
                truth.push_back(rec.label == seqdata::Label::positive ? 1 : 0);
                if (rec.label != seqdata::Label::unlabeled) has_truth = true;
            }
        }
    }
    const auto outcome = libfilter::filter_library(
        clf, model, pooling_from(pooling), library, has_truth ? &truth : nullptr, w);
    if (outcome.all_rejected) {
        std::cerr << "warning: classifier rejected every sequence\n";
    }
    fs::create_directories(a.out_dir);
    std::vector<std::string> kept;
    for (const auto i : outcome.kept) kept.push_back(library[i]);
    seqdata::write_fasta(kept, (fs::path(a.out_dir) / "filtered.fasta").string(), "gen");
    generator::write_library_tsv(model, kept,
                                 (fs::path(a.out_dir) / "filtered.tsv").string());
    libfilter::write_composition_json(outcome, library.size(),
                                      (fs::path(a.out_dir) / "composition.json").string());
    std::cerr << "kept " << kept.size() << " of " << library.size() << " -> "
              << a.out_dir << '\n';
}

struct ComparePplArgs {
    std::string model_path, a_path, b_path, out, config;
    double alpha = 0.05;
    std::uint64_t seed = 0;
};

void run_compare_ppl(const ComparePplArgs& a) {
    const auto model = tinylm::load_checkpoint(a.model_path);
    const auto lib_a = read_sequences(a.a_path);
    const auto lib_b = read_sequences(a.b_path);
    const auto cmp = generator::compare_perplexities(model, lib_a, lib_b, a.alpha);
    generator::write_comparison_json(cmp, a.out.empty() ? "/dev/stdout" : a.out);
    if (!a.out.empty()) std::cerr << "wrote " << a.out << '\n';
}

struct PcaArgs {
    std::string in, model_path, out_dir = "pca", config;
    std::string pooling = "sum";
    int k = 2;
    double rightmost_weight = 2.0;
    std::uint64_t seed = 0;
};

void run_pca(const PcaArgs& a) {
    Eigen::MatrixXd data;
    if (!a.model_path.empty()) {
        const auto model = tinylm::load_checkpoint(a.model_path);
        const auto seqs = read_sequences(a.in);
        data.resize(static_cast<Eigen::Index>(seqs.size()), model.config().d_model);
        for (std::size_t i = 0; i < seqs.size(); ++i) {
            data.row(static_cast<Eigen::Index>(i)) =
                libfilter::embed(model, seqs[i], pooling_from(a.pooling),
                                 a.rightmost_weight)
                    .values.transpose();
        }
    } else {
        // plain numeric TSV, no header
        std::ifstream in(a.in);
        if (!in) throw std::runtime_error("cannot open " + a.in);
        std::vector<std::vector<double>> rows;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream is(line);
            std::vector<double> row;
            double v;
            while (is >> v) row.push_back(v);
            if (!rows.empty() && row.size() != rows.front().size()) {
                throw std::runtime_error("ragged matrix in " + a.in);
            }
            rows.push_back(std::move(row));
        }
        if (rows.empty()) throw std::runtime_error("empty matrix file " + a.in);
        data.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < rows[i].size(); ++j) {
                data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            }
        }
    }
    const auto result = seqstats::pca(data, a.k);
    fs::create_directories(a.out_dir);
    write_matrix_tsv(result.components, (fs::path(a.out_dir) / "components.tsv").string());
    write_matrix_tsv(result.projection, (fs::path(a.out_dir) / "projection.tsv").string());
    {
        std::ofstream out(fs::path(a.out_dir) / "explained_variance.tsv");
        out.precision(12);
        for (Eigen::Index i = 0; i < result.explained_variance.size(); ++i) {
            out << result.explained_variance(i) << '\n';
        }
    }
    std::cerr << "pca (" << data.rows() << "x" << data.cols() << ", k=" << a.k
              << ") -> " << a.out_dir << '\n';
}

struct RunArgs {
    std::string config, out;
    std::vector<std::string> stages;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void run_run(const RunArgs& a) {
    const auto manifest = pipeline::run(
        a.config, a.stages, a.out,
        a.seed_set ? std::optional<std::uint64_t>(a.seed) : std::nullopt);
    std::cerr << "completed " << manifest.stages.size() << " stage(s)\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"epikit: generate, characterize, and filter epitope-like sequence libraries"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(pipeline::kToolVersion));

    IngestArgs ingest;
    auto* cmd_ingest = app.add_subcommand("ingest", "parse, filter, dedup, and split an epitope table");
    cmd_ingest->add_option("--in", ingest.in, "delimited table with header")->required();
    cmd_ingest->add_option("--out", ingest.out_dir, "output directory")->required();
    cmd_ingest->add_option("--config", ingest.config, "pipeline config supplying defaults");
    cmd_ingest->add_option("--delimiter", ingest.delimiter, "auto|tab|comma");
    cmd_ingest->add_option("--host", ingest.host, "keep records with this host tag");
    cmd_ingest->add_option("--assay", ingest.assays, "keep these assays (repeatable)");
    cmd_ingest->add_option("--structure", ingest.structure, "keep this structure");
    cmd_ingest->add_option("--organism", ingest.organisms, "keep these organisms (repeatable)");
    cmd_ingest->add_option("--max-len", ingest.max_len, "maximum residue count");
    cmd_ingest->add_flag("--no-dedup", ingest.no_dedup, "keep duplicate sequences");
    cmd_ingest->add_option("--split", ingest.split, "train/val/test ratios")->expected(3);
    cmd_ingest->add_option("--seed", ingest.seed, "split shuffle seed");
    cmd_ingest->add_option("--fasta-out", ingest.fasta_out, "also write sequences as FASTA");
    cmd_ingest->callback([&] { run_ingest(ingest, cmd_ingest); });

    TrainArgs train;
    auto* cmd_train = app.add_subcommand("train", "train the causal LM from scratch");
    cmd_train->add_option("--train", train.train_path, "training dataset TSV")->required();
    cmd_train->add_option("--val", train.val_path, "validation dataset TSV");
    cmd_train->add_option("--out", train.out, "checkpoint path");
    cmd_train->add_option("--config", train.config, "pipeline config supplying defaults");
    cmd_train->add_option("--layers", train.model.n_layers, "transformer layers");
    cmd_train->add_option("--d-model", train.model.d_model, "embedding width");
    cmd_train->add_option("--heads", train.model.n_heads, "attention heads");
    cmd_train->add_option("--d-ff", train.model.d_ff, "feed-forward width");
    cmd_train->add_option("--max-context", train.model.max_context, "context length");
    cmd_train->add_option("--lr", train.tc.learning_rate, "learning rate");
    cmd_train->add_option("--epochs", train.tc.epochs, "epochs");
    cmd_train->add_option("--weight-decay", train.tc.weight_decay, "decoupled weight decay");
    cmd_train->add_option("--batch-size", train.tc.batch_size, "sequences per step");
    cmd_train->add_option("--seed", train.seed, "global seed");
    cmd_train->add_option("--report", train.report, "write the per-epoch loss report here");
    cmd_train->callback([&] { run_train(train, cmd_train); });

    GenerateArgs gen;
    auto* cmd_gen = app.add_subcommand("generate", "sample a library of unique sequences");
    cmd_gen->add_option("--model", gen.model_path, "checkpoint")->required();
    cmd_gen->add_option("--n", gen.n, "unique sequences to draw");
    cmd_gen->add_option("--temperature", gen.params.temperature, "softmax temperature");
    cmd_gen->add_option("--repetition-penalty", gen.params.repetition_penalty,
                        "penalty for re-emitting tokens");
    cmd_gen->add_option("--max-len", gen.params.max_len, "residue cap per sequence");
    cmd_gen->add_option("--max-attempts", gen.max_attempts, "draw budget (default 20n)");
    cmd_gen->add_option("--seed", gen.seed, "sampling seed");
    cmd_gen->add_option("--out", gen.out, "FASTA path (stdout when omitted)");
    cmd_gen->add_option("--tsv", gen.tsv, "also write sequence/length/perplexity TSV");
    cmd_gen->add_option("--config", gen.config, "pipeline config supplying defaults");
    cmd_gen->callback([&] { run_generate(gen, cmd_gen); });

    StatsArgs stats;
    auto* cmd_stats = app.add_subcommand("stats", "statistical report bundle for a sequence set");
    cmd_stats->add_option("--in", stats.in, "FASTA or dataset TSV")->required();
    cmd_stats->add_option("--out", stats.out_dir, "report directory");
    cmd_stats->add_option("--background", stats.background,
                          "'uniform' or a 20-entry frequency table file");
    cmd_stats->add_option("--min-support", stats.min_support,
                          "skip lengths with fewer sequences");
    cmd_stats->add_option("--config", stats.config, "pipeline config supplying defaults");
    cmd_stats->add_option("--seed", stats.seed, "accepted for uniformity; stats is deterministic");
    cmd_stats->callback([&] { run_stats(stats, cmd_stats); });

    ClassifierArgs clf;
    auto* cmd_clf = app.add_subcommand("train-classifier",
                                       "train the biased-voting ensemble on embeddings");
    cmd_clf->add_option("--model", clf.model_path, "LM checkpoint for embeddings")->required();
    cmd_clf->add_option("--data", clf.data, "labeled dataset TSV")->required();
    cmd_clf->add_option("--out", clf.out, "classifier file");
    cmd_clf->add_option("--pooling", clf.pooling, "rightmost|sum|weighted_sum");
    cmd_clf->add_option("--rightmost-weight", clf.rightmost_weight,
                        "weight of the last state in weighted_sum");
    cmd_clf->add_option("--members", clf.ens.n_members, "ensemble members");
    cmd_clf->add_option("--slice-size", clf.ens.slice_size, "features per member");
    cmd_clf->add_option("--bias", clf.ens.bias, "positive-vote weight (>= 1)");
    cmd_clf->add_option("--base-learner", clf.base_learner, "boosted_stumps|logistic");
    cmd_clf->add_option("--rounds", clf.ens.rounds, "boosting rounds");
    cmd_clf->add_option("--shrinkage", clf.ens.shrinkage, "boosting learning rate");
    cmd_clf->add_option("--max-depth", clf.ens.max_depth, "tree depth");
    cmd_clf->add_option("--seed", clf.seed, "slice/learner seed");
    cmd_clf->add_option("--config", clf.config, "pipeline config supplying defaults");
    cmd_clf->callback([&] { run_train_classifier(clf, cmd_clf); });

    EvaluateArgs eval;
    auto* cmd_eval = app.add_subcommand("evaluate", "metrics report on a labeled dataset");
    cmd_eval->add_option("--model", eval.model_path, "LM checkpoint")->required();
    cmd_eval->add_option("--classifier", eval.classifier, "classifier file")->required();
    cmd_eval->add_option("--data", eval.data, "labeled dataset TSV")->required();
    cmd_eval->add_option("--out", eval.out, "metrics JSON (stdout when omitted)");
    cmd_eval->add_option("--pooling", eval.pooling, "rightmost|sum|weighted_sum");
    cmd_eval->add_option("--rightmost-weight", eval.rightmost_weight, "weighted_sum weight");
    cmd_eval->add_option("--bias", eval.bias, "override the stored voting bias");
    cmd_eval->add_option("--config", eval.config, "pipeline config supplying defaults");
    cmd_eval->add_option("--seed", eval.seed, "accepted for uniformity; evaluation is deterministic");
    cmd_eval->callback([&] { run_evaluate(eval, cmd_eval); });

    FilterArgs filt;
    auto* cmd_filter = app.add_subcommand("filter", "keep sequences the classifier calls positive");
    cmd_filter->add_option("--model", filt.model_path, "LM checkpoint")->required();
    cmd_filter->add_option("--classifier", filt.classifier, "classifier file")->required();
    cmd_filter->add_option("--in", filt.in, "library FASTA, or labeled TSV for simulation mode")
        ->required();
    cmd_filter->add_option("--out", filt.out_dir, "output directory");
    cmd_filter->add_option("--pooling", filt.pooling, "rightmost|sum|weighted_sum");
    cmd_filter->add_option("--rightmost-weight", filt.rightmost_weight, "weighted_sum weight");
    cmd_filter->add_option("--config", filt.config, "pipeline config supplying defaults");
    cmd_filter->add_option("--seed", filt.seed, "accepted for uniformity; filtering is deterministic");
    cmd_filter->callback([&] { run_filter(filt, cmd_filter); });

    ComparePplArgs cmp;
    auto* cmd_cmp = app.add_subcommand("compare-ppl",
                                       "Mann-Whitney comparison of two libraries' perplexities");
    cmd_cmp->add_option("--model", cmp.model_path, "LM checkpoint")->required();
    cmd_cmp->add_option("--a", cmp.a_path, "first library")->required();
    cmd_cmp->add_option("--b", cmp.b_path, "second library")->required();
    cmd_cmp->add_option("--alpha", cmp.alpha, "significance level");
    cmd_cmp->add_option("--out", cmp.out, "JSON path (stdout when omitted)");
    cmd_cmp->add_option("--config", cmp.config, "accepted for uniformity; unused");
    cmd_cmp->add_option("--seed", cmp.seed, "accepted for uniformity; the test is deterministic");
    cmd_cmp->callback([&] { run_compare_ppl(cmp); });

    PcaArgs pca;
    auto* cmd_pca = app.add_subcommand("pca", "principal components of a matrix or of embeddings");
    cmd_pca->add_option("--in", pca.in, "numeric TSV, or sequences when --model is given")
        ->required();
    cmd_pca->add_option("--model", pca.model_path, "LM checkpoint for embedding input");
    cmd_pca->add_option("--pooling", pca.pooling, "rightmost|sum|weighted_sum");
    cmd_pca->add_option("--k", pca.k, "components to keep");
    cmd_pca->add_option("--out", pca.out_dir, "output directory");
    cmd_pca->add_option("--config", pca.config, "accepted for uniformity; unused");
    cmd_pca->add_option("--seed", pca.seed, "accepted for uniformity; pca is deterministic");
    cmd_pca->callback([&] { run_pca(pca); });

    RunArgs runargs;
    auto* cmd_run = app.add_subcommand("run", "run the configured pipeline end to end");
    cmd_run->add_option("--config", runargs.config, "pipeline config JSON")->required();
    cmd_run->add_option("--stages", runargs.stages,
                        "subset of: ingest train generate stats train-classifier evaluate filter")
        ->delimiter(',');
    cmd_run->add_option("--out", runargs.out, "override the configured output directory");
    cmd_run->add_option("--seed", runargs.seed,
                        "override the configured global seed (recorded in the manifest)");
    cmd_run->callback([&] {
        runargs.seed_set = cmd_run->count("--seed") > 0;
        run_run(runargs);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
