#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cgaug/classifier.hpp"
#include "cgaug/corpus.hpp"
#include "cgaug/labelgen.hpp"
#include "cgaug/ldvae.hpp"
#include "cgaug/lspt.hpp"
#include "cgaug/metrics.hpp"
#include "cgaug/qc.hpp"
#include "cgaug/splits.hpp"

namespace cgaug {

struct PipelineError : std::runtime_error {
    std::string stage;
    PipelineError(std::string stage_, const std::string& msg)
        : std::runtime_error("stage " + stage_ + ": " + msg), stage(std::move(stage_)) {}
};

// ----------------------------- configuration -----------------------------

// Flat key = value text with [section] headers; every key has a documented
// default (see write_config_reference).
struct ExperimentConfig {
    struct Data {
        std::string source = "synth";  // synth | jsonl
        std::string jsonl_path;
        std::string prompt = "a tweet can express the following emotions :";
        int max_text_len = 24;
    } data;

    struct Synth {
        int n_labels = 8;
        int phrases_per_label = 1;
        int filler_vocab_size = 12;
        int instances_per_composition = 18;
        int groups = 2;        // labels are split into co-occurrence groups
        int within_pairs = 4;  // within-group pairs included
        int cross_pairs = 6;   // pairs bridging two groups
        int triples = 8;       // within-group triples
        // singleton compositions are kept rare so the classifier must read
        // labels out of co-occurrence contexts
        double singleton_weight = 0.1;
        std::uint64_t seed = 1;
    } synth;

    struct Split {
        std::size_t m = 5;
        std::size_t n_support = 20;
        bool stratified_support = false;
        std::uint64_t seed = 2;
    } split;

    struct Lm {
        int hidden = 32;
        int heads = 4;
        int blocks = 2;
        int ffn_mult = 2;
        int epochs = 30;
        double lr = 3e-3;
        std::uint64_t seed = 3;
    } lm;

    struct LabelGenCfg {
        int epochs = 150;
        double lr = 3e-3;
        double temperature = 1.0;
        std::uint64_t seed = 4;
    } labelgen;

    struct Generator {
        std::string kind = "ldvae";  // lspt | ldvae | concat
        int prefix_len = 5;
        int bank_width = 64;  // lspt bank entry width
        int latent = 16;      // ldvae latent width
        int enc_hidden = 24;  // ldvae posterior GRU width
        int embed_width = 16; // ldvae frozen embedder width
        int clusters = 10;    // ldvae k-means k
        double lambda_c = 1.0;
        double lambda_y = 1.0;
        double beta_max = 1.0;
        double warmup_frac = 0.2;
        int epochs = 25;
        double lr = 5e-3;
        double temperature = 1.0;
        int max_len = 14;
        std::uint64_t seed = 5;
    } generator;

    struct Qc {
        std::size_t n_aug = 100;
        double overgen_factor = 2.0;
        bool stratified = true;
        int filter_epochs = 12;
        double filter_lr = 3e-3;
        std::uint64_t seed = 6;
    } qc;

    struct Classifier {
        int embed = 24;
        int hidden = 32;
        int mlp_hidden = 32;
        int epochs = 12;
        double lr = 3e-3;
        double holdout_frac = 0.1;
        std::uint64_t seed = 7;
    } classifier;

    struct Pipeline {
        std::string name = "run";
        std::uint64_t master_seed = 0;  // nonzero: derives every stage seed
    } pipeline;

    void validate() const;
    // master seed (when nonzero) overrides each stage seed deterministically
    void apply_master_seed();
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
// resolved configuration as sorted key = value lines; hashed into manifests
std::string config_canonical(const ExperimentConfig& cfg);
void write_config_reference(const std::string& path);

// ----------------------------- stages -----------------------------

SynthSpec make_synth_spec(const ExperimentConfig& cfg);
Dataset stage_data(const ExperimentConfig& cfg);
CgSplit stage_split(const ExperimentConfig& cfg, const Dataset& data);

// train + support; `labeled_only` drops zero-label instances (generator
// training); texts are truncated to max_text_len
Dataset dcg_dataset(const ExperimentConfig& cfg, const CgSplit& split, bool labeled_only);

CausalLm stage_lm_body(const ExperimentConfig& cfg, const Dataset& dcg);
LabelGen stage_labelgen(const ExperimentConfig& cfg, const CgSplit& split,
                        const CausalLm& body);

struct GeneratorBundle {
    std::string kind;
    std::optional<LsptModel> lspt;
    std::optional<LdvaeModel> ldvae;
    std::optional<ContentIndex> index;
};

GeneratorBundle stage_generator(const ExperimentConfig& cfg, const Dataset& dcg,
                                const CausalLm& body);
std::vector<Candidate> stage_generate(const ExperimentConfig& cfg,
                                      const GeneratorBundle& gen, const LabelGen& labelgen,
                                      const Dataset& dcg);
MltcModel stage_filter_train(const ExperimentConfig& cfg, const Dataset& dcg_all);
std::vector<Candidate> stage_filter(const ExperimentConfig& cfg,
                                    std::vector<Candidate> pool, const MltcModel& filter);
MltcModel stage_classifier(const ExperimentConfig& cfg, const Dataset& train_data);

Dataset candidates_to_dataset(const std::vector<Candidate>& kept, const Dataset& like);
Dataset concat_instances(const Dataset& a, const Dataset& b);
void save_candidates_jsonl(const std::vector<Candidate>& cs, const Dataset& like,
                           const std::string& path);

// ----------------------------- orchestration -----------------------------

struct RunResult {
    MetricReport control;    // trained on train + support only
    MetricReport augmented;  // trained on train + support + filtered aug
    std::string manifest_path;
};

// Runs every stage, writes each intermediate artifact plus a manifest with
// hashes and seeds, and executes the no-augmentation control alongside.
RunResult run_pipeline(const ExperimentConfig& cfg, const std::string& out_dir);

struct AblationRow {
    std::size_t support_size = 0;
    MetricReport metrics;
};

// Reruns only the stage-relevant portion for each support size, holding the
// other stages at the configured default and keeping the QC filter and test
// set fixed. stage: labelgen | generator | classifier
std::vector<AblationRow> ablate_support(const ExperimentConfig& cfg,
                                        const std::vector<std::size_t>& sizes,
                                        const std::string& stage,
                                        const std::string& out_dir);

std::string ablation_tsv(const std::vector<AblationRow>& rows);

// One TSV row per manifest (augmented-run metrics), sorted by run name.
std::string report_tsv(const std::vector<std::string>& manifest_paths);

std::uint64_t file_fnv1a(const std::string& path);

}  // namespace cgaug
