#include "cgaug/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace cgaug {

using nlohmann::json;

// ----------------------------- config schema -----------------------------

namespace {

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        return std::stoull(v);
    } catch (...) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

int to_int(const std::string& key, const std::string& v) {
    try {
        return std::stoi(v);
    } catch (...) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (...) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

struct KeyBinding {
    const char* key;
    const char* desc;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

#define BIND_STR(key, field, desc)                                            \
    KeyBinding {                                                              \
        key, desc, [](ExperimentConfig& c, const std::string& v) { c.field = v; },  \
            [](const ExperimentConfig& c) { return c.field; }                 \
    }
#define BIND_INT(key, field, desc)                                            \
    KeyBinding {                                                              \
        key, desc,                                                            \
            [](ExperimentConfig& c, const std::string& v) { c.field = to_int(key, v); },  \
            [](const ExperimentConfig& c) { return std::to_string(c.field); } \
    }
#define BIND_SIZE(key, field, desc)                                           \
    KeyBinding {                                                              \
        key, desc,                                                            \
            [](ExperimentConfig& c, const std::string& v) {                   \
                c.field = static_cast<std::size_t>(to_u64(key, v));           \
            },                                                                \
            [](const ExperimentConfig& c) { return std::to_string(c.field); } \
    }
#define BIND_U64(key, field, desc)                                            \
    KeyBinding {                                                              \
        key, desc,                                                            \
            [](ExperimentConfig& c, const std::string& v) { c.field = to_u64(key, v); },  \
            [](const ExperimentConfig& c) { return std::to_string(c.field); } \
    }
#define BIND_DBL(key, field, desc)                                            \
    KeyBinding {                                                              \
        key, desc,                                                            \
            [](ExperimentConfig& c, const std::string& v) { c.field = to_double(key, v); },  \
            [](const ExperimentConfig& c) { return fmt_double(c.field); }     \
    }
#define BIND_BOOL(key, field, desc)                                           \
    KeyBinding {                                                              \
        key, desc,                                                            \
            [](ExperimentConfig& c, const std::string& v) { c.field = to_bool(key, v); },  \
            [](const ExperimentConfig& c) { return c.field ? "true" : "false"; }  \
    }

const std::vector<KeyBinding>& schema() {
    static const std::vector<KeyBinding> bindings = {
        BIND_STR("data.source", data.source, "corpus source: synth | jsonl"),
        BIND_STR("data.jsonl_path", data.jsonl_path, "input JSONL path when source = jsonl"),
        BIND_STR("data.prompt", data.prompt,
                 "prompt prepended to label sequences during training and inference"),
        BIND_INT("data.max_text_len", data.max_text_len,
                 "training texts are truncated to this many tokens"),

        BIND_INT("synth.n_labels", synth.n_labels, "number of atomic labels"),
        BIND_INT("synth.phrases_per_label", synth.phrases_per_label,
                 "signature phrases owned by each label"),
        BIND_INT("synth.filler_vocab_size", synth.filler_vocab_size,
                 "label-neutral filler token count"),
        BIND_INT("synth.instances_per_composition", synth.instances_per_composition,
                 "instances generated per composition"),
        BIND_INT("synth.groups", synth.groups,
                 "labels are split into this many co-occurrence groups"),
        BIND_INT("synth.within_pairs", synth.within_pairs,
                 "within-group pairs included in the composition list"),
        BIND_INT("synth.cross_pairs", synth.cross_pairs,
                 "cross-group pairs included in the composition list"),
        BIND_INT("synth.triples", synth.triples, "within-group triples included"),
        BIND_DBL("synth.singleton_weight", synth.singleton_weight,
                 "instance-count multiplier for singleton compositions"),
        BIND_U64("synth.seed", synth.seed, "synthetic corpus RNG seed"),

        BIND_SIZE("split.m", split.m, "held-out label compositions (M)"),
        BIND_SIZE("split.n_support", split.n_support, "support set size (N_s)"),
        BIND_BOOL("split.stratified_support", split.stratified_support,
                  "sample support round-robin per held-out composition"),
        BIND_U64("split.seed", split.seed, "split construction seed"),

        BIND_INT("lm.hidden", lm.hidden, "LM hidden width"),
        BIND_INT("lm.heads", lm.heads, "attention heads"),
        BIND_INT("lm.blocks", lm.blocks, "causal self-attention blocks (1-2)"),
        BIND_INT("lm.ffn_mult", lm.ffn_mult, "feed-forward width multiplier"),
        BIND_INT("lm.epochs", lm.epochs, "body training epochs on unconditioned text"),
        BIND_DBL("lm.lr", lm.lr, "body training learning rate"),
        BIND_U64("lm.seed", lm.seed, "body init and training seed"),

        BIND_INT("labelgen.epochs", labelgen.epochs, "label generator fine-tuning epochs"),
        BIND_DBL("labelgen.lr", labelgen.lr, "label generator learning rate"),
        BIND_DBL("labelgen.temperature", labelgen.temperature,
                 "composition sampling temperature"),
        BIND_U64("labelgen.seed", labelgen.seed, "label generator seed"),

        BIND_STR("generator.kind", generator.kind, "conditional generator: lspt | ldvae | concat"),
        BIND_INT("generator.prefix_len", generator.prefix_len, "prefix length L per label"),
        BIND_INT("generator.bank_width", generator.bank_width,
                 "lspt: width of each bank representation"),
        BIND_INT("generator.latent", generator.latent, "ldvae: latent width of z_c and z_y"),
        BIND_INT("generator.enc_hidden", generator.enc_hidden,
                 "ldvae: posterior GRU hidden width"),
        BIND_INT("generator.embed_width", generator.embed_width,
                 "ldvae: frozen embedder width"),
        BIND_INT("generator.clusters", generator.clusters, "ldvae: k-means cluster count"),
        BIND_DBL("generator.lambda_c", generator.lambda_c, "ldvae: content prior variance"),
        BIND_DBL("generator.lambda_y", generator.lambda_y, "ldvae: label prior variance"),
        BIND_DBL("generator.beta_max", generator.beta_max, "ldvae: final KL weight"),
        BIND_DBL("generator.warmup_frac", generator.warmup_frac,
                 "ldvae: fraction of steps for the linear KL warm-up"),
        BIND_INT("generator.epochs", generator.epochs, "generator training epochs"),
        BIND_DBL("generator.lr", generator.lr, "generator learning rate"),
        BIND_DBL("generator.temperature", generator.temperature, "text sampling temperature"),
        BIND_INT("generator.max_len", generator.max_len, "max generated text tokens"),
        BIND_U64("generator.seed", generator.seed, "generator init/training/sampling seed"),

        BIND_SIZE("qc.n_aug", qc.n_aug, "augmented instances kept after filtering (K)"),
        BIND_DBL("qc.overgen_factor", qc.overgen_factor,
                 "candidate pool size = n_aug * overgen_factor"),
        BIND_BOOL("qc.stratified", qc.stratified,
                  "keep top candidates per intended composition instead of globally"),
        BIND_INT("qc.filter_epochs", qc.filter_epochs, "filter classifier training epochs"),
        BIND_DBL("qc.filter_lr", qc.filter_lr, "filter classifier learning rate"),
        BIND_U64("qc.seed", qc.seed, "filter training seed"),

        BIND_INT("classifier.embed", classifier.embed, "classifier token embedding width"),
        BIND_INT("classifier.hidden", classifier.hidden, "classifier GRU width"),
        BIND_INT("classifier.mlp_hidden", classifier.mlp_hidden, "classifier head width"),
        BIND_INT("classifier.epochs", classifier.epochs, "classifier training epochs"),
        BIND_DBL("classifier.lr", classifier.lr, "classifier learning rate"),
        BIND_DBL("classifier.holdout_frac", classifier.holdout_frac,
                 "fraction of training data held out for the per-epoch loss report"),
        BIND_U64("classifier.seed", classifier.seed, "classifier init and training seed"),

        BIND_STR("pipeline.name", pipeline.name, "run name used in reports"),
        BIND_U64("pipeline.master_seed", pipeline.master_seed,
                 "nonzero: derive every stage seed from this value"),
    };
    return bindings;
}

#undef BIND_STR
#undef BIND_INT
#undef BIND_SIZE
#undef BIND_U64
#undef BIND_DBL
#undef BIND_BOOL

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void ExperimentConfig::validate() const {
    if (data.source != "synth" && data.source != "jsonl") {
        throw ConfigError("data.source must be synth or jsonl");
    }
    if (data.source == "jsonl" && data.jsonl_path.empty()) {
        throw ConfigError("data.jsonl_path required when data.source = jsonl");
    }
    if (generator.kind != "lspt" && generator.kind != "ldvae" && generator.kind != "concat") {
        throw ConfigError("generator.kind must be lspt, ldvae or concat");
    }
    if (split.m == 0) throw ConfigError("split.m must be >= 1");
    if (qc.n_aug == 0) throw ConfigError("qc.n_aug must be >= 1");
    if (qc.overgen_factor < 1.0) throw ConfigError("qc.overgen_factor must be >= 1");
    if (data.max_text_len < 1) throw ConfigError("data.max_text_len must be >= 1");
    if (synth.n_labels < 2) throw ConfigError("synth.n_labels must be >= 2");
    if (synth.groups < 1 || synth.groups > synth.n_labels) {
        throw ConfigError("synth.groups out of range");
    }
    if (generator.prefix_len < 1) throw ConfigError("generator.prefix_len must be >= 1");
    for (const auto& [name, epochs] :
         std::initializer_list<std::pair<const char*, int>>{
             {"lm.epochs", lm.epochs},
             {"labelgen.epochs", labelgen.epochs},
             {"generator.epochs", generator.epochs},
             {"qc.filter_epochs", qc.filter_epochs},
             {"classifier.epochs", classifier.epochs}}) {
        if (epochs < 1) throw ConfigError(std::string(name) + " must be >= 1");
    }
}

void ExperimentConfig::apply_master_seed() {
    if (pipeline.master_seed == 0) return;
    const std::uint64_t m = pipeline.master_seed;
    synth.seed = derive_seed(m, fnv1a64("synth"));
    split.seed = derive_seed(m, fnv1a64("split"));
    lm.seed = derive_seed(m, fnv1a64("lm"));
    labelgen.seed = derive_seed(m, fnv1a64("labelgen"));
    generator.seed = derive_seed(m, fnv1a64("generator"));
    qc.seed = derive_seed(m, fnv1a64("qc"));
    classifier.seed = derive_seed(m, fnv1a64("classifier"));
}

ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream is(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value, got '" + t + "'");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        std::string full = section.empty() ? key : section + "." + key;
        bool found = false;
        for (const auto& b : schema()) {
            if (full == b.key) {
                b.set(cfg, value);
                found = true;
                break;
            }
        }
        if (!found) {
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" +
                              full + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

std::string config_canonical(const ExperimentConfig& cfg) {
    std::vector<std::string> lines;
    for (const auto& b : schema()) lines.push_back(std::string(b.key) + " = " + b.get(cfg));
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) {
        out += l;
        out += "\n";
    }
    return out;
}

void write_config_reference(const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    ExperimentConfig defaults;
    f << "Configuration keys (flat key = value text with [section] headers)\n";
    f << "==================================================================\n\n";
    for (const auto& b : schema()) {
        f << b.key << " (default: " << b.get(defaults) << ")\n    " << b.desc << "\n\n";
    }
}

// ----------------------------- synth spec -----------------------------

SynthSpec make_synth_spec(const ExperimentConfig& cfg) {
    SynthSpec spec;
    spec.n_labels = cfg.synth.n_labels;
    spec.phrases_per_label = cfg.synth.phrases_per_label;
    spec.filler_vocab_size = cfg.synth.filler_vocab_size;
    spec.instances_per_composition = cfg.synth.instances_per_composition;
    spec.seed = cfg.synth.seed;

    const int n = cfg.synth.n_labels;
    const int g = cfg.synth.groups;
    std::vector<std::vector<int>> groups(static_cast<std::size_t>(g));
    for (int l = 0; l < n; ++l) groups[static_cast<std::size_t>(l % g)].push_back(l);

    auto add = [&](LabelSet y, double w) {
        spec.composition_list.push_back(std::move(y));
        spec.composition_weights.push_back(w);
    };
    for (int l = 0; l < n; ++l) add(LabelSet({l}), cfg.synth.singleton_weight);
    // within-group pairs, round-robin over groups in lexicographic order
    {
        std::vector<std::vector<LabelSet>> pairs_per_group;
        for (const auto& grp : groups) {
            std::vector<LabelSet> p;
            for (std::size_t i = 0; i < grp.size(); ++i) {
                for (std::size_t j = i + 1; j < grp.size(); ++j) {
                    p.push_back(LabelSet({grp[i], grp[j]}));
                }
            }
            pairs_per_group.push_back(std::move(p));
        }
        int added_pairs = 0;
        for (std::size_t round = 0; added_pairs < cfg.synth.within_pairs; ++round) {
            bool any = false;
            for (const auto& p : pairs_per_group) {
                if (round < p.size()) {
                    any = true;
                    add(p[round], 1.0);
                    if (++added_pairs >= cfg.synth.within_pairs) break;
                }
            }
            if (!any) break;
        }
    }
    // cross-group pairs, spread over the lexicographic enumeration
    std::vector<LabelSet> cross;
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            if (a % g != b % g) cross.push_back(LabelSet({a, b}));
        }
    }
    const auto want = static_cast<std::size_t>(std::max(0, cfg.synth.cross_pairs));
    if (want > cross.size()) {
        throw ConfigError("synth.cross_pairs exceeds the " + std::to_string(cross.size()) +
                          " available cross-group pairs");
    }
    if (want > 0) {
        const std::size_t step = std::max<std::size_t>(1, cross.size() / want);
        std::size_t added_cross = 0;
        for (std::size_t i = 0; i < cross.size() && added_cross < want; i += step) {
            add(cross[i], 1.0);
            ++added_cross;
        }
    }
    // within-group triples, round-robin over groups in lexicographic order
    std::vector<std::vector<LabelSet>> triples_per_group;
    for (const auto& grp : groups) {
        std::vector<LabelSet> t;
        for (std::size_t i = 0; i < grp.size(); ++i) {
            for (std::size_t j = i + 1; j < grp.size(); ++j) {
                for (std::size_t k = j + 1; k < grp.size(); ++k) {
                    t.push_back(LabelSet({grp[i], grp[j], grp[k]}));
                }
            }
        }
        triples_per_group.push_back(std::move(t));
    }
    int added = 0;
    for (std::size_t round = 0; added < cfg.synth.triples; ++round) {
        bool any = false;
        for (const auto& t : triples_per_group) {
            if (round < t.size()) {
                any = true;
                add(t[round], 1.0);
                if (++added >= cfg.synth.triples) break;
            }
        }
        if (!any) break;
    }
    return spec;
}

// ----------------------------- stages -----------------------------

namespace {

std::vector<int> truncate_tokens(const std::vector<int>& tokens, int max_len) {
    if (static_cast<int>(tokens.size()) <= max_len) return tokens;
    return std::vector<int>(tokens.begin(), tokens.begin() + max_len);
}

}  // namespace

Dataset stage_data(const ExperimentConfig& cfg) {
    if (cfg.data.source == "synth") {
        return generate_synth(make_synth_spec(cfg), {cfg.data.prompt});
    }
    return load_jsonl(cfg.data.jsonl_path, {cfg.data.prompt});
}

CgSplit stage_split(const ExperimentConfig& cfg, const Dataset& data) {
    SplitOptions opts;
    opts.stratified_support = cfg.split.stratified_support;
    opts.extra_tokens = {cfg.data.prompt};
    return build_cg_split(data, cfg.split.m, cfg.split.n_support, cfg.split.seed, opts);
}

Dataset dcg_dataset(const ExperimentConfig& cfg, const CgSplit& split, bool labeled_only) {
    Dataset out;
    out.vocab = split.train.vocab;
    out.label_table = split.train.label_table;
    for (const Dataset* part : {&split.train, &split.support}) {
        for (const Instance& inst : part->instances) {
            if (labeled_only && inst.labels.empty()) continue;
            Instance copy;
            copy.tokens = truncate_tokens(inst.tokens, cfg.data.max_text_len);
            copy.labels = inst.labels;
            out.instances.push_back(std::move(copy));
        }
    }
    return out;
}

CausalLm stage_lm_body(const ExperimentConfig& cfg, const Dataset& dcg) {
    if (dcg.instances.empty()) throw std::invalid_argument("stage_lm_body: empty D_cg");
    std::size_t max_text = 1;
    for (const Instance& inst : dcg.instances) max_text = std::max(max_text, inst.tokens.size());
    std::size_t phrase_total = 0;
    for (const Label& l : dcg.label_table) {
        phrase_total += Vocab::split_words(l.phrase).size();
    }
    const std::size_t worst_label_seq = phrase_total + dcg.label_table.size() + 1;
    const std::size_t prompt_len = Vocab::split_words(cfg.data.prompt).size();
    const std::size_t need = std::max(max_text + worst_label_seq + 3,
                                      prompt_len + worst_label_seq + 3);

    LmConfig lm_cfg;
    lm_cfg.vocab = static_cast<int>(dcg.vocab.size());
    lm_cfg.hidden = cfg.lm.hidden;
    lm_cfg.heads = cfg.lm.heads;
    lm_cfg.blocks = cfg.lm.blocks;
    lm_cfg.ffn_mult = cfg.lm.ffn_mult;
    lm_cfg.max_pos = static_cast<int>(need) + 2;
    lm_cfg.max_prefix =
        cfg.generator.prefix_len * static_cast<int>(dcg.label_table.size());
    CausalLm lm(lm_cfg, cfg.lm.seed);

    // Brief next-token training with the serialized label phrases as leading
    // context, standing in for a pretrained LM's ability to condition on a
    // prompt. Only the text tokens carry loss; the body is frozen afterwards.
    LabelVocab lv = make_label_vocab(dcg.vocab, dcg.label_table, cfg.data.prompt);
    std::vector<LmSequence> seqs;
    seqs.reserve(dcg.instances.size());
    for (const Instance& inst : dcg.instances) {
        LmSequence q;
        q.tokens = serialize_composition(inst.labels, lv, /*with_prompt=*/false);
        q.tokens.back() = Vocab::kBos;  // text follows instead of the end token
        q.loss_from = q.tokens.size();
        q.tokens.insert(q.tokens.end(), inst.tokens.begin(), inst.tokens.end());
        q.tokens.push_back(Vocab::kEos);
        seqs.push_back(std::move(q));
    }
    LmTrainConfig tc;
    tc.epochs = cfg.lm.epochs;
    tc.lr = cfg.lm.lr;
    tc.seed = cfg.lm.seed;
    train_lm(lm, seqs, tc);
    return lm;
}

LabelGen stage_labelgen(const ExperimentConfig& cfg, const CgSplit& split,
                        const CausalLm& body) {
    LabelVocab lv =
        make_label_vocab(split.train.vocab, split.train.label_table, cfg.data.prompt);
    std::vector<LabelSet> support_comps;
    for (const Instance& inst : split.support.instances) {
        if (!inst.labels.empty()) support_comps.push_back(inst.labels);
    }
    if (support_comps.empty()) {
        log_info("labelgen: no support compositions; zero-shot masked sampling");
        return zero_shot_labelgen(body, lv);
    }
    LabelGenTrainConfig tc;
    tc.epochs = cfg.labelgen.epochs;
    tc.lr = cfg.labelgen.lr;
    tc.seed = cfg.labelgen.seed;
    return train_labelgen(support_comps, body, lv, tc);
}

GeneratorBundle stage_generator(const ExperimentConfig& cfg, const Dataset& dcg,
                                const CausalLm& body) {
    GeneratorBundle bundle;
    bundle.kind = cfg.generator.kind;
    LabelVocab lv = make_label_vocab(dcg.vocab, dcg.label_table, cfg.data.prompt);
    if (bundle.kind == "lspt") {
        LsptConfig lc;
        lc.prefix_len = cfg.generator.prefix_len;
        lc.bank_width = cfg.generator.bank_width;
        bundle.lspt = LsptModel(body, lv, dcg.label_table.size(), lc, cfg.generator.seed);
        GenTrainConfig tc;
        tc.epochs = cfg.generator.epochs;
        tc.lr = cfg.generator.lr;
        tc.seed = cfg.generator.seed;
        train_lspt(*bundle.lspt, dcg, tc);
    } else if (bundle.kind == "ldvae") {
        LdvaeConfig vc;
        vc.latent = cfg.generator.latent;
        vc.enc_hidden = cfg.generator.enc_hidden;
        vc.embed_width = cfg.generator.embed_width;
        vc.prefix_len = cfg.generator.prefix_len;
        vc.lambda_c = cfg.generator.lambda_c;
        vc.lambda_y = cfg.generator.lambda_y;
        vc.clusters = cfg.generator.clusters;
        vc.embedder_seed = derive_seed(cfg.generator.seed, fnv1a64("embedder"));
        bundle.ldvae =
            LdvaeModel(body, lv, dcg.vocab, dcg.label_table, vc, cfg.generator.seed);
        bundle.index = build_content_index(dcg, bundle.ldvae->embedder(), vc.clusters,
                                           derive_seed(cfg.generator.seed, fnv1a64("kmeans")));
        LdvaeTrainConfig tc;
        tc.epochs = cfg.generator.epochs;
        tc.lr = cfg.generator.lr;
        tc.beta_max = cfg.generator.beta_max;
        tc.warmup_frac = cfg.generator.warmup_frac;
        tc.seed = cfg.generator.seed;
        train_ldvae(*bundle.ldvae, dcg, *bundle.index, tc);
    }
    // concat needs no training
    return bundle;
}

std::vector<Candidate> stage_generate(const ExperimentConfig& cfg,
                                      const GeneratorBundle& gen, const LabelGen& labelgen,
                                      const Dataset& dcg) {
    const auto n_pool = static_cast<std::size_t>(
        std::llround(static_cast<double>(cfg.qc.n_aug) * cfg.qc.overgen_factor));
    CompositionSampleConfig csc;
    csc.temperature = cfg.labelgen.temperature;
    auto comps = sample_compositions(
        labelgen, n_pool, labelgen.fewshot_trained ? LabelGenMode::fewshot : LabelGenMode::zeroshot,
        derive_seed(cfg.labelgen.seed, fnv1a64("sample")), csc);

    GenerateConfig gc;
    gc.max_len = cfg.generator.max_len;
    gc.temperature = cfg.generator.temperature;
    auto generate_one = [&](const LabelSet& y, std::size_t i) -> std::vector<int> {
        for (int attempt = 0; attempt < 20; ++attempt) {
            Rng rng(derive_seed(cfg.generator.seed,
                                0x67656e00ull + i * 64 + static_cast<std::size_t>(attempt)));
            std::vector<int> tokens;
            if (gen.kind == "lspt") {
                tokens = generate_lspt(*gen.lspt, y, gc, rng);
            } else if (gen.kind == "ldvae") {
                tokens = generate_ldvae(*gen.ldvae, *gen.index, y, gc, rng);
            } else {
                return concat_generate(dcg, y, rng).tokens;
            }
            if (!tokens.empty()) return tokens;
        }
        return {Vocab::kUnk};  // never parses as any label; the filter drops it
    };
    return overgenerate([&](std::size_t i) { return comps[i]; }, generate_one, cfg.qc.n_aug,
                        cfg.qc.overgen_factor);
}

MltcModel stage_filter_train(const ExperimentConfig& cfg, const Dataset& dcg_all) {
    ClassifierConfig cc;
    cc.embed = cfg.classifier.embed;
    cc.hidden = cfg.classifier.hidden;
    cc.mlp_hidden = cfg.classifier.mlp_hidden;
    MltcModel filter(dcg_all.vocab.size(), dcg_all.label_table.size(), cc, cfg.qc.seed);
    ClfTrainConfig tc;
    tc.epochs = cfg.qc.filter_epochs;
    tc.lr = cfg.qc.filter_lr;
    tc.holdout_frac = 0.0;
    tc.seed = cfg.qc.seed;
    train_classifier(filter, dcg_all, tc);
    return filter;
}

std::vector<Candidate> stage_filter(const ExperimentConfig& cfg, std::vector<Candidate> pool,
                                    const MltcModel& filter) {
    return filter_topk(std::move(pool), filter, cfg.qc.n_aug, cfg.qc.stratified);
}

MltcModel stage_classifier(const ExperimentConfig& cfg, const Dataset& train_data) {
    ClassifierConfig cc;
    cc.embed = cfg.classifier.embed;
    cc.hidden = cfg.classifier.hidden;
    cc.mlp_hidden = cfg.classifier.mlp_hidden;
    MltcModel model(train_data.vocab.size(), train_data.label_table.size(), cc,
                    cfg.classifier.seed);
    ClfTrainConfig tc;
    tc.epochs = cfg.classifier.epochs;
    tc.lr = cfg.classifier.lr;
    tc.holdout_frac = cfg.classifier.holdout_frac;
    tc.seed = cfg.classifier.seed;
    train_classifier(model, train_data, tc);
    return model;
}

Dataset candidates_to_dataset(const std::vector<Candidate>& kept, const Dataset& like) {
    Dataset out;
    out.vocab = like.vocab;
    out.label_table = like.label_table;
    for (const Candidate& c : kept) {
        Instance inst;
        inst.tokens = c.tokens;
        inst.labels = c.intended;
        out.instances.push_back(std::move(inst));
    }
    return out;
}

Dataset concat_instances(const Dataset& a, const Dataset& b) {
    if (!(a.vocab == b.vocab)) {
        throw std::invalid_argument("concat_instances: vocabularies differ");
    }
    Dataset out = a;
    out.instances.insert(out.instances.end(), b.instances.begin(), b.instances.end());
    return out;
}

void save_candidates_jsonl(const std::vector<Candidate>& cs, const Dataset& like,
                           const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    for (const Candidate& c : cs) {
        json j;
        j["text"] = like.vocab.decode(c.tokens);
        json ls = json::array();
        for (int id : c.intended) ls.push_back(like.label_phrase(id));
        j["labels"] = ls;
        j["score"] = c.score;
        f << j.dump() << "\n";
    }
}

// ----------------------------- orchestration -----------------------------

std::uint64_t file_fnv1a(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        h = fnv1a64(buf, static_cast<std::size_t>(f.gcount()), h);
        if (!f) break;
    }
    return h;
}

namespace {

json metrics_json(const MetricReport& r) {
    json j;
    j["jaccard"] = r.jaccard;
    j["accuracy"] = r.accuracy;
    j["correctness"] = r.correctness;
    j["completeness"] = r.completeness;
    j["n"] = r.n_instances;
    return j;
}

template <class F>
auto run_stage(const std::string& name, F&& fn) {
    try {
        return fn();
    } catch (const PipelineError&) {
        throw;
    } catch (const std::exception& e) {
        throw PipelineError(name, e.what());
    }
}

}  // namespace

RunResult run_pipeline(const ExperimentConfig& cfg_in, const std::string& out_dir) {
    ExperimentConfig cfg = cfg_in;
    cfg.apply_master_seed();
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    auto path = [&](const std::string& name) { return out_dir + "/" + name; };

    {
        std::ofstream f(path("config_used.ini"));
        f << config_canonical(cfg);
    }
    write_config_reference(path("config_reference.txt"));

    Dataset data = run_stage("data", [&] { return stage_data(cfg); });
    save_jsonl(data, path("dataset.jsonl"));
    save_labels(data.label_table, path("labels.json"));

    CgSplit split = run_stage("split", [&] { return stage_split(cfg, data); });
    save_split(split, path("split"));
    {
        auto violations = verify_split(split);
        if (!violations.empty()) throw PipelineError("split", violations.front());
    }

    Dataset dcg_gen = dcg_dataset(cfg, split, /*labeled_only=*/true);
    Dataset dcg_all = dcg_dataset(cfg, split, /*labeled_only=*/false);

    CausalLm body = run_stage("lm", [&] { return stage_lm_body(cfg, dcg_gen); });
    body.save(path("lm"));

    LabelGen labelgen = run_stage("labelgen", [&] { return stage_labelgen(cfg, split, body); });
    labelgen.lm.save(path("labelgen"));

    GeneratorBundle gen =
        run_stage("generator", [&] { return stage_generator(cfg, dcg_gen, body); });
    if (gen.lspt) gen.lspt->save(path("gen_lspt"));
    if (gen.ldvae) gen.ldvae->save(path("gen_ldvae"));
    if (gen.index) save_content_index(*gen.index, path("content_index"));

    std::vector<Candidate> pool =
        run_stage("generate", [&] { return stage_generate(cfg, gen, labelgen, dcg_gen); });
    save_candidates_jsonl(pool, dcg_gen, path("candidates.jsonl"));
    {
        // sampled compositions, one JSON object per candidate
        std::ofstream f(path("compositions.jsonl"));
        for (const Candidate& c : pool) {
            json j;
            json ls = json::array();
            for (int id : c.intended) ls.push_back(dcg_gen.label_phrase(id));
            j["labels"] = ls;
            f << j.dump() << "\n";
        }
    }

    MltcModel filter = run_stage("filter", [&] { return stage_filter_train(cfg, dcg_all); });
    filter.save(path("filter"));
    std::vector<Candidate> kept =
        run_stage("filter", [&] { return stage_filter(cfg, pool, filter); });
    save_candidates_jsonl(kept, dcg_gen, path("aug.jsonl"));

    Dataset d_aug = candidates_to_dataset(kept, dcg_all);
    Dataset d_mltc = concat_instances(dcg_all, d_aug);

    MltcModel clf_control =
        run_stage("classifier", [&] { return stage_classifier(cfg, dcg_all); });
    clf_control.save(path("clf_control"));
    MltcModel clf_aug = run_stage("classifier", [&] { return stage_classifier(cfg, d_mltc); });
    clf_aug.save(path("clf_augmented"));

    RunResult result;
    result.control = run_stage("eval", [&] { return evaluate_model(clf_control, split.test); });
    result.augmented = run_stage("eval", [&] { return evaluate_model(clf_aug, split.test); });

    {
        std::ofstream f(path("report.tsv"));
        f << "run\t" << MetricReport::tsv_header() << "\n";
        f << cfg.pipeline.name << "-control\t" << result.control.tsv_row() << "\n";
        f << cfg.pipeline.name << "\t" << result.augmented.tsv_row() << "\n";
    }

    json manifest;
    manifest["name"] = cfg.pipeline.name;
    manifest["generator"] = cfg.generator.kind;
    manifest["config_hash"] = to_hex(fnv1a64(config_canonical(cfg)));
    manifest["seeds"] = {{"synth", cfg.synth.seed},       {"split", cfg.split.seed},
                         {"lm", cfg.lm.seed},             {"labelgen", cfg.labelgen.seed},
                         {"generator", cfg.generator.seed}, {"qc", cfg.qc.seed},
                         {"classifier", cfg.classifier.seed}};
    manifest["counts"] = {{"train", split.train.instances.size()},
                          {"support", split.support.instances.size()},
                          {"test", split.test.instances.size()},
                          {"candidates", pool.size()},
                          {"aug", kept.size()}};
    manifest["metrics"] = {{"control", metrics_json(result.control)},
                           {"augmented", metrics_json(result.augmented)}};
    json artifacts;
    for (const char* name :
         {"config_used.ini", "dataset.jsonl", "labels.json", "split/train.jsonl",
          "split/support.jsonl", "split/test.jsonl", "split/manifest.json", "lm.bin",
          "labelgen.bin", "candidates.jsonl", "compositions.jsonl", "aug.jsonl",
          "filter.bin", "clf_control.bin", "clf_augmented.bin", "report.tsv"}) {
        if (std::filesystem::exists(path(name))) {
            artifacts[name] = to_hex(file_fnv1a(path(name)));
        }
    }
    for (const char* opt : {"gen_lspt.bin", "gen_ldvae.bin", "content_index.bin"}) {
        if (std::filesystem::exists(path(opt))) {
            artifacts[opt] = to_hex(file_fnv1a(path(opt)));
        }
    }
    manifest["artifacts"] = artifacts;
    result.manifest_path = path("manifest.json");
    {
        std::ofstream f(result.manifest_path);
        f << manifest.dump(2) << "\n";
    }
    log_info("pipeline '" + cfg.pipeline.name + "': control acc " +
             std::to_string(result.control.accuracy) + ", augmented acc " +
             std::to_string(result.augmented.accuracy));
    return result;
}

// ----------------------------- ablation -----------------------------

std::vector<AblationRow> ablate_support(const ExperimentConfig& cfg_in,
                                        const std::vector<std::size_t>& sizes,
                                        const std::string& stage,
                                        const std::string& out_dir) {
    if (stage != "labelgen" && stage != "generator" && stage != "classifier") {
        throw std::invalid_argument("ablate_support: stage must be labelgen, generator or "
                                    "classifier");
    }
    if (sizes.empty()) throw std::invalid_argument("ablate_support: no sizes");
    ExperimentConfig cfg = cfg_in;
    cfg.apply_master_seed();
    std::filesystem::create_directories(out_dir);

    std::size_t n_max = cfg.split.n_support;
    for (std::size_t s : sizes) n_max = std::max(n_max, s);

    Dataset data = stage_data(cfg);
    ExperimentConfig split_cfg = cfg;
    split_cfg.split.n_support = n_max;
    CgSplit split = stage_split(split_cfg, data);

    auto support_subset = [&](std::size_t s) {
        CgSplit sub = split;
        sub.support.instances.resize(std::min(s, sub.support.instances.size()));
        sub.support_src.resize(sub.support.instances.size());
        sub.n_support = sub.support.instances.size();
        return sub;
    };
    CgSplit split_default = support_subset(cfg.split.n_support);

    // fixed across rows: the QC filter and the test set
    Dataset dcg_all_default = dcg_dataset(cfg, split_default, false);
    Dataset dcg_gen_default = dcg_dataset(cfg, split_default, true);
    MltcModel filter = stage_filter_train(cfg, dcg_all_default);
    CausalLm body_default = stage_lm_body(cfg, dcg_gen_default);

    std::vector<AblationRow> rows;
    for (std::size_t s : sizes) {
        if (s + split.test_compositions.size() >
            split.support.instances.size() + split.test.instances.size()) {
            throw InfeasibleError("ablate_support: size " + std::to_string(s) +
                                  " exceeds the available preliminary-test instances");
        }
        CgSplit split_s = support_subset(s);

        const CgSplit& split_for_labelgen = stage == "labelgen" ? split_s : split_default;
        const CgSplit& split_for_gen = stage == "generator" ? split_s : split_default;
        const CgSplit& split_for_clf = stage == "classifier" ? split_s : split_default;

        Dataset dcg_gen = dcg_dataset(cfg, split_for_gen, true);
        const CausalLm& body = body_default;

        LabelGen labelgen = stage_labelgen(cfg, split_for_labelgen, body);
        GeneratorBundle gen = stage_generator(cfg, dcg_gen, body);
        std::vector<Candidate> pool = stage_generate(cfg, gen, labelgen, dcg_gen);
        std::vector<Candidate> kept = stage_filter(cfg, pool, filter);

        Dataset dcg_clf = dcg_dataset(cfg, split_for_clf, false);
        Dataset d_mltc = concat_instances(dcg_clf, candidates_to_dataset(kept, dcg_clf));
        MltcModel clf = stage_classifier(cfg, d_mltc);
        AblationRow row;
        row.support_size = s;
        row.metrics = evaluate_model(clf, split.test);
        rows.push_back(row);
        log_info("ablate " + stage + " size " + std::to_string(s) + ": acc " +
                 std::to_string(row.metrics.accuracy));
    }
    {
        std::ofstream f(out_dir + "/ablate_" + stage + ".tsv");
        f << "support_size\t" << MetricReport::tsv_header() << "\n";
        for (const auto& row : rows) {
            f << row.support_size << "\t" << row.metrics.tsv_row() << "\n";
        }
    }
    return rows;
}

std::string ablation_tsv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "support_size\t" << MetricReport::tsv_header() << "\n";
    for (const auto& row : rows) os << row.support_size << "\t" << row.metrics.tsv_row() << "\n";
    return os.str();
}

// ----------------------------- report -----------------------------

std::string report_tsv(const std::vector<std::string>& manifest_paths) {
    struct Row {
        std::string name;
        std::string line;
    };
    std::vector<Row> rows;
    for (const std::string& p : manifest_paths) {
        std::ifstream f(p);
        if (!f) throw std::runtime_error("cannot open manifest: " + p);
        json m;
        f >> m;
        const auto& a = m.at("metrics").at("augmented");
        MetricReport r;
        r.jaccard = a.at("jaccard").get<double>();
        r.accuracy = a.at("accuracy").get<double>();
        r.correctness = a.at("correctness").get<double>();
        r.completeness = a.at("completeness").get<double>();
        r.n_instances = a.at("n").get<std::size_t>();
        const std::string name = m.at("name").get<std::string>();
        rows.push_back(Row{name, name + "\t" + r.tsv_row()});
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        return a.name < b.name;
    });
    std::string out = "run\t" + MetricReport::tsv_header() + "\n";
    for (const auto& row : rows) {
        out += row.line;
        out += "\n";
    }
    return out;
}

}  // namespace cgaug
