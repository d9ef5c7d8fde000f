#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cgaug/pipeline.hpp"

using namespace cgaug;
using nlohmann::json;

namespace {

ExperimentConfig config_from(const std::string& config_path, std::uint64_t seed_override) {
    ExperimentConfig cfg =
        config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed_override != 0) cfg.pipeline.master_seed = seed_override;
    cfg.apply_master_seed();
    cfg.validate();
    return cfg;
}

CgSplit load_split_dir(const std::string& dir) {
    CgSplit split = load_split(dir);
    auto violations = verify_split(split);
    if (!violations.empty()) {
        throw std::runtime_error("split at " + dir + " is invalid: " + violations.front());
    }
    return split;
}

bool split_has_labeled_support(const CgSplit& split) {
    for (const auto& inst : split.support.instances) {
        if (!inst.labels.empty()) return true;
    }
    return false;
}

GeneratorBundle load_generator(const ExperimentConfig& cfg, const std::string& models_dir) {
    GeneratorBundle gen;
    gen.kind = cfg.generator.kind;
    if (gen.kind == "lspt") {
        gen.lspt = LsptModel::load(models_dir + "/gen_lspt");
    } else if (gen.kind == "ldvae") {
        gen.ldvae = LdvaeModel::load(models_dir + "/gen_ldvae");
        gen.index = load_content_index(models_dir + "/content_index");
    }
    return gen;
}

std::vector<Candidate> load_candidates(const std::string& path, const Dataset& like) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<Candidate> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        Candidate c;
        c.tokens = like.vocab.encode(j.at("text").get<std::string>(), /*allow_unk=*/true);
        for (const auto& l : j.at("labels")) {
            int id = like.label_id(l.get<std::string>());
            if (id < 0) {
                throw SchemaError(path + ":" + std::to_string(lineno) + ": unknown label '" +
                                  l.get<std::string>() + "'");
            }
            c.intended.insert(id);
        }
        out.push_back(std::move(c));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compositional-generalization data augmentation laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed_override = 0;
    std::string out;
    app.add_option("--config", config_path, "configuration file (key = value with sections)")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed_override, "override pipeline.master_seed");
    app.add_option("--out", out, "output directory or file");

    auto* cmd_synth = app.add_subcommand("synth", "generate the synthetic dataset");
    auto* cmd_split = app.add_subcommand("split", "build the compositional split");
    std::string in_path;
    cmd_split->add_option("--in", in_path, "dataset JSONL (defaults to the configured source)");

    std::string split_dir, models_dir, aug_path, clf_prefix;
    auto* cmd_tlg = app.add_subcommand("train-labelgen", "train the label generative model");
    cmd_tlg->add_option("--split", split_dir, "split directory")->required();
    auto* cmd_tg = app.add_subcommand("train-gen", "train the conditional text generator");
    cmd_tg->add_option("--split", split_dir, "split directory")->required();
    auto* cmd_gen = app.add_subcommand("generate", "over-generate candidate instances");
    cmd_gen->add_option("--split", split_dir, "split directory")->required();
    cmd_gen->add_option("--models", models_dir, "directory with trained checkpoints")
        ->required();
    auto* cmd_filter = app.add_subcommand("filter", "quality-control filter the candidates");
    cmd_filter->add_option("--split", split_dir, "split directory")->required();
    cmd_filter->add_option("--in", in_path, "candidates JSONL")->required();
    auto* cmd_tclf = app.add_subcommand("train-clf", "train the downstream classifier");
    cmd_tclf->add_option("--split", split_dir, "split directory")->required();
    cmd_tclf->add_option("--aug", aug_path, "augmented data JSONL (optional)");
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a classifier on the test split");
    cmd_eval->add_option("--split", split_dir, "split directory")->required();
    cmd_eval->add_option("--clf", clf_prefix, "classifier checkpoint prefix")->required();
    auto* cmd_pipeline = app.add_subcommand("pipeline", "run every stage end to end");
    std::string ablate_stage = "classifier";
    std::string sizes_csv;
    auto* cmd_ablate = app.add_subcommand("ablate", "support-size ablation for one stage");
    cmd_ablate->add_option("--stage", ablate_stage, "labelgen | generator | classifier")
        ->required();
    cmd_ablate->add_option("--sizes", sizes_csv, "comma-separated support sizes")->required();
    std::vector<std::string> manifest_paths;
    auto* cmd_report = app.add_subcommand("report", "tabulate run manifests");
    cmd_report->add_option("manifests", manifest_paths, "manifest.json paths")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_synth->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = ".";
            std::filesystem::create_directories(out);
            Dataset data = stage_data(cfg);
            save_jsonl(data, out + "/dataset.jsonl");
            save_labels(data.label_table, out + "/labels.json");
            std::cout << "wrote " << data.instances.size() << " instances to " << out
                      << "/dataset.jsonl\n";
        } else if (cmd_split->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = ".";
            Dataset data = in_path.empty() ? stage_data(cfg)
                                           : load_jsonl(in_path, {cfg.data.prompt});
            CgSplit split = stage_split(cfg, data);
            auto violations = verify_split(split);
            if (!violations.empty()) {
                throw PipelineError("split", violations.front());
            }
            save_split(split, out + "/split");
            std::cout << "split: " << split.train.instances.size() << " train, "
                      << split.support.instances.size() << " support, "
                      << split.test.instances.size() << " test\n";
        } else if (cmd_tlg->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = ".";
            std::filesystem::create_directories(out);
            CgSplit split = load_split_dir(split_dir);
            Dataset dcg = dcg_dataset(cfg, split, true);
            CausalLm body = stage_lm_body(cfg, dcg);
            LabelGen lg = stage_labelgen(cfg, split, body);
            lg.lm.save(out + "/labelgen");
            std::cout << "label generator saved to " << out << "/labelgen\n";
        } else if (cmd_tg->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = ".";
            std::filesystem::create_directories(out);
            CgSplit split = load_split_dir(split_dir);
            Dataset dcg = dcg_dataset(cfg, split, true);
            CausalLm body = stage_lm_body(cfg, dcg);
            body.save(out + "/lm");
            GeneratorBundle gen = stage_generator(cfg, dcg, body);
            if (gen.lspt) gen.lspt->save(out + "/gen_lspt");
            if (gen.ldvae) gen.ldvae->save(out + "/gen_ldvae");
            if (gen.index) save_content_index(*gen.index, out + "/content_index");
            std::cout << cfg.generator.kind << " generator trained into " << out << "\n";
        } else if (cmd_gen->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = "candidates.jsonl";
            CgSplit split = load_split_dir(split_dir);
            Dataset dcg = dcg_dataset(cfg, split, true);
            LabelVocab lv =
                make_label_vocab(dcg.vocab, dcg.label_table, cfg.data.prompt);
            LabelGen lg{CausalLm::load(models_dir + "/labelgen"), lv,
                        split_has_labeled_support(split)};
            GeneratorBundle gen = load_generator(cfg, models_dir);
            auto pool = stage_generate(cfg, gen, lg, dcg);
            save_candidates_jsonl(pool, dcg, out);
            std::cout << "wrote " << pool.size() << " candidates to " << out << "\n";
        } else if (cmd_filter->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = "aug.jsonl";
            CgSplit split = load_split_dir(split_dir);
            Dataset dcg_all = dcg_dataset(cfg, split, false);
            auto pool = load_candidates(in_path, dcg_all);
            MltcModel filter = stage_filter_train(cfg, dcg_all);
            auto kept = stage_filter(cfg, std::move(pool), filter);
            save_candidates_jsonl(kept, dcg_all, out);
            std::cout << "kept " << kept.size() << " of " << cfg.qc.n_aug << " requested\n";
        } else if (cmd_tclf->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = "clf";
            CgSplit split = load_split_dir(split_dir);
            Dataset train_data = dcg_dataset(cfg, split, false);
            if (!aug_path.empty()) {
                auto kept = load_candidates(aug_path, train_data);
                train_data = concat_instances(train_data, candidates_to_dataset(kept, train_data));
            }
            MltcModel clf = stage_classifier(cfg, train_data);
            clf.save(out);
            std::cout << "classifier saved to " << out << "\n";
        } else if (cmd_eval->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            (void)cfg;
            if (out.empty()) out = "report.tsv";
            CgSplit split = load_split_dir(split_dir);
            MltcModel clf = MltcModel::load(clf_prefix);
            MetricReport r = evaluate_model(clf, split.test);
            {
                std::ofstream f(out);
                f << MetricReport::tsv_header() << "\n" << r.tsv_row() << "\n";
            }
            // predictions aligned to test order, consumable standalone
            {
                std::ofstream f(out + ".predictions.jsonl");
                for (const auto& inst : split.test.instances) {
                    json j;
                    json ls = json::array();
                    for (int id : clf.predict(inst.tokens)) {
                        ls.push_back(split.test.label_phrase(id));
                    }
                    j["labels"] = ls;
                    f << j.dump() << "\n";
                }
            }
            std::cout << MetricReport::tsv_header() << "\n" << r.tsv_row() << "\n";
        } else if (cmd_pipeline->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = "run";
            RunResult res = run_pipeline(cfg, out);
            std::cout << "run\t" << MetricReport::tsv_header() << "\n";
            std::cout << cfg.pipeline.name << "-control\t" << res.control.tsv_row() << "\n";
            std::cout << cfg.pipeline.name << "\t" << res.augmented.tsv_row() << "\n";
        } else if (cmd_ablate->parsed()) {
            ExperimentConfig cfg = config_from(config_path, seed_override);
            if (out.empty()) out = "ablation";
            std::vector<std::size_t> sizes;
            std::stringstream ss(sizes_csv);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) sizes.push_back(std::stoull(item));
            }
            auto rows = ablate_support(cfg, sizes, ablate_stage, out);
            std::cout << ablation_tsv(rows);
        } else if (cmd_report->parsed()) {
            std::string tsv = report_tsv(manifest_paths);
            if (!out.empty()) {
                std::ofstream f(out);
                f << tsv;
            }
            std::cout << tsv;
        }
    } catch (const PipelineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
