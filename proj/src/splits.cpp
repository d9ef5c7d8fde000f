#include "cgaug/splits.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cgaug/common.hpp"

namespace cgaug {

using nlohmann::json;

std::string composition_str(const LabelSet& comp, const std::vector<Label>& table) {
    std::ostringstream os;
    os << "{";
    bool first = true;
    for (int id : comp) {
        if (!first) os << ",";
        first = false;
        if (id >= 0 && static_cast<std::size_t>(id) < table.size()) {
            os << table[static_cast<std::size_t>(id)].phrase;
        } else {
            os << "#" << id;
        }
    }
    os << "}";
    return os.str();
}

namespace {

// vocabulary from the training part only, plus label phrases and extras
Vocab rebuild_vocab(const Dataset& source, const std::vector<std::size_t>& train_idx,
                    const std::vector<std::string>& extra_tokens) {
    Vocab v;
    for (std::size_t i : train_idx) {
        for (int t : source.instances[i].tokens) v.add(source.vocab.token(t));
    }
    for (const Label& l : source.label_table) {
        for (const std::string& w : Vocab::split_words(l.phrase)) v.add(w);
    }
    for (const std::string& t : extra_tokens) {
        for (const std::string& w : Vocab::split_words(t)) v.add(w);
    }
    return v;
}

Dataset reencode_part(const Dataset& source, const std::vector<std::size_t>& idx,
                      const Vocab& vocab) {
    Dataset out;
    out.vocab = vocab;
    out.label_table = source.label_table;
    out.instances.reserve(idx.size());
    for (std::size_t i : idx) {
        const Instance& src = source.instances[i];
        Instance inst;
        inst.tokens = vocab.encode(source.vocab.decode(src.tokens), /*allow_unk=*/true);
        inst.labels = src.labels;
        out.instances.push_back(std::move(inst));
    }
    return out;
}

}  // namespace

CgSplit build_cg_split(const Dataset& data, std::size_t m_compositions,
                       std::size_t n_support, std::uint64_t seed,
                       const SplitOptions& opts) {
    if (m_compositions == 0) throw std::invalid_argument("build_cg_split: M must be >= 1");
    const auto comps = data.compositions();

    // candidates: >= 2 labels, >= 2 instances
    std::vector<LabelSet> candidates;
    for (const auto& [comp, idx] : comps) {
        if (comp.size() >= 2 && idx.size() >= 2) candidates.push_back(comp);
    }
    if (candidates.size() < m_compositions) {
        throw InfeasibleError("build_cg_split: only " + std::to_string(candidates.size()) +
                              " candidate compositions for M=" + std::to_string(m_compositions));
    }

    Rng rng(seed);
    std::vector<LabelSet> chosen;
    std::string violating_atom;
    bool ok = false;
    for (int attempt = 0; attempt < opts.max_attempts && !ok; ++attempt) {
        std::vector<std::size_t> order(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        chosen.clear();
        for (std::size_t i = 0; i < m_compositions; ++i) chosen.push_back(candidates[order[i]]);

        std::set<LabelSet> held(chosen.begin(), chosen.end());
        LabelSet train_atoms;
        for (const auto& [comp, idx] : comps) {
            if (held.count(comp)) continue;
            for (int a : comp) train_atoms.insert(a);
        }
        ok = true;
        for (const LabelSet& comp : chosen) {
            for (int a : comp) {
                if (!train_atoms.contains(a)) {
                    ok = false;
                    violating_atom = data.label_phrase(a);
                    break;
                }
            }
            if (!ok) break;
        }
    }
    if (!ok) {
        throw InfeasibleError("build_cg_split: no M-subset satisfies atomic coverage after " +
                              std::to_string(opts.max_attempts) + " attempts; atom '" +
                              violating_atom + "' would be unseen in train");
    }

    std::sort(chosen.begin(), chosen.end());
    std::set<LabelSet> held(chosen.begin(), chosen.end());

    std::vector<std::size_t> prelim, train_idx;
    for (std::size_t i = 0; i < data.instances.size(); ++i) {
        if (held.count(data.instances[i].labels)) {
            prelim.push_back(i);
        } else {
            train_idx.push_back(i);
        }
    }
    if (n_support + m_compositions > prelim.size()) {
        throw InfeasibleError("build_cg_split: n_support=" + std::to_string(n_support) +
                              " too large for " + std::to_string(prelim.size()) +
                              " preliminary-test instances over M=" +
                              std::to_string(m_compositions) + " compositions");
    }

    std::vector<std::size_t> support_idx;
    if (!opts.stratified_support) {
        std::vector<std::size_t> pool = prelim;
        rng.shuffle(pool);
        support_idx.assign(pool.begin(), pool.begin() + static_cast<long>(n_support));
    } else {
        // round-robin over held-out compositions in canonical order
        std::vector<std::vector<std::size_t>> per_comp;
        for (const LabelSet& comp : chosen) {
            std::vector<std::size_t> pool;
            for (std::size_t i : prelim) {
                if (data.instances[i].labels == comp) pool.push_back(i);
            }
            rng.shuffle(pool);
            per_comp.push_back(std::move(pool));
        }
        std::size_t round = 0;
        while (support_idx.size() < n_support) {
            bool any = false;
            for (auto& pool : per_comp) {
                if (round < pool.size()) {
                    any = true;
                    support_idx.push_back(pool[round]);
                    if (support_idx.size() == n_support) break;
                }
            }
            if (!any) break;
            ++round;
        }
    }
    std::sort(support_idx.begin(), support_idx.end());

    std::vector<std::size_t> test_idx;
    {
        std::set<std::size_t> sup(support_idx.begin(), support_idx.end());
        for (std::size_t i : prelim) {
            if (!sup.count(i)) test_idx.push_back(i);
        }
    }

    CgSplit split;
    split.seed = seed;
    split.n_support = n_support;
    split.test_compositions = chosen;
    split.train_src = train_idx;
    split.support_src = support_idx;
    split.test_src = test_idx;
    Vocab vocab = rebuild_vocab(data, train_idx, opts.extra_tokens);
    split.train = reencode_part(data, train_idx, vocab);
    split.support = reencode_part(data, support_idx, vocab);
    split.test = reencode_part(data, test_idx, vocab);
    return split;
}

std::vector<std::string> verify_split(const CgSplit& split) {
    std::vector<std::string> violations;
    const auto& table = split.train.label_table;

    std::set<LabelSet> train_comps;
    for (const Instance& inst : split.train.instances) train_comps.insert(inst.labels);
    std::set<LabelSet> held_comps;
    for (const Instance& inst : split.support.instances) held_comps.insert(inst.labels);
    for (const Instance& inst : split.test.instances) held_comps.insert(inst.labels);

    for (const LabelSet& comp : held_comps) {
        if (train_comps.count(comp)) {
            violations.push_back("composition " + composition_str(comp, table) +
                                 " appears in both train and held-out parts");
        }
    }

    LabelSet train_atoms;
    for (const LabelSet& comp : train_comps) {
        for (int a : comp) train_atoms.insert(a);
    }
    for (const LabelSet& comp : split.test_compositions) {
        for (int a : comp) {
            if (!train_atoms.contains(a)) {
                violations.push_back("atom " + composition_str(LabelSet({a}), table) +
                                     " of test composition " + composition_str(comp, table) +
                                     " is unseen in train");
            }
        }
    }

    std::set<LabelSet> declared(split.test_compositions.begin(), split.test_compositions.end());
    for (const LabelSet& comp : held_comps) {
        if (!declared.count(comp)) {
            violations.push_back("composition " + composition_str(comp, table) +
                                 " occurs in support/test but is not declared");
        }
    }

    if (split.support.instances.size() != split.n_support) {
        violations.push_back("support holds " + std::to_string(split.support.instances.size()) +
                             " instances, expected " + std::to_string(split.n_support));
    }

    std::set<std::size_t> seen;
    auto check_overlap = [&](const std::vector<std::size_t>& idx, const char* part) {
        for (std::size_t i : idx) {
            if (!seen.insert(i).second) {
                violations.push_back(std::string("source instance ") + std::to_string(i) +
                                     " assigned to more than one part (" + part + ")");
            }
        }
    };
    check_overlap(split.train_src, "train");
    check_overlap(split.support_src, "support");
    check_overlap(split.test_src, "test");
    if (split.train_src.size() != split.train.instances.size() ||
        split.support_src.size() != split.support.instances.size() ||
        split.test_src.size() != split.test.instances.size()) {
        violations.push_back("source index lists do not match part sizes");
    }
    return violations;
}

void save_split(const CgSplit& split, const std::string& dir) {
    std::filesystem::create_directories(dir);
    save_jsonl(split.train, dir + "/train.jsonl");
    save_jsonl(split.support, dir + "/support.jsonl");
    save_jsonl(split.test, dir + "/test.jsonl");
    save_labels(split.train.label_table, dir + "/labels.json");

    json manifest;
    manifest["m"] = split.test_compositions.size();
    manifest["n_support"] = split.n_support;
    manifest["seed"] = split.seed;
    json comps = json::array();
    for (const LabelSet& comp : split.test_compositions) {
        json c = json::array();
        for (int id : comp) c.push_back(split.train.label_phrase(id));
        comps.push_back(c);
    }
    manifest["test_compositions"] = comps;
    manifest["vocab"] = split.train.vocab.tokens();
    manifest["train_src"] = split.train_src;
    manifest["support_src"] = split.support_src;
    manifest["test_src"] = split.test_src;
    std::ofstream f(dir + "/manifest.json");
    if (!f) throw std::runtime_error("cannot open for write: " + dir + "/manifest.json");
    f << manifest.dump(2) << "\n";
}

namespace {

std::vector<std::pair<std::string, std::vector<std::string>>> read_jsonl_rows(
    const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<std::pair<std::string, std::vector<std::string>>> rows;
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
        std::vector<std::string> labels;
        for (const auto& l : j.at("labels")) labels.push_back(l.get<std::string>());
        rows.emplace_back(j.at("text").get<std::string>(), std::move(labels));
    }
    return rows;
}

}  // namespace

CgSplit load_split(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("cannot open: " + dir + "/manifest.json");
    json manifest;
    mf >> manifest;

    Vocab vocab;
    {
        const auto& toks = manifest.at("vocab");
        // specials are already interned by the constructor; re-add the rest
        for (std::size_t i = 5; i < toks.size(); ++i) vocab.add(toks[i].get<std::string>());
        if (vocab.size() != toks.size()) {
            throw SchemaError(dir + "/manifest.json: vocab list does not round trip");
        }
    }
    std::vector<Label> labels = load_labels(dir + "/labels.json");

    CgSplit split;
    split.seed = manifest.at("seed").get<std::uint64_t>();
    split.n_support = manifest.at("n_support").get<std::size_t>();
    auto load_part = [&](const std::string& name) {
        Dataset d;
        d.vocab = vocab;
        d.label_table = labels;
        for (const auto& [text, ls] : read_jsonl_rows(dir + "/" + name)) {
            Instance inst;
            inst.tokens = vocab.encode(text, /*allow_unk=*/true);
            for (const std::string& l : ls) {
                int id = d.label_id(l);
                if (id < 0) throw SchemaError(dir + "/" + name + ": unknown label '" + l + "'");
                inst.labels.insert(id);
            }
            d.instances.push_back(std::move(inst));
        }
        d.validate();
        return d;
    };
    split.train = load_part("train.jsonl");
    split.support = load_part("support.jsonl");
    split.test = load_part("test.jsonl");
    for (const auto& c : manifest.at("test_compositions")) {
        LabelSet comp;
        for (const auto& phrase : c) {
            int id = split.train.label_id(phrase.get<std::string>());
            if (id < 0) throw SchemaError(dir + ": unknown label in test_compositions");
            comp.insert(id);
        }
        split.test_compositions.push_back(comp);
    }
    split.train_src = manifest.at("train_src").get<std::vector<std::size_t>>();
    split.support_src = manifest.at("support_src").get<std::vector<std::size_t>>();
    split.test_src = manifest.at("test_src").get<std::vector<std::size_t>>();
    return split;
}

std::pair<Dataset, Dataset> iid_split(const Dataset& data, double test_fraction,
                                      std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction > 1.0) {
        throw std::invalid_argument("iid_split: test_fraction out of [0,1]");
    }
    std::vector<std::size_t> order(data.instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    auto n_test = static_cast<std::size_t>(test_fraction * static_cast<double>(order.size()));
    std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<long>(n_test));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_test), order.end());
    std::sort(test_idx.begin(), test_idx.end());
    std::sort(train_idx.begin(), train_idx.end());
    return {data.subset(train_idx), data.subset(test_idx)};
}

}  // namespace cgaug
