#include "cgaug/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cgaug/common.hpp"

namespace cgaug {

using nlohmann::json;

// ----------------------------- LabelSet -----------------------------

LabelSet::LabelSet(std::vector<int> ids) : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
}

void LabelSet::insert(int id) {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) ids_.insert(it, id);
}

bool LabelSet::contains(int id) const {
    return std::binary_search(ids_.begin(), ids_.end(), id);
}

std::size_t LabelSet::inter_count(const LabelSet& a, const LabelSet& b) {
    std::size_t n = 0, i = 0, j = 0;
    while (i < a.ids_.size() && j < b.ids_.size()) {
        if (a.ids_[i] == b.ids_[j]) {
            ++n;
            ++i;
            ++j;
        } else if (a.ids_[i] < b.ids_[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return n;
}

std::size_t LabelSet::union_count(const LabelSet& a, const LabelSet& b) {
    return a.size() + b.size() - inter_count(a, b);
}

bool LabelSet::subset_of(const LabelSet& o) const {
    return inter_count(*this, o) == size();
}

std::string LabelSet::str() const {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (i) os << ",";
        os << ids_[i];
    }
    os << "}";
    return os.str();
}

// ----------------------------- Vocab -----------------------------

Vocab::Vocab() {
    add("<pad>");
    add("<unk>");
    add("<bos>");
    add("<eos>");
    add("<sep>");
}

int Vocab::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

int Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? -1 : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw std::out_of_range("vocab: token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string word;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!word.empty()) {
                words.push_back(word);
                word.clear();
            }
        } else {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!word.empty()) words.push_back(word);
    return words;
}

std::vector<int> Vocab::encode(const std::string& text, bool allow_unk) const {
    std::vector<int> out;
    for (const std::string& w : split_words(text)) {
        int tid = id(w);
        if (tid < 0) {
            if (!allow_unk) throw ParseError("unknown token '" + w + "'");
            tid = kUnk;
        }
        out.push_back(tid);
    }
    return out;
}

std::string Vocab::decode(const std::vector<int>& tokens) const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += token(tokens[i]);
    }
    return out;
}

// ----------------------------- Dataset -----------------------------

int Dataset::label_id(const std::string& phrase) const {
    for (const Label& l : label_table) {
        if (l.phrase == phrase) return l.id;
    }
    return -1;
}

int Dataset::intern_label(const std::string& phrase) {
    int id = label_id(phrase);
    if (id >= 0) return id;
    id = static_cast<int>(label_table.size());
    label_table.push_back(Label{id, phrase});
    return id;
}

std::string Dataset::label_phrase(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= label_table.size()) {
        throw std::out_of_range("label id " + std::to_string(id) + " out of range");
    }
    return label_table[static_cast<std::size_t>(id)].phrase;
}

std::vector<std::string> Dataset::label_phrases(const LabelSet& y) const {
    std::vector<std::string> out;
    out.reserve(y.size());
    for (int id : y) out.push_back(label_phrase(id));
    return out;
}

std::map<LabelSet, std::vector<std::size_t>> Dataset::compositions() const {
    std::map<LabelSet, std::vector<std::size_t>> m;
    for (std::size_t i = 0; i < instances.size(); ++i) m[instances[i].labels].push_back(i);
    return m;
}

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.vocab = vocab;
    out.label_table = label_table;
    out.instances.reserve(idx.size());
    for (std::size_t i : idx) out.instances.push_back(instances.at(i));
    return out;
}

void Dataset::validate() const {
    const int nv = static_cast<int>(vocab.size());
    const int nl = static_cast<int>(label_table.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const Instance& inst = instances[i];
        if (inst.tokens.empty()) {
            throw SchemaError("instance " + std::to_string(i) + ": empty token sequence");
        }
        for (int t : inst.tokens) {
            if (t < 0 || t >= nv) {
                throw SchemaError("instance " + std::to_string(i) + ": token id " +
                                  std::to_string(t) + " outside vocab of " + std::to_string(nv));
            }
        }
        for (int l : inst.labels) {
            if (l < 0 || l >= nl) {
                throw SchemaError("instance " + std::to_string(i) + ": label id " +
                                  std::to_string(l) + " outside table of " + std::to_string(nl));
            }
        }
    }
}

// ----------------------------- JSONL -----------------------------

Dataset load_jsonl(const std::string& path, const std::vector<std::string>& extra_tokens) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);

    std::vector<std::string> texts;
    std::vector<std::vector<std::string>> labels;
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
        if (!j.is_object() || !j.contains("text") || !j.contains("labels") ||
            !j["text"].is_string() || !j["labels"].is_array()) {
            throw SchemaError(path + ":" + std::to_string(lineno) +
                              ": expected {\"text\": string, \"labels\": [string]}");
        }
        std::string text = j["text"].get<std::string>();
        if (Vocab::split_words(text).empty()) {
            throw SchemaError(path + ":" + std::to_string(lineno) + ": empty text");
        }
        std::vector<std::string> ls;
        for (const auto& l : j["labels"]) {
            if (!l.is_string()) {
                throw SchemaError(path + ":" + std::to_string(lineno) +
                                  ": labels must be strings");
            }
            ls.push_back(l.get<std::string>());
        }
        texts.push_back(std::move(text));
        labels.push_back(std::move(ls));
    }

    Dataset d;
    for (const std::string& t : texts) {
        for (const std::string& w : Vocab::split_words(t)) d.vocab.add(w);
    }
    // labels interned in first-seen order; their phrase tokens join the vocab
    for (const auto& ls : labels) {
        for (const std::string& l : ls) {
            d.intern_label(l);
            for (const std::string& w : Vocab::split_words(l)) d.vocab.add(w);
        }
    }
    for (const std::string& t : extra_tokens) {
        for (const std::string& w : Vocab::split_words(t)) d.vocab.add(w);
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Instance inst;
        inst.tokens = d.vocab.encode(texts[i], /*allow_unk=*/true);
        for (const std::string& l : labels[i]) inst.labels.insert(d.label_id(l));
        d.instances.push_back(std::move(inst));
    }
    d.validate();
    return d;
}

void save_jsonl(const Dataset& data, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    for (const Instance& inst : data.instances) {
        json j;
        j["text"] = data.vocab.decode(inst.tokens);
        json ls = json::array();
        for (int id : inst.labels) ls.push_back(data.label_phrase(id));
        j["labels"] = ls;
        f << j.dump() << "\n";
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

void save_labels(const std::vector<Label>& labels, const std::string& path) {
    json j = json::array();
    for (const Label& l : labels) j.push_back(l.phrase);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << j.dump() << "\n";
}

std::vector<Label> load_labels(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    json j;
    f >> j;
    if (!j.is_array()) throw SchemaError(path + ": expected a JSON array of label phrases");
    std::vector<Label> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        out.push_back(Label{static_cast<int>(i), j[i].get<std::string>()});
    }
    return out;
}

// ----------------------------- synthetic corpus -----------------------------

namespace {

const char* kNames[] = {"alpha",   "bravo", "charlie", "delta", "echo",   "foxtrot",
                        "golf",    "hotel", "india",   "juliet", "kilo",  "lima",
                        "mike",    "november", "oscar", "papa",  "quebec", "romeo",
                        "sierra",  "tango", "uniform", "victor", "whiskey", "xray",
                        "yankee",  "zulu"};

}  // namespace

std::string SynthSpec::label_name(int label) const {
    if (label >= 0 && label < static_cast<int>(sizeof(kNames) / sizeof(kNames[0]))) {
        return kNames[label];
    }
    return "label" + std::to_string(label);
}

std::vector<std::string> SynthSpec::signature_phrase(int label, int j) const {
    // phrase lengths alternate 1, 2, 1, ... so multi-token contiguity matters
    const std::string base = label_name(label) + "sig" + std::to_string(j);
    if (j % 2 == 0) return {base};
    return {base, base + "tail"};
}

std::string SynthSpec::filler_token(int k) const { return "filler" + std::to_string(k); }

void SynthSpec::validate() const {
    if (n_labels < 1) throw SchemaError("synth spec: n_labels must be >= 1");
    if (phrases_per_label < 1) {
        throw SchemaError("synth spec: each label needs at least one signature phrase");
    }
    if (filler_vocab_size < 1) throw SchemaError("synth spec: filler_vocab_size must be >= 1");
    if (composition_list.empty()) throw SchemaError("synth spec: empty composition list");
    if (instances_per_composition < 1) {
        throw SchemaError("synth spec: instances_per_composition must be >= 1");
    }
    if (!composition_weights.empty() &&
        composition_weights.size() != composition_list.size()) {
        throw SchemaError("synth spec: weights length differs from composition list");
    }
    for (std::size_t c = 0; c < composition_list.size(); ++c) {
        const LabelSet& y = composition_list[c];
        if (y.empty()) throw SchemaError("synth spec: composition " + std::to_string(c) + " is empty");
        for (int l : y) {
            if (l < 0 || l >= n_labels) {
                throw SchemaError("synth spec: composition " + std::to_string(c) +
                                  " references unknown label id " + std::to_string(l));
            }
        }
    }
    for (double w : composition_weights) {
        if (w <= 0.0) throw SchemaError("synth spec: weights must be positive");
    }
}

std::size_t SynthSpec::instance_count_for(std::size_t comp_index) const {
    double w = composition_weights.empty() ? 1.0 : composition_weights[comp_index];
    auto n = static_cast<std::size_t>(std::lround(instances_per_composition * w));
    return std::max<std::size_t>(1, n);
}

Dataset generate_synth(const SynthSpec& spec, const std::vector<std::string>& extra_tokens) {
    spec.validate();
    Dataset d;
    for (int l = 0; l < spec.n_labels; ++l) {
        d.label_table.push_back(Label{l, spec.label_name(l)});
        d.vocab.add(spec.label_name(l));
    }
    for (int l = 0; l < spec.n_labels; ++l) {
        for (int j = 0; j < spec.phrases_per_label; ++j) {
            for (const std::string& w : spec.signature_phrase(l, j)) d.vocab.add(w);
        }
    }
    for (int k = 0; k < spec.filler_vocab_size; ++k) d.vocab.add(spec.filler_token(k));
    for (const std::string& t : extra_tokens) {
        for (const std::string& w : Vocab::split_words(t)) d.vocab.add(w);
    }

    Rng rng(spec.seed);
    for (std::size_t c = 0; c < spec.composition_list.size(); ++c) {
        const LabelSet& y = spec.composition_list[c];
        const std::size_t count = spec.instance_count_for(c);
        for (std::size_t r = 0; r < count; ++r) {
            // phrase-level units stay contiguous through the shuffle
            std::vector<std::vector<int>> units;
            for (int l : y) {
                int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.phrases_per_label)));
                std::vector<int> phrase;
                for (const std::string& w : spec.signature_phrase(l, j)) {
                    phrase.push_back(d.vocab.id(w));
                }
                units.push_back(std::move(phrase));
            }
            const std::size_t n_filler = rng.below(4);  // 0..3
            for (std::size_t k = 0; k < n_filler; ++k) {
                int f = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.filler_vocab_size)));
                units.push_back({d.vocab.id(spec.filler_token(f))});
            }
            rng.shuffle(units);
            Instance inst;
            for (const auto& u : units) inst.tokens.insert(inst.tokens.end(), u.begin(), u.end());
            inst.labels = y;
            d.instances.push_back(std::move(inst));
        }
    }
    d.validate();
    return d;
}

LabelSet oracle_labels(const std::vector<int>& tokens, const SynthSpec& spec,
                       const Vocab& vocab) {
    spec.validate();
    LabelSet found;
    for (int l = 0; l < spec.n_labels; ++l) {
        bool hit = false;
        for (int j = 0; j < spec.phrases_per_label && !hit; ++j) {
            std::vector<int> phrase;
            bool in_vocab = true;
            for (const std::string& w : spec.signature_phrase(l, j)) {
                int tid = vocab.id(w);
                if (tid < 0) {
                    in_vocab = false;
                    break;
                }
                phrase.push_back(tid);
            }
            if (!in_vocab || phrase.empty() || phrase.size() > tokens.size()) continue;
            for (std::size_t s = 0; s + phrase.size() <= tokens.size(); ++s) {
                if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<long>(s))) {
                    hit = true;
                    break;
                }
            }
        }
        if (hit) found.insert(l);
    }
    return found;
}

}  // namespace cgaug
