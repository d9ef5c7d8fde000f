#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace cgaug {

// ----------------------------- labels -----------------------------

struct Label {
    int id = -1;
    std::string phrase;
};

// Canonical unordered label composition: sorted, deduplicated ids.
class LabelSet {
public:
    LabelSet() = default;
    explicit LabelSet(std::vector<int> ids);

    void insert(int id);
    bool contains(int id) const;
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    const std::vector<int>& ids() const { return ids_; }
    std::vector<int>::const_iterator begin() const { return ids_.begin(); }
    std::vector<int>::const_iterator end() const { return ids_.end(); }

    bool operator==(const LabelSet&) const = default;
    bool operator<(const LabelSet& o) const { return ids_ < o.ids_; }

    static std::size_t inter_count(const LabelSet& a, const LabelSet& b);
    static std::size_t union_count(const LabelSet& a, const LabelSet& b);
    bool subset_of(const LabelSet& o) const;

    std::string str() const;  // "{0,2,5}" for diagnostics

private:
    std::vector<int> ids_;
};

// ----------------------------- vocabulary -----------------------------

// Token table with reserved specials. Tokenization is lowercase plus
// whitespace split; it is invertible on single-word tokens.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kSep = 4;

    Vocab();

    int add(const std::string& token);  // interns, returns id
    int id(const std::string& token) const;  // -1 if absent
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }

    static std::vector<std::string> split_words(const std::string& text);

    std::vector<int> encode(const std::string& text, bool allow_unk) const;
    std::string decode(const std::vector<int>& tokens) const;

    const std::vector<std::string>& tokens() const { return tokens_; }

    bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// ----------------------------- dataset -----------------------------

struct Instance {
    std::vector<int> tokens;
    LabelSet labels;
    bool operator==(const Instance&) const = default;
};

struct Dataset {
    Vocab vocab;
    std::vector<Label> label_table;
    std::vector<Instance> instances;

    int label_id(const std::string& phrase) const;  // -1 if absent
    int intern_label(const std::string& phrase);
    std::string label_phrase(int id) const;
    std::vector<std::string> label_phrases(const LabelSet& y) const;

    // distinct compositions -> instance indices, in canonical order
    std::map<LabelSet, std::vector<std::size_t>> compositions() const;

    Dataset subset(const std::vector<std::size_t>& idx) const;

    void validate() const;  // checks token and label id ranges
};

// JSONL with one object per line: {"text": string, "labels": [string]}.
// The vocabulary is built from the file's text plus label phrase tokens;
// `extra_tokens` (prompt words and similar) are appended at the end.
Dataset load_jsonl(const std::string& path,
                   const std::vector<std::string>& extra_tokens = {});
void save_jsonl(const Dataset& data, const std::string& path);

// Label-id mapping persisted alongside a dataset.
void save_labels(const std::vector<Label>& labels, const std::string& path);
std::vector<Label> load_labels(const std::string& path);

// ----------------------------- synthetic corpus -----------------------------

// Templated corpus with an exact labeling oracle: every label owns signature
// phrases whose token sets are pairwise disjoint and disjoint from the filler
// vocabulary, so the true label set of any text can be recovered exactly.
struct SynthSpec {
    int n_labels = 0;
    int phrases_per_label = 1;
    int filler_vocab_size = 0;
    std::vector<LabelSet> composition_list;
    std::vector<double> composition_weights;  // count multipliers, default 1.0
    int instances_per_composition = 0;
    std::uint64_t seed = 0;

    std::string label_name(int label) const;
    // tokens of signature phrase j of a label; deterministic in (label, j)
    std::vector<std::string> signature_phrase(int label, int j) const;
    std::string filler_token(int k) const;

    void validate() const;
    std::size_t instance_count_for(std::size_t comp_index) const;
};

// Each instance for composition y holds exactly one uniformly chosen
// signature phrase per label in y plus 0-3 filler tokens, in shuffled
// phrase-level order. Deterministic under spec.seed.
Dataset generate_synth(const SynthSpec& spec,
                       const std::vector<std::string>& extra_tokens = {});

// Exactly the labels whose signature phrases appear as contiguous
// subsequences of `tokens`.
LabelSet oracle_labels(const std::vector<int>& tokens, const SynthSpec& spec,
                       const Vocab& vocab);

}  // namespace cgaug
