#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgaug/corpus.hpp"
#include "cgaug/nn.hpp"

namespace cgaug {

// Token-level view of the label inventory: phrase token sequences per label,
// the prompt prepended to every label sequence, and the sampling mask that
// admits only label-phrase tokens, the separator and the end token.
struct LabelVocab {
    std::vector<std::vector<int>> phrase_tokens;  // indexed by label id
    std::vector<int> prompt_tokens;
    std::vector<char> mask;  // allowed flags, size = vocab
    int vocab_size = 0;
};

LabelVocab make_label_vocab(const Vocab& vocab, const std::vector<Label>& labels,
                            const std::string& prompt_text);

// prompt + phrases in ascending id order with separators + end token
std::vector<int> serialize_composition(const LabelSet& y, const LabelVocab& lv,
                                       bool with_prompt = true);
// Inverse of the phrase segment encoding (no prompt, no end token); throws
// ParseError when any separator-delimited segment is not a known phrase.
LabelSet parse_label_sequence(const std::vector<int>& tokens, const LabelVocab& lv);

// Sequence model over concatenated label phrases. Few-shot mode fine-tunes
// all parameters of a copy of the base LM on the support compositions;
// zero-shot keeps the base LM and relies on masked sampling alone.
struct LabelGen {
    CausalLm lm;
    LabelVocab lv;
    bool fewshot_trained = false;
};

enum class LabelGenMode { fewshot, zeroshot };

struct LabelGenTrainConfig {
    int epochs = 120;
    double lr = 3e-3;
    std::uint64_t seed = 0;
};

LabelGen train_labelgen(const std::vector<LabelSet>& support_compositions,
                        const CausalLm& base, const LabelVocab& lv,
                        const LabelGenTrainConfig& cfg,
                        std::vector<double>* epoch_losses = nullptr);
LabelGen zero_shot_labelgen(const CausalLm& base, const LabelVocab& lv);

struct CompositionSampleConfig {
    double temperature = 1.0;
    int max_len = 24;
    // Rejection budget per sample. Zero-shot sampling from a plain-text LM
    // parses rarely (it has never seen the separator format), so the budget
    // is generous; few-shot models parse almost always.
    int max_retries = 1000;
};

// Masked sampling plus parse-or-resample. Duplicated phrases within one
// sample collapse into a set.
std::vector<LabelSet> sample_compositions(const LabelGen& model, std::size_t n,
                                          LabelGenMode mode, std::uint64_t seed,
                                          const CompositionSampleConfig& cfg = {});

}  // namespace cgaug
