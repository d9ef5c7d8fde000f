#include "cgaug/labelgen.hpp"

#include <algorithm>

namespace cgaug {

LabelVocab make_label_vocab(const Vocab& vocab, const std::vector<Label>& labels,
                            const std::string& prompt_text) {
    LabelVocab lv;
    lv.vocab_size = static_cast<int>(vocab.size());
    lv.mask.assign(vocab.size(), 0);
    lv.phrase_tokens.reserve(labels.size());
    for (const Label& l : labels) {
        std::vector<int> toks = vocab.encode(l.phrase, /*allow_unk=*/false);
        if (toks.empty()) throw SchemaError("label '" + l.phrase + "' has no tokens");
        for (int t : toks) lv.mask[static_cast<std::size_t>(t)] = 1;
        lv.phrase_tokens.push_back(std::move(toks));
    }
    lv.mask[Vocab::kSep] = 1;
    lv.mask[Vocab::kEos] = 1;
    lv.prompt_tokens = vocab.encode(prompt_text, /*allow_unk=*/false);
    if (lv.prompt_tokens.empty()) {
        throw SchemaError("label prompt '" + prompt_text + "' has no tokens");
    }
    return lv;
}

std::vector<int> serialize_composition(const LabelSet& y, const LabelVocab& lv,
                                       bool with_prompt) {
    std::vector<int> out;
    if (with_prompt) out = lv.prompt_tokens;
    bool first = true;
    for (int id : y) {
        if (id < 0 || static_cast<std::size_t>(id) >= lv.phrase_tokens.size()) {
            throw std::out_of_range("serialize_composition: unknown label id " +
                                    std::to_string(id));
        }
        if (!first) out.push_back(Vocab::kSep);
        first = false;
        const auto& p = lv.phrase_tokens[static_cast<std::size_t>(id)];
        out.insert(out.end(), p.begin(), p.end());
    }
    out.push_back(Vocab::kEos);
    return out;
}

LabelSet parse_label_sequence(const std::vector<int>& tokens, const LabelVocab& lv) {
    std::vector<std::vector<int>> segments(1);
    for (int t : tokens) {
        if (t == Vocab::kEos) break;
        if (t == Vocab::kSep) {
            segments.emplace_back();
        } else {
            segments.back().push_back(t);
        }
    }
    // a trailing separator leaves one empty segment at the end; drop it
    if (segments.size() > 1 && segments.back().empty()) segments.pop_back();
    LabelSet out;
    for (const auto& seg : segments) {
        if (seg.empty()) throw ParseError("label sequence: empty phrase segment");
        bool matched = false;
        for (std::size_t id = 0; id < lv.phrase_tokens.size(); ++id) {
            if (lv.phrase_tokens[id] == seg) {
                out.insert(static_cast<int>(id));
                matched = true;
                break;
            }
        }
        if (!matched) throw ParseError("label sequence: segment is not a label phrase");
    }
    if (out.empty()) throw ParseError("label sequence: no phrases");
    return out;
}

LabelGen train_labelgen(const std::vector<LabelSet>& support_compositions,
                        const CausalLm& base, const LabelVocab& lv,
                        const LabelGenTrainConfig& cfg,
                        std::vector<double>* epoch_losses) {
    if (support_compositions.empty()) {
        throw std::invalid_argument("train_labelgen: empty support in few-shot mode");
    }
    LabelGen gen{base, lv, true};
    std::vector<LmSequence> seqs;
    seqs.reserve(support_compositions.size());
    for (const LabelSet& y : support_compositions) {
        if (y.empty()) continue;  // zero-label instances are excluded upstream
        LmSequence s;
        s.tokens = serialize_composition(y, lv, /*with_prompt=*/true);
        s.loss_from = lv.prompt_tokens.size();  // prompt tokens carry no loss
        seqs.push_back(std::move(s));
    }
    if (seqs.empty()) {
        throw std::invalid_argument("train_labelgen: support holds no labeled compositions");
    }
    LmTrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.lr = cfg.lr;
    tc.seed = cfg.seed;
    auto losses = train_lm(gen.lm, seqs, tc);
    if (epoch_losses != nullptr) *epoch_losses = losses;
    return gen;
}

LabelGen zero_shot_labelgen(const CausalLm& base, const LabelVocab& lv) {
    return LabelGen{base, lv, false};
}

std::vector<LabelSet> sample_compositions(const LabelGen& model, std::size_t n,
                                          LabelGenMode mode, std::uint64_t seed,
                                          const CompositionSampleConfig& cfg) {
    if (n == 0) throw std::invalid_argument("sample_compositions: n must be >= 1");
    if (mode == LabelGenMode::fewshot && !model.fewshot_trained) {
        throw std::invalid_argument("sample_compositions: few-shot mode on an untrained model");
    }
    SampleConfig sc;
    sc.max_len = cfg.max_len;
    sc.temperature = cfg.temperature;
    sc.token_mask = &model.lv.mask;
    Rng rng(seed);
    std::vector<LabelSet> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng sample_rng = rng.fork(i);
        bool done = false;
        for (int attempt = 0; attempt < cfg.max_retries && !done; ++attempt) {
            auto tokens = sample_tokens(model.lm, nullptr, model.lv.prompt_tokens, sc,
                                        sample_rng);
            try {
                out.push_back(parse_label_sequence(tokens, model.lv));
                done = true;
            } catch (const ParseError&) {
                // rejected; resample
            }
        }
        if (!done) {
            throw std::runtime_error("sample_compositions: retry budget of " +
                                     std::to_string(cfg.max_retries) +
                                     " exhausted for sample " + std::to_string(i));
        }
    }
    return out;
}

}  // namespace cgaug
