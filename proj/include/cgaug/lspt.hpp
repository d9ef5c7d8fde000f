#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgaug/corpus.hpp"
#include "cgaug/labelgen.hpp"
#include "cgaug/nn.hpp"

namespace cgaug {

// Label-specific prefix tuning: every label owns an independent learnable
// representation of shape [L, bank_width]; the representations of the labels
// in a composition are stacked and pushed row-wise through a shared MLP to
// form the prefix matrix conditioning the frozen LM.
struct LsptConfig {
    int prefix_len = 5;    // L
    int bank_width = 64;   // width of each bank entry
    int mlp_hidden = 0;    // 0 -> 2 * lm hidden
    double init_std = 0.02;
};

class LsptModel {
public:
    LsptModel() = default;
    LsptModel(CausalLm frozen_lm, LabelVocab lv, std::size_t n_labels, LsptConfig cfg,
              std::uint64_t seed);

    const CausalLm& lm() const { return lm_; }
    const LabelVocab& label_vocab() const { return lv_; }
    const LsptConfig& config() const { return cfg_; }
    ParamStore& prefix_params() { return prefix_params_; }
    const ParamStore& prefix_params() const { return prefix_params_; }
    std::size_t n_labels() const { return n_labels_; }

    // [|y|*L, lm hidden]; vars must contain the prefix parameters
    Var compose_prefix(Tape& tape, const VarMap& vars, const LabelSet& y) const;
    // no-grad evaluation of the composed prefix
    Tensor prefix_tensor(const LabelSet& y) const;

    void save(const std::string& path_prefix) const;
    static LsptModel load(const std::string& path_prefix);

private:
    LsptConfig cfg_;
    CausalLm lm_;
    LabelVocab lv_;
    ParamStore prefix_params_;
    std::size_t n_labels_ = 0;
};

struct GenTrainConfig {
    int epochs = 20;
    double lr = 3e-3;
    std::uint64_t seed = 0;
};

// Trains the bank and MLP only; the LM body stays frozen (checked by
// checksum). Instances with empty label sets are rejected.
std::vector<double> train_lspt(LsptModel& model, const Dataset& dcg,
                               const GenTrainConfig& cfg);

// Mean token cross entropy of the model over a dataset, no updates.
double lspt_mean_loss(const LsptModel& model, const Dataset& data);

struct GenerateConfig {
    int max_len = 24;
    double temperature = 1.0;
};

// Samples text conditioned on compose_prefix(y) with the serialized label
// phrases as the leading prompt segment; returns the text tokens only.
std::vector<int> generate_lspt(const LsptModel& model, const LabelSet& y,
                               const GenerateConfig& cfg, Rng& rng);

}  // namespace cgaug
