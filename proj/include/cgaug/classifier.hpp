#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgaug/corpus.hpp"
#include "cgaug/metrics.hpp"
#include "cgaug/nn.hpp"

namespace cgaug {

// Multi-label text classifier: token embedding, GRU encoder, mean pooling,
// MLP head to per-label logits, per-label sigmoid + binary cross entropy.
struct ClassifierConfig {
    int embed = 24;
    int hidden = 32;
    int mlp_hidden = 32;
    double init_std = 0.08;
};

class MltcModel {
public:
    MltcModel() = default;
    MltcModel(std::size_t vocab, std::size_t n_labels, ClassifierConfig cfg,
              std::uint64_t seed);

    const ClassifierConfig& config() const { return cfg_; }
    std::size_t n_labels() const { return n_labels_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Var logits(Tape& tape, const VarMap& vars, const std::vector<int>& tokens) const;  // [1,Y]

    // labels whose sigmoid activation is strictly above 0.5; may be empty
    LabelSet predict(const std::vector<int>& tokens) const;

    void save(const std::string& path_prefix) const;
    static MltcModel load(const std::string& path_prefix);

private:
    ClassifierConfig cfg_;
    ParamStore params_;
    std::size_t n_labels_ = 0;
    std::size_t vocab_ = 0;
};

struct ClfTrainConfig {
    int epochs = 10;
    double lr = 3e-3;
    std::uint64_t seed = 0;
    double holdout_frac = 0.1;  // 0 disables the held-out report
};

struct ClfTrainStats {
    std::vector<double> train_loss;    // per epoch
    std::vector<double> holdout_loss;  // per epoch; empty when disabled
};

// Per-label binary cross entropy over all instances (zero-label instances
// push every output toward 0). Aborts on divergence.
ClfTrainStats train_classifier(MltcModel& model, const Dataset& data,
                               const ClfTrainConfig& cfg);

MetricReport evaluate_model(const MltcModel& model, const Dataset& test);
std::vector<LabelSet> predict_all(const MltcModel& model, const Dataset& data);

}  // namespace cgaug
