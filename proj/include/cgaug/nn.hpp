#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "cgaug/autodiff.hpp"
#include "cgaug/common.hpp"
#include "cgaug/tensor.hpp"

namespace cgaug {

// ----------------------------- parameters -----------------------------

// Ordered, named parameter tensors. Order is creation order and is part of
// the checkpoint format.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const;
    std::size_t count() const { return items_.size(); }
    std::size_t scalar_count() const;

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<std::pair<std::string, Tensor>>& items() { return items_; }

    std::uint64_t checksum() const;

    // Checkpoint container: <prefix>.bin holds tensor records in the tensor
    // binary format; <prefix>.manifest lists name, shape and byte offset.
    void save(const std::string& path_prefix) const;
    static ParamStore load(const std::string& path_prefix);

private:
    std::vector<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

using VarMap = std::map<std::string, Var>;

// One leaf per parameter on the given tape.
VarMap make_vars(Tape& tape, const ParamStore& params, bool trainable);
// Gradients of the trainable vars after backward, keyed by name.
std::map<std::string, Tensor> collect_grads(Tape& tape, const VarMap& vars);

// ----------------------------- optimizer -----------------------------

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long steps = 0;
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;

    explicit Adam(double lr_ = 1e-3) : lr(lr_) {}

    // Bias-corrected update of every parameter that has a gradient entry.
    void step(ParamStore& params, const std::map<std::string, Tensor>& grads);
};

// ----------------------------- building blocks -----------------------------

void linear_init(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                 Rng& rng, double std_dev);

// x * (mean(x^2, cols) + eps)^-1/2
Var rmsnorm(Var x);

// Gated recurrent unit; weights W* act on the input, U* on the state, and
// the candidate gate applies the reset gate to the state before U.
struct GruParams {
    std::string prefix;
    int in_dim = 0;
    int hidden = 0;
};

void gru_init(ParamStore& ps, const GruParams& cell, Rng& rng);
// inputs [T,in], h0 [1,H] -> hidden states [T,H]
Var gru_forward(Tape& tape, const VarMap& pv, const GruParams& cell, Var inputs, Var h0);
Var gru_forward(Tape& tape, const VarMap& pv, const GruParams& cell, Var inputs);

// ----------------------------- causal LM -----------------------------

struct LmConfig {
    int vocab = 0;
    int hidden = 64;
    int heads = 4;
    int blocks = 2;
    int ffn_mult = 4;
    int max_pos = 64;     // text positions
    int max_prefix = 32;  // dedicated learned segment for prefix positions
    double init_std = 0.08;
};

// Small causal self-attention language model trainable from scratch. When a
// prefix matrix is supplied, its rows are prepended as attendable positions
// in every block, and the final hidden states at prefix positions are the
// prefix rows themselves, bitwise.
class CausalLm {
public:
    CausalLm() = default;
    CausalLm(LmConfig cfg, std::uint64_t seed);

    const LmConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::uint64_t body_checksum() const { return params_.checksum(); }

    struct Forward {
        Var hidden;  // [P+T, H]
        Var logits;  // [P+T, V]
        std::size_t prefix_rows = 0;
    };
    // prefix: invalid Var -> plain causal LM
    Forward forward(Tape& tape, const VarMap& pv, const std::vector<int>& tokens,
                    Var prefix = {}) const;

    // Mean next-token cross entropy predicting tokens[loss_from..] from the
    // positions before them. loss_from >= 1.
    Var nll_loss(Tape& tape, const VarMap& pv, const std::vector<int>& tokens,
                 std::size_t loss_from, Var prefix = {}) const;

    // No-grad distribution over the next token after `tokens`. Masked tokens
    // get probability exactly 0. temperature == 0 collapses to argmax.
    std::vector<double> next_token_probs(const std::vector<int>& tokens, const Tensor* prefix,
                                         double temperature,
                                         const std::vector<char>* token_mask) const;

    void save(const std::string& path_prefix) const;
    static CausalLm load(const std::string& path_prefix);

private:
    LmConfig cfg_;
    ParamStore params_;
};

// One training sequence: token ids plus the index of the first predicted
// token (earlier tokens are context only, e.g. a prompt).
struct LmSequence {
    std::vector<int> tokens;
    std::size_t loss_from = 1;
};

struct LmTrainConfig {
    int epochs = 10;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

// Plain next-token training of all LM parameters, one sequence per step,
// order shuffled each epoch. Returns the mean loss per epoch.
std::vector<double> train_lm(CausalLm& lm, const std::vector<LmSequence>& seqs,
                             const LmTrainConfig& cfg);

struct SampleConfig {
    int max_len = 32;
    double temperature = 1.0;
    int eos_id = 3;  // Vocab::kEos
    const std::vector<char>* token_mask = nullptr;  // allowed flags per token id
};

// Autoregressive sampling after `prompt` until the end token or max_len.
// Returns the generated tokens only (prompt and end token excluded).
std::vector<int> sample_tokens(const CausalLm& lm, const Tensor* prefix,
                               const std::vector<int>& prompt, const SampleConfig& cfg,
                               Rng& rng);

std::size_t categorical(const std::vector<double>& probs, Rng& rng);

}  // namespace cgaug
