#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgaug/corpus.hpp"
#include "cgaug/labelgen.hpp"
#include "cgaug/lspt.hpp"
#include "cgaug/nn.hpp"

namespace cgaug {

// ----------------------------- frozen embedder -----------------------------

// Fixed random projection standing in for a frozen pretrained text encoder.
// Token rows feed the posterior GRUs; the bag-of-token-counts projection
// embeds whole texts (k-means inputs) and label phrases.
struct FrozenEmbedder {
    Tensor proj;  // [vocab, width]

    static FrozenEmbedder make(std::size_t vocab, int width, std::uint64_t seed);
    int width() const { return static_cast<int>(proj.shape()[1]); }
    Tensor token_rows(const std::vector<int>& tokens) const;        // [T, E]
    Tensor counts_projection(const std::vector<int>& tokens) const;  // [1, E]
};

// ----------------------------- k-means -----------------------------

struct KmeansResult {
    Tensor centroids;  // [k, E]
    std::vector<int> assignment;
};

// Lloyd iterations with k-means++ seeding under a fixed RNG. Requires at
// least k distinct points; ties in assignment go to the lowest centroid id.
KmeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iters = 100);

struct ContentIndex {
    Tensor centroids;  // [k, E]
    std::vector<int> assignment;

    std::size_t clusters() const { return centroids.shape()[0]; }
    int nearest(const Tensor& point) const;  // point [1, E]
};

ContentIndex build_content_index(const Dataset& texts, const FrozenEmbedder& embedder, int k,
                                 std::uint64_t seed);
void save_content_index(const ContentIndex& index, const std::string& path_prefix);
ContentIndex load_content_index(const std::string& path_prefix);

// ----------------------------- KL -----------------------------

// Closed-form KL( N(mu, diag(exp(log_sigma))) || N(prior_mu, lambda I) ).
// log_sigma holds log-variances.
Var gaussian_kl(Var mu, Var log_sigma, Var prior_mu, double lambda);
double gaussian_kl_value(const Tensor& mu, const Tensor& log_sigma, const Tensor& prior_mu,
                         double lambda);

// ----------------------------- model -----------------------------

struct LdvaeConfig {
    int latent = 16;       // width of z_c and every z_y
    int enc_hidden = 24;   // posterior GRU width
    int embed_width = 16;  // frozen embedder width
    int prefix_len = 5;    // L
    int mlp_hidden = 0;    // decoder prefix MLP hidden; 0 -> 2*lm hidden, -1 -> linear
    double lambda_c = 1.0;
    double lambda_y = 1.0;
    int clusters = 10;
    double init_std = 0.02;
    std::uint64_t embedder_seed = 977;
};

// Content encoder shared across clusters; one label encoder per vocabulary
// label with unshared parameters; conditional Gaussian priors whose means
// are trainable projections of the cluster centroid and of the frozen label
// phrase embeddings; decoder = prefix MLP + frozen causal LM.
class LdvaeModel {
public:
    LdvaeModel() = default;
    LdvaeModel(CausalLm frozen_lm, LabelVocab lv, const Vocab& vocab,
               const std::vector<Label>& labels, LdvaeConfig cfg, std::uint64_t seed);

    const LdvaeConfig& config() const { return cfg_; }
    const CausalLm& lm() const { return lm_; }
    const LabelVocab& label_vocab() const { return lv_; }
    const FrozenEmbedder& embedder() const { return embedder_; }
    const Tensor& label_phrase_embeddings() const { return label_emb_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::size_t n_labels() const { return n_labels_; }
    GruParams content_gru() const;
    GruParams label_gru(int label) const;

    struct Posterior {
        Var mu;
        Var log_sigma;
        Var z;
    };
    // eps: noise of shape [1, latent]; z = mu + exp(log_sigma / 2) * eps
    Posterior content_posterior(Tape& tape, const VarMap& vars,
                                const std::vector<int>& tokens, const Tensor& eps) const;
    Posterior label_posterior(Tape& tape, const VarMap& vars, const std::vector<int>& tokens,
                              int label, const Tensor& eps) const;

    Var content_prior_mu(Tape& tape, const VarMap& vars, const Tensor& centroid) const;
    Var label_prior_mu(Tape& tape, const VarMap& vars, int label) const;

    // [|y|*L, lm hidden]: per label block [repeat(z_y) ; repeat(z_c)] through
    // the decoder MLP
    Var decode_prefix(Tape& tape, const VarMap& vars, Var z_c,
                      const std::vector<Var>& z_labels) const;

    struct ElboNoise {
        Tensor content;               // [1, latent]
        std::vector<Tensor> labels;   // one per label of the instance, ascending
    };
    ElboNoise make_noise(const LabelSet& y, Rng& rng) const;

    struct ElboParts {
        Var recon;
        Var kl_content;
        Var kl_label;
        Var total;
    };
    ElboParts elbo_loss(Tape& tape, const VarMap& model_vars, const VarMap& lm_vars,
                        const Instance& instance, const ContentIndex& index,
                        const ElboNoise& noise, double beta) const;

    // posterior means with eps = 0, for diagnostics
    Tensor content_posterior_mean(const std::vector<int>& tokens) const;
    Tensor label_posterior_mean(const std::vector<int>& tokens, int label) const;

    void save(const std::string& path_prefix) const;
    static LdvaeModel load(const std::string& path_prefix);

private:
    LdvaeConfig cfg_;
    CausalLm lm_;
    LabelVocab lv_;
    FrozenEmbedder embedder_;
    Tensor label_emb_;  // [|Y|, E]
    ParamStore params_;
    std::size_t n_labels_ = 0;
};

// ----------------------------- training & inference -----------------------------

struct LdvaeTrainConfig {
    int epochs = 20;
    double lr = 3e-3;
    double beta_max = 1.0;
    double warmup_frac = 0.2;  // beta ramps 0 -> beta_max over this step fraction
    std::uint64_t seed = 0;
};

struct LdvaeTrainStats {
    std::vector<double> recon;  // per epoch means
    std::vector<double> kl;
};

LdvaeTrainStats train_ldvae(LdvaeModel& model, const Dataset& dcg, const ContentIndex& index,
                            const LdvaeTrainConfig& cfg);

// Content cluster sampled uniformly; latents sampled from the conditional
// priors; encoders unused.
std::vector<int> generate_ldvae(const LdvaeModel& model, const ContentIndex& index,
                                const LabelSet& y, const GenerateConfig& cfg, Rng& rng);

double ldvae_mean_recon_loss(const LdvaeModel& model, const Dataset& data,
                             const ContentIndex& index);

// Mean intra-label / mean inter-label distance between label-posterior means
// (same label across different compositions vs different labels). Lower is
// more disentangled.
double disentanglement_ratio(const LdvaeModel& model, const Dataset& data,
                             std::size_t max_per_label = 40);

}  // namespace cgaug
