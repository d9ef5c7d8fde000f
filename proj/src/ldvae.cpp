#include "cgaug/ldvae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace cgaug {

// ----------------------------- frozen embedder -----------------------------

FrozenEmbedder FrozenEmbedder::make(std::size_t vocab, int width, std::uint64_t seed) {
    FrozenEmbedder e;
    e.proj = Tensor({vocab, static_cast<std::size_t>(width)});
    Rng rng(seed);
    const double sd = 1.0 / std::sqrt(static_cast<double>(width));
    for (std::size_t i = 0; i < e.proj.size(); ++i) e.proj[i] = rng.gauss(0.0, sd);
    return e;
}

Tensor FrozenEmbedder::token_rows(const std::vector<int>& tokens) const {
    const std::size_t w = proj.shape()[1];
    Tensor out({tokens.size(), w});
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const auto id = static_cast<std::size_t>(tokens[t]);
        if (id >= proj.shape()[0]) {
            throw std::out_of_range("embedder: token id " + std::to_string(tokens[t]));
        }
        std::copy(proj.data() + id * w, proj.data() + (id + 1) * w, out.data() + t * w);
    }
    return out;
}

Tensor FrozenEmbedder::counts_projection(const std::vector<int>& tokens) const {
    const std::size_t w = proj.shape()[1];
    Tensor out({1, w});
    for (int t : tokens) {
        const auto id = static_cast<std::size_t>(t);
        if (id >= proj.shape()[0]) {
            throw std::out_of_range("embedder: token id " + std::to_string(t));
        }
        for (std::size_t j = 0; j < w; ++j) out[j] += proj[id * w + j];
    }
    return out;
}

// ----------------------------- k-means -----------------------------

namespace {

double sq_dist(const double* a, const double* b, std::size_t w) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

}  // namespace

KmeansResult kmeans(const Tensor& points, int k, std::uint64_t seed, int max_iters) {
    if (points.rank() != 2 || points.shape()[0] == 0) {
        throw std::invalid_argument("kmeans: expected non-empty [N,E] points");
    }
    if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
    const std::size_t n = points.shape()[0], w = points.shape()[1];
    {
        std::set<std::vector<double>> distinct;
        for (std::size_t i = 0; i < n && distinct.size() < static_cast<std::size_t>(k); ++i) {
            distinct.insert(std::vector<double>(points.data() + i * w,
                                                points.data() + (i + 1) * w));
        }
        if (distinct.size() < static_cast<std::size_t>(k)) {
            throw std::invalid_argument("kmeans: k=" + std::to_string(k) +
                                        " exceeds the number of distinct points");
        }
    }
    Rng rng(seed);
    const auto uk = static_cast<std::size_t>(k);
    Tensor centroids({uk, w});

    // k-means++ seeding
    std::vector<std::size_t> chosen;
    chosen.push_back(static_cast<std::size_t>(rng.below(n)));
    std::copy(points.data() + chosen[0] * w, points.data() + (chosen[0] + 1) * w,
              centroids.data());
    std::vector<double> d2(n, 0.0);
    for (std::size_t c = 1; c < uk; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t cc = 0; cc < c; ++cc) {
                best = std::min(best, sq_dist(points.data() + i * w,
                                              centroids.data() + cc * w, w));
            }
            d2[i] = best;
            total += best;
        }
        std::size_t pick;
        if (total > 0.0) {
            pick = rng.pick_weighted(d2);
        } else {
            pick = static_cast<std::size_t>(rng.below(n));
        }
        chosen.push_back(pick);
        std::copy(points.data() + pick * w, points.data() + (pick + 1) * w,
                  centroids.data() + c * w);
    }

    std::vector<int> assignment(n, -1);
    for (int iter = 0; iter < max_iters; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < uk; ++c) {
                const double d = sq_dist(points.data() + i * w, centroids.data() + c * w, w);
                if (d < best_d) {
                    best_d = d;
                    best = static_cast<int>(c);
                }
            }
            if (assignment[i] != best) {
                assignment[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        std::vector<std::size_t> counts(uk, 0);
        Tensor sums({uk, w});
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(assignment[i]);
            counts[c] += 1;
            for (std::size_t j = 0; j < w; ++j) sums[c * w + j] += points[i * w + j];
        }
        for (std::size_t c = 0; c < uk; ++c) {
            if (counts[c] == 0) {
                // take the point farthest from its own centroid
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const auto a = static_cast<std::size_t>(assignment[i]);
                    const double d =
                        sq_dist(points.data() + i * w, centroids.data() + a * w, w);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                std::copy(points.data() + far * w, points.data() + (far + 1) * w,
                          centroids.data() + c * w);
                continue;
            }
            for (std::size_t j = 0; j < w; ++j) {
                centroids[c * w + j] = sums[c * w + j] / static_cast<double>(counts[c]);
            }
        }
    }
    return KmeansResult{std::move(centroids), std::move(assignment)};
}

int ContentIndex::nearest(const Tensor& point) const {
    const std::size_t w = centroids.shape()[1];
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < clusters(); ++c) {
        const double d = sq_dist(point.data(), centroids.data() + c * w, w);
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(c);
        }
    }
    return best;
}

ContentIndex build_content_index(const Dataset& texts, const FrozenEmbedder& embedder, int k,
                                 std::uint64_t seed) {
    if (texts.instances.empty()) throw std::invalid_argument("build_content_index: empty data");
    if (k < 2) throw std::invalid_argument("build_content_index: need k >= 2");
    const auto w = static_cast<std::size_t>(embedder.width());
    Tensor points({texts.instances.size(), w});
    for (std::size_t i = 0; i < texts.instances.size(); ++i) {
        Tensor e = embedder.counts_projection(texts.instances[i].tokens);
        std::copy(e.data(), e.data() + w, points.data() + i * w);
    }
    KmeansResult km = kmeans(points, k, seed);
    return ContentIndex{std::move(km.centroids), std::move(km.assignment)};
}

void save_content_index(const ContentIndex& index, const std::string& path_prefix) {
    ParamStore ps;
    ps.add("centroids", index.centroids);
    Tensor a({index.assignment.size()});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = index.assignment[i];
    ps.add("assignment", std::move(a));
    ps.save(path_prefix);
}

ContentIndex load_content_index(const std::string& path_prefix) {
    ParamStore ps = ParamStore::load(path_prefix);
    ContentIndex index;
    index.centroids = ps.at("centroids");
    const Tensor& a = ps.at("assignment");
    for (std::size_t i = 0; i < a.size(); ++i) {
        index.assignment.push_back(static_cast<int>(a[i]));
    }
    return index;
}

// ----------------------------- KL -----------------------------

Var gaussian_kl(Var mu, Var log_sigma, Var prior_mu, double lambda) {
    if (lambda <= 0.0) throw std::invalid_argument("gaussian_kl: lambda must be positive");
    Var var_term = scale(exp(log_sigma), 1.0 / lambda);
    Var mean_term = scale(square(sub(mu, prior_mu)), 1.0 / lambda);
    Var log_term = add_const(neg(log_sigma), std::log(lambda) - 1.0);
    return scale(sum(add(add(var_term, mean_term), log_term)), 0.5);
}

double gaussian_kl_value(const Tensor& mu, const Tensor& log_sigma, const Tensor& prior_mu,
                         double lambda) {
    Tape tape;
    return tape
        .value(gaussian_kl(tape.leaf(mu), tape.leaf(log_sigma), tape.leaf(prior_mu), lambda))
        .item();
}

// ----------------------------- model -----------------------------

namespace {

std::string label_enc_prefix(int label) { return "enc.y" + std::to_string(label) + "."; }

void init_head(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
    linear_init(ps, prefix + "w", static_cast<std::size_t>(in), static_cast<std::size_t>(out),
                rng, 1.0 / std::sqrt(static_cast<double>(in)));
    ps.add(prefix + "b", Tensor({1, static_cast<std::size_t>(out)}));
}

Var head_forward(const VarMap& vars, const std::string& prefix, Var x) {
    return add(matmul(x, vars.at(prefix + "w")), vars.at(prefix + "b"));
}

std::vector<int> ldvae_text_prompt(const LabelSet& y, const LabelVocab& lv) {
    std::vector<int> prompt = serialize_composition(y, lv, /*with_prompt=*/false);
    prompt.back() = Vocab::kBos;
    return prompt;
}

}  // namespace

LdvaeModel::LdvaeModel(CausalLm frozen_lm, LabelVocab lv, const Vocab& vocab,
                       const std::vector<Label>& labels, LdvaeConfig cfg, std::uint64_t seed)
    : cfg_(cfg), lm_(std::move(frozen_lm)), lv_(std::move(lv)), n_labels_(labels.size()) {
    if (cfg_.mlp_hidden == 0) cfg_.mlp_hidden = 2 * lm_.config().hidden;
    embedder_ = FrozenEmbedder::make(vocab.size(), cfg_.embed_width, cfg_.embedder_seed);

    label_emb_ = Tensor({n_labels_, static_cast<std::size_t>(cfg_.embed_width)});
    for (std::size_t l = 0; l < n_labels_; ++l) {
        Tensor e = embedder_.counts_projection(lv_.phrase_tokens[l]);
        std::copy(e.data(), e.data() + e.size(),
                  label_emb_.data() + l * static_cast<std::size_t>(cfg_.embed_width));
    }

    Rng rng(seed);
    const int E = cfg_.embed_width, G = cfg_.enc_hidden, H = cfg_.latent;
    gru_init(params_, content_gru(), rng);
    init_head(params_, "enc.c.mu.", G, H, rng);
    init_head(params_, "enc.c.ls.", G, H, rng);
    for (std::size_t l = 0; l < n_labels_; ++l) {
        gru_init(params_, label_gru(static_cast<int>(l)), rng);
        init_head(params_, label_enc_prefix(static_cast<int>(l)) + "mu.", G, H, rng);
        init_head(params_, label_enc_prefix(static_cast<int>(l)) + "ls.", G, H, rng);
    }
    linear_init(params_, "prior.wc", static_cast<std::size_t>(E), static_cast<std::size_t>(H),
                rng, 1.0 / std::sqrt(static_cast<double>(E)));
    for (std::size_t l = 0; l < n_labels_; ++l) {
        linear_init(params_, "prior.wy" + std::to_string(l), static_cast<std::size_t>(E),
                    static_cast<std::size_t>(H), rng, 1.0 / std::sqrt(static_cast<double>(E)));
    }
    const auto hp = static_cast<std::size_t>(lm_.config().hidden);
    const auto zin = static_cast<std::size_t>(2 * H);
    if (cfg_.mlp_hidden > 0) {
        const auto mh = static_cast<std::size_t>(cfg_.mlp_hidden);
        linear_init(params_, "dec.w1", zin, mh, rng, 1.0 / std::sqrt(static_cast<double>(zin)));
        params_.add("dec.b1", Tensor({1, mh}));
        linear_init(params_, "dec.w2", mh, hp, rng, 1.0 / std::sqrt(static_cast<double>(mh)));
        params_.add("dec.b2", Tensor({1, hp}));
    } else {
        linear_init(params_, "dec.w2", zin, hp, rng, 1.0 / std::sqrt(static_cast<double>(zin)));
        params_.add("dec.b2", Tensor({1, hp}));
    }
}

GruParams LdvaeModel::content_gru() const {
    return GruParams{"enc.c.gru.", cfg_.embed_width, cfg_.enc_hidden};
}

GruParams LdvaeModel::label_gru(int label) const {
    return GruParams{label_enc_prefix(label) + "gru.", cfg_.embed_width, cfg_.enc_hidden};
}

namespace {

LdvaeModel::Posterior posterior_through(Tape& tape, const VarMap& vars, const GruParams& cell,
                                        const std::string& head_prefix, const Tensor& inputs,
                                        const Tensor& eps) {
    Var in = tape.leaf(inputs);
    Var states = gru_forward(tape, vars, cell, in);
    Var pooled = mean(states, 0, /*keepdim=*/true);  // [1, G]
    Var mu = head_forward(vars, head_prefix + "mu.", pooled);
    Var ls = head_forward(vars, head_prefix + "ls.", pooled);
    Var z = add(mu, mul(exp(scale(ls, 0.5)), tape.leaf(eps)));
    return LdvaeModel::Posterior{mu, ls, z};
}

}  // namespace

LdvaeModel::Posterior LdvaeModel::content_posterior(Tape& tape, const VarMap& vars,
                                                    const std::vector<int>& tokens,
                                                    const Tensor& eps) const {
    if (tokens.empty()) throw std::invalid_argument("content_posterior: empty tokens");
    return posterior_through(tape, vars, content_gru(), "enc.c.", embedder_.token_rows(tokens),
                             eps);
}

LdvaeModel::Posterior LdvaeModel::label_posterior(Tape& tape, const VarMap& vars,
                                                  const std::vector<int>& tokens, int label,
                                                  const Tensor& eps) const {
    if (label < 0 || static_cast<std::size_t>(label) >= n_labels_) {
        throw std::out_of_range("label_posterior: unknown label id " + std::to_string(label));
    }
    return posterior_through(tape, vars, label_gru(label), label_enc_prefix(label),
                             embedder_.token_rows(tokens), eps);
}

Var LdvaeModel::content_prior_mu(Tape& tape, const VarMap& vars, const Tensor& centroid) const {
    return matmul(tape.leaf(centroid), vars.at("prior.wc"));
}

Var LdvaeModel::label_prior_mu(Tape& tape, const VarMap& vars, int label) const {
    const auto E = static_cast<std::size_t>(cfg_.embed_width);
    Tensor row({1, E});
    std::copy(label_emb_.data() + static_cast<std::size_t>(label) * E,
              label_emb_.data() + (static_cast<std::size_t>(label) + 1) * E, row.data());
    return matmul(tape.leaf(row), vars.at("prior.wy" + std::to_string(label)));
}

Var LdvaeModel::decode_prefix([[maybe_unused]] Tape& tape, const VarMap& vars, Var z_c,
                              const std::vector<Var>& z_labels) const {
    if (z_labels.empty()) throw std::invalid_argument("decode_prefix: no label latents");
    const auto L = static_cast<std::size_t>(cfg_.prefix_len);
    std::vector<Var> blocks;
    blocks.reserve(z_labels.size());
    Var zc_rep = repeat_rows(z_c, L);
    for (const Var& zy : z_labels) {
        blocks.push_back(concat_cols({repeat_rows(zy, L), zc_rep}));
    }
    Var stacked = blocks.size() == 1 ? blocks[0] : concat_rows(blocks);
    Var h = stacked;
    if (cfg_.mlp_hidden > 0) {
        h = tanh(add(matmul(h, vars.at("dec.w1")), vars.at("dec.b1")));
    }
    return add(matmul(h, vars.at("dec.w2")), vars.at("dec.b2"));
}

LdvaeModel::ElboNoise LdvaeModel::make_noise(const LabelSet& y, Rng& rng) const {
    ElboNoise noise;
    const auto H = static_cast<std::size_t>(cfg_.latent);
    noise.content = Tensor({1, H});
    const double sc = std::sqrt(cfg_.lambda_c);
    for (std::size_t i = 0; i < H; ++i) noise.content[i] = rng.gauss(0.0, sc);
    const double sy = std::sqrt(cfg_.lambda_y);
    for (std::size_t k = 0; k < y.size(); ++k) {
        Tensor e({1, H});
        for (std::size_t i = 0; i < H; ++i) e[i] = rng.gauss(0.0, sy);
        noise.labels.push_back(std::move(e));
    }
    return noise;
}

LdvaeModel::ElboParts LdvaeModel::elbo_loss(Tape& tape, const VarMap& model_vars,
                                            const VarMap& lm_vars, const Instance& instance,
                                            const ContentIndex& index, const ElboNoise& noise,
                                            double beta) const {
    if (instance.labels.empty()) {
        throw std::invalid_argument("elbo_loss: instance has no labels");
    }
    if (noise.labels.size() != instance.labels.size()) {
        throw std::invalid_argument("elbo_loss: noise does not match the label count");
    }

    Posterior qc = content_posterior(tape, model_vars, instance.tokens, noise.content);
    const int cluster = index.nearest(embedder_.counts_projection(instance.tokens));
    const auto E = static_cast<std::size_t>(cfg_.embed_width);
    Tensor centroid({1, E});
    std::copy(index.centroids.data() + static_cast<std::size_t>(cluster) * E,
              index.centroids.data() + (static_cast<std::size_t>(cluster) + 1) * E,
              centroid.data());
    Var kl_c = gaussian_kl(qc.mu, qc.log_sigma, content_prior_mu(tape, model_vars, centroid),
                           cfg_.lambda_c);

    std::vector<Var> z_labels;
    Var kl_l;
    std::size_t k = 0;
    for (int label : instance.labels) {
        Posterior qy =
            label_posterior(tape, model_vars, instance.tokens, label, noise.labels[k]);
        Var kl = gaussian_kl(qy.mu, qy.log_sigma, label_prior_mu(tape, model_vars, label),
                             cfg_.lambda_y);
        kl_l = k == 0 ? kl : add(kl_l, kl);
        z_labels.push_back(qy.z);
        ++k;
    }

    Var prefix = decode_prefix(tape, model_vars, qc.z, z_labels);
    std::vector<int> tokens = ldvae_text_prompt(instance.labels, lv_);
    const std::size_t loss_from = tokens.size();
    tokens.insert(tokens.end(), instance.tokens.begin(), instance.tokens.end());
    tokens.push_back(Vocab::kEos);
    Var recon = lm_.nll_loss(tape, lm_vars, tokens, loss_from, prefix);

    Var total = add(recon, scale(add(kl_c, kl_l), beta));
    return ElboParts{recon, kl_c, kl_l, total};
}

Tensor LdvaeModel::content_posterior_mean(const std::vector<int>& tokens) const {
    Tape tape;
    VarMap vars = make_vars(tape, params_, false);
    Tensor eps({1, static_cast<std::size_t>(cfg_.latent)});
    return tape.value(content_posterior(tape, vars, tokens, eps).mu);
}

Tensor LdvaeModel::label_posterior_mean(const std::vector<int>& tokens, int label) const {
    Tape tape;
    VarMap vars = make_vars(tape, params_, false);
    Tensor eps({1, static_cast<std::size_t>(cfg_.latent)});
    return tape.value(label_posterior(tape, vars, tokens, label, eps).mu);
}

// ----------------------------- training -----------------------------

LdvaeTrainStats train_ldvae(LdvaeModel& model, const Dataset& dcg, const ContentIndex& index,
                            const LdvaeTrainConfig& cfg) {
    if (dcg.instances.empty()) throw std::invalid_argument("train_ldvae: empty dataset");
    for (std::size_t i = 0; i < dcg.instances.size(); ++i) {
        if (dcg.instances[i].labels.empty()) {
            throw std::invalid_argument("train_ldvae: instance " + std::to_string(i) +
                                        " has an empty label set; exclude it upstream");
        }
    }
    const std::uint64_t lm_checksum_before = model.lm().body_checksum();
    Adam opt(cfg.lr);
    Rng rng(cfg.seed);
    Rng noise_rng = rng.fork(0x6e6f6973);
    std::vector<std::size_t> order(dcg.instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const double total_steps = static_cast<double>(cfg.epochs) *
                               static_cast<double>(dcg.instances.size());
    const double warmup_steps = std::max(1.0, cfg.warmup_frac * total_steps);
    LdvaeTrainStats stats;
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double recon_sum = 0.0, kl_sum = 0.0;
        for (std::size_t i : order) {
            const Instance& inst = dcg.instances[i];
            const double beta =
                cfg.beta_max * std::min(1.0, static_cast<double>(step) / warmup_steps);
            Tape tape;
            VarMap lm_vars = make_vars(tape, model.lm().params(), false);
            VarMap model_vars = make_vars(tape, model.params(), true);
            auto noise = model.make_noise(inst.labels, noise_rng);
            auto parts = model.elbo_loss(tape, model_vars, lm_vars, inst, index, noise, beta);
            const double recon = tape.value(parts.recon).item();
            const double kl =
                tape.value(parts.kl_content).item() + tape.value(parts.kl_label).item();
            if (!std::isfinite(recon) || !std::isfinite(kl)) {
                throw std::runtime_error(
                    "train_ldvae: loss diverged at epoch " + std::to_string(epoch) +
                    " instance " + std::to_string(i) + " (recon=" + std::to_string(recon) +
                    ", kl=" + std::to_string(kl) + ")");
            }
            recon_sum += recon;
            kl_sum += kl;
            tape.backward(parts.total);
            opt.step(model.params(), collect_grads(tape, model_vars));
            ++step;
        }
        stats.recon.push_back(recon_sum / static_cast<double>(dcg.instances.size()));
        stats.kl.push_back(kl_sum / static_cast<double>(dcg.instances.size()));
        log_debug("train_ldvae epoch " + std::to_string(epoch) + " recon " +
                  std::to_string(stats.recon.back()) + " kl " + std::to_string(stats.kl.back()));
    }
    if (model.lm().body_checksum() != lm_checksum_before) {
        throw std::logic_error("train_ldvae: frozen LM body changed during training");
    }
    return stats;
}

// ----------------------------- inference -----------------------------

std::vector<int> generate_ldvae(const LdvaeModel& model, const ContentIndex& index,
                                const LabelSet& y, const GenerateConfig& cfg, Rng& rng) {
    if (y.empty()) throw std::invalid_argument("generate_ldvae: empty label set");
    const auto H = static_cast<std::size_t>(model.config().latent);
    const auto E = static_cast<std::size_t>(model.config().embed_width);

    const auto cluster = static_cast<std::size_t>(rng.below(index.clusters()));
    Tensor centroid({1, E});
    std::copy(index.centroids.data() + cluster * E, index.centroids.data() + (cluster + 1) * E,
              centroid.data());

    Tape tape;
    VarMap vars = make_vars(tape, model.params(), false);
    Var zc;
    {
        Tensor z = tape.value(model.content_prior_mu(tape, vars, centroid));
        const double sd = std::sqrt(model.config().lambda_c);
        for (std::size_t i = 0; i < H; ++i) z[i] += rng.gauss(0.0, sd);
        zc = tape.leaf(z);
    }
    std::vector<Var> z_labels;
    const double sdy = std::sqrt(model.config().lambda_y);
    for (int label : y) {
        Tensor z = tape.value(model.label_prior_mu(tape, vars, label));
        for (std::size_t i = 0; i < H; ++i) z[i] += rng.gauss(0.0, sdy);
        z_labels.push_back(tape.leaf(z));
    }
    Tensor prefix = tape.value(model.decode_prefix(tape, vars, zc, z_labels));

    std::vector<int> prompt = ldvae_text_prompt(y, model.label_vocab());
    SampleConfig sc;
    sc.max_len = cfg.max_len;
    sc.temperature = cfg.temperature;
    return sample_tokens(model.lm(), &prefix, prompt, sc, rng);
}

double ldvae_mean_recon_loss(const LdvaeModel& model, const Dataset& data,
                             const ContentIndex& index) {
    if (data.instances.empty()) {
        throw std::invalid_argument("ldvae_mean_recon_loss: empty dataset");
    }
    double total = 0.0;
    const auto H = static_cast<std::size_t>(model.config().latent);
    for (const Instance& inst : data.instances) {
        Tape tape;
        VarMap lm_vars = make_vars(tape, model.lm().params(), false);
        VarMap model_vars = make_vars(tape, model.params(), false);
        LdvaeModel::ElboNoise noise;
        noise.content = Tensor({1, H});
        for (std::size_t i = 0; i < inst.labels.size(); ++i) {
            noise.labels.push_back(Tensor({1, H}));
        }
        auto parts = model.elbo_loss(tape, model_vars, lm_vars, inst, index, noise, 0.0);
        total += tape.value(parts.recon).item();
    }
    return total / static_cast<double>(data.instances.size());
}

double disentanglement_ratio(const LdvaeModel& model, const Dataset& data,
                             std::size_t max_per_label) {
    struct Entry {
        int label;
        LabelSet comp;
        Tensor mu;
    };
    std::vector<Entry> entries;
    std::vector<std::size_t> taken(model.n_labels(), 0);
    for (const Instance& inst : data.instances) {
        for (int label : inst.labels) {
            auto& count = taken[static_cast<std::size_t>(label)];
            if (count >= max_per_label) continue;
            ++count;
            entries.push_back(
                Entry{label, inst.labels, model.label_posterior_mean(inst.tokens, label)});
        }
    }
    double intra_sum = 0.0, inter_sum = 0.0;
    std::size_t intra_n = 0, inter_n = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (std::size_t j = i + 1; j < entries.size(); ++j) {
            double d = 0.0;
            for (std::size_t x = 0; x < entries[i].mu.size(); ++x) {
                const double diff = entries[i].mu[x] - entries[j].mu[x];
                d += diff * diff;
            }
            d = std::sqrt(d);
            if (entries[i].label == entries[j].label) {
                if (!(entries[i].comp == entries[j].comp)) {
                    intra_sum += d;
                    ++intra_n;
                }
            } else {
                inter_sum += d;
                ++inter_n;
            }
        }
    }
    if (intra_n == 0 || inter_n == 0) {
        throw std::invalid_argument("disentanglement_ratio: not enough cross-composition pairs");
    }
    return (intra_sum / static_cast<double>(intra_n)) /
           (inter_sum / static_cast<double>(inter_n));
}

// ----------------------------- persistence -----------------------------

void LdvaeModel::save(const std::string& path_prefix) const {
    lm_.save(path_prefix + ".lm");
    ParamStore out;
    out.add("_cfg.latent", Tensor::scalar(cfg_.latent));
    out.add("_cfg.enc_hidden", Tensor::scalar(cfg_.enc_hidden));
    out.add("_cfg.embed_width", Tensor::scalar(cfg_.embed_width));
    out.add("_cfg.prefix_len", Tensor::scalar(cfg_.prefix_len));
    out.add("_cfg.mlp_hidden", Tensor::scalar(cfg_.mlp_hidden));
    out.add("_cfg.lambda_c", Tensor::scalar(cfg_.lambda_c));
    out.add("_cfg.lambda_y", Tensor::scalar(cfg_.lambda_y));
    out.add("_cfg.clusters", Tensor::scalar(cfg_.clusters));
    out.add("_cfg.init_std", Tensor::scalar(cfg_.init_std));
    out.add("_cfg.embedder_seed", Tensor::scalar(static_cast<double>(cfg_.embedder_seed)));
    out.add("_cfg.n_labels", Tensor::scalar(static_cast<double>(n_labels_)));
    out.add("_emb.proj", embedder_.proj);
    out.add("_emb.labels", label_emb_);
    {
        Tensor prompt({lv_.prompt_tokens.size()});
        for (std::size_t i = 0; i < lv_.prompt_tokens.size(); ++i) {
            prompt[i] = lv_.prompt_tokens[i];
        }
        out.add("_lv.prompt", std::move(prompt));
        out.add("_lv.vocab_size", Tensor::scalar(lv_.vocab_size));
        for (std::size_t l = 0; l < lv_.phrase_tokens.size(); ++l) {
            Tensor p({lv_.phrase_tokens[l].size()});
            for (std::size_t i = 0; i < p.size(); ++i) p[i] = lv_.phrase_tokens[l][i];
            out.add("_lv.phrase." + std::to_string(l), std::move(p));
        }
    }
    for (const auto& [name, t] : params_.items()) out.add(name, t);
    out.save(path_prefix);
}

LdvaeModel LdvaeModel::load(const std::string& path_prefix) {
    LdvaeModel m;
    m.lm_ = CausalLm::load(path_prefix + ".lm");
    ParamStore all = ParamStore::load(path_prefix);
    m.cfg_.latent = static_cast<int>(all.at("_cfg.latent").item());
    m.cfg_.enc_hidden = static_cast<int>(all.at("_cfg.enc_hidden").item());
    m.cfg_.embed_width = static_cast<int>(all.at("_cfg.embed_width").item());
    m.cfg_.prefix_len = static_cast<int>(all.at("_cfg.prefix_len").item());
    m.cfg_.mlp_hidden = static_cast<int>(all.at("_cfg.mlp_hidden").item());
    m.cfg_.lambda_c = all.at("_cfg.lambda_c").item();
    m.cfg_.lambda_y = all.at("_cfg.lambda_y").item();
    m.cfg_.clusters = static_cast<int>(all.at("_cfg.clusters").item());
    m.cfg_.init_std = all.at("_cfg.init_std").item();
    m.cfg_.embedder_seed = static_cast<std::uint64_t>(all.at("_cfg.embedder_seed").item());
    m.n_labels_ = static_cast<std::size_t>(all.at("_cfg.n_labels").item());
    m.embedder_.proj = all.at("_emb.proj");
    m.label_emb_ = all.at("_emb.labels");
    m.lv_.vocab_size = static_cast<int>(all.at("_lv.vocab_size").item());
    m.lv_.mask.assign(static_cast<std::size_t>(m.lv_.vocab_size), 0);
    {
        const Tensor& prompt = all.at("_lv.prompt");
        for (std::size_t i = 0; i < prompt.size(); ++i) {
            m.lv_.prompt_tokens.push_back(static_cast<int>(prompt[i]));
        }
        for (std::size_t l = 0; l < m.n_labels_; ++l) {
            const Tensor& p = all.at("_lv.phrase." + std::to_string(l));
            std::vector<int> toks;
            for (std::size_t i = 0; i < p.size(); ++i) {
                toks.push_back(static_cast<int>(p[i]));
                m.lv_.mask[static_cast<std::size_t>(toks.back())] = 1;
            }
            m.lv_.phrase_tokens.push_back(std::move(toks));
        }
        m.lv_.mask[Vocab::kSep] = 1;
        m.lv_.mask[Vocab::kEos] = 1;
    }
    for (auto& [name, t] : all.items()) {
        if (name.rfind("_cfg.", 0) == 0 || name.rfind("_lv.", 0) == 0 ||
            name.rfind("_emb.", 0) == 0) {
            continue;
        }
        m.params_.add(name, std::move(t));
    }
    return m;
}

}  // namespace cgaug
