#include "cgaug/lspt.hpp"

#include <algorithm>
#include <cmath>

namespace cgaug {

namespace {

std::string z_name(int label) { return "z." + std::to_string(label); }

}  // namespace

LsptModel::LsptModel(CausalLm frozen_lm, LabelVocab lv, std::size_t n_labels, LsptConfig cfg,
                     std::uint64_t seed)
    : cfg_(cfg), lm_(std::move(frozen_lm)), lv_(std::move(lv)), n_labels_(n_labels) {
    if (cfg_.mlp_hidden == 0) cfg_.mlp_hidden = 2 * lm_.config().hidden;
    const auto bw = static_cast<std::size_t>(cfg_.bank_width);
    const auto hp = static_cast<std::size_t>(lm_.config().hidden);
    Rng rng(seed);
    for (std::size_t l = 0; l < n_labels_; ++l) {
        Tensor z({static_cast<std::size_t>(cfg_.prefix_len), bw});
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.gauss(0.0, cfg_.init_std);
        prefix_params_.add(z_name(static_cast<int>(l)), std::move(z));
    }
    if (cfg_.mlp_hidden > 0) {
        const auto mh = static_cast<std::size_t>(cfg_.mlp_hidden);
        linear_init(prefix_params_, "mlp.w1", bw, mh, rng,
                    1.0 / std::sqrt(static_cast<double>(bw)));
        prefix_params_.add("mlp.b1", Tensor({1, mh}));
        linear_init(prefix_params_, "mlp.w2", mh, hp, rng,
                    1.0 / std::sqrt(static_cast<double>(mh)));
        prefix_params_.add("mlp.b2", Tensor({1, hp}));
    } else {
        // linear prefix map (mlp_hidden < 0); used where an identity map is wanted
        linear_init(prefix_params_, "mlp.w2", bw, hp, rng,
                    1.0 / std::sqrt(static_cast<double>(bw)));
        prefix_params_.add("mlp.b2", Tensor({1, hp}));
    }
}

Var LsptModel::compose_prefix([[maybe_unused]] Tape& tape, const VarMap& vars, const LabelSet& y) const {
    if (y.empty()) throw std::invalid_argument("compose_prefix: empty label set");
    std::vector<Var> blocks;
    blocks.reserve(y.size());
    for (int id : y) {
        if (id < 0 || static_cast<std::size_t>(id) >= n_labels_) {
            throw std::out_of_range("compose_prefix: unknown label id " + std::to_string(id));
        }
        blocks.push_back(vars.at(z_name(id)));
    }
    Var stacked = blocks.size() == 1 ? blocks[0] : concat_rows(blocks);
    Var h = stacked;
    if (cfg_.mlp_hidden > 0) {
        h = tanh(add(matmul(h, vars.at("mlp.w1")), vars.at("mlp.b1")));
    }
    return add(matmul(h, vars.at("mlp.w2")), vars.at("mlp.b2"));
}

Tensor LsptModel::prefix_tensor(const LabelSet& y) const {
    Tape tape;
    VarMap vars = make_vars(tape, prefix_params_, /*trainable=*/false);
    return tape.value(compose_prefix(tape, vars, y));
}

namespace {

// serialized label phrases followed by <bos>; the eos of the label sequence
// is dropped because the text follows instead
std::vector<int> text_prompt(const LabelSet& y, const LabelVocab& lv) {
    std::vector<int> prompt = serialize_composition(y, lv, /*with_prompt=*/false);
    prompt.back() = Vocab::kBos;  // replace terminal <eos>
    return prompt;
}

}  // namespace

std::vector<double> train_lspt(LsptModel& model, const Dataset& dcg,
                               const GenTrainConfig& cfg) {
    if (dcg.instances.empty()) throw std::invalid_argument("train_lspt: empty dataset");
    for (std::size_t i = 0; i < dcg.instances.size(); ++i) {
        if (dcg.instances[i].labels.empty()) {
            throw std::invalid_argument("train_lspt: instance " + std::to_string(i) +
                                        " has an empty label set; exclude it upstream");
        }
    }
    const std::uint64_t lm_checksum_before = model.lm().body_checksum();
    Adam opt(cfg.lr);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(dcg.instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t i : order) {
            const Instance& inst = dcg.instances[i];
            std::vector<int> tokens = text_prompt(inst.labels, model.label_vocab());
            const std::size_t loss_from = tokens.size();
            tokens.insert(tokens.end(), inst.tokens.begin(), inst.tokens.end());
            tokens.push_back(Vocab::kEos);

            Tape tape;
            VarMap lm_vars = make_vars(tape, model.lm().params(), /*trainable=*/false);
            VarMap pfx_vars = make_vars(tape, model.prefix_params(), /*trainable=*/true);
            Var prefix = model.compose_prefix(tape, pfx_vars, inst.labels);
            Var loss = model.lm().nll_loss(tape, lm_vars, tokens, loss_from, prefix);
            total += tape.value(loss).item();
            tape.backward(loss);
            opt.step(model.prefix_params(), collect_grads(tape, pfx_vars));
        }
        epoch_losses.push_back(total / static_cast<double>(dcg.instances.size()));
        log_debug("train_lspt epoch " + std::to_string(epoch) + " loss " +
                  std::to_string(epoch_losses.back()));
    }
    if (model.lm().body_checksum() != lm_checksum_before) {
        throw std::logic_error("train_lspt: frozen LM body changed during training");
    }
    return epoch_losses;
}

double lspt_mean_loss(const LsptModel& model, const Dataset& data) {
    if (data.instances.empty()) throw std::invalid_argument("lspt_mean_loss: empty dataset");
    double total = 0.0;
    for (const Instance& inst : data.instances) {
        std::vector<int> tokens = text_prompt(inst.labels, model.label_vocab());
        const std::size_t loss_from = tokens.size();
        tokens.insert(tokens.end(), inst.tokens.begin(), inst.tokens.end());
        tokens.push_back(Vocab::kEos);
        Tape tape;
        VarMap lm_vars = make_vars(tape, model.lm().params(), false);
        VarMap pfx_vars = make_vars(tape, model.prefix_params(), false);
        Var prefix = model.compose_prefix(tape, pfx_vars, inst.labels);
        total += tape.value(model.lm().nll_loss(tape, lm_vars, tokens, loss_from, prefix)).item();
    }
    return total / static_cast<double>(data.instances.size());
}

std::vector<int> generate_lspt(const LsptModel& model, const LabelSet& y,
                               const GenerateConfig& cfg, Rng& rng) {
    if (y.empty()) throw std::invalid_argument("generate_lspt: empty label set");
    Tensor prefix = model.prefix_tensor(y);
    std::vector<int> prompt = text_prompt(y, model.label_vocab());
    SampleConfig sc;
    sc.max_len = cfg.max_len;
    sc.temperature = cfg.temperature;
    return sample_tokens(model.lm(), &prefix, prompt, sc, rng);
}

void LsptModel::save(const std::string& path_prefix) const {
    lm_.save(path_prefix + ".lm");
    ParamStore out;
    out.add("_cfg.prefix_len", Tensor::scalar(cfg_.prefix_len));
    out.add("_cfg.bank_width", Tensor::scalar(cfg_.bank_width));
    out.add("_cfg.mlp_hidden", Tensor::scalar(cfg_.mlp_hidden));
    out.add("_cfg.init_std", Tensor::scalar(cfg_.init_std));
    out.add("_cfg.n_labels", Tensor::scalar(static_cast<double>(n_labels_)));
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
    for (const auto& [name, t] : prefix_params_.items()) out.add(name, t);
    out.save(path_prefix);
}

LsptModel LsptModel::load(const std::string& path_prefix) {
    LsptModel m;
    m.lm_ = CausalLm::load(path_prefix + ".lm");
    ParamStore all = ParamStore::load(path_prefix);
    m.cfg_.prefix_len = static_cast<int>(all.at("_cfg.prefix_len").item());
    m.cfg_.bank_width = static_cast<int>(all.at("_cfg.bank_width").item());
    m.cfg_.mlp_hidden = static_cast<int>(all.at("_cfg.mlp_hidden").item());
    m.cfg_.init_std = all.at("_cfg.init_std").item();
    m.n_labels_ = static_cast<std::size_t>(all.at("_cfg.n_labels").item());
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
        if (name.rfind("_cfg.", 0) == 0 || name.rfind("_lv.", 0) == 0) continue;
        m.prefix_params_.add(name, std::move(t));
    }
    return m;
}

}  // namespace cgaug
