#include "cgaug/classifier.hpp"

#include <algorithm>
#include <cmath>

namespace cgaug {

MltcModel::MltcModel(std::size_t vocab, std::size_t n_labels, ClassifierConfig cfg,
                     std::uint64_t seed)
    : cfg_(cfg), n_labels_(n_labels), vocab_(vocab) {
    if (vocab == 0 || n_labels == 0) {
        throw std::invalid_argument("MltcModel: vocab and label count must be positive");
    }
    Rng rng(seed);
    const auto E = static_cast<std::size_t>(cfg_.embed);
    const auto H = static_cast<std::size_t>(cfg_.hidden);
    const auto M = static_cast<std::size_t>(cfg_.mlp_hidden);
    {
        Tensor emb({vocab, E});
        for (std::size_t i = 0; i < emb.size(); ++i) emb[i] = rng.gauss(0.0, cfg_.init_std);
        params_.add("emb", std::move(emb));
    }
    gru_init(params_, GruParams{"gru.", cfg_.embed, cfg_.hidden}, rng);
    linear_init(params_, "head.w1", H, M, rng, 1.0 / std::sqrt(static_cast<double>(H)));
    params_.add("head.b1", Tensor({1, M}));
    linear_init(params_, "head.w2", M, n_labels, rng, 1.0 / std::sqrt(static_cast<double>(M)));
    params_.add("head.b2", Tensor({1, n_labels}));
}

Var MltcModel::logits(Tape& tape, const VarMap& vars, const std::vector<int>& tokens) const {
    if (tokens.empty()) throw std::invalid_argument("classifier: empty token sequence");
    Var emb = gather_rows(vars.at("emb"), tokens);  // [T, E]
    Var states = gru_forward(tape, vars, GruParams{"gru.", cfg_.embed, cfg_.hidden}, emb);
    Var pooled = mean(states, 0, /*keepdim=*/true);  // [1, H]
    Var h = tanh(add(matmul(pooled, vars.at("head.w1")), vars.at("head.b1")));
    return add(matmul(h, vars.at("head.w2")), vars.at("head.b2"));
}

LabelSet MltcModel::predict(const std::vector<int>& tokens) const {
    Tape tape;
    VarMap vars = make_vars(tape, params_, false);
    const Tensor& l = tape.value(logits(tape, vars, tokens));
    LabelSet out;
    for (std::size_t j = 0; j < n_labels_; ++j) {
        // sigmoid(x) > 0.5 strictly, i.e. x > 0 strictly
        if (l[j] > 0.0) out.insert(static_cast<int>(j));
    }
    return out;
}

ClfTrainStats train_classifier(MltcModel& model, const Dataset& data,
                               const ClfTrainConfig& cfg) {
    if (data.instances.empty()) throw std::invalid_argument("train_classifier: empty dataset");
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(data.instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<std::size_t> holdout;
    std::vector<std::size_t> train_idx;
    if (cfg.holdout_frac > 0.0 && data.instances.size() >= 10) {
        std::vector<std::size_t> shuffled = order;
        rng.shuffle(shuffled);
        const auto n_hold = std::max<std::size_t>(
            1, static_cast<std::size_t>(cfg.holdout_frac *
                                        static_cast<double>(data.instances.size())));
        holdout.assign(shuffled.begin(), shuffled.begin() + static_cast<long>(n_hold));
        train_idx.assign(shuffled.begin() + static_cast<long>(n_hold), shuffled.end());
        std::sort(holdout.begin(), holdout.end());
        std::sort(train_idx.begin(), train_idx.end());
    } else {
        train_idx = order;
    }

    auto multi_hot = [&](const LabelSet& y) {
        Tensor t({1, model.n_labels()});
        for (int id : y) t[static_cast<std::size_t>(id)] = 1.0;
        return t;
    };
    auto eval_loss = [&](const std::vector<std::size_t>& idx) {
        double total = 0.0;
        for (std::size_t i : idx) {
            Tape tape;
            VarMap vars = make_vars(tape, model.params(), false);
            Var l = model.logits(tape, vars, data.instances[i].tokens);
            total += tape.value(bce_with_logits(l, multi_hot(data.instances[i].labels))).item();
        }
        return total / static_cast<double>(idx.size());
    };

    Adam opt(cfg.lr);
    ClfTrainStats stats;
    std::vector<std::size_t> sweep = train_idx;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(sweep);
        double total = 0.0;
        for (std::size_t i : sweep) {
            Tape tape;
            VarMap vars = make_vars(tape, model.params(), true);
            Var l = model.logits(tape, vars, data.instances[i].tokens);
            Var loss = bce_with_logits(l, multi_hot(data.instances[i].labels));
            const double v = tape.value(loss).item();
            if (!std::isfinite(v)) {
                throw std::runtime_error("train_classifier: loss diverged at epoch " +
                                         std::to_string(epoch) + " instance " +
                                         std::to_string(i));
            }
            total += v;
            tape.backward(loss);
            opt.step(model.params(), collect_grads(tape, vars));
        }
        stats.train_loss.push_back(total / static_cast<double>(sweep.size()));
        if (!holdout.empty()) stats.holdout_loss.push_back(eval_loss(holdout));
        log_debug("train_classifier epoch " + std::to_string(epoch) + " train " +
                  std::to_string(stats.train_loss.back()) +
                  (holdout.empty() ? "" : " holdout " + std::to_string(stats.holdout_loss.back())));
    }
    return stats;
}

std::vector<LabelSet> predict_all(const MltcModel& model, const Dataset& data) {
    std::vector<LabelSet> preds;
    preds.reserve(data.instances.size());
    for (const Instance& inst : data.instances) preds.push_back(model.predict(inst.tokens));
    return preds;
}

MetricReport evaluate_model(const MltcModel& model, const Dataset& test) {
    std::vector<LabelSet> golds;
    golds.reserve(test.instances.size());
    for (const Instance& inst : test.instances) golds.push_back(inst.labels);
    return evaluate(predict_all(model, test), golds);
}

void MltcModel::save(const std::string& path_prefix) const {
    ParamStore out;
    out.add("_cfg.embed", Tensor::scalar(cfg_.embed));
    out.add("_cfg.hidden", Tensor::scalar(cfg_.hidden));
    out.add("_cfg.mlp_hidden", Tensor::scalar(cfg_.mlp_hidden));
    out.add("_cfg.init_std", Tensor::scalar(cfg_.init_std));
    out.add("_cfg.n_labels", Tensor::scalar(static_cast<double>(n_labels_)));
    out.add("_cfg.vocab", Tensor::scalar(static_cast<double>(vocab_)));
    for (const auto& [name, t] : params_.items()) out.add(name, t);
    out.save(path_prefix);
}

MltcModel MltcModel::load(const std::string& path_prefix) {
    ParamStore all = ParamStore::load(path_prefix);
    MltcModel m;
    m.cfg_.embed = static_cast<int>(all.at("_cfg.embed").item());
    m.cfg_.hidden = static_cast<int>(all.at("_cfg.hidden").item());
    m.cfg_.mlp_hidden = static_cast<int>(all.at("_cfg.mlp_hidden").item());
    m.cfg_.init_std = all.at("_cfg.init_std").item();
    m.n_labels_ = static_cast<std::size_t>(all.at("_cfg.n_labels").item());
    m.vocab_ = static_cast<std::size_t>(all.at("_cfg.vocab").item());
    for (auto& [name, t] : all.items()) {
        if (name.rfind("_cfg.", 0) == 0) continue;
        m.params_.add(name, std::move(t));
    }
    return m;
}

}  // namespace cgaug
