#include "cgaug/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cgaug {

// ----------------------------- ParamStore -----------------------------

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw std::invalid_argument("param '" + name + "' already exists");
    index_.emplace(name, items_.size());
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no param '" + name + "'");
    return items_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no param '" + name + "'");
    return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : items_) n += t.size();
    return n;
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : items_) {
        h = fnv1a64(name, h);
        std::uint64_t tc = t.checksum();
        h = fnv1a64(&tc, sizeof(tc), h);
    }
    return h;
}

void ParamStore::save(const std::string& path_prefix) const {
    std::ofstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open for write: " + path_prefix + ".bin");
    std::ofstream man(path_prefix + ".manifest");
    if (!man) throw std::runtime_error("cannot open for write: " + path_prefix + ".manifest");
    for (const auto& [name, t] : items_) {
        auto offset = static_cast<std::uint64_t>(bin.tellp());
        man << name << "\t";
        const auto& shape = t.shape();
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) man << ",";
            man << shape[i];
        }
        if (shape.empty()) man << "-";
        man << "\t" << offset << "\n";
        t.write(bin);
    }
    if (!bin || !man) throw std::runtime_error("checkpoint write failed: " + path_prefix);
}

ParamStore ParamStore::load(const std::string& path_prefix) {
    std::ifstream man(path_prefix + ".manifest");
    if (!man) throw std::runtime_error("cannot open: " + path_prefix + ".manifest");
    std::ifstream bin(path_prefix + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open: " + path_prefix + ".bin");
    ParamStore ps;
    std::string line;
    while (std::getline(man, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string name, dims, offset_str;
        if (!std::getline(is, name, '\t') || !std::getline(is, dims, '\t') ||
            !std::getline(is, offset_str)) {
            throw ParseError(path_prefix + ".manifest: bad line '" + line + "'");
        }
        bin.seekg(static_cast<std::streamoff>(std::stoull(offset_str)));
        Tensor t = Tensor::read(bin);
        ps.add(name, std::move(t));
    }
    return ps;
}

VarMap make_vars(Tape& tape, const ParamStore& params, bool trainable) {
    VarMap vars;
    for (const auto& [name, t] : params.items()) vars[name] = tape.leaf(t, trainable);
    return vars;
}

std::map<std::string, Tensor> collect_grads(Tape& tape, const VarMap& vars) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, v] : vars) {
        if (tape.requires_grad(v)) grads[name] = tape.grad(v);
    }
    return grads;
}

// ----------------------------- Adam -----------------------------

void Adam::step(ParamStore& params, const std::map<std::string, Tensor>& grads) {
    ++steps;
    const double b1t = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double b2t = 1.0 - std::pow(beta2, static_cast<double>(steps));
    for (const auto& [name, g] : grads) {
        Tensor& p = params.at(name);
        if (!p.same_shape(g)) {
            throw ShapeError("adam: grad shape " + shape_str(g.shape()) + " vs param " +
                             shape_str(p.shape()) + " for '" + name + "'");
        }
        auto mit = m.find(name);
        if (mit == m.end()) mit = m.emplace(name, Tensor::zeros(p.shape())).first;
        auto vit = v.find(name);
        if (vit == v.end()) vit = v.emplace(name, Tensor::zeros(p.shape())).first;
        Tensor& mb = mit->second;
        Tensor& vb = vit->second;
        for (std::size_t i = 0; i < p.size(); ++i) {
            mb[i] = beta1 * mb[i] + (1.0 - beta1) * g[i];
            vb[i] = beta2 * vb[i] + (1.0 - beta2) * g[i] * g[i];
            const double mhat = mb[i] / b1t;
            const double vhat = vb[i] / b2t;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ----------------------------- building blocks -----------------------------

void linear_init(ParamStore& ps, const std::string& name, std::size_t in, std::size_t out,
                 Rng& rng, double std_dev) {
    Tensor w({in, out});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.gauss(0.0, std_dev);
    ps.add(name, std::move(w));
}

Var rmsnorm(Var x) {
    return mul(x, powc(add_const(mean(square(x), 1, true), 1e-5), -0.5));
}

void gru_init(ParamStore& ps, const GruParams& cell, Rng& rng) {
    const auto in = static_cast<std::size_t>(cell.in_dim);
    const auto h = static_cast<std::size_t>(cell.hidden);
    const double win = 1.0 / std::sqrt(static_cast<double>(cell.in_dim));
    const double wh = 1.0 / std::sqrt(static_cast<double>(cell.hidden));
    for (const char* gate : {"z", "r", "n"}) {
        linear_init(ps, cell.prefix + "w" + gate, in, h, rng, win);
        linear_init(ps, cell.prefix + "u" + gate, h, h, rng, wh);
        ps.add(cell.prefix + "b" + gate, Tensor({1, h}));
    }
}

Var gru_forward(Tape& tape, const VarMap& pv, const GruParams& cell, Var inputs, Var h0) {
    const Tensor& in = tape.value(inputs);
    if (in.rank() != 2 || in.shape()[1] != static_cast<std::size_t>(cell.in_dim)) {
        throw ShapeError("gru_forward: inputs " + shape_str(in.shape()) + " vs in_dim " +
                         std::to_string(cell.in_dim));
    }
    const std::size_t steps = in.shape()[0];
    if (steps == 0) return tape.leaf(Tensor({0, static_cast<std::size_t>(cell.hidden)}));
    const Var wz = pv.at(cell.prefix + "wz"), uz = pv.at(cell.prefix + "uz"),
              bz = pv.at(cell.prefix + "bz");
    const Var wr = pv.at(cell.prefix + "wr"), ur = pv.at(cell.prefix + "ur"),
              br = pv.at(cell.prefix + "br");
    const Var wn = pv.at(cell.prefix + "wn"), un = pv.at(cell.prefix + "un"),
              bn = pv.at(cell.prefix + "bn");
    Var h = h0;
    std::vector<Var> states;
    states.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
        Var x = slice_rows(inputs, t, t + 1);
        Var z = sigmoid(matmul(x, wz) + matmul(h, uz) + bz);
        Var r = sigmoid(matmul(x, wr) + matmul(h, ur) + br);
        Var n = tanh(matmul(x, wn) + matmul(mul(r, h), un) + bn);
        Var keep = add_const(neg(z), 1.0);  // 1 - z
        h = mul(keep, n) + mul(z, h);
        states.push_back(h);
    }
    return concat_rows(states);
}

Var gru_forward(Tape& tape, const VarMap& pv, const GruParams& cell, Var inputs) {
    Var h0 = tape.leaf(Tensor({1, static_cast<std::size_t>(cell.hidden)}));
    return gru_forward(tape, pv, cell, inputs, h0);
}

// ----------------------------- CausalLm -----------------------------

CausalLm::CausalLm(LmConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.vocab <= 0) throw std::invalid_argument("CausalLm: vocab must be positive");
    if (cfg_.hidden % cfg_.heads != 0) {
        throw std::invalid_argument("CausalLm: hidden must be divisible by heads");
    }
    Rng rng(seed);
    const auto v = static_cast<std::size_t>(cfg_.vocab);
    const auto h = static_cast<std::size_t>(cfg_.hidden);
    const auto f = static_cast<std::size_t>(cfg_.hidden * cfg_.ffn_mult);
    auto gauss_tensor = [&](std::vector<std::size_t> shape) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gauss(0.0, cfg_.init_std);
        return t;
    };
    params_.add("wte", gauss_tensor({v, h}));
    params_.add("wpe", gauss_tensor({static_cast<std::size_t>(cfg_.max_pos), h}));
    params_.add("wpe_prefix", gauss_tensor({static_cast<std::size_t>(cfg_.max_prefix), h}));
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string p = "b" + std::to_string(b) + ".";
        params_.add(p + "wq", gauss_tensor({h, h}));
        params_.add(p + "wk", gauss_tensor({h, h}));
        params_.add(p + "wv", gauss_tensor({h, h}));
        params_.add(p + "wo", gauss_tensor({h, h}));
        params_.add(p + "fc1", gauss_tensor({h, f}));
        params_.add(p + "fc2", gauss_tensor({f, h}));
    }
    params_.add("out", gauss_tensor({h, v}));
}

CausalLm::Forward CausalLm::forward(Tape& tape, const VarMap& pv,
                                    const std::vector<int>& tokens, Var prefix) const {
    if (tokens.empty()) throw std::invalid_argument("lm_forward: empty token sequence");
    if (tokens.size() > static_cast<std::size_t>(cfg_.max_pos)) {
        throw ShapeError("lm_forward: " + std::to_string(tokens.size()) +
                         " tokens exceed max_pos " + std::to_string(cfg_.max_pos));
    }
    const std::size_t T = tokens.size();
    const auto H = static_cast<std::size_t>(cfg_.hidden);
    std::size_t P = 0;
    if (prefix.valid()) {
        const Tensor& pm = tape.value(prefix);
        if (pm.rank() != 2 || pm.shape()[1] != H) {
            throw ShapeError("lm_forward: prefix width " + shape_str(pm.shape()) +
                             " does not match hidden width " + std::to_string(cfg_.hidden));
        }
        P = pm.shape()[0];
        if (P > static_cast<std::size_t>(cfg_.max_prefix)) {
            throw ShapeError("lm_forward: prefix rows " + std::to_string(P) + " exceed max " +
                             std::to_string(cfg_.max_prefix));
        }
    }
    const std::size_t S = P + T;

    Var x_text = add(gather_rows(pv.at("wte"), tokens), slice_rows(pv.at("wpe"), 0, T));
    Var x;
    if (P > 0) {
        Var x_pre = add(prefix, slice_rows(pv.at("wpe_prefix"), 0, P));
        x = concat_rows({x_pre, x_text});
    } else {
        x = x_text;
    }

    // strictly causal over [prefix rows || token positions]
    Tensor mask({S, S});
    for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = i + 1; j < S; ++j) mask.at2(i, j) = -1e30;
    }
    Var mask_v = tape.leaf(std::move(mask));

    const int heads = cfg_.heads;
    const std::size_t hd = H / static_cast<std::size_t>(heads);
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string p = "b" + std::to_string(b) + ".";
        Var hn = rmsnorm(x);
        Var q = matmul(hn, pv.at(p + "wq"));
        Var k = matmul(hn, pv.at(p + "wk"));
        Var v = matmul(hn, pv.at(p + "wv"));
        std::vector<Var> head_out;
        head_out.reserve(static_cast<std::size_t>(heads));
        for (int hh = 0; hh < heads; ++hh) {
            const std::size_t c0 = static_cast<std::size_t>(hh) * hd, c1 = c0 + hd;
            Var qh = slice_cols(q, c0, c1);
            Var kh = slice_cols(k, c0, c1);
            Var vh = slice_cols(v, c0, c1);
            Var scores = add(scale(matmul(qh, transpose(kh)), att_scale), mask_v);
            head_out.push_back(matmul(softmax(scores), vh));
        }
        x = add(x, matmul(concat_cols(head_out), pv.at(p + "wo")));
        Var hn2 = rmsnorm(x);
        x = add(x, matmul(tanh(matmul(hn2, pv.at(p + "fc1"))), pv.at(p + "fc2")));
    }
    Var hidden = rmsnorm(x);
    if (P > 0) {
        // Eq-style literal override: hidden states at prefix positions are
        // the prefix rows themselves.
        hidden = concat_rows({prefix, slice_rows(hidden, P, S)});
    }
    Var logits = matmul(hidden, pv.at("out"));
    return Forward{hidden, logits, P};
}

Var CausalLm::nll_loss(Tape& tape, const VarMap& pv, const std::vector<int>& tokens,
                       std::size_t loss_from, Var prefix) const {
    if (loss_from < 1 || loss_from >= tokens.size()) {
        throw std::invalid_argument("nll_loss: loss_from " + std::to_string(loss_from) +
                                    " out of range for " + std::to_string(tokens.size()) +
                                    " tokens");
    }
    Forward fw = forward(tape, pv, tokens, prefix);
    const std::size_t P = fw.prefix_rows;
    Var pred = slice_rows(fw.logits, P + loss_from - 1, P + tokens.size() - 1);
    std::vector<int> targets(tokens.begin() + static_cast<long>(loss_from), tokens.end());
    return cross_entropy(pred, targets);
}

std::vector<double> CausalLm::next_token_probs(const std::vector<int>& tokens,
                                               const Tensor* prefix, double temperature,
                                               const std::vector<char>* token_mask) const {
    if (temperature < 0.0) throw std::invalid_argument("temperature must be >= 0");
    if (token_mask != nullptr && token_mask->size() != static_cast<std::size_t>(cfg_.vocab)) {
        throw std::invalid_argument("token mask size does not match vocab");
    }
    Tape tape;
    VarMap pv = make_vars(tape, params_, /*trainable=*/false);
    Var pfx;
    if (prefix != nullptr) pfx = tape.leaf(*prefix, false);
    Forward fw = forward(tape, pv, tokens, pfx);
    const Tensor& logits = tape.value(fw.logits);
    const std::size_t V = logits.shape()[1];
    const std::size_t last = logits.shape()[0] - 1;

    auto allowed = [&](std::size_t j) {
        return token_mask == nullptr || (*token_mask)[j] != 0;
    };
    std::vector<double> probs(V, 0.0);
    bool any = false;
    for (std::size_t j = 0; j < V; ++j) any = any || allowed(j);
    if (!any) throw std::invalid_argument("token mask excludes all tokens");

    if (temperature == 0.0) {
        std::size_t best = V;
        double best_v = 0.0;
        for (std::size_t j = 0; j < V; ++j) {
            if (!allowed(j)) continue;
            double lv = logits.at2(last, j);
            if (best == V || lv > best_v) {
                best = j;
                best_v = lv;
            }
        }
        probs[best] = 1.0;
        return probs;
    }
    double mx = 0.0;
    bool first = true;
    for (std::size_t j = 0; j < V; ++j) {
        if (!allowed(j)) continue;
        double lv = logits.at2(last, j) / temperature;
        if (first || lv > mx) mx = lv;
        first = false;
    }
    double se = 0.0;
    for (std::size_t j = 0; j < V; ++j) {
        if (!allowed(j)) continue;
        probs[j] = std::exp(logits.at2(last, j) / temperature - mx);
        se += probs[j];
    }
    for (std::size_t j = 0; j < V; ++j) probs[j] /= se;
    return probs;
}

void CausalLm::save(const std::string& path_prefix) const {
    ParamStore out;
    out.add("_cfg.vocab", Tensor::scalar(cfg_.vocab));
    out.add("_cfg.hidden", Tensor::scalar(cfg_.hidden));
    out.add("_cfg.heads", Tensor::scalar(cfg_.heads));
    out.add("_cfg.blocks", Tensor::scalar(cfg_.blocks));
    out.add("_cfg.ffn_mult", Tensor::scalar(cfg_.ffn_mult));
    out.add("_cfg.max_pos", Tensor::scalar(cfg_.max_pos));
    out.add("_cfg.max_prefix", Tensor::scalar(cfg_.max_prefix));
    out.add("_cfg.init_std", Tensor::scalar(cfg_.init_std));
    for (const auto& [name, t] : params_.items()) out.add(name, t);
    out.save(path_prefix);
}

CausalLm CausalLm::load(const std::string& path_prefix) {
    ParamStore all = ParamStore::load(path_prefix);
    CausalLm lm;
    lm.cfg_.vocab = static_cast<int>(all.at("_cfg.vocab").item());
    lm.cfg_.hidden = static_cast<int>(all.at("_cfg.hidden").item());
    lm.cfg_.heads = static_cast<int>(all.at("_cfg.heads").item());
    lm.cfg_.blocks = static_cast<int>(all.at("_cfg.blocks").item());
    lm.cfg_.ffn_mult = static_cast<int>(all.at("_cfg.ffn_mult").item());
    lm.cfg_.max_pos = static_cast<int>(all.at("_cfg.max_pos").item());
    lm.cfg_.max_prefix = static_cast<int>(all.at("_cfg.max_prefix").item());
    lm.cfg_.init_std = all.at("_cfg.init_std").item();
    for (auto& [name, t] : all.items()) {
        if (name.rfind("_cfg.", 0) == 0) continue;
        lm.params_.add(name, std::move(t));
    }
    return lm;
}

std::vector<double> train_lm(CausalLm& lm, const std::vector<LmSequence>& seqs,
                             const LmTrainConfig& cfg) {
    if (seqs.empty()) throw std::invalid_argument("train_lm: no sequences");
    Adam opt(cfg.lr);
    Rng rng(cfg.seed);
    std::vector<double> epoch_losses;
    std::vector<std::size_t> order(seqs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t i : order) {
            Tape tape;
            VarMap pv = make_vars(tape, lm.params(), /*trainable=*/true);
            Var loss = lm.nll_loss(tape, pv, seqs[i].tokens, seqs[i].loss_from);
            total += tape.value(loss).item();
            tape.backward(loss);
            opt.step(lm.params(), collect_grads(tape, pv));
        }
        epoch_losses.push_back(total / static_cast<double>(seqs.size()));
        log_debug("train_lm epoch " + std::to_string(epoch) + " loss " +
                  std::to_string(epoch_losses.back()));
    }
    return epoch_losses;
}

// ----------------------------- sampling -----------------------------

std::size_t categorical(const std::vector<double>& probs, Rng& rng) {
    double total = 0.0;
    for (double p : probs) total += p;
    if (total <= 0.0) throw std::invalid_argument("categorical: no probability mass");
    const double r = rng.uniform() * total;
    double c = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        c += probs[i];
        if (r < c) return i;
    }
    // numerical tail: last index with mass
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) return i;
    }
    return probs.size() - 1;
}

std::vector<int> sample_tokens(const CausalLm& lm, const Tensor* prefix,
                               const std::vector<int>& prompt, const SampleConfig& cfg,
                               Rng& rng) {
    if (prompt.empty()) throw std::invalid_argument("sample_tokens: empty prompt");
    std::vector<int> tokens = prompt;
    std::vector<int> generated;
    for (int step = 0; step < cfg.max_len; ++step) {
        auto probs = lm.next_token_probs(tokens, prefix, cfg.temperature, cfg.token_mask);
        int id;
        if (cfg.temperature == 0.0) {
            id = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        } else {
            id = static_cast<int>(categorical(probs, rng));
        }
        if (id == cfg.eos_id) break;
        tokens.push_back(id);
        generated.push_back(id);
        if (tokens.size() >= static_cast<std::size_t>(lm.config().max_pos)) break;
    }
    return generated;
}

}  // namespace cgaug
