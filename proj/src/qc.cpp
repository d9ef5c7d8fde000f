#include "cgaug/qc.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cgaug/metrics.hpp"

namespace cgaug {

std::vector<Candidate> filter_topk(std::vector<Candidate> candidates,
                                   const MltcModel& filter, std::size_t k,
                                   bool stratified) {
    if (k > candidates.size()) {
        throw std::invalid_argument("filter_topk: k=" + std::to_string(k) + " exceeds pool of " +
                                    std::to_string(candidates.size()));
    }
    for (Candidate& c : candidates) {
        c.predicted = filter.predict(c.tokens);
        c.score = jaccard(c.predicted, c.intended);
    }
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto by_score = [&](std::size_t a, std::size_t b) {
        if (candidates[a].score != candidates[b].score) {
            return candidates[a].score > candidates[b].score;
        }
        return a < b;  // deterministic tie break by candidate index
    };
    std::sort(order.begin(), order.end(), by_score);

    std::vector<std::size_t> kept;
    if (!stratified) {
        kept.assign(order.begin(), order.begin() + static_cast<long>(k));
    } else {
        std::map<LabelSet, std::vector<std::size_t>> groups;
        for (std::size_t i : order) groups[candidates[i].intended].push_back(i);
        const std::size_t per =
            (k + groups.size() - 1) / groups.size();  // ceil(k / M)
        std::vector<char> taken(candidates.size(), 0);
        for (auto& [comp, idx] : groups) {
            for (std::size_t j = 0; j < std::min(per, idx.size()); ++j) {
                kept.push_back(idx[j]);
                taken[idx[j]] = 1;
            }
        }
        std::sort(kept.begin(), kept.end(), by_score);
        if (kept.size() > k) {
            kept.resize(k);
        } else if (kept.size() < k) {
            for (std::size_t i : order) {
                if (kept.size() == k) break;
                if (!taken[i]) kept.push_back(i);
            }
            std::sort(kept.begin(), kept.end(), by_score);
        }
    }
    std::vector<Candidate> out;
    out.reserve(kept.size());
    for (std::size_t i : kept) out.push_back(candidates[i]);
    return out;
}

Candidate concat_generate(const Dataset& dcg, const LabelSet& y, Rng& rng) {
    if (y.empty()) throw std::invalid_argument("concat_generate: empty label set");
    std::vector<std::vector<int>> parts;
    for (int label : y) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < dcg.instances.size(); ++i) {
            const LabelSet& ls = dcg.instances[i].labels;
            if (ls.size() == 1 && ls.contains(label)) pool.push_back(i);
        }
        if (pool.empty()) {
            throw InfeasibleError("concat_generate: label '" + dcg.label_phrase(label) +
                                  "' has no single-labeled instances");
        }
        const std::size_t pick = pool[rng.below(pool.size())];
        parts.push_back(dcg.instances[pick].tokens);
    }
    rng.shuffle(parts);
    Candidate c;
    for (const auto& p : parts) c.tokens.insert(c.tokens.end(), p.begin(), p.end());
    c.intended = y;
    return c;
}

std::vector<Candidate> overgenerate(
    const std::function<LabelSet(std::size_t)>& sample_comp,
    const std::function<std::vector<int>(const LabelSet&, std::size_t)>& generate,
    std::size_t n_target, double factor) {
    if (factor < 1.0) throw std::invalid_argument("overgenerate: factor must be >= 1");
    const auto pool_size =
        static_cast<std::size_t>(std::llround(static_cast<double>(n_target) * factor));
    std::vector<Candidate> pool;
    pool.reserve(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) {
        Candidate c;
        c.intended = sample_comp(i);
        c.tokens = generate(c.intended, i);
        pool.push_back(std::move(c));
    }
    return pool;
}

}  // namespace cgaug
