#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cgaug/classifier.hpp"
#include "cgaug/corpus.hpp"

namespace cgaug {

// One over-generated example awaiting quality control.
struct Candidate {
    std::vector<int> tokens;
    LabelSet intended;   // the composition the generator was asked for
    LabelSet predicted;  // filled by the filter classifier
    double score = 0.0;  // Jaccard(predicted, intended)
};

// Scores every candidate with the filter classifier and keeps the k best.
// Global mode takes the descending-score top k, ties broken by candidate
// index. Stratified mode first takes the top ceil(k/M) per intended
// composition, then trims (or fills from the remainder) to exactly k.
std::vector<Candidate> filter_topk(std::vector<Candidate> candidates,
                                   const MltcModel& filter, std::size_t k,
                                   bool stratified);

// Concatenates one uniformly chosen single-labeled instance per label of y,
// in random order. Fails when some label has no single-labeled instance.
Candidate concat_generate(const Dataset& dcg, const LabelSet& y, Rng& rng);

// Pool of n_target * factor candidates; composition per slot from
// `sample_comp`, text from `generate`, both keyed by slot index so the pool
// is reproducible and parallel-safe.
std::vector<Candidate> overgenerate(
    const std::function<LabelSet(std::size_t)>& sample_comp,
    const std::function<std::vector<int>(const LabelSet&, std::size_t)>& generate,
    std::size_t n_target, double factor);

}  // namespace cgaug
