#pragma once

#include <string>
#include <vector>

#include "cgaug/corpus.hpp"

namespace cgaug {

// Composition-level metrics. Both-empty Jaccard is defined as 1.0 so that an
// exact match of empty sets is not penalized; Correctness and Completeness
// keep their literal indicator forms, including the degenerate empty-set
// behavior (an empty prediction is always correct, an empty gold set is
// always completely covered).
double jaccard(const LabelSet& pred, const LabelSet& gold);
int exact_accuracy(const LabelSet& pred, const LabelSet& gold);
int correctness(const LabelSet& pred, const LabelSet& gold);
int completeness(const LabelSet& pred, const LabelSet& gold);

struct MetricReport {
    double jaccard = 0.0;
    double accuracy = 0.0;
    double correctness = 0.0;
    double completeness = 0.0;
    std::size_t n_instances = 0;

    static std::string tsv_header();
    std::string tsv_row() const;
};

MetricReport evaluate(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& golds);

}  // namespace cgaug
