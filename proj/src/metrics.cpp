#include "cgaug/metrics.hpp"

#include <sstream>
#include <stdexcept>

namespace cgaug {

double jaccard(const LabelSet& pred, const LabelSet& gold) {
    const std::size_t uni = LabelSet::union_count(pred, gold);
    if (uni == 0) return 1.0;  // both empty
    const std::size_t inter = LabelSet::inter_count(pred, gold);
    return static_cast<double>(inter) / static_cast<double>(uni);
}

int exact_accuracy(const LabelSet& pred, const LabelSet& gold) {
    return pred == gold ? 1 : 0;
}

int correctness(const LabelSet& pred, const LabelSet& gold) {
    return LabelSet::inter_count(pred, gold) == pred.size() ? 1 : 0;
}

int completeness(const LabelSet& pred, const LabelSet& gold) {
    return LabelSet::inter_count(pred, gold) == gold.size() ? 1 : 0;
}

std::string MetricReport::tsv_header() { return "jaccard\taccuracy\tcorrectness\tcompleteness\tn"; }

std::string MetricReport::tsv_row() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << jaccard << "\t" << accuracy << "\t" << correctness << "\t"
       << completeness << "\t" << n_instances;
    return os.str();
}

MetricReport evaluate(const std::vector<LabelSet>& preds, const std::vector<LabelSet>& golds) {
    if (preds.size() != golds.size()) {
        throw std::invalid_argument("evaluate: " + std::to_string(preds.size()) +
                                    " predictions vs " + std::to_string(golds.size()) + " golds");
    }
    if (preds.empty()) throw std::invalid_argument("evaluate: empty input");
    MetricReport r;
    r.n_instances = preds.size();
    for (std::size_t i = 0; i < preds.size(); ++i) {
        r.jaccard += jaccard(preds[i], golds[i]);
        r.accuracy += exact_accuracy(preds[i], golds[i]);
        r.correctness += correctness(preds[i], golds[i]);
        r.completeness += completeness(preds[i], golds[i]);
    }
    const double n = static_cast<double>(r.n_instances);
    r.jaccard /= n;
    r.accuracy /= n;
    r.correctness /= n;
    r.completeness /= n;
    return r;
}

}  // namespace cgaug
