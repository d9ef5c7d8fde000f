#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cgaug/corpus.hpp"

namespace cgaug {

// Compositional train / support / test partition. Training and held-out
// parts share no label composition; every atom of a held-out composition
// still occurs in some training composition. Vocabulary is rebuilt from the
// training part only, so held-out text may contain <unk>.
struct CgSplit {
    Dataset train;
    Dataset support;
    Dataset test;
    std::vector<LabelSet> test_compositions;  // size M
    std::size_t n_support = 0;
    std::uint64_t seed = 0;

    // instance indices into the source dataset, for disjointness audits
    std::vector<std::size_t> train_src;
    std::vector<std::size_t> support_src;
    std::vector<std::size_t> test_src;
};

struct SplitOptions {
    bool stratified_support = false;
    std::vector<std::string> extra_tokens;  // kept in the rebuilt vocabulary
    int max_attempts = 1000;                // atomic-coverage resampling cap
};

// Samples M candidate compositions (>= 2 labels, >= 2 instances) uniformly
// without replacement, resampling until every atom they use also occurs in a
// training composition; their instances form the preliminary test set, from
// which n_support instances are drawn as the support set.
CgSplit build_cg_split(const Dataset& data, std::size_t m_compositions,
                       std::size_t n_support, std::uint64_t seed,
                       const SplitOptions& opts = {});

// Empty iff all CgSplit invariants hold; each violation names the offending
// composition or atom.
std::vector<std::string> verify_split(const CgSplit& split);

void save_split(const CgSplit& split, const std::string& dir);
CgSplit load_split(const std::string& dir);

// Simple random split, for the iid-vs-CG contrast only.
std::pair<Dataset, Dataset> iid_split(const Dataset& data, double test_fraction,
                                      std::uint64_t seed);

std::string composition_str(const LabelSet& comp, const std::vector<Label>& table);

}  // namespace cgaug
