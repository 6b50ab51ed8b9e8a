#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pat/corpus.hpp"
#include "pat/retrieval.hpp"
#include "pat/stylegraph.hpp"

namespace pat {

/// A held-out (x_target, y) pair with everything retrieval produced for it.
struct TargetInstance {
    corpus::HistoryEntry target;
    std::vector<std::string> history_texts;  // the user's train texts, dataset order
    retrieval::AuxContext context;

    std::vector<std::string> style_texts() const;
    std::vector<std::string> topic_texts() const;
    std::string key() const;  // "user/topic/<index>"
    std::size_t index = 0;
};

/// One instance per entry of `split`, in dataset order.
std::vector<TargetInstance> make_instances(const corpus::Dataset& ds, const graph::BipartiteGraph& g,
                                           const graph::EmbeddingIndex& idx, const retrieval::RetrievalConfig& cfg,
                                           corpus::Split split);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions thrown by
/// fn are rethrown (first by index) after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace pat
