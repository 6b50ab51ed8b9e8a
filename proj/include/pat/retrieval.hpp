#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pat/stylegraph.hpp"

namespace pat::retrieval {

struct RetrievalConfig {
    std::size_t k1 = 5;
    std::size_t k2 = 5;
    std::size_t backoff_topic_count = 3;
    std::size_t min_exact_candidates = 1;
    std::size_t style_text_cap = 10;
    std::size_t topic_text_cap = 10;
};

struct StyleText {
    std::string author;
    std::string text;

    bool operator==(const StyleText&) const = default;
};

/// Retrieved neighbor texts for one target (user, topic).
struct AuxContext {
    std::vector<StyleText> style_texts;
    std::vector<graph::AuthoredText> topic_texts;
    std::vector<std::string> style_neighbors;
    std::vector<std::string> topic_neighbors;
    bool backoff_used = false;

    bool operator==(const AuxContext&) const = default;
};

nlohmann::ordered_json to_json(const AuxContext& ctx);
AuxContext aux_context_from_json(const nlohmann::json& j);

/// A scored id; ranking is by score descending, then id ascending.
struct Ranked {
    std::string id;
    double score = 0.0;
};

/// Stable top-k over (score desc, id asc). Returns all when k >= size.
std::vector<Ranked> top_k(std::vector<Ranked> items, std::size_t k);

/// The k1 users other than `user` most similar to `query`.
std::vector<std::string> style_neighbors(const graph::EmbeddingIndex& idx, std::span<const double> query,
                                         const std::string& user, std::size_t k1);

/// Train texts of each neighbor in neighbor order then dataset order, capped.
std::vector<StyleText> style_context(const graph::BipartiteGraph& g, const std::vector<std::string>& neighbors,
                                     std::size_t cap = 10);

struct TopicCandidates {
    std::vector<graph::AuthoredText> texts;
    bool backoff_used = false;
};

/// Texts on the target topic not written by `user`. When fewer than
/// `min_exact_candidates` exist, texts from the `backoff_topic_count` nearest
/// other topics are appended.
TopicCandidates topic_candidates(const graph::BipartiteGraph& g, const graph::EmbeddingIndex& idx,
                                 const std::string& target_topic, const std::string& user,
                                 const RetrievalConfig& cfg);

struct TopicContext {
    std::vector<std::string> authors;
    std::vector<graph::AuthoredText> texts;
};

/// Ranks distinct candidate authors by similarity to `query` and returns the
/// texts of the top k2 in author-rank order.
TopicContext topic_context(const graph::EmbeddingIndex& idx, const std::vector<graph::AuthoredText>& candidates,
                           std::span<const double> query, std::size_t k2);

/// Full retrieval for one target. Any text containing `ground_truth` is
/// dropped from both contexts.
AuxContext build_aux_context(const graph::BipartiteGraph& g, const graph::EmbeddingIndex& idx, const std::string& user,
                             const std::string& target_topic, const RetrievalConfig& cfg,
                             std::optional<std::string_view> ground_truth = std::nullopt);

}  // namespace pat::retrieval
