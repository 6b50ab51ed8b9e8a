#include "pat/retrieval.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace pat::retrieval {

nlohmann::ordered_json to_json(const AuxContext& ctx) {
    nlohmann::ordered_json j;
    j["style_neighbors"] = ctx.style_neighbors;
    j["topic_neighbors"] = ctx.topic_neighbors;
    j["style_texts"] = nlohmann::ordered_json::array();
    for (const auto& s : ctx.style_texts) j["style_texts"].push_back({{"author", s.author}, {"text", s.text}});
    j["topic_texts"] = nlohmann::ordered_json::array();
    for (const auto& t : ctx.topic_texts) {
        j["topic_texts"].push_back({{"author", t.author}, {"topic", t.topic}, {"text", t.text}});
    }
    j["backoff_used"] = ctx.backoff_used;
    return j;
}

AuxContext aux_context_from_json(const nlohmann::json& j) {
    AuxContext ctx;
    ctx.style_neighbors = j.at("style_neighbors").get<std::vector<std::string>>();
    ctx.topic_neighbors = j.at("topic_neighbors").get<std::vector<std::string>>();
    for (const auto& s : j.at("style_texts")) ctx.style_texts.push_back({s.at("author"), s.at("text")});
    for (const auto& t : j.at("topic_texts")) ctx.topic_texts.push_back({t.at("author"), t.at("topic"), t.at("text")});
    ctx.backoff_used = j.at("backoff_used").get<bool>();
    return ctx;
}

std::vector<Ranked> top_k(std::vector<Ranked> items, std::size_t k) {
    auto better = [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    };
    k = std::min(k, items.size());
    std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(), better);
    items.resize(k);
    return items;
}

std::vector<std::string> style_neighbors(const graph::EmbeddingIndex& idx, std::span<const double> query,
                                         const std::string& user, std::size_t k1) {
    std::vector<Ranked> scored;
    scored.reserve(idx.user_vec.size());
    for (const auto& [id, v] : idx.user_vec) {
        if (id == user) continue;
        scored.push_back({id, graph::cosine(query, v)});
    }
    std::vector<std::string> out;
    for (auto& r : top_k(std::move(scored), k1)) out.push_back(std::move(r.id));
    return out;
}

std::vector<StyleText> style_context(const graph::BipartiteGraph& g, const std::vector<std::string>& neighbors,
                                     std::size_t cap) {
    std::vector<StyleText> out;
    for (const auto& n : neighbors) {
        auto it = g.user_texts.find(n);
        if (it == g.user_texts.end()) continue;
        for (const auto& at : it->second) {
            if (out.size() >= cap) return out;
            out.push_back({at.author, at.text});
        }
    }
    return out;
}

TopicCandidates topic_candidates(const graph::BipartiteGraph& g, const graph::EmbeddingIndex& idx,
                                 const std::string& target_topic, const std::string& user,
                                 const RetrievalConfig& cfg) {
    TopicCandidates out;
    auto append_topic = [&](const std::string& topic) {
        auto it = g.topic_texts.find(topic);
        if (it == g.topic_texts.end()) return;
        for (const auto& at : it->second) {
            if (at.author != user) out.texts.push_back(at);
        }
    };
    append_topic(target_topic);
    if (out.texts.size() >= cfg.min_exact_candidates) return out;

    const graph::Vector zero(idx.dim, 0.0);
    auto target_it = idx.topic_vec.find(target_topic);
    const graph::Vector& query = target_it == idx.topic_vec.end() ? zero : target_it->second;
    std::vector<Ranked> scored;
    for (const auto& [id, v] : idx.topic_vec) {
        if (id == target_topic) continue;
        scored.push_back({id, graph::cosine(query, v)});
    }
    if (scored.empty()) return out;
    out.backoff_used = true;
    for (const auto& r : top_k(std::move(scored), cfg.backoff_topic_count)) append_topic(r.id);
    return out;
}

TopicContext topic_context(const graph::EmbeddingIndex& idx, const std::vector<graph::AuthoredText>& candidates,
                           std::span<const double> query, std::size_t k2) {
    std::set<std::string> authors;
    for (const auto& c : candidates) authors.insert(c.author);
    std::vector<Ranked> scored;
    for (const auto& a : authors) {
        auto it = idx.user_vec.find(a);
        const double s = it == idx.user_vec.end() ? 0.0 : graph::cosine(query, it->second);
        scored.push_back({a, s});
    }
    TopicContext out;
    for (auto& r : top_k(std::move(scored), k2)) out.authors.push_back(std::move(r.id));
    for (const auto& a : out.authors) {
        for (const auto& c : candidates) {
            if (c.author == a) out.texts.push_back(c);
        }
    }
    return out;
}

AuxContext build_aux_context(const graph::BipartiteGraph& g, const graph::EmbeddingIndex& idx, const std::string& user,
                             const std::string& target_topic, const RetrievalConfig& cfg,
                             std::optional<std::string_view> ground_truth) {
    auto leaks = [&](const std::string& text) {
        return ground_truth && !ground_truth->empty() && text.find(*ground_truth) != std::string::npos;
    };
    const graph::Vector query = graph::user_vector(idx, user, target_topic);

    AuxContext ctx;
    ctx.style_neighbors = style_neighbors(idx, query, user, cfg.k1);
    for (auto& s : style_context(g, ctx.style_neighbors, std::numeric_limits<std::size_t>::max())) {
        if (ctx.style_texts.size() >= cfg.style_text_cap) break;
        if (!leaks(s.text)) ctx.style_texts.push_back(std::move(s));
    }

    auto candidates = topic_candidates(g, idx, target_topic, user, cfg);
    std::erase_if(candidates.texts, [&](const graph::AuthoredText& t) { return leaks(t.text); });
    ctx.backoff_used = candidates.backoff_used;
    auto topic = topic_context(idx, candidates.texts, query, cfg.k2);
    ctx.topic_neighbors = std::move(topic.authors);
    for (auto& t : topic.texts) {
        if (ctx.topic_texts.size() >= cfg.topic_text_cap) break;
        ctx.topic_texts.push_back(std::move(t));
    }
    return ctx;
}

}  // namespace pat::retrieval
