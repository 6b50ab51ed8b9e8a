#pragma once

#include <functional>
#include <map>
#include <shared_mutex>
#include <string>
#include <vector>

#include "pat/client.hpp"

namespace pat::agents {

/// A mock agent computes completion `index` of a request. It must be a pure
/// function of (model id, prompt, index, seed).
using MockBehavior = std::function<std::string(const SampleRequest& req, std::size_t index)>;

/// Names accepted by MockClient::add_builtin:
///   extractive_style    "Writing Style: ..." from frequent profile words
///   extractive_topic    "Product Summary: ..." from frequent product-text words
///   compose_generator   title + style summary + product summary
///   copy_topic_summary  title + product summary
///   echo_style_summary  style summary only
///   overlap_judge       1 + round(6 * ROUGE-L(generated, target))
///   constant:<text>     always <text>
MockBehavior builtin_behavior(std::string_view name);

/// In-process ChatClient backed by deterministic mock agents.
///
/// Lookup order for a request: fixture table (model id, prompt digest) ->
/// memorizing model -> registered behavior.
class MockClient final : public ChatClient {
public:
    MockClient() = default;

    void add_agent(const std::string& id, MockBehavior behavior);
    void add_builtin(const std::string& id, std::string_view behavior);
    void add_fixture(const std::string& id, const std::string& digest, std::vector<std::string> completions);

    /// {"agents": {id: behavior-name}, "fixtures": {id: {digest: [completion, ...]}}}
    void load_fixture_file(const std::string& path);

    /// Registers a model that answers greedy requests for memorized prompt
    /// digests with the stored text and otherwise behaves exactly like `base`.
    /// `source` is recorded so the model can be rebuilt by load_registry().
    void add_memorizing(const std::string& id, const std::string& base, std::map<std::string, std::string> memory,
                        nlohmann::json source = {});

    bool has_model(const std::string& id) const;
    std::vector<std::string> complete(const SampleRequest& req) const override;

    /// Persists memorizing models as [{id, base, source}].
    nlohmann::json registry_json() const;
    void save_registry(const std::string& path) const;
    /// Rebuilds memorizing models from their recorded dataset sources;
    /// relative dataset paths resolve against `base_dir`.
    void load_registry(const std::string& path, const std::string& base_dir = {});

private:
    struct Memorizing {
        std::string base;
        std::map<std::string, std::string> memory;
        nlohmann::json source;
    };

    std::string complete_one(const SampleRequest& req, std::size_t index, int depth) const;

    mutable std::shared_mutex mu_;
    std::map<std::string, MockBehavior> agents_;
    std::map<std::string, std::map<std::string, std::vector<std::string>>> fixtures_;
    std::map<std::string, Memorizing> memorizing_;
    std::vector<std::string> memorizing_order_;
};

/// prompt digest -> chosen text of the highest-reward pair per prompt (first wins ties).
std::map<std::string, std::string> memory_from_preferences(const std::string& jsonl_path);
/// prompt digest -> completion (first record per prompt wins).
std::map<std::string, std::string> memory_from_sft(const std::string& jsonl_path);

/// Registers the built-in agents used by the default configuration:
/// mock-style, mock-topic, mock-generator, mock-judge.
void register_default_agents(MockClient& client);

}  // namespace pat::agents
