#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pat/corpus.hpp"
#include "pat/eval.hpp"
#include "pat/loop.hpp"
#include "pat/retrieval.hpp"
#include "pat/stylegraph.hpp"

namespace pat::cli {

struct ModelSpec {
    std::string id;
    std::optional<std::string> endpoint;
};

struct EngineConfig {
    std::string corpus;  // empty: <workdir>/corpus/corpus.jsonl
    corpus::Task task = corpus::Task::long_text;
    graph::EncoderRef encoder;
    std::size_t layers = 2;
    retrieval::RetrievalConfig retrieval;
    loop::SamplingConfig sampling;
    metrics::RewardSpec reward;
    std::size_t max_iterations = 10;
    double delta = 1e-4;
    std::size_t patience = 2;
    std::size_t step_budget = 50;
    loop::PairMode pair_mode = loop::PairMode::all_strict;

    std::string backend = "mock";  // mock | http
    std::optional<std::string> endpoint;
    std::optional<std::string> mock_fixtures;
    std::map<std::string, std::string> mock_agents;  // model id -> builtin behavior
    ModelSpec style{"mock-style", {}};
    ModelSpec topic{"mock-topic", {}};
    ModelSpec generator{"mock-generator", {}};
    std::optional<ModelSpec> judge = ModelSpec{"mock-judge", {}};

    loop::TrainerRef trainer;

    eval::EvalConfig eval;
};

/// Thrown for unusable configuration; the message names the offending key.
class UsageError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Overlays a JSON config tree onto `base`. Unknown keys and wrongly typed
/// values raise UsageError naming the dotted key path.
EngineConfig apply_config(EngineConfig base, const nlohmann::json& j);
EngineConfig load_config(const std::string& path, EngineConfig base = {});
nlohmann::ordered_json to_json(const EngineConfig& cfg);
void validate(const EngineConfig& cfg);

/// Entry point of the `pat` tool. Exit codes: 0 ok, 1 pipeline failure, 2 usage or config error.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);

}  // namespace pat::cli
