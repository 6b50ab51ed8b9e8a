#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pat/client.hpp"
#include "pat/instance.hpp"
#include "pat/metrics.hpp"
#include "pat/mock.hpp"

namespace pat::loop {

using agents::ModelRef;

enum class TrajectoryKind { style, topic };
std::string_view to_string(TrajectoryKind k);
TrajectoryKind parse_trajectory_kind(std::string_view s);

/// A sampled trajectory, the generation it induced and that generation's reward.
struct RewardedCandidate {
    TrajectoryKind kind = TrajectoryKind::style;
    std::string candidate_text;
    std::string rollout_text;
    double reward = 0.0;
    std::size_t sample_index = 0;
};

struct PreferencePair {
    std::string prompt;
    std::string chosen;
    std::string rejected;
    struct Meta {
        std::string user;
        TrajectoryKind kind = TrajectoryKind::style;
        std::size_t iteration = 0;
        double reward_chosen = 0.0;
        double reward_rejected = 0.0;
    } meta;
};

struct SftRecord {
    std::string prompt;
    std::string completion;
};

struct AgentModels {
    ModelRef style{"mock-style", agents::Role::style};
    ModelRef topic{"mock-topic", agents::Role::topic};
    ModelRef generator{"mock-generator", agents::Role::generator};

    bool operator==(const AgentModels&) const = default;
};

struct SamplingConfig {
    std::size_t m1 = 3;
    std::size_t m2 = 3;
    double temperature = 0.8;
    std::size_t max_tokens = 512;
    std::uint64_t seed = 0;
    std::size_t max_in_flight = 4;
};

/// Result of one rollout batch for one instance.
struct Rollout {
    agents::Prompt trajectory_prompt;
    std::vector<RewardedCandidate> candidates;  // sample-index order; failed candidates omitted
    std::vector<agents::Prompt> generation_prompts;
    std::vector<std::string> errors;
    std::size_t marker_warnings = 0;
};

/// Samples M1 style summaries and rolls each out through the generator with
/// the same fixed topic summary. Rewards are computed against the target text.
Rollout rollout_style(const agents::ChatClient& client, const TargetInstance& inst, const std::string& fixed_topic,
                      const AgentModels& models, const SamplingConfig& sampling, const metrics::RewardSpec& spec);

/// Mirror image of rollout_style: M2 topic summaries against a fixed style summary.
Rollout rollout_topic(const agents::ChatClient& client, const TargetInstance& inst, const std::string& fixed_style,
                      const AgentModels& models, const SamplingConfig& sampling, const metrics::RewardSpec& spec);

enum class PairMode { all_strict, top1_vs_worse };
PairMode parse_pair_mode(std::string_view s);
std::string_view to_string(PairMode m);

/// One pair per ordered (i, j) with R_i > R_j + epsilon, ordered by i then j.
/// In top1_vs_worse mode only the silver candidate is paired against worse ones.
std::vector<PreferencePair> build_preference_pairs(const std::vector<RewardedCandidate>& candidates,
                                                   const std::string& prompt, const std::string& user,
                                                   std::size_t iteration, double epsilon,
                                                   PairMode mode = PairMode::all_strict);

/// Highest reward; lowest sample index among ties.
const RewardedCandidate& select_silver(const std::vector<RewardedCandidate>& candidates);

struct SilverInstance {
    const TargetInstance* instance = nullptr;
    std::string style_summary;
    std::string topic_summary;
};

std::vector<SftRecord> build_sft_records(const std::vector<SilverInstance>& silver);

std::string to_jsonl(const std::vector<PreferencePair>& pairs);
std::string to_jsonl(const std::vector<SftRecord>& records);
std::vector<PreferencePair> read_preferences(const std::string& path);
std::vector<SftRecord> read_sft(const std::string& path);

// ---------------------------------------------------------------------------
// training backend

enum class TrainerKind { external_command, http, mock_memorizing, mock_identity };
TrainerKind parse_trainer_kind(std::string_view s);
std::string_view to_string(TrainerKind k);

struct TrainerRef {
    TrainerKind kind = TrainerKind::mock_memorizing;
    std::string target;  // command prefix or URL for the external kinds
};

enum class TrainKind { dpo, sft };
std::string_view to_string(TrainKind k);

struct TrainingJob {
    TrainKind kind = TrainKind::dpo;
    std::string data_path;   // as passed to the backend
    std::string data_label;  // recorded in state and registries (workdir-relative)
    ModelRef base;
    std::size_t max_steps = 50;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, std::string log_path = {});
    const std::string& log_path() const { return log_path_; }

private:
    std::string log_path_;
};

/// Runs one training job and returns the new model. mock_memorizing needs
/// `mock` to register the produced model in.
ModelRef submit_training(const TrainerRef& trainer, const TrainingJob& job, agents::MockClient* mock);

// ---------------------------------------------------------------------------
// Algorithm 1 controller

struct IterationRecord {
    std::size_t iteration = 0;
    double mean_silver_reward = 0.0;        // topic-phase silver reward, averaged over instances
    double mean_style_silver_reward = 0.0;  // style-phase silver reward, averaged over instances
    std::size_t instances = 0;
    std::size_t skipped = 0;
    std::size_t style_pairs = 0;
    std::size_t topic_pairs = 0;
    std::size_t sft_records = 0;
    std::size_t marker_warnings = 0;
    std::string style_dataset;
    std::string topic_dataset;
    std::string sft_dataset;
    AgentModels models;  // after the iteration
};

struct IterationState {
    std::size_t iteration = 0;
    std::size_t max_iterations = 10;
    AgentModels base;
    AgentModels models;
    std::vector<IterationRecord> history;
    bool converged = false;
};

nlohmann::ordered_json to_json(const IterationState& s);
IterationState state_from_json(const nlohmann::json& j);
void save_state(const IterationState& s, const std::string& path);
IterationState load_state(const std::string& path);

struct LoopConfig {
    std::size_t max_iterations = 10;  // T
    double epsilon = 1e-9;
    double delta = 1e-4;
    std::size_t patience = 2;
    std::size_t step_budget = 50;
    PairMode pair_mode = PairMode::all_strict;
    SamplingConfig sampling;
    metrics::RewardSpec reward;
    std::string workdir = ".";
};

struct LoopContext {
    const agents::ChatClient& client;
    agents::MockClient* mock = nullptr;
    TrainerRef trainer;
    const std::vector<TargetInstance>& instances;
    LoopConfig config;
};

class StateError : public Error {
public:
    using Error::Error;
};

IterationState initial_state(const AgentModels& base, std::size_t max_iterations);

/// One pass of Algorithm 1: style-agent preference update, topic-agent
/// preference update against the updated style agent, then generator SFT on
/// silver trajectories. On failure the input state is left untouched.
IterationState run_iteration(const IterationState& state, const LoopContext& ctx);

/// Runs iterations until T is reached or the mean silver reward improves by
/// less than delta for `patience` consecutive iterations. `on_iteration` is
/// called after each completed iteration (checkpointing).
IterationState train(IterationState state, const LoopContext& ctx,
                     const std::function<void(const IterationState&)>& on_iteration = {});

}  // namespace pat::loop
