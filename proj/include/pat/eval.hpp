#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pat/client.hpp"
#include "pat/instance.hpp"
#include "pat/loop.hpp"
#include "pat/metrics.hpp"

namespace pat::eval {

using agents::Variant;

struct EvalRecord {
    std::string user;
    std::string topic;
    std::size_t history_len = 0;
    Variant variant = Variant::full;
    std::string generated;
    std::string reference;
    metrics::MetricReport metrics;
    std::optional<int> judge_score;
    bool judge_failed = false;
    std::optional<std::string> error;  // generation failed; metrics are not counted
    std::size_t marker_warnings = 0;
};

struct EvalModels {
    loop::AgentModels tuned;
    loop::AgentModels base;  // used by the zero_shot variant
    std::optional<agents::ModelRef> judge = agents::ModelRef{"mock-judge", agents::Role::judge};
};

struct EvalConfig {
    std::vector<Variant> variants{Variant::full, Variant::no_style, Variant::no_topic, Variant::no_both};
    Variant baseline = Variant::no_both;
    std::vector<std::size_t> strata{0, 1, 2};  // the last stratum is open-ended
    std::size_t max_tokens = 512;
    std::size_t max_in_flight = 4;
    std::size_t judge_reasks = 2;
};

class JudgeError : public Error {
public:
    using Error::Error;
};

/// First integer token of a judge reply, if it lies in 1..7.
std::optional<int> parse_judge_score(std::string_view reply);

/// Greedy judge call with up to `reasks` further attempts on unusable replies.
int judge(const agents::ChatClient& client, std::string_view target, std::string_view generated,
          const agents::ModelRef& judge_model, std::size_t max_tokens = 16, std::size_t reasks = 2);

struct Generation {
    std::string text;
    agents::Prompt prompt;
    std::size_t marker_warnings = 0;
};

/// Greedy style and topic summaries (skipped where the variant blanks them),
/// then a greedy generation on the variant's prompt.
Generation generate_for_instance(const agents::ChatClient& client, const TargetInstance& inst, Variant variant,
                                 const EvalModels& models, std::size_t max_tokens = 512);

struct Aggregate {
    std::size_t records = 0;
    std::size_t failed = 0;
    metrics::MetricReport mean;  // over records without a generation error
    std::optional<double> judge_mean;
    std::size_t judge_scored = 0;
    std::size_t judge_failed = 0;
};

struct StratumRow {
    std::size_t history_len = 0;
    bool open_ended = false;
    bool present = false;
    bool fully_failed = false;
    std::map<Variant, Aggregate> variants;
    std::optional<double> delta_pct;
};

struct EvalReport {
    std::vector<Variant> variants;
    Variant baseline = Variant::no_both;
    std::map<Variant, Aggregate> overall;
    std::vector<StratumRow> strata;
    std::optional<double> delta_pct;
    std::size_t marker_warnings = 0;
    std::size_t generation_failures = 0;
    std::size_t judge_failures = 0;
    nlohmann::ordered_json config;
    std::vector<EvalRecord> records;
};

/// Mean over the three metrics of (ours - baseline) / baseline, in percent.
/// Metrics with a zero baseline are left out; nullopt if none remain.
std::optional<double> delta_pct(const metrics::MetricReport& ours, const metrics::MetricReport& baseline);

Aggregate aggregate(const std::vector<const EvalRecord*>& records);

/// Builds per-variant and per-stratum aggregates from raw records.
EvalReport build_report(std::vector<EvalRecord> records, const EvalConfig& cfg, nlohmann::ordered_json config_echo);

/// One record per (instance, variant); history_len is the user's train-split size.
EvalReport evaluate(const agents::ChatClient& client, const corpus::Dataset& ds,
                    const std::vector<TargetInstance>& instances, const EvalConfig& cfg, const EvalModels& models,
                    nlohmann::ordered_json config_echo = nlohmann::ordered_json::object());

bool any_stratum_failed(const EvalReport& report);

enum class ReportFormat { table, json };
ReportFormat parse_report_format(std::string_view s);

nlohmann::ordered_json to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
std::string render_report(const EvalReport& report, ReportFormat format);

}  // namespace pat::eval
