#include "pat/loop.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

namespace pat::loop {

namespace fs = std::filesystem;

std::string_view to_string(TrajectoryKind k) { return k == TrajectoryKind::style ? "style" : "topic"; }

TrajectoryKind parse_trajectory_kind(std::string_view s) {
    if (s == "style") return TrajectoryKind::style;
    if (s == "topic") return TrajectoryKind::topic;
    throw ConfigError("unknown trajectory kind: " + std::string(s));
}

PairMode parse_pair_mode(std::string_view s) {
    if (s == "all_strict") return PairMode::all_strict;
    if (s == "top1_vs_worse") return PairMode::top1_vs_worse;
    throw ConfigError("unknown pair mode: " + std::string(s));
}

std::string_view to_string(PairMode m) { return m == PairMode::all_strict ? "all_strict" : "top1_vs_worse"; }

// ---------------------------------------------------------------------------
// rollouts

namespace {

Rollout rollout(const agents::ChatClient& client, const TargetInstance& inst, TrajectoryKind kind,
                const std::string& fixed, const AgentModels& models, const SamplingConfig& sampling,
                const metrics::RewardSpec& spec) {
    const auto style_texts = inst.style_texts();
    const auto topic_texts = inst.topic_texts();
    const bool is_style = kind == TrajectoryKind::style;

    Rollout r;
    r.trajectory_prompt = is_style ? agents::build_style_prompt(style_texts, inst.history_texts)
                                   : agents::build_topic_prompt(topic_texts);
    agents::SampleRequest req;
    req.model = is_style ? models.style : models.topic;
    req.prompt = r.trajectory_prompt;
    req.n = is_style ? sampling.m1 : sampling.m2;
    req.temperature = sampling.temperature;
    req.max_tokens = sampling.max_tokens;
    req.seed = derive_seed({"rollout", to_string(kind), std::to_string(sampling.seed), inst.key()});

    std::vector<std::string> samples;
    try {
        samples = agents::sample(client, req);
    } catch (const Error& e) {
        r.errors.emplace_back(e.what());
        return r;
    }

    const auto marker = is_style ? agents::kStyleMarker : agents::kTopicMarker;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        try {
            const auto summary = agents::parse_summary(samples[i], marker);
            r.marker_warnings += summary.marker_missing ? 1 : 0;
            const std::string& style = is_style ? summary.text : fixed;
            const std::string& topic = is_style ? fixed : summary.text;
            auto gen_prompt = agents::build_gen_prompt(inst.target.prompt, style, topic, style_texts, topic_texts,
                                                       agents::Variant::full);
            const auto generated =
                agents::parse_generation(agents::greedy(client, models.generator, gen_prompt, sampling.max_tokens));
            r.marker_warnings += generated.marker_missing ? 1 : 0;
            const double reward = metrics::reward(generated.text, inst.target.text, spec);
            r.candidates.push_back({kind, summary.text, generated.text, reward, i});
            r.generation_prompts.push_back(std::move(gen_prompt));
        } catch (const Error& e) {
            r.errors.push_back("candidate " + std::to_string(i) + ": " + e.what());
        }
    }
    return r;
}

}  // namespace

Rollout rollout_style(const agents::ChatClient& client, const TargetInstance& inst, const std::string& fixed_topic,
                      const AgentModels& models, const SamplingConfig& sampling, const metrics::RewardSpec& spec) {
    return rollout(client, inst, TrajectoryKind::style, fixed_topic, models, sampling, spec);
}

Rollout rollout_topic(const agents::ChatClient& client, const TargetInstance& inst, const std::string& fixed_style,
                      const AgentModels& models, const SamplingConfig& sampling, const metrics::RewardSpec& spec) {
    return rollout(client, inst, TrajectoryKind::topic, fixed_style, models, sampling, spec);
}

// ---------------------------------------------------------------------------
// datasets

std::vector<PreferencePair> build_preference_pairs(const std::vector<RewardedCandidate>& candidates,
                                                   const std::string& prompt, const std::string& user,
                                                   std::size_t iteration, double epsilon, PairMode mode) {
    std::vector<PreferencePair> out;
    if (candidates.empty()) return out;
    const RewardedCandidate* silver = mode == PairMode::top1_vs_worse ? &select_silver(candidates) : nullptr;
    for (const auto& a : candidates) {
        if (silver && &a != silver) continue;
        for (const auto& b : candidates) {
            if (!(a.reward > b.reward + epsilon)) continue;
            PreferencePair p;
            p.prompt = prompt;
            p.chosen = a.candidate_text;
            p.rejected = b.candidate_text;
            p.meta = {user, a.kind, iteration, a.reward, b.reward};
            out.push_back(std::move(p));
        }
    }
    return out;
}

const RewardedCandidate& select_silver(const std::vector<RewardedCandidate>& candidates) {
    if (candidates.empty()) throw Error("select_silver: no candidates");
    const RewardedCandidate* best = &candidates.front();
    for (const auto& c : candidates) {
        if (c.reward > best->reward || (c.reward == best->reward && c.sample_index < best->sample_index)) best = &c;
    }
    return *best;
}

std::vector<SftRecord> build_sft_records(const std::vector<SilverInstance>& silver) {
    std::vector<SftRecord> out;
    for (const auto& s : silver) {
        const auto& inst = *s.instance;
        auto prompt = agents::build_gen_prompt(inst.target.prompt, s.style_summary, s.topic_summary,
                                               inst.style_texts(), inst.topic_texts(), agents::Variant::full);
        out.push_back({prompt.rendered(), inst.target.text});
    }
    return out;
}

std::string to_jsonl(const std::vector<PreferencePair>& pairs) {
    std::string out;
    for (const auto& p : pairs) {
        nlohmann::ordered_json j;
        j["prompt"] = p.prompt;
        j["chosen"] = p.chosen;
        j["rejected"] = p.rejected;
        j["meta"] = {{"user", p.meta.user},
                     {"kind", to_string(p.meta.kind)},
                     {"iteration", p.meta.iteration},
                     {"reward_chosen", p.meta.reward_chosen},
                     {"reward_rejected", p.meta.reward_rejected}};
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

std::string to_jsonl(const std::vector<SftRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["prompt"] = r.prompt;
        j["completion"] = r.completion;
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

namespace {

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace

std::vector<PreferencePair> read_preferences(const std::string& path) {
    std::vector<PreferencePair> out;
    try {
        for (const auto& j : read_jsonl(path)) {
            PreferencePair p;
            p.prompt = j.at("prompt");
            p.chosen = j.at("chosen");
            p.rejected = j.at("rejected");
            const auto& m = j.at("meta");
            p.meta = {m.at("user"), parse_trajectory_kind(m.at("kind").get<std::string>()), m.at("iteration"),
                      m.at("reward_chosen"), m.at("reward_rejected")};
            out.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(path + ": bad preference record: " + e.what());
    }
    return out;
}

std::vector<SftRecord> read_sft(const std::string& path) {
    std::vector<SftRecord> out;
    try {
        for (const auto& j : read_jsonl(path)) out.push_back({j.at("prompt"), j.at("completion")});
    } catch (const nlohmann::json::exception& e) {
        throw Error(path + ": bad SFT record: " + e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// training backend

TrainerKind parse_trainer_kind(std::string_view s) {
    if (s == "external_command" || s == "external-command") return TrainerKind::external_command;
    if (s == "http") return TrainerKind::http;
    if (s == "mock_memorizing" || s == "mock-memorizing") return TrainerKind::mock_memorizing;
    if (s == "mock_identity" || s == "mock-identity") return TrainerKind::mock_identity;
    throw ConfigError("unknown trainer kind: " + std::string(s));
}

std::string_view to_string(TrainerKind k) {
    switch (k) {
        case TrainerKind::external_command: return "external_command";
        case TrainerKind::http: return "http";
        case TrainerKind::mock_memorizing: return "mock_memorizing";
        case TrainerKind::mock_identity: return "mock_identity";
    }
    return "mock_identity";
}

std::string_view to_string(TrainKind k) { return k == TrainKind::dpo ? "dpo" : "sft"; }

TrainingError::TrainingError(const std::string& what, std::string log_path)
    : Error(log_path.empty() ? what : what + " (log: " + log_path + ")"), log_path_(std::move(log_path)) {}

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') {
            out += "'\\''";
        } else {
            out.push_back(c);
        }
    }
    out.push_back('\'');
    return out;
}

std::string last_line(const std::string& text) {
    std::size_t end = text.size();
    while (end > 0) {
        std::size_t start = text.rfind('\n', end - 1);
        start = start == std::string::npos ? 0 : start + 1;
        std::string line = agents::trim(std::string_view(text).substr(start, end - start));
        if (!line.empty()) return line;
        if (start == 0) break;
        end = start - 1;
    }
    return {};
}

ModelRef run_external(const TrainerRef& trainer, const TrainingJob& job) {
    const std::string log_path = job.data_path + ".train.log";
    const std::string cmd = trainer.target + " --kind " + std::string(to_string(job.kind)) + " --data " +
                            shell_quote(job.data_path) + " --base " + shell_quote(job.base.id) + " --max-steps " +
                            std::to_string(job.max_steps) + " 2>" + shell_quote(log_path);
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) throw TrainingError("cannot spawn trainer: " + trainer.target, log_path);
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    const int status = ::pclose(pipe);
    {
        std::ofstream log(log_path, std::ios::app);
        log << "--- stdout ---\n" << out;
    }
    if (status == -1 || !WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const int code = status != -1 && WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        throw TrainingError("trainer exited with status " + std::to_string(code), log_path);
    }
    std::string id = last_line(out);
    if (id.empty()) throw TrainingError("trainer printed no model id", log_path);
    return {id, job.base.role};
}

ModelRef run_http(const TrainerRef& trainer, const TrainingJob& job) {
    nlohmann::json body = {{"kind", to_string(job.kind)},
                           {"data", job.data_path},
                           {"base", job.base.id},
                           {"max_steps", job.max_steps}};
    try {
        const auto reply = http::post_json(trainer.target, body);
        return {reply.at("model_id").get<std::string>(), job.base.role};
    } catch (const http::EndpointError& e) {
        throw TrainingError(std::string("training endpoint failed: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw TrainingError(std::string("bad training reply: ") + e.what());
    }
}

ModelRef run_memorizing(const TrainingJob& job, agents::MockClient* mock) {
    if (!mock) throw TrainingError("mock_memorizing trainer requires the mock chat client");
    auto memory = job.kind == TrainKind::dpo ? agents::memory_from_preferences(job.data_path)
                                             : agents::memory_from_sft(job.data_path);
    const std::string stem = job.base.id.substr(0, job.base.id.find('+'));
    const std::string id = stem + "+" + std::string(to_string(job.kind)) + "@" +
                           sha256_hex(job.base.id + "\n" + sha256_file(job.data_path)).substr(0, 12);
    const std::string label = job.data_label.empty() ? job.data_path : job.data_label;
    mock->add_memorizing(id, job.base.id, std::move(memory), {{"kind", to_string(job.kind)}, {"data", label}});
    return {id, job.base.role};
}

}  // namespace

ModelRef submit_training(const TrainerRef& trainer, const TrainingJob& job, agents::MockClient* mock) {
    if (job.kind == TrainKind::dpo) {
        std::error_code ec;
        if (!fs::exists(job.data_path, ec) || fs::file_size(job.data_path, ec) == 0) {
            throw TrainingError("DPO dataset is missing or empty: " + job.data_path);
        }
    }
    switch (trainer.kind) {
        case TrainerKind::mock_identity: return job.base;
        case TrainerKind::mock_memorizing: return run_memorizing(job, mock);
        case TrainerKind::external_command:
            if (trainer.target.empty()) throw ConfigError("external_command trainer needs a target command");
            return run_external(trainer, job);
        case TrainerKind::http:
            if (trainer.target.empty()) throw ConfigError("http trainer needs a target URL");
            return run_http(trainer, job);
    }
    throw ConfigError("unknown trainer kind");
}

// ---------------------------------------------------------------------------
// state

namespace {

nlohmann::ordered_json models_json(const AgentModels& m) {
    return {{"style", m.style.id}, {"topic", m.topic.id}, {"generator", m.generator.id}};
}

AgentModels models_from_json(const nlohmann::json& j) {
    AgentModels m;
    m.style = {j.at("style"), agents::Role::style};
    m.topic = {j.at("topic"), agents::Role::topic};
    m.generator = {j.at("generator"), agents::Role::generator};
    return m;
}

}  // namespace

nlohmann::ordered_json to_json(const IterationState& s) {
    nlohmann::ordered_json j;
    j["schema"] = "pat-iteration-state";
    j["version"] = 1;
    j["iteration"] = s.iteration;
    j["max_iterations"] = s.max_iterations;
    j["converged"] = s.converged;
    j["base"] = models_json(s.base);
    j["models"] = models_json(s.models);
    j["history"] = nlohmann::ordered_json::array();
    for (const auto& r : s.history) {
        nlohmann::ordered_json h;
        h["iteration"] = r.iteration;
        h["mean_silver_reward"] = r.mean_silver_reward;
        h["mean_style_silver_reward"] = r.mean_style_silver_reward;
        h["instances"] = r.instances;
        h["skipped"] = r.skipped;
        h["style_pairs"] = r.style_pairs;
        h["topic_pairs"] = r.topic_pairs;
        h["sft_records"] = r.sft_records;
        h["marker_warnings"] = r.marker_warnings;
        h["datasets"] = {{"style", r.style_dataset}, {"topic", r.topic_dataset}, {"sft", r.sft_dataset}};
        h["models"] = models_json(r.models);
        j["history"].push_back(std::move(h));
    }
    return j;
}

IterationState state_from_json(const nlohmann::json& j) {
    if (j.value("schema", "") != "pat-iteration-state") throw StateError("not an iteration state file");
    IterationState s;
    s.iteration = j.at("iteration");
    s.max_iterations = j.at("max_iterations");
    s.converged = j.at("converged");
    s.base = models_from_json(j.at("base"));
    s.models = models_from_json(j.at("models"));
    for (const auto& h : j.at("history")) {
        IterationRecord r;
        r.iteration = h.at("iteration");
        r.mean_silver_reward = h.at("mean_silver_reward");
        r.mean_style_silver_reward = h.at("mean_style_silver_reward");
        r.instances = h.at("instances");
        r.skipped = h.at("skipped");
        r.style_pairs = h.at("style_pairs");
        r.topic_pairs = h.at("topic_pairs");
        r.sft_records = h.at("sft_records");
        r.marker_warnings = h.at("marker_warnings");
        r.style_dataset = h.at("datasets").at("style");
        r.topic_dataset = h.at("datasets").at("topic");
        r.sft_dataset = h.at("datasets").at("sft");
        r.models = models_from_json(h.at("models"));
        s.history.push_back(std::move(r));
    }
    return s;
}

void save_state(const IterationState& s, const std::string& path) { write_file(path, to_json(s).dump(2) + "\n"); }

IterationState load_state(const std::string& path) { return state_from_json(nlohmann::json::parse(read_file(path))); }

IterationState initial_state(const AgentModels& base, std::size_t max_iterations) {
    IterationState s;
    s.max_iterations = max_iterations;
    s.base = base;
    s.models = base;
    return s;
}

// ---------------------------------------------------------------------------
// Algorithm 1

namespace {

struct PhaseOutcome {
    std::vector<Rollout> rollouts;
    std::vector<std::string> fixed;  // the other trajectory, per instance
    std::vector<bool> ok;
};

void log_skips(const LoopContext& ctx, const PhaseOutcome& out, std::string_view phase) {
    for (std::size_t i = 0; i < out.ok.size(); ++i) {
        if (out.ok[i]) continue;
        const auto& errs = out.rollouts[i].errors;
        spdlog::warn("{} phase: skipping instance {}: {}", phase, ctx.instances[i].key(),
                     errs.empty() ? std::string("no candidates") : errs.front());
    }
}

PhaseOutcome run_phase(const LoopContext& ctx, TrajectoryKind kind, const AgentModels& models,
                       const std::vector<bool>& active) {
    const auto& insts = ctx.instances;
    const auto& cfg = ctx.config;
    PhaseOutcome out;
    out.rollouts.resize(insts.size());
    out.fixed.resize(insts.size());
    out.ok.assign(insts.size(), false);
    parallel_for(insts.size(), cfg.sampling.max_in_flight, [&](std::size_t i) {
        if (!active[i]) return;
        const auto& inst = insts[i];
        try {
            if (kind == TrajectoryKind::style) {
                const auto prompt = agents::build_topic_prompt(inst.topic_texts());
                out.fixed[i] = agents::parse_summary(
                                   agents::greedy(ctx.client, models.topic, prompt, cfg.sampling.max_tokens),
                                   agents::kTopicMarker)
                                   .text;
                out.rollouts[i] = rollout_style(ctx.client, inst, out.fixed[i], models, cfg.sampling, cfg.reward);
            } else {
                const auto prompt = agents::build_style_prompt(inst.style_texts(), inst.history_texts);
                out.fixed[i] = agents::parse_summary(
                                   agents::greedy(ctx.client, models.style, prompt, cfg.sampling.max_tokens),
                                   agents::kStyleMarker)
                                   .text;
                out.rollouts[i] = rollout_topic(ctx.client, inst, out.fixed[i], models, cfg.sampling, cfg.reward);
            }
            out.ok[i] = !out.rollouts[i].candidates.empty();
        } catch (const Error& e) {
            out.rollouts[i].errors.emplace_back(e.what());
        }
    });
    return out;
}

std::string iteration_dir(std::size_t iteration) { return "datasets/iter-" + std::to_string(iteration); }

}  // namespace

IterationState run_iteration(const IterationState& state, const LoopContext& ctx) {
    if (state.iteration >= state.max_iterations) {
        throw StateError("iteration budget exhausted (" + std::to_string(state.iteration) + " of " +
                         std::to_string(state.max_iterations) + ")");
    }
    const auto& cfg = ctx.config;
    const auto& insts = ctx.instances;
    const std::size_t t = state.iteration;
    const std::string dir = iteration_dir(t);
    auto abs = [&](const std::string& rel) { return (fs::path(cfg.workdir) / rel).string(); };

    IterationState next = state;
    IterationRecord rec;
    rec.iteration = t;
    rec.instances = insts.size();

    auto train_on = [&](TrainKind kind, const std::string& rel, const ModelRef& base, bool has_data) {
        if (!has_data) return base;
        return submit_training(ctx.trainer, {kind, abs(rel), rel, base, cfg.step_budget}, ctx.mock);
    };

    // (1) style agent, topic trajectory fixed to the current topic agent's greedy summary
    std::vector<bool> active(insts.size(), true);
    const auto style_phase = run_phase(ctx, TrajectoryKind::style, next.models, active);
    log_skips(ctx, style_phase, "style");
    std::vector<PreferencePair> style_pairs;
    std::vector<std::string> silver_style(insts.size());
    double style_sum = 0.0;
    std::size_t style_n = 0;
    for (std::size_t i = 0; i < insts.size(); ++i) {
        active[i] = style_phase.ok[i];
        rec.marker_warnings += style_phase.rollouts[i].marker_warnings;
        if (!active[i]) continue;
        const auto& roll = style_phase.rollouts[i];
        auto pairs = build_preference_pairs(roll.candidates, roll.trajectory_prompt.rendered(),
                                            insts[i].target.user_id, t, cfg.epsilon, cfg.pair_mode);
        style_pairs.insert(style_pairs.end(), pairs.begin(), pairs.end());
        const auto& silver = select_silver(roll.candidates);
        silver_style[i] = silver.candidate_text;
        style_sum += silver.reward;
        ++style_n;
    }
    rec.style_dataset = dir + "/style_dpo.jsonl";
    write_file(abs(rec.style_dataset), to_jsonl(style_pairs));
    rec.style_pairs = style_pairs.size();
    next.models.style = train_on(TrainKind::dpo, rec.style_dataset, next.models.style, !style_pairs.empty());

    // (2) topic agent, style trajectory fixed to the updated style agent's greedy summary
    const auto topic_phase = run_phase(ctx, TrajectoryKind::topic, next.models, active);
    log_skips(ctx, topic_phase, "topic");
    std::vector<PreferencePair> topic_pairs;
    std::vector<SilverInstance> silver;
    double topic_sum = 0.0;
    for (std::size_t i = 0; i < insts.size(); ++i) {
        rec.marker_warnings += topic_phase.rollouts[i].marker_warnings;
        if (!active[i] || !topic_phase.ok[i]) {
            active[i] = false;
            continue;
        }
        const auto& roll = topic_phase.rollouts[i];
        auto pairs = build_preference_pairs(roll.candidates, roll.trajectory_prompt.rendered(),
                                            insts[i].target.user_id, t, cfg.epsilon, cfg.pair_mode);
        topic_pairs.insert(topic_pairs.end(), pairs.begin(), pairs.end());
        const auto& best = select_silver(roll.candidates);
        topic_sum += best.reward;
        silver.push_back({&insts[i], silver_style[i], best.candidate_text});
    }
    rec.topic_dataset = dir + "/topic_dpo.jsonl";
    write_file(abs(rec.topic_dataset), to_jsonl(topic_pairs));
    rec.topic_pairs = topic_pairs.size();
    next.models.topic = train_on(TrainKind::dpo, rec.topic_dataset, next.models.topic, !topic_pairs.empty());

    if (silver.empty()) throw StateError("iteration " + std::to_string(t) + ": every instance failed");

    // (3) generator SFT on (x, s*, p*, y)
    const auto sft = build_sft_records(silver);
    rec.sft_dataset = dir + "/generator_sft.jsonl";
    write_file(abs(rec.sft_dataset), to_jsonl(sft));
    rec.sft_records = sft.size();
    next.models.generator = train_on(TrainKind::sft, rec.sft_dataset, next.models.generator, !sft.empty());

    rec.skipped = insts.size() - silver.size();
    rec.mean_silver_reward = topic_sum / static_cast<double>(silver.size());
    rec.mean_style_silver_reward = style_n == 0 ? 0.0 : style_sum / static_cast<double>(style_n);
    rec.models = next.models;
    next.history.push_back(std::move(rec));
    next.iteration = t + 1;
    return next;
}

IterationState train(IterationState state, const LoopContext& ctx,
                     const std::function<void(const IterationState&)>& on_iteration) {
    while (state.iteration < state.max_iterations && !state.converged) {
        state = run_iteration(state, ctx);
        const auto& h = state.history;
        std::size_t flat = 0;
        for (std::size_t k = h.size(); k >= 2; --k) {
            if (h[k - 1].mean_silver_reward - h[k - 2].mean_silver_reward < ctx.config.delta) {
                ++flat;
            } else {
                break;
            }
        }
        if (flat >= ctx.config.patience) state.converged = true;
        if (on_iteration) on_iteration(state);
        spdlog::info("iteration {} done: mean silver reward {:.4f}, pairs style={} topic={}, sft={}",
                     h.back().iteration, h.back().mean_silver_reward, h.back().style_pairs, h.back().topic_pairs,
                     h.back().sft_records);
    }
    return state;
}

}  // namespace pat::loop
