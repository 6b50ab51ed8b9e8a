#include "pat/cli.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <filesystem>
#include <iostream>
#include <mutex>

#include "pat/instance.hpp"
#include "pat/mock.hpp"

namespace pat::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// config

namespace {

class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw UsageError("config key " + label() + " must be an object");
    }

    void allow(std::initializer_list<std::string_view> keys) const {
        for (const auto& [k, v] : j_.items()) {
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) throw UsageError("unknown config key: " + key(k));
        }
    }
    bool has(const char* k) const { return j_.contains(k); }
    Node child(const char* k) const { return Node(j_.at(k), key(k)); }
    const json& raw(const char* k) const { return j_.at(k); }
    std::string key(std::string_view k) const { return path_.empty() ? std::string(k) : path_ + "." + std::string(k); }

    void count(const char* k, std::size_t& out, bool positive) const {
        if (!has(k)) return;
        const auto& v = j_.at(k);
        if (!v.is_number_integer() || v.get<long long>() < (positive ? 1 : 0)) {
            throw UsageError("config key " + key(k) + " must be a " + (positive ? "positive" : "non-negative") +
                             " integer");
        }
        out = v.get<std::size_t>();
    }
    void u64(const char* k, std::uint64_t& out) const {
        if (!has(k)) return;
        const auto& v = j_.at(k);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
            throw UsageError("config key " + key(k) + " must be a non-negative integer");
        }
        out = v.get<std::uint64_t>();
    }
    void real(const char* k, double& out, bool positive) const {
        if (!has(k)) return;
        const auto& v = j_.at(k);
        if (!v.is_number() || v.get<double>() < 0.0 || (positive && v.get<double>() == 0.0)) {
            throw UsageError("config key " + key(k) + " must be a " + (positive ? "positive" : "non-negative") +
                             " number");
        }
        out = v.get<double>();
    }
    void str(const char* k, std::string& out) const {
        if (!has(k)) return;
        if (!j_.at(k).is_string()) throw UsageError("config key " + key(k) + " must be a string");
        out = j_.at(k).get<std::string>();
    }
    void opt_str(const char* k, std::optional<std::string>& out) const {
        if (!has(k)) return;
        if (j_.at(k).is_null()) {
            out.reset();
            return;
        }
        std::string s;
        str(k, s);
        out = s;
    }
    template <typename Fn>
    auto parsed(const char* k, Fn&& parse) const {
        std::string s;
        str(k, s);
        try {
            return parse(s);
        } catch (const ConfigError& e) {
            throw UsageError("config key " + key(k) + ": " + e.what());
        }
    }

private:
    std::string label() const { return path_.empty() ? "<root>" : path_; }
    const json& j_;
    std::string path_;
};

void read_model(const Node& models, const char* k, ModelSpec& out) {
    if (!models.has(k)) return;
    const auto& v = models.raw(k);
    if (v.is_string()) {
        out.id = v.get<std::string>();
        return;
    }
    Node m = models.child(k);
    m.allow({"id", "endpoint"});
    m.str("id", out.id);
    m.opt_str("endpoint", out.endpoint);
}

ordered_json model_json(const ModelSpec& m) {
    return {{"id", m.id}, {"endpoint", m.endpoint ? ordered_json(*m.endpoint) : ordered_json(nullptr)}};
}

}  // namespace

EngineConfig apply_config(EngineConfig c, const json& j) {
    Node root(j, "");
    root.allow({"corpus", "task", "encoder", "graph", "retrieval", "sampling", "reward", "loop", "models", "trainer",
                "eval"});
    root.str("corpus", c.corpus);
    if (root.has("task")) c.task = root.parsed("task", [](const std::string& s) { return corpus::parse_task(s); });
    if (root.has("encoder")) {
        Node n = root.child("encoder");
        n.allow({"kind", "endpoint", "dim"});
        if (n.has("kind")) {
            c.encoder.kind = n.parsed("kind", [](const std::string& s) {
                if (s == "local_deterministic") return graph::EncoderKind::local_deterministic;
                if (s == "remote") return graph::EncoderKind::remote;
                throw ConfigError("expected local_deterministic or remote, got " + s);
            });
        }
        n.opt_str("endpoint", c.encoder.endpoint);
        n.count("dim", c.encoder.dim, true);
    }
    if (root.has("graph")) {
        Node n = root.child("graph");
        n.allow({"layers"});
        n.count("layers", c.layers, false);
    }
    if (root.has("retrieval")) {
        Node n = root.child("retrieval");
        n.allow({"k1", "k2", "min_exact", "backoff_topics", "style_cap", "topic_cap"});
        n.count("k1", c.retrieval.k1, true);
        n.count("k2", c.retrieval.k2, true);
        n.count("min_exact", c.retrieval.min_exact_candidates, false);
        n.count("backoff_topics", c.retrieval.backoff_topic_count, true);
        n.count("style_cap", c.retrieval.style_text_cap, true);
        n.count("topic_cap", c.retrieval.topic_text_cap, true);
    }
    if (root.has("sampling")) {
        Node n = root.child("sampling");
        n.allow({"m1", "m2", "temperature", "max_tokens", "seed", "max_in_flight"});
        n.count("m1", c.sampling.m1, true);
        n.count("m2", c.sampling.m2, true);
        n.real("temperature", c.sampling.temperature, false);
        n.count("max_tokens", c.sampling.max_tokens, true);
        n.u64("seed", c.sampling.seed);
        n.count("max_in_flight", c.sampling.max_in_flight, true);
    }
    if (root.has("reward")) {
        Node n = root.child("reward");
        n.allow({"kind", "tie_epsilon"});
        if (n.has("kind")) {
            c.reward.kind = n.parsed("kind", [](const std::string& s) { return metrics::parse_reward_kind(s); });
        }
        n.real("tie_epsilon", c.reward.tie_epsilon, true);
    }
    if (root.has("loop")) {
        Node n = root.child("loop");
        n.allow({"T", "delta", "patience", "step_budget", "pair_mode"});
        n.count("T", c.max_iterations, false);
        n.real("delta", c.delta, false);
        n.count("patience", c.patience, true);
        n.count("step_budget", c.step_budget, true);
        if (n.has("pair_mode")) {
            c.pair_mode = n.parsed("pair_mode", [](const std::string& s) { return loop::parse_pair_mode(s); });
        }
    }
    if (root.has("models")) {
        Node n = root.child("models");
        n.allow({"backend", "endpoint", "mock_fixtures", "mock_agents", "style", "topic", "generator", "judge"});
        n.str("backend", c.backend);
        n.opt_str("endpoint", c.endpoint);
        n.opt_str("mock_fixtures", c.mock_fixtures);
        if (n.has("mock_agents")) {
            Node a = n.child("mock_agents");
            for (const auto& [id, behavior] : n.raw("mock_agents").items()) {
                if (!behavior.is_string()) throw UsageError("config key " + a.key(id) + " must be a string");
                c.mock_agents[id] = behavior.get<std::string>();
            }
        }
        read_model(n, "style", c.style);
        read_model(n, "topic", c.topic);
        read_model(n, "generator", c.generator);
        if (n.has("judge")) {
            if (n.raw("judge").is_null()) {
                c.judge.reset();
            } else {
                ModelSpec m = c.judge.value_or(ModelSpec{"mock-judge", {}});
                read_model(n, "judge", m);
                c.judge = m;
            }
        }
    }
    if (root.has("trainer")) {
        Node n = root.child("trainer");
        n.allow({"kind", "target"});
        if (n.has("kind")) {
            c.trainer.kind = n.parsed("kind", [](const std::string& s) { return loop::parse_trainer_kind(s); });
        }
        n.str("target", c.trainer.target);
    }
    if (root.has("eval")) {
        Node n = root.child("eval");
        n.allow({"variants", "baseline", "strata", "judge_reasks"});
        if (n.has("variants")) {
            const auto& v = n.raw("variants");
            if (!v.is_array() || v.empty()) throw UsageError("config key eval.variants must be a non-empty array");
            c.eval.variants.clear();
            for (const auto& s : v) {
                if (!s.is_string()) throw UsageError("config key eval.variants must hold strings");
                try {
                    c.eval.variants.push_back(agents::parse_variant(s.get<std::string>()));
                } catch (const ConfigError& e) {
                    throw UsageError(std::string("config key eval.variants: ") + e.what());
                }
            }
        }
        if (n.has("baseline")) {
            c.eval.baseline = n.parsed("baseline", [](const std::string& s) { return agents::parse_variant(s); });
        }
        if (n.has("strata")) {
            const auto& v = n.raw("strata");
            if (!v.is_array() || v.empty()) throw UsageError("config key eval.strata must be a non-empty array");
            c.eval.strata.clear();
            for (const auto& s : v) {
                if (!s.is_number_integer() || s.get<long long>() < 0) {
                    throw UsageError("config key eval.strata must hold non-negative integers");
                }
                c.eval.strata.push_back(s.get<std::size_t>());
            }
        }
        n.count("judge_reasks", c.eval.judge_reasks, false);
    }
    return c;
}

EngineConfig load_config(const std::string& path, EngineConfig base) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path + " is not valid JSON: " + e.what());
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    if (!j.is_object()) throw UsageError("config " + path + " must be a JSON object");
    if (!j.contains("task")) throw UsageError("missing required config key: task (in " + path + ")");
    return apply_config(std::move(base), j);
}

void validate(const EngineConfig& c) {
    if (c.backend != "mock" && c.backend != "http") throw UsageError("config key models.backend must be mock or http");
    if (c.backend == "http" && !c.endpoint) {
        for (const auto* m : {&c.style, &c.topic, &c.generator}) {
            if (!m->endpoint) throw UsageError("missing required config key: models.endpoint");
        }
    }
    if (c.encoder.kind == graph::EncoderKind::remote && !c.encoder.endpoint) {
        throw UsageError("missing required config key: encoder.endpoint");
    }
    const bool external =
        c.trainer.kind == loop::TrainerKind::external_command || c.trainer.kind == loop::TrainerKind::http;
    if (external && c.trainer.target.empty()) throw UsageError("missing required config key: trainer.target");
    if (c.trainer.kind == loop::TrainerKind::mock_memorizing && c.backend != "mock") {
        throw UsageError("config key trainer.kind: mock_memorizing needs models.backend = mock");
    }
    for (const auto* m : {&c.style, &c.topic, &c.generator}) {
        if (m->id.empty()) throw UsageError("config key models.*.id must be non-empty");
    }
    const std::pair<const char*, std::size_t> counts[] = {
        {"sampling.m1", c.sampling.m1},           {"sampling.m2", c.sampling.m2},
        {"sampling.max_tokens", c.sampling.max_tokens}, {"sampling.max_in_flight", c.sampling.max_in_flight},
        {"encoder.dim", c.encoder.dim},           {"loop.step_budget", c.step_budget},
        {"loop.patience", c.patience}};
    for (const auto& [key, v] : counts) {
        if (v == 0) throw UsageError(std::string("config key ") + key + " must be positive");
    }
    if (c.sampling.temperature < 0.0) throw UsageError("config key sampling.temperature must be non-negative");
    if (c.delta < 0.0) throw UsageError("config key loop.delta must be non-negative");
    if (c.reward.tie_epsilon < 0.0) throw UsageError("config key reward.tie_epsilon must be non-negative");
    if (c.eval.variants.empty()) throw UsageError("config key eval.variants must be non-empty");
    if (c.eval.strata.empty()) throw UsageError("config key eval.strata must be non-empty");
    for (std::size_t i = 1; i < c.eval.strata.size(); ++i) {
        if (c.eval.strata[i] <= c.eval.strata[i - 1]) throw UsageError("config key eval.strata must be increasing");
    }
}

ordered_json to_json(const EngineConfig& c) {
    ordered_json j;
    j["corpus"] = c.corpus;
    j["task"] = corpus::to_string(c.task);
    j["encoder"] = {{"kind", c.encoder.kind == graph::EncoderKind::remote ? "remote" : "local_deterministic"},
                    {"endpoint", c.encoder.endpoint ? ordered_json(*c.encoder.endpoint) : ordered_json(nullptr)},
                    {"dim", c.encoder.dim}};
    j["graph"] = {{"layers", c.layers}};
    j["retrieval"] = {{"k1", c.retrieval.k1},
                      {"k2", c.retrieval.k2},
                      {"min_exact", c.retrieval.min_exact_candidates},
                      {"backoff_topics", c.retrieval.backoff_topic_count},
                      {"style_cap", c.retrieval.style_text_cap},
                      {"topic_cap", c.retrieval.topic_text_cap}};
    j["sampling"] = {{"m1", c.sampling.m1},
                     {"m2", c.sampling.m2},
                     {"temperature", c.sampling.temperature},
                     {"max_tokens", c.sampling.max_tokens},
                     {"seed", c.sampling.seed},
                     {"max_in_flight", c.sampling.max_in_flight}};
    j["reward"] = {{"kind", metrics::to_string(c.reward.kind)}, {"tie_epsilon", c.reward.tie_epsilon}};
    j["loop"] = {{"T", c.max_iterations},
                 {"delta", c.delta},
                 {"patience", c.patience},
                 {"step_budget", c.step_budget},
                 {"pair_mode", loop::to_string(c.pair_mode)}};
    ordered_json agents_j = ordered_json::object();
    for (const auto& [id, b] : c.mock_agents) agents_j[id] = b;
    j["models"] = {{"backend", c.backend},
                   {"endpoint", c.endpoint ? ordered_json(*c.endpoint) : ordered_json(nullptr)},
                   {"mock_fixtures", c.mock_fixtures ? ordered_json(*c.mock_fixtures) : ordered_json(nullptr)},
                   {"mock_agents", agents_j},
                   {"style", model_json(c.style)},
                   {"topic", model_json(c.topic)},
                   {"generator", model_json(c.generator)},
                   {"judge", c.judge ? model_json(*c.judge) : ordered_json(nullptr)}};
    j["trainer"] = {{"kind", loop::to_string(c.trainer.kind)}, {"target", c.trainer.target}};
    ordered_json variants = ordered_json::array();
    for (auto v : c.eval.variants) variants.push_back(agents::to_string(v));
    j["eval"] = {{"variants", variants},
                 {"baseline", agents::to_string(c.eval.baseline)},
                 {"strata", c.eval.strata},
                 {"judge_reasks", c.eval.judge_reasks}};
    return j;
}

// ---------------------------------------------------------------------------
// pipeline helpers

namespace {

class PipelineError : public Error {
public:
    using Error::Error;
};

struct Workdir {
    fs::path root;

    fs::path corpus() const { return root / "corpus" / "corpus.jsonl"; }
    fs::path index() const { return root / "index" / "embeddings.bin"; }
    fs::path state() const { return root / "state.json"; }
    fs::path registry() const { return root / "models" / "mock-registry.json"; }
    fs::path report_json() const { return root / "reports" / "report.json"; }
    fs::path report_txt() const { return root / "reports" / "report.txt"; }
    fs::path manifest(const std::string& sub) const { return root / "manifests" / (sub + ".json"); }

    std::string label(const fs::path& p) const {
        const auto rel = p.lexically_relative(root);
        if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
        return p.generic_string();
    }
};

std::string corpus_path(const EngineConfig& c, const Workdir& wd) {
    if (!c.corpus.empty()) return c.corpus;
    if (fs::exists(wd.corpus())) return wd.corpus().string();
    throw UsageError("missing required config key: corpus (no --corpus given and " + wd.corpus().string() +
                     " does not exist; run gen-synthetic or ingest first)");
}

corpus::Dataset load_corpus(const EngineConfig& c, const Workdir& wd) {
    const auto path = corpus_path(c, wd);
    try {
        return corpus::ingest_corpus(path, c.task);
    } catch (const Error& e) {
        throw PipelineError("corpus " + path + ": " + e.what());
    }
}

graph::EmbeddingIndex load_index_for(const Workdir& wd) {
    if (!fs::exists(wd.index())) throw PipelineError("no index at " + wd.index().string() + "; run build-index first");
    return graph::load_index(wd.index().string());
}

loop::AgentModels agent_models(const EngineConfig& c) {
    loop::AgentModels m;
    m.style = {c.style.id, agents::Role::style};
    m.topic = {c.topic.id, agents::Role::topic};
    m.generator = {c.generator.id, agents::Role::generator};
    return m;
}

struct Runtime {
    std::unique_ptr<agents::ChatClient> client;
    agents::MockClient* mock = nullptr;
};

Runtime make_runtime(const EngineConfig& c, const Workdir& wd, bool with_registry) {
    Runtime rt;
    if (c.backend == "mock") {
        auto mock = std::make_unique<agents::MockClient>();
        agents::register_default_agents(*mock);
        for (const auto& [id, behavior] : c.mock_agents) mock->add_builtin(id, behavior);
        if (c.mock_fixtures) mock->load_fixture_file(*c.mock_fixtures);
        if (with_registry && fs::exists(wd.registry())) {
            mock->load_registry(wd.registry().string(), wd.root.string());
        }
        rt.mock = mock.get();
        rt.client = std::move(mock);
        return rt;
    }
    std::map<std::string, std::string> routes;
    const ModelSpec* specs[] = {&c.style, &c.topic, &c.generator, c.judge ? &*c.judge : nullptr};
    for (const auto* m : specs) {
        if (m && m->endpoint) routes[m->id] = *m->endpoint;
    }
    rt.client = std::make_unique<agents::HttpChatClient>(c.endpoint.value_or(""), std::move(routes));
    return rt;
}

class Manifest {
public:
    Manifest(const Workdir& wd, std::string sub, const EngineConfig& c) : wd_(wd), sub_(std::move(sub)) {
        config_ = to_json(c);
    }
    void input(const fs::path& p) {
        if (fs::exists(p)) inputs_[wd_.label(p)] = sha256_file(p.string());
    }
    void output(const fs::path& p) {
        if (fs::exists(p)) outputs_[wd_.label(p)] = sha256_file(p.string());
    }
    void write() const {
        ordered_json j;
        j["tool"] = "pat";
        j["version"] = kVersion;
        j["subcommand"] = sub_;
        j["config_sha256"] = sha256_hex(config_.dump());
        j["config"] = config_;
        j["inputs"] = inputs_;
        j["outputs"] = outputs_;
        write_file(wd_.manifest(sub_).string(), j.dump(2) + "\n");
    }

private:
    const Workdir& wd_;
    std::string sub_;
    ordered_json config_;
    std::map<std::string, std::string> inputs_;
    std::map<std::string, std::string> outputs_;
};

void setup_logging(int verbosity) {
    static std::once_flag once;
    std::call_once(once, [] {
        auto logger = spdlog::stderr_color_mt("pat");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
    });
    spdlog::set_level(verbosity < 0 ? spdlog::level::warn : verbosity > 0 ? spdlog::level::debug : spdlog::level::info);
}

corpus::SparsityHistogram default_sparsity(std::size_t users) {
    // 96% of users with at most one train entry, the rest with two
    const std::size_t low = users - users * 4 / 100;
    return {{0, low / 2}, {1, low - low / 2}, {2, users - low}};
}

}  // namespace

// ---------------------------------------------------------------------------
// cli_main

int cli_main(const std::vector<std::string>& args) {
    CLI::App app{"PaT cold-start personalization pipeline", "pat"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", kVersion);

    std::string config_path;
    std::string workdir = ".";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> corpus_flag;
    std::optional<std::string> task_flag;
    int verbose = 0;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON config file (fallback: $PAT_CONFIG)");
    app.add_option("--workdir", workdir, "Artifact directory")->capture_default_str();
    app.add_option("--seed", seed, "Seed for every random choice");
    app.add_option("--corpus", corpus_flag, "Corpus JSONL path");
    app.add_option("--task", task_flag, "long_text or short_text");
    app.add_flag("-v,--verbose", verbose, "Debug logging");
    app.add_flag("-q,--quiet", quiet, "Warnings and errors only");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Validate a corpus and store it canonically in the workdir");
    std::string ingest_input;
    ingest->add_option("--input", ingest_input, "Corpus JSONL to ingest")->required();

    // gen-synthetic
    auto* gen = app.add_subcommand("gen-synthetic", "Write a synthetic corpus to the workdir");
    std::size_t gen_users = 50, gen_topics = 10;
    std::string gen_sparsity;
    gen->add_option("--users", gen_users, "Number of users")->capture_default_str();
    gen->add_option("--topics", gen_topics, "Number of topics")->capture_default_str();
    gen->add_option("--sparsity", gen_sparsity, "History-size histogram, e.g. 0:24,1:24,2:2");

    // build-index
    auto* bidx = app.add_subcommand("build-index", "Build graph embeddings over the train split");
    std::optional<std::size_t> layers_flag, dim_flag;
    bidx->add_option("--layers", layers_flag, "Propagation layers L");
    bidx->add_option("--dim", dim_flag, "Encoder dimension");

    // retrieve
    auto* retr = app.add_subcommand("retrieve", "Print the auxiliary context for a user and topic");
    std::string r_user, r_topic;
    std::optional<std::size_t> k1_flag, k2_flag;
    retr->add_option("--user", r_user, "User id")->required();
    retr->add_option("--topic", r_topic, "Target topic id")->required();
    retr->add_option("--k1", k1_flag, "Style neighbors");
    retr->add_option("--k2", k2_flag, "Topic neighbors");

    // run
    auto* run = app.add_subcommand("run", "Run the self-improvement loop");
    std::optional<std::size_t> t_flag, m1_flag, m2_flag, budget_flag;
    std::optional<std::string> trainer_flag, trainer_target_flag;
    bool resume = false;
    run->add_option("--T,--iterations", t_flag, "Maximum iterations");
    run->add_option("--trainer", trainer_flag, "mock-memorizing, mock-identity, external-command or http");
    run->add_option("--trainer-target", trainer_target_flag, "Command prefix or URL of the trainer");
    run->add_option("--m1", m1_flag, "Style candidates per instance");
    run->add_option("--m2", m2_flag, "Topic candidates per instance");
    run->add_option("--step-budget", budget_flag, "Training steps per phase");
    run->add_flag("--resume", resume, "Continue from the saved state");

    // evaluate
    auto* evalc = app.add_subcommand("evaluate", "Evaluate on the test split and write reports");
    std::vector<std::string> variant_flags;
    std::optional<std::string> baseline_flag;
    bool no_judge = false;
    evalc->add_option("--variant", variant_flags, "Variants to evaluate (repeatable)");
    evalc->add_option("--baseline", baseline_flag, "Variant the Delta% column compares against");
    evalc->add_flag("--no-judge", no_judge, "Skip the judge");

    // report
    auto* rep = app.add_subcommand("report", "Render a saved report");
    std::string rep_format = "table";
    std::optional<std::string> rep_input;
    rep->add_option("--format", rep_format, "table or json")->check(CLI::IsMember({"table", "json"}));
    rep->add_option("--input", rep_input, "Report JSON (default: <workdir>/reports/report.json)");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();  // program name
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    setup_logging(quiet ? -1 : verbose);

    try {
        EngineConfig cfg;
        if (config_path.empty()) {
            if (const char* env = std::getenv("PAT_CONFIG"); env && *env) config_path = env;
        }
        if (!config_path.empty()) cfg = load_config(config_path, cfg);
        if (seed) cfg.sampling.seed = *seed;
        if (corpus_flag) cfg.corpus = *corpus_flag;
        try {
            if (task_flag) cfg.task = corpus::parse_task(*task_flag);
            if (layers_flag) cfg.layers = *layers_flag;
            if (dim_flag) cfg.encoder.dim = *dim_flag;
            if (k1_flag) cfg.retrieval.k1 = *k1_flag;
            if (k2_flag) cfg.retrieval.k2 = *k2_flag;
            if (t_flag) cfg.max_iterations = *t_flag;
            if (m1_flag) cfg.sampling.m1 = *m1_flag;
            if (m2_flag) cfg.sampling.m2 = *m2_flag;
            if (budget_flag) cfg.step_budget = *budget_flag;
            if (trainer_flag) cfg.trainer.kind = loop::parse_trainer_kind(*trainer_flag);
            if (trainer_target_flag) cfg.trainer.target = *trainer_target_flag;
            if (!variant_flags.empty()) {
                cfg.eval.variants.clear();
                for (const auto& v : variant_flags) cfg.eval.variants.push_back(agents::parse_variant(v));
            }
            if (baseline_flag) cfg.eval.baseline = agents::parse_variant(*baseline_flag);
            if (no_judge) cfg.judge.reset();
        } catch (const UsageError&) {
            throw;
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
        if ((k1_flag && *k1_flag == 0) || (k2_flag && *k2_flag == 0) || (m1_flag && *m1_flag == 0) ||
            (m2_flag && *m2_flag == 0) || (dim_flag && *dim_flag == 0) || (budget_flag && *budget_flag == 0)) {
            throw UsageError("counts given on the command line must be positive");
        }
        validate(cfg);

        const Workdir wd{fs::path(workdir)};
        Manifest manifest(wd, app.get_subcommands().front()->get_name(), cfg);

        if (*ingest) {
            corpus::Dataset ds;
            try {
                ds = corpus::ingest_corpus(ingest_input, cfg.task);
            } catch (const Error& e) {
                throw PipelineError("corpus " + ingest_input + ": " + e.what());
            }
            write_file(wd.corpus().string(), corpus::serialize(ds));
            manifest.input(ingest_input);
            manifest.output(wd.corpus());
            manifest.write();
            std::cout << "ingested " << ds.entries.size() << " entries, " << ds.users().size() << " users -> "
                      << wd.corpus().string() << "\n";
            return 0;
        }

        if (*gen) {
            corpus::SparsityHistogram hist;
            try {
                hist = gen_sparsity.empty() ? default_sparsity(gen_users) : corpus::parse_sparsity(gen_sparsity);
            } catch (const ConfigError& e) {
                throw UsageError(std::string("--sparsity: ") + e.what());
            }
            corpus::Dataset ds;
            try {
                ds = corpus::generate_synthetic(cfg.sampling.seed, gen_users, gen_topics, hist, cfg.task);
            } catch (const ConfigError& e) {
                throw UsageError(e.what());
            }
            write_file(wd.corpus().string(), corpus::serialize(ds));
            manifest.output(wd.corpus());
            manifest.write();
            std::cout << "generated " << ds.entries.size() << " entries for " << gen_users << " users -> "
                      << wd.corpus().string() << "\n";
            return 0;
        }

        if (*bidx) {
            const auto ds = load_corpus(cfg, wd);
            const auto g = graph::build_graph(ds, {corpus::Split::train});
            const auto enc = graph::make_encoder(cfg.encoder);
            const auto idx = graph::propagate(graph::init_embeddings(g, *enc), g, cfg.layers);
            graph::save_index(idx, wd.index().string(), cfg.encoder);
            manifest.input(corpus_path(cfg, wd));
            manifest.output(wd.index());
            manifest.output(wd.index().string() + ".json");
            manifest.write();
            std::cout << "indexed " << idx.user_vec.size() << " users, " << idx.topic_vec.size() << " topics (dim "
                      << idx.dim << ", L=" << idx.layers << ") -> " << wd.index().string() << "\n";
            return 0;
        }

        if (*retr) {
            const auto ds = load_corpus(cfg, wd);
            const auto g = graph::build_graph(ds, {corpus::Split::train});
            const auto idx = load_index_for(wd);
            const auto ctx = retrieval::build_aux_context(g, idx, r_user, r_topic, cfg.retrieval);
            std::cout << retrieval::to_json(ctx).dump(2) << "\n";
            return 0;
        }

        if (*run) {
            const auto ds = load_corpus(cfg, wd);
            const auto g = graph::build_graph(ds, {corpus::Split::train});
            const auto idx = load_index_for(wd);
            const auto instances = make_instances(ds, g, idx, cfg.retrieval, corpus::Split::validation);
            if (instances.empty()) throw PipelineError("the corpus has no validation-split entries to train on");

            const bool resuming = resume && fs::exists(wd.state());
            if (!resuming) {
                std::error_code ec;
                fs::remove_all(wd.root / "datasets", ec);
                fs::remove(wd.registry(), ec);
            }
            auto rt = make_runtime(cfg, wd, resuming);
            auto state = resuming ? loop::load_state(wd.state().string())
                                  : loop::initial_state(agent_models(cfg), cfg.max_iterations);
            state.max_iterations = cfg.max_iterations;

            loop::LoopConfig lc;
            lc.max_iterations = cfg.max_iterations;
            lc.epsilon = cfg.reward.tie_epsilon;
            lc.delta = cfg.delta;
            lc.patience = cfg.patience;
            lc.step_budget = cfg.step_budget;
            lc.pair_mode = cfg.pair_mode;
            lc.sampling = cfg.sampling;
            lc.reward = cfg.reward;
            lc.workdir = wd.root.string();
            loop::LoopContext ctx{*rt.client, rt.mock, cfg.trainer, instances, lc};

            auto checkpoint = [&](const loop::IterationState& s) {
                if (rt.mock) rt.mock->save_registry(wd.registry().string());
                loop::save_state(s, wd.state().string());
            };
            state = loop::train(std::move(state), ctx, checkpoint);
            checkpoint(state);

            manifest.input(corpus_path(cfg, wd));
            manifest.input(wd.index());
            if (cfg.mock_fixtures) manifest.input(*cfg.mock_fixtures);
            manifest.output(wd.state());
            manifest.output(wd.registry());
            for (const auto& r : state.history) {
                for (const auto* d : {&r.style_dataset, &r.topic_dataset, &r.sft_dataset}) manifest.output(wd.root / *d);
            }
            manifest.write();

            std::cout << "iteration  mean_silver  style_silver  style_pairs  topic_pairs  sft_records  skipped\n";
            for (const auto& r : state.history) {
                char line[160];
                std::snprintf(line, sizeof line, "%9zu  %11.4f  %12.4f  %11zu  %11zu  %11zu  %7zu\n", r.iteration,
                              r.mean_silver_reward, r.mean_style_silver_reward, r.style_pairs, r.topic_pairs,
                              r.sft_records, r.skipped);
                std::cout << line;
            }
            std::cout << (state.converged ? "converged" : "stopped") << " after " << state.history.size()
                      << " iteration(s); state -> " << wd.state().string() << "\n";
            return 0;
        }

        if (*evalc) {
            const auto ds = load_corpus(cfg, wd);
            const auto g = graph::build_graph(ds, {corpus::Split::train});
            const auto idx = load_index_for(wd);
            const auto instances = make_instances(ds, g, idx, cfg.retrieval, corpus::Split::test);
            auto rt = make_runtime(cfg, wd, true);

            eval::EvalModels models;
            models.base = agent_models(cfg);
            models.tuned = fs::exists(wd.state()) ? loop::load_state(wd.state().string()).models : models.base;
            if (cfg.judge) {
                models.judge = agents::ModelRef{cfg.judge->id, agents::Role::judge};
            } else {
                models.judge.reset();
            }
            auto ecfg = cfg.eval;
            ecfg.max_tokens = cfg.sampling.max_tokens;
            ecfg.max_in_flight = cfg.sampling.max_in_flight;
            ordered_json echo = to_json(cfg);
            echo["tuned_models"] = {{"style", models.tuned.style.id},
                                    {"topic", models.tuned.topic.id},
                                    {"generator", models.tuned.generator.id}};
            const auto report = eval::evaluate(*rt.client, ds, instances, ecfg, models, echo);
            write_file(wd.report_json().string(), eval::render_report(report, eval::ReportFormat::json));
            const auto table = eval::render_report(report, eval::ReportFormat::table);
            write_file(wd.report_txt().string(), table);

            manifest.input(corpus_path(cfg, wd));
            manifest.input(wd.index());
            manifest.input(wd.state());
            manifest.input(wd.registry());
            if (cfg.mock_fixtures) manifest.input(*cfg.mock_fixtures);
            manifest.output(wd.report_json());
            manifest.output(wd.report_txt());
            manifest.write();

            std::cout << table;
            if (eval::any_stratum_failed(report)) {
                spdlog::error("at least one history stratum failed completely");
                return 1;
            }
            return 0;
        }

        if (*rep) {
            const std::string path = rep_input.value_or(wd.report_json().string());
            eval::EvalReport report;
            try {
                report = eval::report_from_json(json::parse(read_file(path)));
            } catch (const json::exception& e) {
                throw PipelineError("report " + path + ": " + e.what());
            }
            std::cout << eval::render_report(report, eval::parse_report_format(rep_format));
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "pat: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "pat: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int cli_main(int argc, const char* const* argv) { return cli_main(std::vector<std::string>(argv, argv + argc)); }

}  // namespace pat::cli
