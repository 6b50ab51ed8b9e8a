#include "pat/mock.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <random>

#include "pat/metrics.hpp"

namespace pat::agents {

namespace {

constexpr std::size_t kSummaryWords = 4;

// Candidate summary words: tokens without digits, ranked by frequency then
// first appearance.
std::vector<std::string> ranked_words(const std::string& body) {
    std::vector<std::string> order;
    std::map<std::string, std::size_t> freq;
    for (auto& t : metrics::tokenize(body)) {
        if (std::any_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
        if (freq[t]++ == 0) order.push_back(t);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](const std::string& a, const std::string& b) { return freq[a] > freq[b]; });
    return order;
}

std::vector<std::string> pick_words(const std::string& body, const SampleRequest& req, std::size_t index) {
    auto words = ranked_words(body);
    if (req.temperature == 0.0 || words.size() <= kSummaryWords) {
        if (words.size() > kSummaryWords) words.resize(kSummaryWords);
        return words;
    }
    const auto seed = derive_seed({req.model.id, req.prompt.digest(), std::to_string(index),
                                   std::to_string(req.seed.value_or(0))});
    std::mt19937_64 rng(seed);
    std::vector<std::string> picked;
    for (std::size_t i = 0; i < kSummaryWords; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (words.size() - i));
        std::swap(words[i], words[j]);
        picked.push_back(words[i]);
    }
    return picked;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0) out += ", ";
        out += words[i];
    }
    return out;
}

std::string strip_punct_words(const std::string& s) {
    std::string out;
    for (const auto& t : metrics::tokenize(s)) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

[[noreturn]] std::string unparseable(const SampleRequest& req, std::string_view behavior) {
    throw http::EndpointError(400, std::string(behavior) + " mock cannot interpret the prompt for model " +
                                       req.model.id);
}

}  // namespace

MockBehavior builtin_behavior(std::string_view name) {
    if (name == "extractive_style") {
        return [](const SampleRequest& req, std::size_t index) -> std::string {
            auto fields = parse_style_prompt(req.prompt);
            if (!fields) return unparseable(req, "extractive_style");
            const auto words = pick_words(fields->profile + "\n" + fields->similar_profiles, req, index);
            return "Writing Style: " + (words.empty() ? std::string("plain") : join_words(words)) + ".";
        };
    }
    if (name == "extractive_topic") {
        return [](const SampleRequest& req, std::size_t index) -> std::string {
            auto body = parse_topic_prompt(req.prompt);
            if (!body) return unparseable(req, "extractive_topic");
            const auto words = pick_words(*body, req, index);
            return "Product Summary: " + (words.empty() ? std::string("unknown") : join_words(words)) + ".";
        };
    }
    if (name == "compose_generator") {
        return [](const SampleRequest& req, std::size_t) -> std::string {
            auto f = parse_gen_prompt(req.prompt);
            if (!f) return unparseable(req, "compose_generator");
            std::string out = "Review Text: " + f->review_title;
            for (const auto* part : {&f->style_summary, &f->product_summary}) {
                const auto words = strip_punct_words(*part);
                if (!words.empty()) out += " " + words;
            }
            return out;
        };
    }
    if (name == "copy_topic_summary") {
        return [](const SampleRequest& req, std::size_t) -> std::string {
            auto f = parse_gen_prompt(req.prompt);
            if (!f) return unparseable(req, "copy_topic_summary");
            std::string out = "Review Text: " + f->review_title;
            const auto words = strip_punct_words(f->product_summary);
            if (!words.empty()) out += " " + words;
            return out;
        };
    }
    if (name == "echo_style_summary") {
        return [](const SampleRequest& req, std::size_t) -> std::string {
            auto f = parse_gen_prompt(req.prompt);
            if (!f) return unparseable(req, "echo_style_summary");
            return "Review Text: " + f->style_summary;
        };
    }
    if (name == "overlap_judge") {
        return [](const SampleRequest& req, std::size_t) -> std::string {
            auto f = parse_judge_prompt(req.prompt);
            if (!f) return unparseable(req, "overlap_judge");
            const double f1 = metrics::rougeL(f->generated_text, f->target_text).f1;
            return std::to_string(1 + static_cast<int>(std::lround(6.0 * f1)));
        };
    }
    if (name.starts_with("constant:")) {
        std::string text(name.substr(9));
        return [text](const SampleRequest&, std::size_t) { return text; };
    }
    throw ConfigError("unknown mock behavior: " + std::string(name));
}

void MockClient::add_agent(const std::string& id, MockBehavior behavior) {
    std::unique_lock lock(mu_);
    agents_[id] = std::move(behavior);
}

void MockClient::add_builtin(const std::string& id, std::string_view behavior) {
    add_agent(id, builtin_behavior(behavior));
}

void MockClient::add_fixture(const std::string& id, const std::string& digest, std::vector<std::string> completions) {
    if (completions.empty()) throw ConfigError("fixture for " + id + " has no completions");
    std::unique_lock lock(mu_);
    fixtures_[id][digest] = std::move(completions);
}

void MockClient::load_fixture_file(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("mock fixture " + path + ": " + e.what());
    }
    if (j.contains("agents")) {
        for (const auto& [id, behavior] : j.at("agents").items()) add_builtin(id, behavior.get<std::string>());
    }
    if (j.contains("fixtures")) {
        for (const auto& [id, table] : j.at("fixtures").items()) {
            for (const auto& [digest, completions] : table.items()) {
                add_fixture(id, digest, completions.get<std::vector<std::string>>());
            }
        }
    }
}

void MockClient::add_memorizing(const std::string& id, const std::string& base,
                                std::map<std::string, std::string> memory, nlohmann::json source) {
    if (id == base) throw ConfigError("memorizing model " + id + " cannot be its own base");
    std::unique_lock lock(mu_);
    if (!memorizing_.contains(id)) memorizing_order_.push_back(id);
    memorizing_[id] = Memorizing{base, std::move(memory), std::move(source)};
}

bool MockClient::has_model(const std::string& id) const {
    std::shared_lock lock(mu_);
    return agents_.contains(id) || memorizing_.contains(id) || fixtures_.contains(id);
}

std::string MockClient::complete_one(const SampleRequest& req, std::size_t index, int depth) const {
    if (depth > 64) throw http::EndpointError(500, "memorizing model chain too deep for " + req.model.id);
    const std::string digest = req.prompt.digest();
    MockBehavior behavior;
    std::optional<std::string> base;
    {
        std::shared_lock lock(mu_);
        if (auto f = fixtures_.find(req.model.id); f != fixtures_.end()) {
            if (auto c = f->second.find(digest); c != f->second.end()) return c->second[index % c->second.size()];
        }
        if (auto m = memorizing_.find(req.model.id); m != memorizing_.end()) {
            if (req.temperature == 0.0) {
                if (auto hit = m->second.memory.find(digest); hit != m->second.memory.end()) return hit->second;
            }
            base = m->second.base;
        } else if (auto a = agents_.find(req.model.id); a != agents_.end()) {
            behavior = a->second;
        }
    }
    if (base) {
        SampleRequest delegated = req;
        delegated.model.id = *base;
        return complete_one(delegated, index, depth + 1);
    }
    if (!behavior) throw http::EndpointError(404, "unknown mock model " + req.model.id);
    return behavior(req, index);
}

std::vector<std::string> MockClient::complete(const SampleRequest& req) const {
    std::vector<std::string> out;
    out.reserve(req.n);
    for (std::size_t i = 0; i < req.n; ++i) out.push_back(complete_one(req, req.temperature == 0.0 ? 0 : i, 0));
    return out;
}

nlohmann::json MockClient::registry_json() const {
    std::shared_lock lock(mu_);
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (const auto& id : memorizing_order_) {
        const auto& m = memorizing_.at(id);
        out.push_back({{"id", id}, {"base", m.base}, {"source", nlohmann::ordered_json(m.source)}});
    }
    return out;
}

void MockClient::save_registry(const std::string& path) const { write_file(path, registry_json().dump(2) + "\n"); }

void MockClient::load_registry(const std::string& path, const std::string& base_dir) {
    const auto j = nlohmann::json::parse(read_file(path));
    for (const auto& item : j) {
        const auto& src = item.at("source");
        const std::string kind = src.at("kind");
        std::filesystem::path data = src.at("data").get<std::string>();
        if (data.is_relative() && !base_dir.empty()) data = std::filesystem::path(base_dir) / data;
        auto memory = kind == "dpo" ? memory_from_preferences(data.string()) : memory_from_sft(data.string());
        add_memorizing(item.at("id"), item.at("base"), std::move(memory), src);
    }
}

namespace {

template <typename Fn>
void for_each_jsonl(const std::string& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        fn(nlohmann::json::parse(line));
    }
}

}  // namespace

std::map<std::string, std::string> memory_from_preferences(const std::string& jsonl_path) {
    std::map<std::string, std::pair<double, std::string>> best;
    for_each_jsonl(jsonl_path, [&](const nlohmann::json& rec) {
        const std::string digest = sha256_hex(rec.at("prompt").get<std::string>());
        const double r = rec.at("meta").at("reward_chosen").get<double>();
        auto it = best.find(digest);
        if (it == best.end() || r > it->second.first) best[digest] = {r, rec.at("chosen").get<std::string>()};
    });
    std::map<std::string, std::string> out;
    for (auto& [d, v] : best) out[d] = std::move(v.second);
    return out;
}

std::map<std::string, std::string> memory_from_sft(const std::string& jsonl_path) {
    std::map<std::string, std::string> out;
    for_each_jsonl(jsonl_path, [&](const nlohmann::json& rec) {
        out.emplace(sha256_hex(rec.at("prompt").get<std::string>()), rec.at("completion").get<std::string>());
    });
    return out;
}

void register_default_agents(MockClient& client) {
    client.add_builtin("mock-style", "extractive_style");
    client.add_builtin("mock-topic", "extractive_topic");
    client.add_builtin("mock-generator", "compose_generator");
    client.add_builtin("mock-judge", "overlap_judge");
}

}  // namespace pat::agents
