#include "pat/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <random>
#include <set>

namespace pat::corpus {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::validation: return "validation";
        case Split::test: return "test";
    }
    return "train";
}

std::string_view to_string(Task t) { return t == Task::long_text ? "long_text" : "short_text"; }

Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "validation") return Split::validation;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split: " + std::string(s));
}

Task parse_task(std::string_view s) {
    if (s == "long_text") return Task::long_text;
    if (s == "short_text") return Task::short_text;
    throw ConfigError("unknown task: " + std::string(s));
}

std::vector<std::string> Dataset::users() const {
    std::vector<std::string> out;
    std::set<std::string_view> seen;
    for (const auto& e : entries) {
        if (seen.insert(e.user_id).second) out.push_back(e.user_id);
    }
    return out;
}

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": parse error: " + what), line_(line) {}

SchemaError::SchemaError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": schema error: " + what), line_(line) {}

namespace {

std::string required_string(const nlohmann::json& obj, const char* key, std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(line, std::string("missing required key \"") + key + "\"");
    if (!it->is_string()) throw SchemaError(line, std::string("key \"") + key + "\" must be a string");
    return it->get<std::string>();
}

HistoryEntry parse_record(std::string_view line_text, std::size_t line, Task task) {
    nlohmann::json obj;
    try {
        obj = nlohmann::json::parse(line_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(line, e.what());
    }
    if (!obj.is_object()) throw SchemaError(line, "record must be a JSON object");

    HistoryEntry e;
    e.user_id = required_string(obj, "user_id", line);
    e.topic_id = required_string(obj, "topic_id", line);
    e.prompt = required_string(obj, "prompt", line);
    e.text = required_string(obj, "text", line);
    const std::string split = required_string(obj, "split", line);
    try {
        e.split = parse_split(split);
    } catch (const ConfigError&) {
        throw SchemaError(line, "invalid split \"" + split + "\"");
    }
    if (e.user_id.empty()) throw SchemaError(line, "user_id is empty");
    if (e.topic_id.empty()) throw SchemaError(line, "topic_id is empty");
    if (e.text.empty()) throw SchemaError(line, "text is empty");
    if (e.prompt.empty() && task == Task::short_text) {
        throw SchemaError(line, "prompt is empty (only allowed for long_text)");
    }
    return e;
}

}  // namespace

Dataset parse_corpus(std::string_view jsonl, Task task) {
    Dataset ds;
    ds.task = task;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < jsonl.size()) {
        std::size_t end = jsonl.find('\n', pos);
        if (end == std::string_view::npos) end = jsonl.size();
        std::string_view line = jsonl.substr(pos, end - pos);
        ++line_no;
        pos = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        ds.entries.push_back(parse_record(line, line_no, task));
    }
    return ds;
}

Dataset ingest_corpus(const std::string& path, Task task) { return parse_corpus(read_file(path), task); }

std::string serialize_entry(const HistoryEntry& e) {
    ordered_json j;
    j["user_id"] = e.user_id;
    j["topic_id"] = e.topic_id;
    j["prompt"] = e.prompt;
    j["text"] = e.text;
    j["split"] = to_string(e.split);
    return j.dump();
}

std::string serialize(const Dataset& ds) {
    std::string out;
    for (const auto& e : ds.entries) {
        out += serialize_entry(e);
        out.push_back('\n');
    }
    return out;
}

std::vector<HistoryEntry> history_of(const Dataset& ds, std::string_view user, SplitSet splits) {
    std::vector<HistoryEntry> out;
    for (const auto& e : ds.entries) {
        if (e.user_id == user && splits.contains(e.split)) out.push_back(e);
    }
    return out;
}

std::size_t history_size(const Dataset& ds, std::string_view user) {
    return static_cast<std::size_t>(std::count_if(ds.entries.begin(), ds.entries.end(), [&](const HistoryEntry& e) {
        return e.user_id == user && e.split == Split::train;
    }));
}

SparsityHistogram parse_sparsity(std::string_view spec) {
    SparsityHistogram hist;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        std::size_t end = spec.find(',', pos);
        if (end == std::string_view::npos) end = spec.size();
        std::string_view item = spec.substr(pos, end - pos);
        pos = end + 1;
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) throw ConfigError("bad sparsity item: " + std::string(item));
        std::size_t size = 0;
        std::size_t count = 0;
        auto k = item.substr(0, colon);
        auto v = item.substr(colon + 1);
        if (std::from_chars(k.data(), k.data() + k.size(), size).ec != std::errc{} ||
            std::from_chars(v.data(), v.data() + v.size(), count).ec != std::errc{}) {
            throw ConfigError("bad sparsity item: " + std::string(item));
        }
        hist[size] += count;
    }
    if (hist.empty()) throw ConfigError("empty sparsity histogram");
    return hist;
}

namespace {

// mt19937_64 output is fully specified by the standard; the distributions
// are not, so bounded draws are done by hand to stay reproducible everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    std::size_t below(std::size_t n) { return n == 0 ? 0 : static_cast<std::size_t>(engine_() % n); }
    bool coin() { return (engine_() >> 11) & 1u; }

private:
    std::mt19937_64 engine_;
};

constexpr std::array<std::string_view, 24> kSyllables = {
    "ka", "lo", "mi", "ru", "ve", "sa", "do", "ne", "ti", "po", "ga", "zu",
    "bre", "fal", "qui", "tor", "wen", "xan", "yel", "dri", "plo", "sku", "mar", "vin"};

constexpr std::array<std::string_view, 40> kFiller = {
    "the", "this", "really", "product", "was", "is", "very", "quite", "and", "it",
    "works", "for", "my", "with", "after", "week", "using", "good", "would", "buy",
    "again", "size", "price", "quality", "arrived", "fast", "looks", "feels", "nice", "overall",
    "bit", "some", "more", "than", "expected", "daily", "use", "happy", "order", "shipping"};

constexpr std::array<std::string_view, 4> kHabits = {"!", ".", "...", "!!"};

std::string pseudo_word(Rng& rng, std::set<std::string>& used) {
    for (;;) {
        std::string w;
        const std::size_t n = 2 + rng.below(2);
        for (std::size_t i = 0; i < n; ++i) w += kSyllables[rng.below(kSyllables.size())];
        if (used.insert(w).second) return w;
    }
}

std::string pad_id(char prefix, std::size_t i) {
    std::string digits = std::to_string(i);
    if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
    return std::string(1, prefix) + digits;
}

struct StyleGroup {
    std::string marker;
    std::string phrase;
    std::string_view habit;
};

struct SyntheticPlan {
    std::vector<StyleGroup> styles;
    std::vector<std::string> topic_attr;
    std::vector<std::string> topic_noun;
    std::vector<std::size_t> user_style;
    std::vector<std::size_t> user_history;
};

SyntheticPlan plan_synthetic(Rng& rng, std::size_t n_users, std::size_t n_topics, const SparsityHistogram& sparsity) {
    std::size_t total = 0;
    for (const auto& [size, count] : sparsity) total += count;
    if (total != n_users) {
        throw ConfigError("sparsity histogram sums to " + std::to_string(total) + " but n_users is " +
                          std::to_string(n_users));
    }
    if (n_topics == 0 && n_users > 0) throw ConfigError("n_topics must be positive");

    SyntheticPlan plan;
    std::set<std::string> used;
    const std::size_t n_styles = std::max<std::size_t>(2, (n_users + 4) / 5);
    for (std::size_t s = 0; s < n_styles; ++s) {
        StyleGroup g;
        g.marker = pseudo_word(rng, used);
        g.phrase = pseudo_word(rng, used);
        g.habit = kHabits[rng.below(kHabits.size())];
        plan.styles.push_back(std::move(g));
    }
    for (std::size_t t = 0; t < n_topics; ++t) {
        plan.topic_attr.push_back(pseudo_word(rng, used));
        plan.topic_noun.push_back(pseudo_word(rng, used));
    }
    for (std::size_t u = 0; u < n_users; ++u) plan.user_style.push_back(rng.below(n_styles));

    for (const auto& [size, count] : sparsity) plan.user_history.insert(plan.user_history.end(), count, size);
    for (std::size_t i = plan.user_history.size(); i > 1; --i) {
        std::swap(plan.user_history[i - 1], plan.user_history[rng.below(i)]);
    }
    return plan;
}

std::string make_text(Rng& rng, const StyleGroup& style, const std::string& attr, std::size_t serial) {
    std::vector<std::string> words;
    const std::size_t n_filler = 6 + rng.below(6);
    for (std::size_t i = 0; i < n_filler; ++i) words.emplace_back(kFiller[rng.below(kFiller.size())]);
    auto insert_at = [&](std::string w) {
        words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), std::move(w));
    };
    insert_at(attr);
    if (rng.coin()) insert_at(attr);
    insert_at(style.marker);
    insert_at(style.phrase);
    std::string serial_word = std::to_string(serial);
    serial_word.insert(0, 6 - std::min<std::size_t>(6, serial_word.size()), '0');
    words.push_back("ref" + serial_word);

    std::string text = style.marker;
    text[0] = static_cast<char>(text[0] - 'a' + 'A');
    for (const auto& w : words) {
        text.push_back(' ');
        text += w;
    }
    text += style.habit;
    return text;
}

}  // namespace

Dataset generate_synthetic(std::uint64_t seed, std::size_t n_users, std::size_t n_topics,
                           const SparsityHistogram& sparsity, Task task) {
    Rng rng(seed);
    const SyntheticPlan plan = plan_synthetic(rng, n_users, n_topics, sparsity);

    Dataset ds;
    ds.task = task;
    std::size_t serial = 0;
    auto emit = [&](std::size_t u, Split split) {
        const std::size_t t = rng.below(n_topics);
        HistoryEntry e;
        e.user_id = pad_id('u', u);
        e.topic_id = pad_id('t', t);
        const std::size_t id = serial++;
        const std::string body = make_text(rng, plan.styles[plan.user_style[u]], plan.topic_attr[t], id);
        const std::string title = std::string(kFiller[rng.below(kFiller.size())]) + " " + plan.topic_noun[t];
        if (task == Task::long_text) {
            e.prompt = title;
            e.text = body;
        } else {
            e.prompt = body;
            e.text = title + " " + plan.topic_attr[t] + " ref" + std::to_string(1000000 + id).substr(1);
        }
        e.split = split;
        ds.entries.push_back(std::move(e));
    };
    for (std::size_t u = 0; u < n_users; ++u) {
        for (std::size_t h = 0; h < plan.user_history[u]; ++h) emit(u, Split::train);
        emit(u, Split::validation);
        emit(u, Split::test);
    }
    return ds;
}

SyntheticLatents synthetic_latents(std::uint64_t seed, std::size_t n_users, std::size_t n_topics,
                                   const SparsityHistogram& sparsity) {
    Rng rng(seed);
    const SyntheticPlan plan = plan_synthetic(rng, n_users, n_topics, sparsity);
    SyntheticLatents out;
    for (std::size_t u = 0; u < n_users; ++u) out.user_style[pad_id('u', u)] = plan.styles[plan.user_style[u]].marker;
    for (std::size_t t = 0; t < n_topics; ++t) out.topic_attribute[pad_id('t', t)] = plan.topic_attr[t];
    return out;
}

}  // namespace pat::corpus
