#include "pat/prompts.hpp"

#include <utility>

#include "prompt_templates.inc"

namespace pat::agents {

namespace {

constexpr std::string_view kSystemPrefix = "System Prompt: ";

struct Slot {
    std::string_view token;
    std::string_view value;
};

// Single left-to-right pass, so substituted text is never rescanned.
std::string substitute(std::string_view tmpl, std::initializer_list<Slot> slots) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const Slot* hit = nullptr;
        for (const auto& s : slots) {
            if (tmpl.compare(pos, s.token.size(), s.token) == 0) {
                hit = &s;
                break;
            }
        }
        if (hit) {
            out.append(hit->value);
            pos += hit->token.size();
        } else {
            out.push_back(tmpl[pos++]);
        }
    }
    return out;
}

Prompt from_template(std::string_view tmpl, std::initializer_list<Slot> slots) {
    Prompt p;
    if (tmpl.starts_with(kSystemPrefix)) {
        const auto para_end = tmpl.find("\n\n");
        p.system = std::string(tmpl.substr(kSystemPrefix.size(), para_end - kSystemPrefix.size()));
        p.user = substitute(tmpl.substr(para_end + 2), slots);
    } else {
        p.user = substitute(tmpl, slots);
    }
    return p;
}

// Body between `open` and the next `close` (searched from the end when `last`).
std::optional<std::string> between(std::string_view text, std::string_view open, std::string_view close,
                                   bool last_close = false) {
    const auto a = text.find(open);
    if (a == std::string_view::npos) return std::nullopt;
    const auto start = a + open.size();
    const auto b = last_close ? text.rfind(close) : text.find(close, start);
    if (b == std::string_view::npos || b < start) return std::nullopt;
    return std::string(text.substr(start, b - start));
}

}  // namespace

std::string Prompt::rendered() const {
    if (system.empty()) return user;
    std::string out(kSystemPrefix);
    out += system;
    out += "\n\n";
    out += user;
    return out;
}

std::string Prompt::digest() const { return sha256_hex(rendered()); }

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_style: return "no_style";
        case Variant::no_topic: return "no_topic";
        case Variant::no_both: return "no_both";
        case Variant::zero_shot: return "zero_shot";
    }
    return "full";
}

Variant parse_variant(std::string_view s) {
    for (Variant v : kAllVariants) {
        if (to_string(v) == s) return v;
    }
    throw ConfigError("unknown variant: " + std::string(s));
}

std::string join_texts(const std::vector<std::string>& texts) {
    std::string out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (i > 0) out += "\n\n";
        out += texts[i];
    }
    return out;
}

Prompt build_style_prompt(const std::vector<std::string>& style_texts, const std::vector<std::string>& history_texts) {
    const std::string profile = join_texts(history_texts);
    const std::string similar = join_texts(style_texts);
    return from_template(templates::kStyleTemplate, {{"<Profile>", profile}, {"<Similar Profiles>", similar}});
}

Prompt build_topic_prompt(const std::vector<std::string>& topic_texts) {
    const std::string body = join_texts(topic_texts);
    return from_template(templates::kTopicTemplate, {{"<Product Text>", body}});
}

Prompt build_gen_prompt(std::string_view x_target, std::string_view style_summary, std::string_view topic_summary,
                        const std::vector<std::string>& style_texts, const std::vector<std::string>& topic_texts,
                        Variant variant) {
    const bool drop_style = variant == Variant::no_style || variant == Variant::no_both;
    const bool drop_topic = variant == Variant::no_topic || variant == Variant::no_both;
    const std::string style_neighbor = join_texts(style_texts);
    const std::string product_neighbor = join_texts(topic_texts);
    return from_template(templates::kGenTemplate, {{"{style_neighbor}", style_neighbor},
                                                   {"{style_summary}", drop_style ? "" : style_summary},
                                                   {"{product_neighbor}", product_neighbor},
                                                   {"{product_summary}", drop_topic ? "" : topic_summary},
                                                   {"{review_title}", x_target}});
}

Prompt build_judge_prompt(std::string_view target_text, std::string_view generated_text) {
    return from_template(templates::kJudgeTemplate,
                         {{"{target_text}", target_text}, {"{generated_text}", generated_text}});
}

std::optional<StylePromptFields> parse_style_prompt(const Prompt& p) {
    auto profile = between(p.user, "\nprofile:\n", "\n\nsimilar profiles:\n");
    auto similar = between(p.user, "\n\nsimilar profiles:\n", "\n\nYour output should be in the following format:",
                           true);
    if (!profile || !similar) return std::nullopt;
    return StylePromptFields{std::move(*profile), std::move(*similar)};
}

std::optional<std::string> parse_topic_prompt(const Prompt& p) {
    if (p.user.find("\n\nsimilar profiles:\n") != std::string::npos) return std::nullopt;
    return between(p.user, "\nprofile:\n", "\n\nYour output should be in the following format:", true);
}

std::optional<GenPromptFields> parse_gen_prompt(const Prompt& p) {
    const std::string_view u = p.user;
    auto style_neighbor = between(u, "Original Example (Style Neighbor): ", "\nStyle Summary: ");
    auto style_summary = between(u, "\nStyle Summary: ", "\n### Product Context\n");
    auto product_neighbor = between(u, "Original Reviews (Product Neighbor): ", "\nProduct Summary: ");
    auto product_summary = between(u, "\nProduct Summary: ", "\n### Task\n", true);
    auto title = between(u, "\n### Task\nReview Title: ", "\nOutput Format:", true);
    if (!style_neighbor || !style_summary || !product_neighbor || !product_summary || !title) return std::nullopt;
    return GenPromptFields{std::move(*style_neighbor), std::move(*style_summary), std::move(*product_neighbor),
                           std::move(*product_summary), std::move(*title)};
}

std::optional<JudgePromptFields> parse_judge_prompt(const Prompt& p) {
    auto target = between(p.user, "Reference Text (Ground Truth): ", "\nGenerated Text: ");
    auto generated = between(p.user, "\nGenerated Text: ", "\n\nProvide only the numeric score", true);
    if (!target || !generated) return std::nullopt;
    return JudgePromptFields{std::move(*target), std::move(*generated)};
}

std::string trim(std::string_view s) {
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto a = s.find_first_not_of(ws);
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(ws);
    return std::string(s.substr(a, b - a + 1));
}

Parsed parse_summary(std::string_view completion, std::string_view marker) {
    if (trim(completion).empty()) throw CompletionParseError("empty completion");
    const auto at = completion.find(marker);
    if (at == std::string_view::npos) return {trim(completion), true};
    return {trim(completion.substr(at + marker.size())), false};
}

Parsed parse_generation(std::string_view completion) { return parse_summary(completion, kGenerationMarker); }

}  // namespace pat::agents
