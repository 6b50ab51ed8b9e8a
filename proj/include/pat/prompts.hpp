#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pat/common.hpp"

namespace pat::agents {

/// A chat prompt. The template's "System Prompt:" paragraph becomes the system
/// message; everything after the first blank line is the user message.
struct Prompt {
    std::string system;
    std::string user;

    /// The single-box form: "System Prompt: <system>\n\n<user>", or just the
    /// user text when there is no system message.
    std::string rendered() const;
    /// SHA-256 of rendered(); the key used by mock fixtures and memorizing models.
    std::string digest() const;

    bool operator==(const Prompt&) const = default;
};

/// Generation-prompt variants (the ablation axis).
enum class Variant { full, no_style, no_topic, no_both, zero_shot };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
inline constexpr Variant kAllVariants[] = {Variant::full, Variant::no_style, Variant::no_topic, Variant::no_both,
                                           Variant::zero_shot};

/// Texts are joined with a blank line between them.
std::string join_texts(const std::vector<std::string>& texts);

Prompt build_style_prompt(const std::vector<std::string>& style_texts, const std::vector<std::string>& history_texts);
Prompt build_topic_prompt(const std::vector<std::string>& topic_texts);
Prompt build_gen_prompt(std::string_view x_target, std::string_view style_summary, std::string_view topic_summary,
                        const std::vector<std::string>& style_texts, const std::vector<std::string>& topic_texts,
                        Variant variant);
Prompt build_judge_prompt(std::string_view target_text, std::string_view generated_text);

/// Slot bodies recovered from a rendered prompt. Used by mock agents.
struct StylePromptFields {
    std::string profile;
    std::string similar_profiles;
};
struct GenPromptFields {
    std::string style_neighbor;
    std::string style_summary;
    std::string product_neighbor;
    std::string product_summary;
    std::string review_title;
};
struct JudgePromptFields {
    std::string target_text;
    std::string generated_text;
};

std::optional<StylePromptFields> parse_style_prompt(const Prompt& p);
std::optional<std::string> parse_topic_prompt(const Prompt& p);
std::optional<GenPromptFields> parse_gen_prompt(const Prompt& p);
std::optional<JudgePromptFields> parse_judge_prompt(const Prompt& p);

inline constexpr std::string_view kStyleMarker = "Writing Style:";
inline constexpr std::string_view kTopicMarker = "Product Summary:";
inline constexpr std::string_view kGenerationMarker = "Review Text:";

/// The completion was empty or whitespace-only.
class CompletionParseError : public Error {
public:
    using Error::Error;
};

struct Parsed {
    std::string text;
    bool marker_missing = false;
};

/// Text after the first occurrence of `marker`, trimmed. Without the marker the
/// whole completion is returned with `marker_missing` set.
Parsed parse_summary(std::string_view completion, std::string_view marker);
Parsed parse_generation(std::string_view completion);

std::string trim(std::string_view s);

}  // namespace pat::agents
