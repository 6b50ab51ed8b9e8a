#include <doctest.h>

#include <regex>

#include "pat/common.hpp"
#include "pat/prompts.hpp"

using namespace pat::agents;

namespace {

std::string golden(const std::string& name) { return pat::read_file(std::string(PAT_GOLDEN_DIR) + "/" + name); }

std::size_t count(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto at = hay.find(needle); at != std::string::npos; at = hay.find(needle, at + 1)) ++n;
    return n;
}

bool has_unresolved(const std::string& s) {
    static const std::regex slot(R"(\{[a-z_]+\}|<Profile>|<Similar Profiles>|<Product Text>)");
    return std::regex_search(s, slot);
}

}  // namespace

TEST_CASE("blanked prompts match the golden templates") {
    CHECK(build_style_prompt({"<Similar Profiles>"}, {"<Profile>"}).rendered() == golden("style_prompt.txt"));
    CHECK(build_topic_prompt({"<Product Text>"}).rendered() == golden("topic_prompt.txt"));
    CHECK(build_gen_prompt("{review_title}", "{style_summary}", "{product_summary}", {"{style_neighbor}"},
                           {"{product_neighbor}"}, Variant::full)
              .rendered() == golden("gen_prompt.txt"));
    CHECK(build_judge_prompt("{target_text}", "{generated_text}").rendered() == golden("judge_prompt.txt"));
}

TEST_CASE("format lines") {
    CHECK(golden("style_prompt.txt").find("Writing Style: <summarized writing style>") != std::string::npos);
    CHECK(golden("topic_prompt.txt").find("Product Summary: <summarized product summary>") != std::string::npos);
    CHECK(golden("gen_prompt.txt").find("Review Text: <>") != std::string::npos);
}

TEST_CASE("system and user split") {
    const auto p = build_style_prompt({"S"}, {"H"});
    CHECK(p.system.starts_with("You are a professional writing assistant"));
    CHECK(p.system.find("\n\n") == std::string::npos);
    CHECK(p.user.starts_with("Your task is to summarize"));
    const auto j = build_judge_prompt("a", "b");
    CHECK(j.system.empty());
    CHECK(j.rendered() == j.user);
    CHECK(p.digest() == pat::sha256_hex(p.rendered()));
    CHECK(p.digest() != build_style_prompt({"S"}, {"H2"}).digest());
}

TEST_CASE("style prompt") {
    const auto r = build_style_prompt({"S"}, {"H"}).rendered();
    CHECK(r.find("profile:\nH") != std::string::npos);
    CHECK(r.find("similar profiles:\nS") != std::string::npos);
    CHECK(count(r, "Writing Style: <summarized writing style>") == 1);

    const auto empty = build_style_prompt({}, {}).rendered();
    CHECK(empty.find("profile:\n\n") != std::string::npos);
    CHECK_FALSE(has_unresolved(empty));

    const auto multi = build_style_prompt({"S1", "S2"}, {"H1", "H2"}).rendered();
    CHECK(multi.find("profile:\nH1\n\nH2\n") != std::string::npos);
    CHECK(multi.find("similar profiles:\nS1\n\nS2\n") != std::string::npos);
}

TEST_CASE("topic prompt") {
    const auto r = build_topic_prompt({"T1", "T2"}).rendered();
    const auto at = r.find("profile:\n");
    REQUIRE(at != std::string::npos);
    CHECK(r.find("T1") > at);
    CHECK(r.find("T2") > r.find("T1"));
    CHECK_FALSE(has_unresolved(r));
    const auto empty = build_topic_prompt({});
    CHECK(parse_topic_prompt(empty) == std::string());
    CHECK_FALSE(has_unresolved(empty.rendered()));
}

TEST_CASE("generation prompt variants") {
    const auto make = [](Variant v) { return build_gen_prompt("Title", "SS", "PS", {"SN"}, {"PN"}, v); };
    const auto full = parse_gen_prompt(make(Variant::full));
    REQUIRE(full);
    CHECK(full->style_neighbor == "SN");
    CHECK(full->style_summary == "SS");
    CHECK(full->product_neighbor == "PN");
    CHECK(full->product_summary == "PS");
    CHECK(full->review_title == "Title");
    CHECK_FALSE(has_unresolved(make(Variant::full).rendered()));

    const auto none = parse_gen_prompt(make(Variant::no_both));
    REQUIRE(none);
    CHECK(none->style_summary.empty());
    CHECK(none->product_summary.empty());
    CHECK(none->style_neighbor == "SN");
    CHECK(none->product_neighbor == "PN");

    CHECK(parse_gen_prompt(make(Variant::no_style))->style_summary.empty());
    CHECK(parse_gen_prompt(make(Variant::no_style))->product_summary == "PS");
    CHECK(parse_gen_prompt(make(Variant::no_topic))->product_summary.empty());
    CHECK(parse_gen_prompt(make(Variant::no_topic))->style_summary == "SS");
    CHECK(make(Variant::zero_shot) == make(Variant::full));
}

TEST_CASE("variant names") {
    for (auto v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
    CHECK_THROWS_AS(parse_variant("everything"), pat::ConfigError);
}

TEST_CASE("slot values are not rescanned") {
    const auto p = build_gen_prompt("{style_summary}", "x", "y", {}, {}, Variant::full);
    CHECK(parse_gen_prompt(p)->review_title == "{style_summary}");
}

TEST_CASE("prompt parsers round trip") {
    const auto s = parse_style_prompt(build_style_prompt({"a\n\nb"}, {"c"}));
    REQUIRE(s);
    CHECK(s->profile == "c");
    CHECK(s->similar_profiles == "a\n\nb");
    CHECK_FALSE(parse_style_prompt(build_topic_prompt({"x"})));
    CHECK_FALSE(parse_topic_prompt(build_style_prompt({"x"}, {"y"})));
    const auto j = parse_judge_prompt(build_judge_prompt("ref", "gen"));
    REQUIRE(j);
    CHECK(j->target_text == "ref");
    CHECK(j->generated_text == "gen");
}

TEST_CASE("parse_summary") {
    CHECK(parse_summary("Writing Style: terse, emphatic", kStyleMarker).text == "terse, emphatic");
    CHECK_FALSE(parse_summary("Writing Style: terse, emphatic", kStyleMarker).marker_missing);
    const auto plain = parse_summary("  just words \n", kStyleMarker);
    CHECK(plain.text == "just words");
    CHECK(plain.marker_missing);
    CHECK(parse_summary("pre Product Summary: a Product Summary: b", kTopicMarker).text == "a Product Summary: b");
    CHECK_THROWS_AS(parse_summary("", kStyleMarker), CompletionParseError);
}

TEST_CASE("parse_generation") {
    CHECK(parse_generation("Review Text: I love the color").text == "I love the color");
    CHECK(parse_generation("I love the color").text == "I love the color");
    CHECK(parse_generation("I love the color").marker_missing);
    CHECK_THROWS_AS(parse_generation(" \n\t "), CompletionParseError);
}

TEST_CASE("formatted completions parse back to their payload") {
    for (const std::string payload : {"a", "multi\nline body", "with: colon", "  padded?"}) {
        const auto want = trim(payload);
        CHECK(parse_summary(std::string(kStyleMarker) + " " + payload + "\n", kStyleMarker).text == want);
        CHECK(parse_summary(std::string(kTopicMarker) + " " + payload, kTopicMarker).text == want);
        CHECK(parse_generation(std::string(kGenerationMarker) + " " + payload).text == want);
    }
}
