#include <doctest.h>

#include <atomic>
#include <set>

#include "http_server.hpp"
#include "pat/mock.hpp"
#include "support.hpp"

using namespace pat::agents;
using pat::http::EndpointError;
using pat::http::TransportError;

namespace {

SampleRequest request(const std::string& model, const Prompt& p, std::size_t n, double temp,
                      std::optional<std::uint64_t> seed = 7) {
    return {{model, Role::style}, p, n, temp, 64, seed};
}

Prompt style_prompt() {
    return build_style_prompt({"bright cheerful colors", "cheerful bright lamp"},
                              {"sturdy bright metal frame", "cheap plastic knobs"});
}

pat::http::RetryPolicy fast_retry() { return {3, std::chrono::milliseconds(1), std::chrono::milliseconds(2000)}; }

}  // namespace

TEST_CASE("mock sampling is deterministic") {
    MockClient c;
    register_default_agents(c);
    const auto req = request("mock-style", style_prompt(), 3, 0.8);
    const auto a = sample(c, req);
    REQUIRE(a.size() == 3);
    CHECK(a == sample(c, req));
    CHECK(std::set<std::string>(a.begin(), a.end()).size() == 3);
    for (const auto& s : a) CHECK(s.starts_with("Writing Style: "));

    MockClient other;
    register_default_agents(other);
    CHECK(sample(other, req) == a);

    auto reseeded = req;
    reseeded.seed = 8;
    CHECK(sample(c, reseeded) != a);
}

TEST_CASE("greedy mock requests repeat") {
    MockClient c;
    register_default_agents(c);
    const auto once = greedy(c, {"mock-style", Role::style}, style_prompt(), 64);
    CHECK(once == greedy(c, {"mock-style", Role::style}, style_prompt(), 64));
    const auto many = sample(c, request("mock-style", style_prompt(), 3, 0.0));
    CHECK(many == std::vector<std::string>(3, once));
}

TEST_CASE("sample validates its request") {
    MockClient c;
    register_default_agents(c);
    CHECK_THROWS_AS(sample(c, request("mock-style", style_prompt(), 0, 0.8)), pat::ConfigError);
    CHECK_THROWS_AS(sample(c, request("", style_prompt(), 1, 0.8)), pat::ConfigError);
    CHECK_THROWS_AS(sample(c, request("mock-style", style_prompt(), 1, -1.0)), pat::ConfigError);
    CHECK_THROWS_AS(sample(c, request("nobody", style_prompt(), 1, 0.8)), EndpointError);
}

TEST_CASE("builtin behaviors") {
    MockClient c;
    register_default_agents(c);
    c.add_builtin("copy", "copy_topic_summary");
    c.add_builtin("echo", "echo_style_summary");
    c.add_builtin("fixed", "constant:hello");
    const auto gen = build_gen_prompt("Nice lamp", "bright, cheerful.", "sturdy frame.", {"x"}, {"y"}, Variant::full);
    CHECK(greedy(c, {"mock-generator"}, gen, 64) == "Review Text: Nice lamp bright cheerful sturdy frame");
    CHECK(greedy(c, {"copy"}, gen, 64) == "Review Text: Nice lamp sturdy frame");
    CHECK(greedy(c, {"echo"}, gen, 64) == "Review Text: bright, cheerful.");
    CHECK(greedy(c, {"fixed"}, gen, 64) == "hello");
    CHECK(greedy(c, {"mock-judge"}, build_judge_prompt("same words", "same words"), 8) == "7");
    CHECK(greedy(c, {"mock-judge"}, build_judge_prompt("same words", "other text"), 8) == "1");
    const auto topic = greedy(c, {"mock-topic"}, build_topic_prompt({"lamp lamp bright", "lamp frame"}), 64);
    CHECK(topic.starts_with("Product Summary: lamp"));
    CHECK_THROWS_AS(greedy(c, {"mock-topic"}, gen, 64), EndpointError);
    CHECK_THROWS_AS(builtin_behavior("telepathy"), pat::ConfigError);
}

TEST_CASE("fixtures take precedence") {
    MockClient c;
    register_default_agents(c);
    const auto p = style_prompt();
    c.add_fixture("mock-style", p.digest(), {"Writing Style: one", "Writing Style: two"});
    const auto out = sample(c, request("mock-style", p, 3, 0.8));
    CHECK(out == std::vector<std::string>{"Writing Style: one", "Writing Style: two", "Writing Style: one"});
    CHECK(greedy(c, {"mock-style"}, build_style_prompt({}, {"other"}), 8) != "Writing Style: one");
    CHECK_THROWS_AS(c.add_fixture("m", "d", {}), pat::ConfigError);

    testing::TempDir dir;
    nlohmann::json file{{"agents", {{"g", "compose_generator"}}},
                        {"fixtures", {{"f", {{p.digest(), {"fixed reply"}}}}}}};
    pat::write_file(dir.str("fx.json"), file.dump());
    MockClient loaded;
    loaded.load_fixture_file(dir.str("fx.json"));
    CHECK(loaded.has_model("g"));
    CHECK(greedy(loaded, {"f"}, p, 8) == "fixed reply");
    pat::write_file(dir.str("bad.json"), "{nope");
    CHECK_THROWS_AS(loaded.load_fixture_file(dir.str("bad.json")), pat::ConfigError);
}

TEST_CASE("memorizing models") {
    MockClient c;
    register_default_agents(c);
    const auto p = style_prompt();
    const auto q = build_style_prompt({}, {"different"});
    c.add_memorizing("tuned", "mock-style", {{p.digest(), "Writing Style: remembered"}});
    c.add_memorizing("tuned2", "tuned", {{q.digest(), "Writing Style: second"}});
    CHECK(greedy(c, {"tuned"}, p, 8) == "Writing Style: remembered");
    CHECK(greedy(c, {"tuned"}, q, 8) == greedy(c, {"mock-style"}, q, 8));
    CHECK(greedy(c, {"tuned2"}, p, 8) == "Writing Style: remembered");
    CHECK(greedy(c, {"tuned2"}, q, 8) == "Writing Style: second");
    CHECK_THROWS_AS(c.add_memorizing("loop", "loop", {}), pat::ConfigError);
    // sampling is delegated to the base model
    CHECK(sample(c, request("tuned", p, 3, 0.8)) == sample(c, request("mock-style", p, 3, 0.8)));
}

TEST_CASE("registry round trip") {
    testing::TempDir dir;
    const auto p = style_prompt();
    const auto q = build_style_prompt({}, {"q"});
    pat::write_file(dir.str("pref.jsonl"),
                    nlohmann::json{{"prompt", p.rendered()}, {"chosen", "low"}, {"rejected", "x"},
                                   {"meta", {{"reward_chosen", 0.2}}}}
                            .dump() +
                        "\n" +
                        nlohmann::json{{"prompt", p.rendered()}, {"chosen", "high"}, {"rejected", "x"},
                                       {"meta", {{"reward_chosen", 0.9}}}}
                            .dump() +
                        "\n");
    pat::write_file(dir.str("sft.jsonl"), nlohmann::json{{"prompt", q.rendered()}, {"completion", "first"}}.dump() +
                                              "\n" +
                                              nlohmann::json{{"prompt", q.rendered()}, {"completion", "second"}}.dump() +
                                              "\n");
    CHECK(memory_from_preferences(dir.str("pref.jsonl")).at(p.digest()) == "high");
    CHECK(memory_from_sft(dir.str("sft.jsonl")).at(q.digest()) == "first");

    MockClient c;
    register_default_agents(c);
    c.add_memorizing("a", "mock-style", memory_from_preferences(dir.str("pref.jsonl")),
                     {{"kind", "dpo"}, {"data", "pref.jsonl"}});
    c.add_memorizing("b", "a", memory_from_sft(dir.str("sft.jsonl")), {{"kind", "sft"}, {"data", "sft.jsonl"}});
    c.save_registry(dir.str("registry.json"));

    MockClient again;
    register_default_agents(again);
    again.load_registry(dir.str("registry.json"), dir.str());
    CHECK(again.registry_json() == c.registry_json());
    CHECK(greedy(again, {"b"}, p, 8) == "high");
    CHECK(greedy(again, {"b"}, q, 8) == "first");
}

TEST_CASE("wire format") {
    SampleRequest req{{"gen-model", Role::generator}, build_style_prompt({"S"}, {"H"}), 2, 0.5, 99, 42};
    const auto w = to_wire(req);
    CHECK(w.at("model") == "gen-model");
    REQUIRE(w.at("messages").size() == 2);
    CHECK(w["messages"][0]["role"] == "system");
    CHECK(w["messages"][0]["content"] == req.prompt.system);
    CHECK(w["messages"][1]["role"] == "user");
    CHECK(w["messages"][1]["content"] == req.prompt.user);
    CHECK(w.at("n") == 2);
    CHECK(w.at("temperature") == 0.5);
    CHECK(w.at("max_tokens") == 99);
    CHECK(w.at("seed") == 42);
    req.seed.reset();
    req.prompt = build_judge_prompt("a", "b");
    const auto j = to_wire(req);
    CHECK_FALSE(j.contains("seed"));
    CHECK(j.at("messages").size() == 1);
}

TEST_CASE("http client against a local endpoint") {
    testing::LocalServer srv;
    std::vector<nlohmann::json> seen;
    std::mutex mu;
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request& rq, httplib::Response& rs) {
        const auto body = nlohmann::json::parse(rq.body);
        std::lock_guard lock(mu);
        seen.push_back(body);
        nlohmann::json choices = nlohmann::json::array();
        for (int i = 0; i < body.at("n").get<int>(); ++i) {
            choices.push_back({{"message", {{"content", body["model"].get<std::string>() + "#" + std::to_string(i)}}}});
        }
        rs.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
    });
    srv.server().Post("/single", [&](const httplib::Request&, httplib::Response& rs) {
        rs.set_content(R"({"choices":[{"message":{"content":"only"}}]})", "application/json");
    });
    srv.server().Post("/broken", [](const httplib::Request&, httplib::Response& rs) {
        rs.status = 503;
        rs.set_content("overloaded", "text/plain");
    });
    srv.start();

    const auto p = build_style_prompt({"S"}, {"H"});
    SUBCASE("n completions in order") {
        HttpChatClient c(srv.url("/v1/chat/completions"));
        const auto out = sample(c, request("m", p, 3, 0.8));
        CHECK(out == std::vector<std::string>{"m#0", "m#1", "m#2"});
        REQUIRE(seen.size() == 1);
        CHECK(seen[0] == to_wire(request("m", p, 3, 0.8)));
    }
    SUBCASE("per-model routing") {
        HttpChatClient c(testing::dead_url("/x"), {{"judge", srv.url("/v1/chat/completions")}});
        CHECK(greedy(c, {"judge"}, p, 8) == "judge#0");
    }
    SUBCASE("servers that ignore n are asked again") {
        HttpChatClient c(srv.url("/single"));
        CHECK(sample(c, request("m", p, 3, 0.8)) == std::vector<std::string>(3, "only"));
    }
    SUBCASE("non-200 raises with status and body") {
        HttpChatClient c(srv.url("/broken"), {}, fast_retry());
        try {
            greedy(c, {"m"}, p, 8);
            FAIL("expected an endpoint error");
        } catch (const EndpointError& e) {
            CHECK(e.status() == 503);
            CHECK(e.body() == "overloaded");
        }
    }
    SUBCASE("no endpoint configured") {
        HttpChatClient c("");
        CHECK_THROWS_AS(greedy(c, {"m"}, p, 8), pat::ConfigError);
    }
}

TEST_CASE("unreachable endpoint fails after three retries") {
    HttpChatClient c(testing::dead_url("/v1"), {}, fast_retry());
    try {
        greedy(c, {"m"}, build_judge_prompt("a", "b"), 8);
        FAIL("expected a transport error");
    } catch (const TransportError& e) {
        CHECK(e.attempts() == 4);
    }
}

TEST_CASE("roles") {
    for (auto r : {Role::style, Role::topic, Role::generator, Role::judge}) CHECK(parse_role(to_string(r)) == r);
    CHECK_THROWS_AS(parse_role("critic"), pat::ConfigError);
}
