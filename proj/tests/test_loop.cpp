#include <doctest.h>

#include <filesystem>
#include <random>

#include "http_server.hpp"
#include "oracles.hpp"
#include "pat/loop.hpp"
#include "support.hpp"

using namespace pat;
using namespace pat::loop;
using agents::MockClient;
using corpus::Split;

namespace {

RewardedCandidate cand(double r, std::size_t i) {
    return {TrajectoryKind::style, "c" + std::to_string(i), "g" + std::to_string(i), r, i};
}

std::vector<RewardedCandidate> cands(const std::vector<double>& rs) {
    std::vector<RewardedCandidate> out;
    for (std::size_t i = 0; i < rs.size(); ++i) out.push_back(cand(rs[i], i));
    return out;
}

struct Fixture {
    testing::TempDir dir{"loop"};
    testing::Pipeline pipe;
    std::vector<TargetInstance> instances;
    MockClient mock;

    explicit Fixture(std::size_t users = 20) {
        pipe = testing::synthetic_pipeline(5, users, 4, testing::sparse_histogram(users));
        instances = pipe.instances(Split::validation);
        agents::register_default_agents(mock);
    }

    LoopContext context(TrainerKind trainer = TrainerKind::mock_memorizing, std::size_t T = 3) {
        LoopConfig cfg;
        cfg.max_iterations = T;
        cfg.workdir = dir.str();
        cfg.sampling.max_in_flight = 2;
        return {mock, &mock, {trainer, {}}, instances, cfg};
    }
};

}  // namespace

TEST_CASE("preference pairs") {
    CHECK(build_preference_pairs(cands({0.5, 0.3, 0.3}), "P", "u", 0, 1e-9).size() == 2);
    CHECK(build_preference_pairs(cands({0.4, 0.4, 0.4}), "P", "u", 0, 1e-9).empty());
    const auto three = build_preference_pairs(cands({0.3, 0.2, 0.1}), "P", "u", 4, 1e-9);
    REQUIRE(three.size() == 3);
    CHECK(three[0].chosen == "c0");
    CHECK(three[0].rejected == "c1");
    CHECK(three[1].rejected == "c2");
    CHECK(three[2].chosen == "c1");
    CHECK(three[2].meta.iteration == 4);
    CHECK(three[2].meta.reward_chosen == 0.2);
    CHECK(three[0].prompt == "P");
    CHECK(build_preference_pairs(cands({0.3}), "P", "u", 0, 1e-9).empty());
    CHECK(build_preference_pairs({}, "P", "u", 0, 1e-9).empty());

    const auto top = build_preference_pairs(cands({0.2, 0.5, 0.1, 0.5}), "P", "u", 0, 1e-9, PairMode::top1_vs_worse);
    REQUIRE(top.size() == 2);
    for (const auto& p : top) CHECK(p.chosen == "c1");
}

TEST_CASE("pair counts equal enumeration") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t n = 1 + rng() % 10;
        std::vector<double> r(n);
        for (auto& x : r) x = static_cast<double>(rng() % 5) / 4.0;
        const double eps = trial % 2 ? 1e-9 : 0.25;
        const auto pairs = build_preference_pairs(cands(r), "P", "u", 0, eps);
        REQUIRE(pairs.size() == oracle::strict_pair_count(r, eps));
        for (const auto& p : pairs) REQUIRE(p.meta.reward_chosen > p.meta.reward_rejected + eps);
    }
}

TEST_CASE("select_silver") {
    CHECK(select_silver(cands({0.2, 0.5, 0.5})).sample_index == 1);
    CHECK(select_silver(cands({0.7})).sample_index == 0);
    CHECK(select_silver(cands({0.0, 0.0, 0.0})).sample_index == 0);
    CHECK_THROWS_AS(select_silver({}), Error);
}

TEST_CASE("rollouts") {
    Fixture fx;
    const auto& inst = fx.instances.front();
    const AgentModels models;
    SamplingConfig sampling;

    SUBCASE("deterministic candidates") {
        const auto a = rollout_style(fx.mock, inst, "fixed topic", models, sampling, {});
        const auto b = rollout_style(fx.mock, inst, "fixed topic", models, sampling, {});
        REQUIRE(a.candidates.size() == 3);
        CHECK(a.errors.empty());
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(a.candidates[i].sample_index == i);
            CHECK(a.candidates[i].reward == b.candidates[i].reward);
            CHECK(a.candidates[i].candidate_text == b.candidates[i].candidate_text);
            CHECK(a.candidates[i].reward >= 0.0);
            CHECK(a.candidates[i].reward <= 1.0);
            CHECK(a.candidates[i].reward == doctest::Approx(metrics::rougeL(a.candidates[i].rollout_text,
                                                                            inst.target.text)
                                                                .f1)
                                                .epsilon(1e-12));
        }
        const auto t = rollout_topic(fx.mock, inst, "fixed style", models, sampling, {});
        CHECK(t.candidates.size() == 3);
        for (const auto& c : t.candidates) CHECK(c.kind == TrajectoryKind::topic);
    }
    SUBCASE("fixing rule") {
        const auto s = rollout_style(fx.mock, inst, "FIXED-TOPIC", models, sampling, {});
        REQUIRE(s.generation_prompts.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            const auto f = agents::parse_gen_prompt(s.generation_prompts[i]);
            REQUIRE(f);
            CHECK(f->product_summary == "FIXED-TOPIC");
            CHECK(f->style_summary == s.candidates[i].candidate_text);
        }
        const auto t = rollout_topic(fx.mock, inst, "FIXED-STYLE", models, sampling, {});
        for (const auto& p : t.generation_prompts) CHECK(agents::parse_gen_prompt(p)->style_summary == "FIXED-STYLE");
    }
    SUBCASE("single sample") {
        sampling.m1 = 1;
        const auto r = rollout_style(fx.mock, inst, "x", models, sampling, {});
        CHECK(r.candidates.size() == 1);
        CHECK(build_preference_pairs(r.candidates, "P", "u", 0, 1e-9).empty());
    }
    SUBCASE("echo generator rewards the candidate equal to the target") {
        fx.mock.add_builtin("echo", "echo_style_summary");
        AgentModels echo;
        echo.generator = {"echo", agents::Role::generator};
        const auto probe = rollout_style(fx.mock, inst, "x", echo, sampling, {});
        REQUIRE(probe.candidates.size() == 3);
        auto planted = inst;
        planted.target.text = probe.candidates[1].candidate_text;
        const auto r = rollout_style(fx.mock, planted, "x", echo, sampling, {});
        CHECK(r.candidates[1].reward == 1.0);
        CHECK(select_silver(r.candidates).reward == 1.0);
    }
    SUBCASE("failing agent is reported, not thrown") {
        AgentModels broken;
        broken.style = {"nobody", agents::Role::style};
        const auto r = rollout_style(fx.mock, inst, "x", broken, sampling, {});
        CHECK(r.candidates.empty());
        CHECK_FALSE(r.errors.empty());
    }
}

TEST_CASE("silver SFT records") {
    Fixture fx;
    const auto& inst = fx.instances.front();
    const auto recs = build_sft_records({{&inst, "STYLE-STAR", "TOPIC-STAR"}});
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].completion == inst.target.text);
    CHECK(recs[0].prompt.find("STYLE-STAR") != std::string::npos);
    CHECK(recs[0].prompt.find("TOPIC-STAR") != std::string::npos);
    CHECK(build_sft_records({}).empty());
    CHECK(to_jsonl(std::vector<SftRecord>{}).empty());
}

TEST_CASE("jsonl round trip") {
    testing::TempDir dir;
    auto pairs = build_preference_pairs(cands({0.9, 0.1}), "P\nQ", "u", 2, 1e-9);
    write_file(dir.str("p.jsonl"), to_jsonl(pairs));
    const auto back = read_preferences(dir.str("p.jsonl"));
    REQUIRE(back.size() == 1);
    CHECK(back[0].prompt == "P\nQ");
    CHECK(back[0].meta.reward_chosen == 0.9);
    CHECK(back[0].meta.iteration == 2);
    CHECK(to_jsonl(back) == to_jsonl(pairs));
    const auto line = nlohmann::json::parse(to_jsonl(pairs));
    CHECK(line.at("meta").at("kind") == "style");

    write_file(dir.str("s.jsonl"), to_jsonl(std::vector<SftRecord>{{"p", "y"}}));
    CHECK(read_sft(dir.str("s.jsonl")).at(0).completion == "y");
    write_file(dir.str("bad.jsonl"), "{\"prompt\": 1}\n");
    CHECK_THROWS_AS(read_sft(dir.str("bad.jsonl")), Error);
}

TEST_CASE("trainers") {
    testing::TempDir dir;
    const auto p1 = agents::build_topic_prompt({"a"});
    const auto p2 = agents::build_topic_prompt({"b"});
    std::vector<PreferencePair> pairs{{p1.rendered(), "Product Summary: one", "x", {"u", TrajectoryKind::topic, 0, 1, 0}},
                                      {p2.rendered(), "Product Summary: two", "x", {"u", TrajectoryKind::topic, 0, 1, 0}}};
    write_file(dir.str("dpo.jsonl"), to_jsonl(pairs));
    write_file(dir.str("empty.jsonl"), "");
    const ModelRef base{"mock-topic", agents::Role::topic};
    const TrainingJob job{TrainKind::dpo, dir.str("dpo.jsonl"), "dpo.jsonl", base, 50};

    SUBCASE("memorizing") {
        MockClient mock;
        agents::register_default_agents(mock);
        const auto m = submit_training({TrainerKind::mock_memorizing, {}}, job, &mock);
        CHECK(m.id != base.id);
        CHECK(m.id.starts_with("mock-topic+dpo@"));
        CHECK(agents::greedy(mock, m, p1, 8) == "Product Summary: one");
        CHECK(agents::greedy(mock, m, p2, 8) == "Product Summary: two");
        const auto again = submit_training({TrainerKind::mock_memorizing, {}}, {TrainKind::dpo, job.data_path, "x", m, 50},
                                           &mock);
        CHECK(again.id != m.id);
        CHECK(agents::greedy(mock, again, p1, 8) == "Product Summary: one");
        const auto twin = submit_training({TrainerKind::mock_memorizing, {}}, job, &mock);
        CHECK(twin.id == m.id);
        CHECK_THROWS_AS(submit_training({TrainerKind::mock_memorizing, {}}, job, nullptr), TrainingError);
    }
    SUBCASE("identity") { CHECK(submit_training({TrainerKind::mock_identity, {}}, job, nullptr) == base); }
    SUBCASE("empty dpo dataset") {
        CHECK_THROWS_AS(submit_training({TrainerKind::mock_identity, {}},
                                        {TrainKind::dpo, dir.str("empty.jsonl"), "", base, 50}, nullptr),
                        TrainingError);
        CHECK_THROWS_AS(submit_training({TrainerKind::mock_identity, {}},
                                        {TrainKind::dpo, dir.str("missing.jsonl"), "", base, 50}, nullptr),
                        TrainingError);
    }
    SUBCASE("external command") {
        write_file(dir.str("trainer.sh"), "#!/bin/sh\necho \"args: $*\" >&2\necho step 1\necho trained-model-7\n\n");
        write_file(dir.str("fail.sh"), "#!/bin/sh\necho boom >&2\nexit 3\n");
        std::filesystem::permissions(dir.str("trainer.sh"), std::filesystem::perms::owner_all);
        std::filesystem::permissions(dir.str("fail.sh"), std::filesystem::perms::owner_all);
        const auto m = submit_training({TrainerKind::external_command, dir.str("trainer.sh")}, job, nullptr);
        CHECK(m.id == "trained-model-7");
        CHECK(m.role == agents::Role::topic);
        const auto log = read_file(job.data_path + ".train.log");
        CHECK(log.find("--kind dpo --data " + job.data_path + " --base mock-topic --max-steps 50") != std::string::npos);
        try {
            submit_training({TrainerKind::external_command, dir.str("fail.sh")}, job, nullptr);
            FAIL("expected a training error");
        } catch (const TrainingError& e) {
            CHECK(e.log_path() == job.data_path + ".train.log");
            CHECK(read_file(e.log_path()).find("boom") != std::string::npos);
        }
        CHECK_THROWS_AS(submit_training({TrainerKind::external_command, ""}, job, nullptr), ConfigError);
    }
    SUBCASE("http") {
        testing::LocalServer srv;
        nlohmann::json seen;
        srv.server().Post("/train", [&](const httplib::Request& rq, httplib::Response& rs) {
            seen = nlohmann::json::parse(rq.body);
            rs.set_content(R"({"model_id":"remote-1"})", "application/json");
        });
        srv.server().Post("/bad", [&](const httplib::Request&, httplib::Response& rs) {
            rs.set_content(R"({"nope":1})", "application/json");
        });
        srv.start();
        CHECK(submit_training({TrainerKind::http, srv.url("/train")}, job, nullptr).id == "remote-1");
        CHECK(seen == nlohmann::json{{"kind", "dpo"}, {"data", job.data_path}, {"base", "mock-topic"}, {"max_steps", 50}});
        CHECK_THROWS_AS(submit_training({TrainerKind::http, srv.url("/bad")}, job, nullptr), TrainingError);
    }
    SUBCASE("names") {
        for (auto k : {TrainerKind::external_command, TrainerKind::http, TrainerKind::mock_memorizing,
                       TrainerKind::mock_identity}) {
            CHECK(parse_trainer_kind(to_string(k)) == k);
        }
        CHECK_THROWS_AS(parse_trainer_kind("gpu"), ConfigError);
    }
}

TEST_CASE("run_iteration") {
    Fixture fx;
    auto ctx = fx.context();
    const auto s0 = initial_state(AgentModels{}, 3);
    const auto s1 = run_iteration(s0, ctx);
    CHECK(s0.history.empty());
    CHECK(s1.iteration == 1);
    REQUIRE(s1.history.size() == 1);
    const auto& rec = s1.history[0];
    CHECK(rec.instances == fx.instances.size());
    CHECK(rec.sft_records + rec.skipped == fx.instances.size());
    CHECK(rec.style_dataset == "datasets/iter-0/style_dpo.jsonl");

    const auto style = read_preferences(fx.dir.str(rec.style_dataset));
    const auto topic = read_preferences(fx.dir.str(rec.topic_dataset));
    const auto sft = read_sft(fx.dir.str(rec.sft_dataset));
    CHECK(style.size() == rec.style_pairs);
    CHECK(topic.size() == rec.topic_pairs);
    CHECK(sft.size() == rec.sft_records);
    for (const auto& p : style) CHECK(p.meta.reward_chosen > p.meta.reward_rejected + ctx.config.epsilon);
    for (const auto& p : topic) CHECK(p.meta.kind == TrajectoryKind::topic);
    if (rec.style_pairs) CHECK(s1.models.style.id != s0.models.style.id);
    if (rec.topic_pairs) CHECK(s1.models.topic.id != s0.models.topic.id);
    CHECK(s1.models.generator.id != s0.models.generator.id);
    CHECK(rec.models == s1.models);

    // Silver reward recomputed from scratch: the topic phase runs against the
    // updated style agent with the pre-iteration topic agent and generator.
    AgentModels phase2 = s0.models;
    phase2.style = s1.models.style;
    double sum = 0.0;
    for (const auto& inst : fx.instances) {
        const auto fixed = agents::parse_summary(
                               agents::greedy(fx.mock, phase2.style,
                                              agents::build_style_prompt(inst.style_texts(), inst.history_texts), 512),
                               agents::kStyleMarker)
                               .text;
        const auto roll = rollout_topic(fx.mock, inst, fixed, phase2, ctx.config.sampling, {});
        double best = 0.0;
        for (const auto& c : roll.candidates) best = std::max(best, metrics::rougeL(c.rollout_text, inst.target.text).f1);
        sum += best;
    }
    CHECK(rec.mean_silver_reward == doctest::Approx(sum / fx.instances.size()).epsilon(1e-12));

    const auto s2 = run_iteration(s1, ctx);
    CHECK(s2.history[1].mean_silver_reward >= s2.history[0].mean_silver_reward);
}

TEST_CASE("terminal state and T=0") {
    Fixture fx;
    auto ctx = fx.context(TrainerKind::mock_memorizing, 0);
    const auto s0 = initial_state(AgentModels{}, 0);
    CHECK_THROWS_AS(run_iteration(s0, ctx), StateError);
    const auto out = train(s0, ctx);
    CHECK(out.iteration == 0);
    CHECK(out.history.empty());
    CHECK(out.models == s0.models);
}

TEST_CASE("train with the memorizing trainer") {
    Fixture fx;
    auto ctx = fx.context();
    std::size_t calls = 0;
    const auto out = train(initial_state(AgentModels{}, 3), ctx, [&](const IterationState&) { ++calls; });
    CHECK(calls == out.history.size());
    REQUIRE_FALSE(out.history.empty());
    for (std::size_t i = 1; i < out.history.size(); ++i) {
        CHECK(out.history[i].mean_silver_reward >= out.history[i - 1].mean_silver_reward);
    }
}

TEST_CASE("early stop with the identity trainer") {
    Fixture fx;
    auto ctx = fx.context(TrainerKind::mock_identity, 10);
    const auto out = train(initial_state(AgentModels{}, 10), ctx);
    CHECK(out.converged);
    CHECK(out.history.size() == 3);
    CHECK(out.models == AgentModels{});
}

TEST_CASE("state round trip") {
    Fixture fx;
    auto ctx = fx.context();
    const auto s = run_iteration(initial_state(AgentModels{}, 3), ctx);
    save_state(s, fx.dir.str("state.json"));
    const auto back = load_state(fx.dir.str("state.json"));
    CHECK(to_json(back).dump() == to_json(s).dump());
    CHECK(back.models == s.models);
    CHECK(back.history.at(0).mean_silver_reward == s.history.at(0).mean_silver_reward);
    write_file(fx.dir.str("other.json"), R"({"schema":"something-else"})");
    CHECK_THROWS_AS(load_state(fx.dir.str("other.json")), StateError);
}

TEST_CASE("failed phase leaves the state untouched") {
    Fixture fx;
    testing::TempDir dir;
    write_file(dir.str("fail.sh"), "#!/bin/sh\nexit 1\n");
    std::filesystem::permissions(dir.str("fail.sh"), std::filesystem::perms::owner_all);
    auto ctx = fx.context(TrainerKind::external_command);
    ctx.trainer.target = dir.str("fail.sh");
    const auto s0 = initial_state(AgentModels{}, 3);
    CHECK_THROWS_AS(run_iteration(s0, ctx), TrainingError);
    CHECK(train(run_iteration(s0, fx.context()), fx.context()).iteration == 3);

    MockClient empty;
    LoopContext broken{empty, &empty, {TrainerKind::mock_memorizing, {}}, fx.instances, ctx.config};
    CHECK_THROWS_AS(run_iteration(s0, broken), StateError);
}
