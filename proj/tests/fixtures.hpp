#pragma once

#include "pat/eval.hpp"
#include "pat/mock.hpp"
#include "support.hpp"

namespace testing {

// Copy-topic-summary fixture: the generator emits the title followed by the
// topic summary, every reference is the topic's attribute word and titles are
// neutral. Dropping the topic summary can only remove matching tokens.
struct AblationFixture {
    Pipeline pipe;
    std::vector<pat::TargetInstance> instances;
    pat::agents::MockClient client;
    pat::eval::EvalModels models;

    explicit AblationFixture(std::uint64_t seed = 21, std::size_t users = 40, std::size_t topics = 6) {
        const auto hist = sparse_histogram(users);
        pipe = synthetic_pipeline(seed, users, topics, hist);
        const auto latents = pat::corpus::synthetic_latents(seed, users, topics, hist);
        instances = pipe.instances(pat::corpus::Split::test);
        for (auto& inst : instances) {
            inst.target.text = latents.topic_attribute.at(inst.target.topic_id);
            inst.target.prompt = "Review";
        }
        pat::agents::register_default_agents(client);
        client.add_builtin("copy-generator", "copy_topic_summary");
        models.tuned.generator = {"copy-generator", pat::agents::Role::generator};
        models.base = models.tuned;
    }
};

}  // namespace testing
