#include "pat/client.hpp"

namespace pat::agents {

std::string_view to_string(Role r) {
    switch (r) {
        case Role::style: return "style";
        case Role::topic: return "topic";
        case Role::generator: return "generator";
        case Role::judge: return "judge";
    }
    return "generator";
}

Role parse_role(std::string_view s) {
    for (Role r : {Role::style, Role::topic, Role::generator, Role::judge}) {
        if (to_string(r) == s) return r;
    }
    throw ConfigError("unknown role: " + std::string(s));
}

std::vector<std::string> sample(const ChatClient& client, const SampleRequest& req) {
    if (req.n == 0) throw ConfigError("sample count must be at least 1");
    if (req.model.id.empty()) throw ConfigError("model id is empty");
    if (req.temperature < 0.0) throw ConfigError("temperature must be non-negative");
    auto out = client.complete(req);
    if (out.size() != req.n) {
        throw http::EndpointError(200, "expected " + std::to_string(req.n) + " completions, got " +
                                           std::to_string(out.size()));
    }
    return out;
}

std::string greedy(const ChatClient& client, const ModelRef& model, const Prompt& prompt, std::size_t max_tokens,
                   std::optional<std::uint64_t> seed) {
    SampleRequest req{model, prompt, 1, 0.0, max_tokens, seed};
    return sample(client, req).front();
}

nlohmann::json to_wire(const SampleRequest& req) {
    nlohmann::ordered_json body;
    body["model"] = req.model.id;
    body["messages"] = nlohmann::ordered_json::array();
    if (!req.prompt.system.empty()) {
        body["messages"].push_back({{"role", "system"}, {"content", req.prompt.system}});
    }
    body["messages"].push_back({{"role", "user"}, {"content", req.prompt.user}});
    body["n"] = req.n;
    body["temperature"] = req.temperature;
    body["max_tokens"] = req.max_tokens;
    if (req.seed) body["seed"] = *req.seed;
    return body;
}

HttpChatClient::HttpChatClient(std::string default_endpoint, std::map<std::string, std::string> model_endpoints,
                               http::RetryPolicy policy)
    : default_endpoint_(std::move(default_endpoint)), model_endpoints_(std::move(model_endpoints)), policy_(policy) {}

const std::string& HttpChatClient::endpoint_for(const std::string& model) const {
    auto it = model_endpoints_.find(model);
    if (it != model_endpoints_.end()) return it->second;
    if (default_endpoint_.empty()) throw ConfigError("no endpoint configured for model " + model);
    return default_endpoint_;
}

std::vector<std::string> HttpChatClient::complete(const SampleRequest& req) const {
    const std::string& url = endpoint_for(req.model.id);
    std::vector<std::string> out;
    auto collect = [&](const nlohmann::json& reply, std::size_t want) {
        const auto& choices = reply.at("choices");
        for (const auto& c : choices) {
            if (out.size() >= want) break;
            out.push_back(c.at("message").at("content").get<std::string>());
        }
    };
    collect(http::post_json(url, to_wire(req), policy_), req.n);
    // Some servers ignore "n"; fill the remainder one request at a time.
    while (out.size() < req.n) {
        SampleRequest one = req;
        one.n = 1;
        if (req.seed) one.seed = *req.seed + out.size();
        const std::size_t before = out.size();
        collect(http::post_json(url, to_wire(one), policy_), before + 1);
        if (out.size() == before) throw http::EndpointError(200, "reply contained no choices");
    }
    return out;
}

}  // namespace pat::agents
