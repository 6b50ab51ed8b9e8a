#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pat/http.hpp"
#include "pat/prompts.hpp"

namespace pat::agents {

enum class Role { style, topic, generator, judge };

std::string_view to_string(Role r);
Role parse_role(std::string_view s);

/// Opaque model handle: an endpoint alias or a checkpoint tag.
struct ModelRef {
    std::string id;
    Role role = Role::generator;

    bool operator==(const ModelRef&) const = default;
};

struct SampleRequest {
    ModelRef model;
    Prompt prompt;
    std::size_t n = 1;
    double temperature = 0.8;
    std::size_t max_tokens = 512;
    std::optional<std::uint64_t> seed;
};

/// Chat-completion backend. Implementations must be safe to call from several
/// threads at once.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::vector<std::string> complete(const SampleRequest& req) const = 0;
};

/// Validates the request and the reply size; returns exactly req.n texts.
std::vector<std::string> sample(const ChatClient& client, const SampleRequest& req);

/// Greedy single completion (temperature 0, n = 1).
std::string greedy(const ChatClient& client, const ModelRef& model, const Prompt& prompt, std::size_t max_tokens,
                   std::optional<std::uint64_t> seed = std::nullopt);

/// Request body of the chat endpoint wire format.
nlohmann::json to_wire(const SampleRequest& req);

/// OpenAI-style chat endpoint. Models are routed by id to an endpoint URL,
/// falling back to `default_endpoint`.
class HttpChatClient final : public ChatClient {
public:
    HttpChatClient(std::string default_endpoint, std::map<std::string, std::string> model_endpoints = {},
                   http::RetryPolicy policy = {});
    std::vector<std::string> complete(const SampleRequest& req) const override;

private:
    const std::string& endpoint_for(const std::string& model) const;

    std::string default_endpoint_;
    std::map<std::string, std::string> model_endpoints_;
    http::RetryPolicy policy_;
};

}  // namespace pat::agents
