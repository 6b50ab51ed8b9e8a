#include "pat/http.hpp"

#include <httplib.h>

#include <thread>

namespace pat::http {

TransportError::TransportError(std::string url, int attempts, const std::string& last_error)
    : Error("transport error for " + url + " after " + std::to_string(attempts) + " attempts: " + last_error),
      url_(std::move(url)),
      attempts_(attempts) {}

EndpointError::EndpointError(int status, std::string body)
    : Error("endpoint returned HTTP " + std::to_string(status) + ": " + body), status_(status), body_(std::move(body)) {}

std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("URL lacks a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

nlohmann::json post_json(const std::string& url, const nlohmann::json& body, const RetryPolicy& policy) {
    const auto [base, path] = split_url(url);
    const std::string payload = body.dump();
    auto backoff = policy.initial_backoff;
    std::string last_error;
    const int attempts = policy.max_retries + 1;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
        httplib::Client client(base);
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(policy.timeout).count();
        client.set_connection_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
        client.set_read_timeout(std::max<long>(1, static_cast<long>(secs)), 0);
        auto res = client.Post(path, payload, "application/json");
        if (res) {
            if (res->status < 200 || res->status >= 300) throw EndpointError(res->status, res->body);
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error& e) {
                throw EndpointError(res->status, "invalid JSON reply: " + std::string(e.what()));
            }
        }
        last_error = httplib::to_string(res.error());
        if (attempt < attempts) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
    throw TransportError(url, attempts, last_error);
}

}  // namespace pat::http
