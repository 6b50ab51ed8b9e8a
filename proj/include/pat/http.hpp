#pragma once

#include <chrono>
#include <string>

#include <nlohmann/json.hpp>

#include "pat/common.hpp"

namespace pat::http {

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds initial_backoff{200};
    std::chrono::milliseconds timeout{60000};
};

/// Connection-level failure that survived every retry.
class TransportError : public Error {
public:
    TransportError(std::string url, int attempts, const std::string& last_error);
    const std::string& url() const { return url_; }
    int attempts() const { return attempts_; }

private:
    std::string url_;
    int attempts_;
};

/// The endpoint answered with a non-2xx status.
class EndpointError : public Error {
public:
    EndpointError(int status, std::string body);
    int status() const { return status_; }
    const std::string& body() const { return body_; }

private:
    int status_;
    std::string body_;
};

/// POSTs a JSON body and parses a JSON reply. Transport failures are retried
/// up to `policy.max_retries` times with doubling backoff; HTTP errors are not.
nlohmann::json post_json(const std::string& url, const nlohmann::json& body, const RetryPolicy& policy = {});

/// Splits "http://host:port/path" into ("http://host:port", "/path").
std::pair<std::string, std::string> split_url(const std::string& url);

}  // namespace pat::http
