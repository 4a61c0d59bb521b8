#pragma once

// Remote-endpoint backend. One wire contract serves every chat-shaped role:
// POST of a JSON body carrying the prompt and a base64 PNG of the image to a
// chat-completions endpoint. Segmenter and OCR endpoints are usually not
// chat-shaped, so those roles can run in "dedicated" mode instead, POSTing
// {image, prompt} and reading the role's native JSON straight off the body.

#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "figpriv/agents.hpp"

namespace figpriv {

namespace detail {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // /rest, defaults to /
};

inline SplitUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw ConfigError("agent base_url must include a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

class HttpAgentBackend : public AgentBackend {
public:
    explicit HttpAgentBackend(AgentSetConfig config) : config_(std::move(config)) {
        // Fail fast, before any network call: every configured role needs a
        // URL, and a named auth variable must actually be set.
        for (const auto& [role, ep] : config_.roles) {
            if (ep.base_url.empty())
                throw ConfigError(std::string("http backend: no base_url for role ") +
                                  role_name(role));
            detail::split_url(ep.base_url);
            if (!ep.auth_token_env.empty()) {
                const char* token = std::getenv(ep.auth_token_env.c_str());
                if (!token || !*token)
                    throw ConfigError("auth environment variable '" + ep.auth_token_env +
                                      "' is not set (role " + role_name(role) + ")");
                tokens_[role] = token;
            }
        }
    }

    nlohmann::json invoke(const AgentRequest& request) override {
        const AgentEndpointConfig& ep = config_.role(request.role);
        std::string body = build_body(request, ep);
        std::string response = post_with_retries(request.role, ep, body);
        return interpret(request.role, ep, response);
    }

    std::string tag() const override { return "http"; }

private:
    std::string build_body(const AgentRequest& request, const AgentEndpointConfig& ep) const {
        std::string image_b64;
        if (request.image) image_b64 = base64_encode(encode_png(*request.image));
        if (ep.mode == "dedicated") {
            nlohmann::json body{{"prompt", request.prompt}};
            if (!image_b64.empty()) body["image"] = image_b64;
            return body.dump();
        }
        nlohmann::json content = nlohmann::json::array();
        content.push_back({{"type", "text"}, {"text", request.prompt}});
        if (!image_b64.empty())
            content.push_back(
                {{"type", "image_url"},
                 {"image_url", {{"url", "data:image/png;base64," + image_b64}}}});
        nlohmann::json body{
            {"model", ep.model_id},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
        if (ep.logprob_mode) {
            body["logprobs"] = true;
            body["top_logprobs"] = 5;
        }
        return body.dump();
    }

    std::string post_with_retries(AgentRole role, const AgentEndpointConfig& ep,
                                  const std::string& body) {
        auto url = detail::split_url(ep.base_url);
        httplib::Client client(url.origin);
        client.set_connection_timeout(static_cast<time_t>(ep.timeout_s),
                                      suseconds_t((ep.timeout_s - std::floor(ep.timeout_s)) * 1e6));
        client.set_read_timeout(static_cast<time_t>(ep.timeout_s),
                                suseconds_t((ep.timeout_s - std::floor(ep.timeout_s)) * 1e6));
        httplib::Headers headers;
        auto token = tokens_.find(role);
        if (token != tokens_.end())
            headers.emplace("Authorization", "Bearer " + token->second);

        std::string last_error;
        int backoff_ms = ep.backoff_initial_ms;
        for (int attempt = 0; attempt <= ep.max_retries; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                backoff_ms *= 2;
            }
            auto result = client.Post(url.path, headers, body, "application/json");
            if (result && result->status >= 200 && result->status < 300) return result->body;
            if (result) last_error = "HTTP " + std::to_string(result->status);
            else last_error = httplib::to_string(result.error());
        }
        throw TransportError(std::string("agent ") + role_name(role) + " at " + ep.base_url +
                             " failed after " + std::to_string(ep.max_retries + 1) +
                             " attempts: " + last_error);
    }

    nlohmann::json interpret(AgentRole role, const AgentEndpointConfig& ep,
                             const std::string& response_body) const {
        nlohmann::json doc = nlohmann::json::parse(response_body, nullptr, false);
        if (doc.is_discarded())
            throw TransportError(std::string("agent ") + role_name(role) +
                                 " returned a non-JSON body");
        if (ep.mode == "dedicated") return doc;

        std::string content;
        try {
            content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw TransportError(std::string("agent ") + role_name(role) +
                                 " returned an unexpected chat-completion shape");
        }
        if (role == AgentRole::orientation && ep.logprob_mode) {
            auto probs = yes_no_from_logprobs(doc);
            if (probs) return *probs;
        }
        if (role == AgentRole::orientation || role == AgentRole::label)
            return nlohmann::json{{"text", content}};
        return nlohmann::json(content);
    }

    // P(yes) and P(no) from the first answer token's top logprobs.
    static std::optional<nlohmann::json> yes_no_from_logprobs(const nlohmann::json& doc) {
        const nlohmann::json* top = nullptr;
        try {
            top = &doc.at("choices").at(0).at("logprobs").at("content").at(0).at("top_logprobs");
        } catch (const nlohmann::json::exception&) {
            return std::nullopt;
        }
        double p_yes = 0.0, p_no = 0.0;
        for (const auto& entry : *top) {
            std::string token = normalize_id(entry.value("token", std::string()));
            double p = std::exp(entry.value("logprob", -1e9));
            if (token == "yes") p_yes += p;
            else if (token == "no") p_no += p;
        }
        if (p_yes + p_no <= 0.0) return std::nullopt;
        return nlohmann::json{{"p_yes", p_yes}, {"p_no", p_no}};
    }

    AgentSetConfig config_;
    std::map<AgentRole, std::string> tokens_;
};

inline std::unique_ptr<AgentBackend> make_backend(const AgentSetConfig& config) {
    if (config.backend == "mock") {
        if (config.fixture_dir.empty())
            throw ConfigError("mock backend requires a fixture_dir");
        return std::make_unique<MockAgentBackend>(config.fixture_dir);
    }
    return std::make_unique<HttpAgentBackend>(config);
}

}  // namespace figpriv
