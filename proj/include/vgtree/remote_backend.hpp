#pragma once

#include "vgtree/providers.hpp"

#include <chrono>
#include <memory>
#include <string>

namespace vgtree {

struct HttpChatConfig {
    /// Full URL of the chat-completion route, e.g. https://host/v1/chat/completions.
    std::string endpoint_url;
    std::string model_id;
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configuration.
    std::string api_key_env;
    double temperature = 0.0;
    int max_tokens = 256;
    std::chrono::seconds timeout{60};
    /// Shared across every backend that talks to the same endpoint.
    std::shared_ptr<RateLimiter> limiter;
};

/// OpenAI-style chat-completion client. Frame attachments that name local
/// files are sent inline as base64 data URLs. Errors map to RateLimited
/// (429), TransportError (network, other non-2xx) and MalformedResponse.
class HttpChatBackend : public ModelBackend {
public:
    explicit HttpChatBackend(HttpChatConfig config);

    ModelResponse generate(const ModelRequest& request) override;
    std::string model_id() const override { return config_.model_id; }

    /// Request body as sent on the wire (exposed for tests).
    nlohmann::ordered_json build_body(const ModelRequest& request) const;
    static ModelResponse parse_body(const std::string& body);

private:
    HttpChatConfig config_;
    std::string base_;
    std::string path_;
    std::string api_key_;
};

std::string base64_encode(std::string_view bytes);

} // namespace vgtree
