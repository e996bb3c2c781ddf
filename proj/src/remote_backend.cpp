#include "vgtree/remote_backend.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/text.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace vgtree {

using json = nlohmann::ordered_json;

std::string base64_encode(std::string_view bytes)
{
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

namespace {

std::string mime_for(const std::filesystem::path& p)
{
    auto ext = text::to_lower(p.extension().string());
    if (ext == ".png")
        return "image/png";
    if (ext == ".webp")
        return "image/webp";
    if (ext == ".gif")
        return "image/gif";
    return "image/jpeg";
}

std::string image_url(const std::string& ref)
{
    std::error_code ec;
    if (!std::filesystem::is_regular_file(ref, ec))
        return ref;
    std::ifstream in(ref, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (!in.good() && !in.eof())
        throw TransportError("cannot read frame " + ref);
    return "data:" + mime_for(ref) + ";base64," + base64_encode(buf.str());
}

} // namespace

HttpChatBackend::HttpChatBackend(HttpChatConfig config) : config_(std::move(config))
{
    const auto& url = config_.endpoint_url;
    auto scheme = url.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("endpoint_url needs a scheme: " + url);
    auto slash = url.find('/', scheme + 3);
    base_ = url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : url.substr(slash);
    if (config_.model_id.empty())
        throw ConfigError("remote backend for " + url + " has no model_id");
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key)
            throw ConfigError("environment variable " + config_.api_key_env + " is not set");
        api_key_ = key;
    }
}

json HttpChatBackend::build_body(const ModelRequest& request) const
{
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", request.prompt}});
    for (const auto& a : request.attachments)
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_url(a)}}}});

    json body;
    body["model"] = config_.model_id;
    body["messages"] = json::array({{{"role", "user"}, {"content", std::move(content)}}});
    body["temperature"] = config_.temperature;
    body["max_tokens"] = request.want_logprobs ? 1 : config_.max_tokens;
    body["logprobs"] = request.want_logprobs;
    if (request.want_logprobs)
        body["top_logprobs"] = request.top_logprobs;
    return body;
}

ModelResponse HttpChatBackend::parse_body(const std::string& body)
{
    ModelResponse out;
    try {
        auto doc = json::parse(body);
        const auto& choice = doc.at("choices").at(0);
        const auto& content = choice.at("message").at("content");
        out.text = content.is_string() ? content.get<std::string>() : std::string();
        auto lp = choice.find("logprobs");
        if (lp != choice.end() && lp->is_object() && lp->contains("content") && (*lp)["content"].is_array() &&
            !(*lp)["content"].empty()) {
            const auto& first = (*lp)["content"][0];
            TokenDistribution dist;
            if (auto top = first.find("top_logprobs"); top != first.end() && top->is_array()) {
                for (const auto& t : *top)
                    dist[t.at("token").get<std::string>()] += std::exp(t.at("logprob").get<double>());
            } else {
                dist[first.at("token").get<std::string>()] += std::exp(first.at("logprob").get<double>());
            }
            if (!dist.empty())
                out.first_token = std::move(dist);
        }
    } catch (const json::exception& e) {
        throw MalformedResponse(std::string("unparseable chat completion: ") + e.what());
    }
    return out;
}

ModelResponse HttpChatBackend::generate(const ModelRequest& request)
{
    if (config_.limiter)
        config_.limiter->acquire();

    httplib::Client client(base_);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    if (!api_key_.empty())
        client.set_bearer_token_auth(api_key_);

    auto body = build_body(request).dump();
    auto res = client.Post(path_, body, "application/json");
    if (!res)
        throw TransportError(config_.endpoint_url + ": " + httplib::to_string(res.error()));
    if (res->status == 429)
        throw RateLimited(config_.endpoint_url + " returned 429");
    if (res->status < 200 || res->status >= 300)
        throw TransportError(config_.endpoint_url + " returned HTTP " + std::to_string(res->status));
    return parse_body(res->body);
}

} // namespace vgtree
