#include "vgtree/errors.hpp"
#include "vgtree/remote_backend.hpp"

#include "support.hpp"

#include <doctest.h>
#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

using namespace vgtree;
using json = nlohmann::ordered_json;

namespace {

/// Local chat-completion endpoint driven by a handler.
class FakeEndpoint {
public:
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

    explicit FakeEndpoint(Handler h)
    {
        server_.Post("/v1/chat/completions", [this, h](const httplib::Request& req, httplib::Response& res) {
            {
                std::lock_guard lock(mu_);
                bodies_.push_back(req.body);
                auths_.push_back(req.get_header_value("Authorization"));
            }
            h(req, res);
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeEndpoint()
    {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    std::vector<std::string> bodies()
    {
        std::lock_guard lock(mu_);
        return bodies_;
    }
    std::vector<std::string> auths()
    {
        std::lock_guard lock(mu_);
        return auths_;
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::mutex mu_;
    std::vector<std::string> bodies_;
    std::vector<std::string> auths_;
};

std::string completion(const std::string& text, std::optional<std::pair<double, double>> logits = std::nullopt)
{
    json choice;
    choice["message"] = {{"role", "assistant"}, {"content", text}};
    if (logits) {
        double lse = std::log(std::exp(logits->first) + std::exp(logits->second));
        choice["logprobs"] = {
            {"content",
             json::array({{{"token", "True"},
                           {"logprob", logits->first - lse},
                           {"top_logprobs", json::array({{{"token", "True"}, {"logprob", logits->first - lse}},
                                                         {{"token", "False"}, {"logprob", logits->second - lse}}})}}})}};
    }
    return json{{"choices", json::array({choice})}}.dump();
}

HttpChatConfig config_for(const FakeEndpoint& ep)
{
    HttpChatConfig c;
    c.endpoint_url = ep.url();
    c.model_id = "test-model";
    c.timeout = std::chrono::seconds(5);
    return c;
}

} // namespace

TEST_CASE("base64 known vectors")
{
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("f") == "Zg==");
    CHECK(base64_encode("fo") == "Zm8=");
    CHECK(base64_encode("foo") == "Zm9v");
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
    CHECK(base64_encode(std::string(100, 'x')).find('\n') == std::string::npos);
}

TEST_CASE("construction validates the endpoint and the key variable")
{
    HttpChatConfig c;
    c.endpoint_url = "localhost:8080/v1";
    c.model_id = "m";
    CHECK_THROWS_AS(HttpChatBackend{c}, ConfigError);
    c.endpoint_url = "http://localhost:8080/v1/chat/completions";
    c.model_id = "";
    CHECK_THROWS_AS(HttpChatBackend{c}, ConfigError);
    c.model_id = "m";
    c.api_key_env = "VGTREE_TEST_UNSET_KEY_VAR";
    ::unsetenv("VGTREE_TEST_UNSET_KEY_VAR");
    CHECK_THROWS_AS(HttpChatBackend{c}, ConfigError);
}

TEST_CASE("request body carries prompt, inline frames and logprob settings")
{
    testing::TempDir dir;
    std::ofstream(dir / "f.png", std::ios::binary) << "foo";
    HttpChatConfig c;
    c.endpoint_url = "http://localhost:1/v1/chat/completions";
    c.model_id = "vlm";
    HttpChatBackend b(c);
    ModelRequest r;
    r.prompt = "Is it true?";
    r.attachments = {(dir / "f.png").string(), "https://example.org/x.jpg"};
    r.want_logprobs = true;
    r.top_logprobs = 20;
    auto body = b.build_body(r);
    CHECK(body.at("model") == "vlm");
    CHECK(body.at("max_tokens") == 1);
    CHECK(body.at("logprobs") == true);
    CHECK(body.at("top_logprobs") == 20);
    const auto& content = body.at("messages").at(0).at("content");
    REQUIRE(content.size() == 3);
    CHECK(content[0].at("text") == "Is it true?");
    CHECK(content[1].at("image_url").at("url") == "data:image/png;base64,Zm9v");
    CHECK(content[2].at("image_url").at("url") == "https://example.org/x.jpg");

    r.want_logprobs = false;
    auto plain = b.build_body(r);
    CHECK(plain.at("max_tokens") == 256);
    CHECK_FALSE(plain.contains("top_logprobs"));
}

TEST_CASE("first-token distribution is read from top logprobs")
{
    auto r = HttpChatBackend::parse_body(completion("True", std::make_pair(2.0, 0.0)));
    CHECK(r.text == "True");
    REQUIRE(r.first_token);
    double s = score_binary(r, "True", "False", false).value;
    CHECK(std::abs(s - 0.8808) < 1e-4);

    auto plain = HttpChatBackend::parse_body(completion("hello"));
    CHECK_FALSE(plain.first_token);
    CHECK_THROWS_AS(HttpChatBackend::parse_body("{\"choices\": []}"), MalformedResponse);
    CHECK_THROWS_AS(HttpChatBackend::parse_body("<html>"), MalformedResponse);
}

TEST_CASE("retries 429 until success and records the retry count")
{
    std::atomic<int> hits{0};
    FakeEndpoint ep([&](const httplib::Request&, httplib::Response& res) {
        if (hits++ < 2) {
            res.status = 429;
            return;
        }
        res.set_content(completion("look behind"), "application/json");
    });
    auto hub = testing::make_hub(std::make_shared<HttpChatBackend>(config_for(ep)));
    Transcript tr;
    ProviderSession s(*hub, tr);
    CHECK(s.complete("navigate", {{"question", "q"}, {"question_type", "Temporal"}}) == "look behind");
    CHECK(hits == 3);
    REQUIRE(tr.size() == 1);
    CHECK(tr.entries()[0].retry_count == 2);
    auto body = json::parse(ep.bodies().back());
    CHECK(body.at("messages").at(0).at("content").at(0).at("text").get<std::string>().find("q") !=
          std::string::npos);
}

TEST_CASE("bearer token comes from the named environment variable")
{
    ::setenv("VGTREE_TEST_KEY", "secret-123", 1);
    FakeEndpoint ep([](const httplib::Request&, httplib::Response& res) {
        res.set_content(completion("ok"), "application/json");
    });
    auto cfg = config_for(ep);
    cfg.api_key_env = "VGTREE_TEST_KEY";
    HttpChatBackend b(cfg);
    ModelRequest r;
    r.prompt = "hi";
    CHECK(b.generate(r).text == "ok");
    CHECK(ep.auths().back() == "Bearer secret-123");
    CHECK(ep.bodies().back().find("secret-123") == std::string::npos);
    ::unsetenv("VGTREE_TEST_KEY");
}

TEST_CASE("server errors and malformed bodies map to provider errors")
{
    FakeEndpoint ep([](const httplib::Request& req, httplib::Response& res) {
        if (req.body.find("boom") != std::string::npos) {
            res.status = 500;
            return;
        }
        res.set_content("not json", "application/json");
    });
    HttpChatBackend b(config_for(ep));
    ModelRequest r;
    r.prompt = "boom";
    CHECK_THROWS_AS(b.generate(r), TransportError);
    r.prompt = "fine";
    CHECK_THROWS_AS(b.generate(r), MalformedResponse);
}

TEST_CASE("unreachable endpoint is a transport error")
{
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    HttpChatConfig c;
    c.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    c.model_id = "m";
    c.timeout = std::chrono::seconds(2);
    HttpChatBackend b(c);
    ModelRequest r;
    r.prompt = "x";
    CHECK_THROWS_AS(b.generate(r), TransportError);
}
