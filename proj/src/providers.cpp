#include "vgtree/providers.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/hashing.hpp"
#include "vgtree/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

namespace vgtree {

using json = nlohmann::ordered_json;

namespace {

constexpr std::array<std::string_view, kRoleCount> kRoleNames{
    "Captioner", "Decomposer", "Retriever", "Navigator",
    "FactExtractor", "TripletParser", "Prover", "Rewriter",
};

double elapsed_ms(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

json distribution_to_json(const TokenDistribution& d)
{
    json j = json::object();
    for (const auto& [tok, p] : d)
        j[tok] = p;
    return j;
}

} // namespace

std::string_view to_string(ProviderRole role)
{
    return kRoleNames[static_cast<std::size_t>(role)];
}

std::optional<ProviderRole> provider_role_from_string(std::string_view s)
{
    auto want = text::to_lower(s);
    for (std::size_t i = 0; i < kRoleCount; ++i)
        if (text::to_lower(kRoleNames[i]) == want)
            return kAllRoles[i];
    return std::nullopt;
}

// -- templates --------------------------------------------------------------

std::vector<std::string> PromptTemplate::placeholders() const
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '{') {
            if (i + 1 < text.size() && text[i + 1] == '{') {
                ++i;
                continue;
            }
            auto close = text.find('}', i);
            if (close == std::string::npos)
                break;
            auto name = text.substr(i + 1, close - i - 1);
            if (std::find(out.begin(), out.end(), name) == out.end())
                out.push_back(name);
            i = close;
        } else if (text[i] == '}' && i + 1 < text.size() && text[i + 1] == '}') {
            ++i;
        }
    }
    return out;
}

std::string PromptTemplate::render(const PromptArgs& args) const
{
    std::string out;
    out.reserve(text.size() + 64);
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (c == '{') {
            if (i + 1 < text.size() && text[i + 1] == '{') {
                out.push_back('{');
                ++i;
                continue;
            }
            auto close = text.find('}', i);
            if (close == std::string::npos)
                throw PreconditionError("template '" + name + "' has an unterminated placeholder");
            auto key = std::string_view(text).substr(i + 1, close - i - 1);
            auto it = args.find(key);
            if (it == args.end())
                throw PreconditionError("template '" + name + "' placeholder {" + std::string(key) +
                                        "} is unbound");
            out += it->second;
            i = close;
        } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
            out.push_back('}');
            ++i;
        } else {
            out.push_back(c);
        }
    }
    return out;
}

void TemplateRegistry::add(PromptTemplate t)
{
    auto name = t.name;
    templates_.insert_or_assign(std::move(name), std::move(t));
}

const PromptTemplate& TemplateRegistry::get(std::string_view name) const
{
    auto it = templates_.find(name);
    if (it == templates_.end())
        throw PreconditionError("no prompt template named '" + std::string(name) + "'");
    return it->second;
}

bool TemplateRegistry::contains(std::string_view name) const
{
    return templates_.find(name) != templates_.end();
}

std::vector<std::string> TemplateRegistry::names() const
{
    std::vector<std::string> out;
    for (const auto& [k, _] : templates_)
        out.push_back(k);
    return out;
}

void TemplateRegistry::load_overrides(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot read prompt file " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("prompt file " + path.string() + ": " + e.what());
    }
    if (!doc.contains("templates") || !doc["templates"].is_array())
        throw ConfigError("prompt file " + path.string() + " needs a \"templates\" array");
    for (const auto& t : doc["templates"]) {
        PromptTemplate pt;
        try {
            pt.name = t.at("name").get<std::string>();
            pt.text = t.at("text").get<std::string>();
            pt.version = t.value("version", "custom");
            auto role = provider_role_from_string(t.at("role").get<std::string>());
            if (!role)
                throw ConfigError("unknown role in prompt '" + pt.name + "'");
            pt.role = *role;
        } catch (const json::exception& e) {
            throw ConfigError("prompt file " + path.string() + ": " + e.what());
        }
        add(std::move(pt));
    }
}

// -- transcript ---------------------------------------------------------------

void Transcript::flag_last(std::string flag)
{
    if (!entries_.empty())
        entries_.back().flags.push_back(std::move(flag));
}

std::size_t Transcript::count(ProviderRole role) const
{
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.role == role; }));
}

std::size_t Transcript::cache_hits() const
{
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return e.cache_hit; }));
}

std::map<std::string, std::size_t> Transcript::counts_by_role() const
{
    std::map<std::string, std::size_t> out;
    for (auto role : kAllRoles)
        out[std::string(to_string(role))] = 0;
    for (const auto& e : entries_)
        ++out[std::string(to_string(e.role))];
    return out;
}

json Transcript::to_json(bool with_timing) const
{
    json arr = json::array();
    for (const auto& e : entries_) {
        json j;
        j["role"] = std::string(to_string(e.role));
        j["template"] = e.template_name;
        j["prompt"] = e.prompt;
        j["attachments"] = e.attachments;
        j["response"] = e.response;
        j["distribution"] = e.distribution ? distribution_to_json(*e.distribution) : json(nullptr);
        j["cache_hit"] = e.cache_hit;
        if (with_timing)
            j["latency_ms"] = e.latency_ms;
        j["retry_count"] = e.retry_count;
        if (!e.error.empty())
            j["error"] = e.error;
        if (!e.flags.empty())
            j["flags"] = e.flags;
        arr.push_back(std::move(j));
    }
    return arr;
}

// -- retry / rate limiting -------------------------------------------------------

std::chrono::milliseconds RetryPolicy::delay_for(int attempt, double unit_random) const
{
    double base = static_cast<double>(base_delay.count()) * std::pow(multiplier, attempt);
    double j = std::clamp(jitter, 0.0, 1.0);
    double scaled = base * (1.0 - j + 2.0 * j * std::clamp(unit_random, 0.0, 1.0));
    return std::chrono::milliseconds(static_cast<long long>(std::llround(scaled)));
}

RateLimiter::RateLimiter(double requests_per_second, double burst)
    : rate_(requests_per_second), burst_(std::max(1.0, burst)), tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now())
{
    if (!(requests_per_second > 0.0))
        throw PreconditionError("rate limit must be positive");
}

void RateLimiter::acquire()
{
    for (;;) {
        std::chrono::duration<double> wait{};
        {
            std::lock_guard lock(mu_);
            auto now = std::chrono::steady_clock::now();
            tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
            last_ = now;
            if (tokens_ >= 1.0) {
                tokens_ -= 1.0;
                return;
            }
            wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
        }
        std::this_thread::sleep_for(wait);
    }
}

// -- cache --------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir))
{
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec)
        throw IoError("cannot create cache directory " + dir_.string() + ": " + ec.message());
}

std::string ResponseCache::make_key(ProviderRole role, std::string_view model_id, std::string_view prompt,
                                    const std::vector<std::string>& attachment_hashes, bool want_logprobs,
                                    int attempt)
{
    // Length-prefixed fields so no two distinct tuples serialize alike.
    std::string buf;
    auto put = [&](std::string_view field) {
        buf += std::to_string(field.size());
        buf += ':';
        buf.append(field);
        buf += ';';
    };
    put(to_string(role));
    put(model_id);
    put(prompt);
    for (const auto& h : attachment_hashes)
        put(h);
    put(want_logprobs ? "logprobs" : "text");
    if (attempt > 0)
        put("attempt=" + std::to_string(attempt));
    return sha256_hex(buf);
}

ResponseCache::Lookup ResponseCache::lookup(const std::string& key) const
{
    std::lock_guard lock(mu_);
    Lookup out;
    auto path = dir_ / key;
    std::ifstream in(path, std::ios::binary);
    if (!in)
        return out;
    try {
        auto j = json::parse(in);
        ModelResponse r;
        r.text = j.at("text").get<std::string>();
        if (j.contains("first_token") && !j["first_token"].is_null()) {
            TokenDistribution d;
            for (const auto& [tok, p] : j["first_token"].items())
                d[tok] = p.get<double>();
            r.first_token = std::move(d);
        }
        if (j.at("key").get<std::string>() != key)
            throw std::runtime_error("key mismatch");
        out.response = std::move(r);
    } catch (const std::exception&) {
        out.corrupted = true;
    }
    return out;
}

bool ResponseCache::store(const std::string& key, const ModelResponse& response)
{
    std::lock_guard lock(mu_);
    json j;
    j["key"] = key;
    j["text"] = response.text;
    j["first_token"] = response.first_token ? distribution_to_json(*response.first_token) : json(nullptr);
    auto path = dir_ / key;
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            return false;
        out << j.dump();
        if (!out)
            return false;
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    return !ec;
}

std::string attachment_hash(const std::string& ref)
{
    std::error_code ec;
    if (std::filesystem::is_regular_file(ref, ec)) {
        try {
            return file_sha256_hex(ref);
        } catch (const IoError&) {
        }
    }
    return sha256_hex(ref);
}

// -- hub ----------------------------------------------------------------------

ProviderHub::ProviderHub() : templates_(TemplateRegistry::defaults()) {}

void ProviderHub::set_backend(ProviderRole role, std::shared_ptr<ModelBackend> backend)
{
    backends_[static_cast<std::size_t>(role)] = std::move(backend);
}

void ProviderHub::set_all_backends(const std::shared_ptr<ModelBackend>& backend)
{
    for (auto& b : backends_)
        b = backend;
}

ModelBackend& ProviderHub::backend(ProviderRole role) const
{
    const auto& b = backends_[static_cast<std::size_t>(role)];
    if (!b)
        throw PreconditionError("no backend configured for role " + std::string(to_string(role)));
    return *b;
}

bool ProviderHub::has_backend(ProviderRole role) const
{
    return backends_[static_cast<std::size_t>(role)] != nullptr;
}

// -- scoring ------------------------------------------------------------------

BinaryScore score_binary(const ModelResponse& response, std::string_view positive_token,
                         std::string_view negative_token, bool allow_fallback)
{
    const auto pos = text::to_lower(text::trim(positive_token));
    const auto neg = text::to_lower(text::trim(negative_token));
    if (response.first_token) {
        double p = 0.0;
        double n = 0.0;
        for (const auto& [tok, prob] : *response.first_token) {
            auto t = text::to_lower(text::trim(tok));
            if (t == pos)
                p += prob;
            else if (t == neg)
                n += prob;
        }
        if (p + n > 0.0)
            return {p / (p + n), false};
    }
    if (!allow_fallback)
        throw MissingLogprobs("response carries no probabilities for '" + std::string(positive_token) +
                              "'/'" + std::string(negative_token) + "'");
    auto words = text::split_words(text::normalize(response.text));
    if (!words.empty()) {
        if (words.front() == pos)
            return {0.75, true};
        if (words.front() == neg)
            return {0.25, true};
    }
    return {0.5, true};
}

// -- session ------------------------------------------------------------------

ProviderSession::ProviderSession(const ProviderHub& hub, Transcript& transcript)
    : hub_(hub), transcript_(transcript)
{
}

ModelResponse ProviderSession::call(std::string_view template_name, const PromptArgs& args,
                                    const std::vector<std::string>& attachments, CallOptions opts)
{
    const auto& tmpl = hub_.templates().get(template_name);
    ModelRequest req;
    req.role = tmpl.role;
    req.template_name = tmpl.name;
    req.prompt = tmpl.render(args);
    req.args = args;
    req.attachments = attachments;
    req.want_logprobs = opts.want_logprobs;
    req.top_logprobs = opts.top_logprobs;

    auto& backend = hub_.backend(tmpl.role);

    TranscriptEntry entry;
    entry.role = req.role;
    entry.template_name = req.template_name;
    entry.prompt = req.prompt;
    entry.args = req.args;
    entry.attachments = req.attachments;

    auto start = std::chrono::steady_clock::now();

    std::string key;
    if (auto* cache = hub_.cache()) {
        std::vector<std::string> hashes;
        hashes.reserve(attachments.size());
        for (const auto& a : attachments)
            hashes.push_back(attachment_hash(a));
        key = ResponseCache::make_key(req.role, backend.model_id(), req.prompt, hashes, req.want_logprobs,
                                      opts.attempt);
        auto hit = cache->lookup(key);
        if (hit.response) {
            entry.response = hit.response->text;
            entry.distribution = hit.response->first_token;
            entry.cache_hit = true;
            entry.latency_ms = elapsed_ms(start);
            transcript_.append(std::move(entry));
            return *hit.response;
        }
        if (hit.corrupted)
            entry.flags.push_back("cache_corrupted");
    }

    const auto& policy = hub_.retry_policy();
    thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int attempt = 0;; ++attempt) {
        try {
            hub_.count_backend_call();
            ModelResponse resp = backend.generate(req);
            if (text::trim(resp.text).empty() && !resp.first_token)
                throw MalformedResponse("empty completion from " + backend.model_id());
            entry.response = resp.text;
            entry.distribution = resp.first_token;
            entry.retry_count = attempt;
            entry.latency_ms = elapsed_ms(start);
            if (auto* cache = hub_.cache(); cache && !cache->store(key, resp))
                entry.flags.push_back("cache_write_failed");
            transcript_.append(std::move(entry));
            return resp;
        } catch (const MissingLogprobs&) {
            throw;
        } catch (const ProviderError& e) {
            if (attempt >= policy.max_retries) {
                entry.retry_count = attempt;
                entry.error = e.what();
                entry.latency_ms = elapsed_ms(start);
                transcript_.append(std::move(entry));
                throw;
            }
            std::this_thread::sleep_for(policy.delay_for(attempt, unit(jitter_rng)));
        }
    }
}

std::string ProviderSession::complete(std::string_view template_name, const PromptArgs& args,
                                      const std::vector<std::string>& attachments, CallOptions opts)
{
    return call(template_name, args, attachments, opts).text;
}

BinaryScore ProviderSession::score_binary(std::string_view template_name, const PromptArgs& args,
                                          const std::vector<std::string>& attachments,
                                          std::string_view positive_token, std::string_view negative_token)
{
    CallOptions opts;
    opts.want_logprobs = true;
    opts.top_logprobs = 20;
    auto resp = call(template_name, args, attachments, opts);
    auto s = vgtree::score_binary(resp, positive_token, negative_token, hub_.allow_text_fallback());
    if (s.low_fidelity)
        transcript_.flag_last("low_fidelity_score");
    return s;
}

} // namespace vgtree
