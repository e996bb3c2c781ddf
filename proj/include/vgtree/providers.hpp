#pragma once

#include <json.hpp>

#include <array>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vgtree {

enum class ProviderRole {
    Captioner,
    Decomposer,
    Retriever,
    Navigator,
    FactExtractor,
    TripletParser,
    Prover,
    Rewriter,
};

inline constexpr std::size_t kRoleCount = 8;
inline constexpr std::array<ProviderRole, kRoleCount> kAllRoles{
    ProviderRole::Captioner,     ProviderRole::Decomposer,    ProviderRole::Retriever,
    ProviderRole::Navigator,     ProviderRole::FactExtractor, ProviderRole::TripletParser,
    ProviderRole::Prover,        ProviderRole::Rewriter,
};

std::string_view to_string(ProviderRole role);
std::optional<ProviderRole> provider_role_from_string(std::string_view s);

using PromptArgs = std::map<std::string, std::string, std::less<>>;

/// A prompt with `{name}` placeholders. `{{` and `}}` emit literal braces.
struct PromptTemplate {
    std::string name;
    ProviderRole role = ProviderRole::Decomposer;
    std::string text;
    std::string version;

    std::vector<std::string> placeholders() const;
    /// Throws PreconditionError when a placeholder has no binding.
    std::string render(const PromptArgs& args) const;
};

/// Versioned set of prompt templates, keyed by template name.
class TemplateRegistry {
public:
    /// The built-in templates shipped with the library.
    static TemplateRegistry defaults();

    void add(PromptTemplate t);
    const PromptTemplate& get(std::string_view name) const;
    bool contains(std::string_view name) const;
    std::vector<std::string> names() const;

    /// Overlay templates from a JSON file: {"templates":[{name, role, version, text}]}.
    void load_overrides(const std::filesystem::path& path);

private:
    std::map<std::string, PromptTemplate, std::less<>> templates_;
};

/// First-token distribution, token string -> probability.
using TokenDistribution = std::map<std::string, double>;

struct ModelRequest {
    ProviderRole role = ProviderRole::Decomposer;
    std::string template_name;
    std::string prompt;
    /// Unrendered template arguments. Remote backends only see `prompt`;
    /// offline backends may read structured fields from here.
    PromptArgs args;
    std::vector<std::string> attachments;
    bool want_logprobs = false;
    int top_logprobs = 0;
};

struct ModelResponse {
    std::string text;
    std::optional<TokenDistribution> first_token;
};

/// One model endpoint. Implementations must be safe to call concurrently.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    virtual ModelResponse generate(const ModelRequest& request) = 0;
    virtual std::string model_id() const = 0;
};

struct TranscriptEntry {
    ProviderRole role = ProviderRole::Decomposer;
    std::string template_name;
    std::string prompt;
    PromptArgs args;
    std::vector<std::string> attachments;
    std::string response;
    std::optional<TokenDistribution> distribution;
    bool cache_hit = false;
    double latency_ms = 0.0;
    int retry_count = 0;
    std::string error;
    std::vector<std::string> flags;
};

/// Append-only record of every model call issued for one task.
class Transcript {
public:
    void append(TranscriptEntry e) { entries_.push_back(std::move(e)); }
    void flag_last(std::string flag);

    const std::vector<TranscriptEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t count(ProviderRole role) const;
    std::size_t cache_hits() const;
    std::map<std::string, std::size_t> counts_by_role() const;

    /// `with_timing` controls whether latency is written; without it the
    /// output is reproducible across runs.
    nlohmann::ordered_json to_json(bool with_timing = false) const;

private:
    std::vector<TranscriptEntry> entries_;
};

struct RetryPolicy {
    int max_retries = 2;
    std::chrono::milliseconds base_delay{200};
    double multiplier = 2.0;
    /// Fraction of each delay randomized, in [0, 1].
    double jitter = 0.25;

    std::chrono::milliseconds delay_for(int attempt, double unit_random) const;
};

/// Token bucket shared by every caller of one endpoint.
class RateLimiter {
public:
    RateLimiter(double requests_per_second, double burst);
    void acquire();

private:
    std::mutex mu_;
    double rate_;
    double burst_;
    double tokens_;
    std::chrono::steady_clock::time_point last_;
};

/// Disk cache, one JSON file per key named by the key's hex hash.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    static std::string make_key(ProviderRole role, std::string_view model_id, std::string_view prompt,
                                const std::vector<std::string>& attachment_hashes, bool want_logprobs,
                                int attempt = 0);

    struct Lookup {
        std::optional<ModelResponse> response;
        bool corrupted = false;
    };

    Lookup lookup(const std::string& key) const;
    /// Idempotent. Write failures are swallowed and reported as false.
    bool store(const std::string& key, const ModelResponse& response);

    const std::filesystem::path& dir() const noexcept { return dir_; }

private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
};

/// Hash identifying an attachment: file content when the reference names a
/// readable file, otherwise the reference string itself.
std::string attachment_hash(const std::string& ref);

/// Shared provider configuration: one backend per role, templates, cache
/// and retry policy. Thread-safe once configured.
class ProviderHub {
public:
    ProviderHub();

    void set_backend(ProviderRole role, std::shared_ptr<ModelBackend> backend);
    void set_all_backends(const std::shared_ptr<ModelBackend>& backend);
    ModelBackend& backend(ProviderRole role) const;
    bool has_backend(ProviderRole role) const;

    TemplateRegistry& templates() noexcept { return templates_; }
    const TemplateRegistry& templates() const noexcept { return templates_; }

    void set_cache(std::shared_ptr<ResponseCache> cache) { cache_ = std::move(cache); }
    ResponseCache* cache() const noexcept { return cache_.get(); }

    void set_retry_policy(RetryPolicy p) { retry_ = p; }
    const RetryPolicy& retry_policy() const noexcept { return retry_; }

    /// Textual True/False fallback for provers that expose no logprobs.
    void set_allow_text_fallback(bool allow) { allow_text_fallback_ = allow; }
    bool allow_text_fallback() const noexcept { return allow_text_fallback_; }

    /// Number of requests that reached a backend (cache misses, retries included).
    std::size_t backend_calls() const noexcept { return backend_calls_.load(); }
    void count_backend_call() const noexcept { ++backend_calls_; }

private:
    std::array<std::shared_ptr<ModelBackend>, kRoleCount> backends_;
    TemplateRegistry templates_;
    std::shared_ptr<ResponseCache> cache_;
    RetryPolicy retry_;
    bool allow_text_fallback_ = true;
    mutable std::atomic<std::size_t> backend_calls_{0};
};

struct CallOptions {
    /// Re-ask number after an unparseable completion. Non-zero attempts get
    /// their own cache entries so a replay reproduces the whole sequence.
    int attempt = 0;
    bool want_logprobs = false;
    int top_logprobs = 0;
};

struct BinaryScore {
    double value = 0.5;
    /// True when the score came from the textual fallback.
    bool low_fidelity = false;
};

/// Confidence for the positive token: p(pos) / (p(pos) + p(neg)). Token
/// matching ignores case and surrounding whitespace. Without a usable
/// distribution the generated text decides: positive 0.75, negative 0.25,
/// anything else 0.5; with `allow_fallback` false that case throws
/// MissingLogprobs.
BinaryScore score_binary(const ModelResponse& response, std::string_view positive_token,
                         std::string_view negative_token, bool allow_fallback);

/// Per-task view of a hub. Every call lands in the task's transcript.
/// Not thread-safe; use one session per task.
class ProviderSession {
public:
    ProviderSession(const ProviderHub& hub, Transcript& transcript);

    ModelResponse call(std::string_view template_name, const PromptArgs& args,
                       const std::vector<std::string>& attachments = {}, CallOptions opts = {});

    std::string complete(std::string_view template_name, const PromptArgs& args,
                         const std::vector<std::string>& attachments = {}, CallOptions opts = {});

    /// Ask a True/False question and normalize the first-token probabilities.
    BinaryScore score_binary(std::string_view template_name, const PromptArgs& args,
                             const std::vector<std::string>& attachments,
                             std::string_view positive_token = "True",
                             std::string_view negative_token = "False");

    Transcript& transcript() noexcept { return transcript_; }
    const ProviderHub& hub() const noexcept { return hub_; }

private:
    const ProviderHub& hub_;
    Transcript& transcript_;
};

} // namespace vgtree
