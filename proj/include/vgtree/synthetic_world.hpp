#pragma once

#include "vgtree/grounding.hpp"
#include "vgtree/providers.hpp"
#include "vgtree/qa_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace vgtree {

struct Event {
    std::size_t frame = 0;
    std::string actor;
    std::string action;
    std::string object;

    /// "the {actor} {action} the {object}"
    std::string text() const;
    bool operator==(const Event&) const = default;
};

struct WorldParams {
    std::size_t num_frames = 24;
    std::size_t num_events = 6;
    std::vector<std::string> actors;
    std::vector<std::string> actions;
    std::vector<std::string> objects;

    /// Default vocabularies filled in.
    static WorldParams standard(std::size_t num_frames = 24, std::size_t num_events = 6);
};

/// A timeline "video": at most one event per frame, events in frame order.
struct WorldSpec {
    std::uint64_t seed = 0;
    std::size_t num_frames = 24;
    std::vector<Event> events;
    std::vector<std::string> actors;
    std::vector<std::string> actions;
    std::vector<std::string> objects;

    const Event* event_at(std::size_t frame) const;
    const Event* find(const std::string& actor, const std::string& action, const std::string& object) const;
    /// Caption for a frame: the event text, or a still-scene sentence.
    std::string describe(std::size_t frame) const;
    bool operator==(const WorldSpec&) const = default;
};

inline constexpr const char* kStillScene = "the scene is still";

/// Deterministic in (seed, params). Throws PreconditionError on empty
/// vocabularies or impossible layouts.
WorldSpec generate_world(std::uint64_t seed, const WorldParams& params = WorldParams::standard());

nlohmann::ordered_json world_to_json(const WorldSpec& w);
WorldSpec world_from_json(const nlohmann::ordered_json& doc);

// "synth:<seed>:<frames>:<events>" names a world built with the standard
// vocabularies; frame i of it is "<ref>#<i>".
std::string synthetic_video_ref(const WorldSpec& w);
struct SyntheticRef {
    std::uint64_t seed = 0;
    std::size_t num_frames = 0;
    std::size_t num_events = 0;
    std::optional<std::size_t> frame;
};
std::optional<SyntheticRef> parse_synthetic_ref(std::string_view ref);
std::vector<FrameRef> synthetic_frames(const WorldSpec& w, double fps = 1.0);

enum class Relation { Before, After, Around };

std::string_view to_string(Relation r);
std::optional<Relation> relation_from_string(std::string_view s);

struct TaskGenOptions {
    std::size_t num_options = 5;
    /// Window that defines "around" for Around tasks.
    std::size_t around_window = 8;
};

/// One QA task about `world`. Throws Ungeneratable when no anchor has an
/// event on the required side (or, adversarially, on the opposite side).
QATask generate_task(const WorldSpec& world, Relation relation, bool adversarial, std::uint64_t seed,
                     const TaskGenOptions& opts = {});

struct SuiteOptions {
    std::size_t num_tasks = 200;
    bool adversarial = false;
    /// Empty means cycle through all three relations.
    std::vector<Relation> relations;
    WorldParams world = WorldParams::standard();
    TaskGenOptions task;
    /// Resample budget per task before giving up.
    std::size_t max_resamples = 64;
};

/// Seeded task set; Ungeneratable draws are resampled with fresh seeds.
Dataset generate_suite(std::uint64_t seed, const SuiteOptions& opts);

/// Tasks whose ground truth shares words with the question while the
/// distractors share none, so a text-only guesser finds the answer.
Dataset generate_bias_suite(std::uint64_t seed, std::size_t num_tasks, std::size_t num_options = 5);

struct OracleOptions {
    /// Prover jitter: true statements score 1-u, false ones u, u in [0, eps].
    double noise_epsilon = 0.0;
    std::uint64_t noise_seed = 0;
    /// Expose first-token distributions on prover calls.
    bool logprobs = true;
};

/// Deterministic stand-in for every provider role over synthetic worlds.
/// Dispatches on the request's template name.
class OracleBackend : public ModelBackend {
public:
    explicit OracleBackend(OracleOptions opts = {});

    /// Register a world under an explicit reference (custom vocabularies).
    void add_world(const std::string& video_ref, WorldSpec world);

    ModelResponse generate(const ModelRequest& request) override;
    std::string model_id() const override;

    /// The individual rules, exposed for tests.
    double prove(std::string_view statement, const WorldSpec& world, std::size_t start, std::size_t end) const;
    static std::string fact(std::string_view question);
    static std::string declarative(std::string_view question, std::string_view answer);
    static std::pair<std::string, std::string> decompose(std::string_view statement);
    static std::string triplets(std::string_view text);
    static std::string navigate(std::string_view question);
    static std::string retrieve(std::string_view fact_triplets, std::string_view frame_triplets);
    /// Option with the largest word overlap with the question; ties broken by
    /// a hash of the question among the tied options.
    static std::size_t lexical_guess(std::string_view question, const std::vector<std::string>& options);
    static std::vector<std::string> rewrite(std::string_view question, std::string_view answer,
                                            const std::vector<std::string>& options, std::size_t count);

    std::shared_ptr<const WorldSpec> world_for(std::string_view ref) const;

private:
    OracleOptions opts_;
    mutable std::mutex mu_;
    mutable std::map<std::string, std::shared_ptr<const WorldSpec>, std::less<>> worlds_;
};

/// Rewriter that hands back the task's current distractors unchanged.
class EchoRewriter : public ModelBackend {
public:
    ModelResponse generate(const ModelRequest& request) override;
    std::string model_id() const override { return "echo-rewriter"; }
};

/// Parse "A. text" / "(B) text" lines as rendered into rewrite and probe prompts.
std::vector<std::string> parse_option_lines(std::string_view block);
std::string render_option_lines(const std::vector<std::string>& options);

} // namespace vgtree
