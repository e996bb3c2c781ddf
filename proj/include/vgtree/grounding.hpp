#pragma once

#include "vgtree/providers.hpp"
#include "vgtree/qa_model.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vgtree {

struct SemanticTriplet {
    std::string subject;
    std::string predicate;
    std::string object;

    bool operator==(const SemanticTriplet&) const = default;
};

/// A sampled video frame as the pipeline sees it: an index, a time, and a
/// reference the providers can resolve (file path or synthetic id).
struct FrameRef {
    std::size_t index = 0;
    double timestamp_s = 0.0;
    std::string uri;
};

struct CaptionedFrame {
    std::size_t frame_index = 0;
    double timestamp_s = 0.0;
    std::string caption;
    std::vector<SemanticTriplet> triplets;
    /// Captioning failed; the frame is kept for indexing but never retrieved.
    bool sentinel = false;
    /// Triplet parsing failed; retrieval falls back to the raw caption.
    bool triplets_failed = false;
};

struct FactStatement {
    std::string text;
    std::vector<SemanticTriplet> triplets;
    /// The extractor gave nothing usable and the question stands in.
    bool from_question_fallback = false;
};

enum class NavigationDirective { LookAhead, LookBehind, LookAround };

std::string_view to_string(NavigationDirective d);
std::optional<NavigationDirective> directive_from_string(std::string_view s);

/// How a moment was obtained. Only navigated moments carry the
/// directive-consistent bounds.
enum class MomentSource { Navigated, FullVideo, External };

std::string_view to_string(MomentSource s);

struct GroundedMoment {
    std::size_t anchor_index = 0;
    NavigationDirective directive = NavigationDirective::LookAround;
    std::size_t start_index = 0;
    std::size_t end_index = 0;
    std::size_t video_len = 0;
    MomentSource source = MomentSource::Navigated;

    std::size_t length() const noexcept { return end_index - start_index + 1; }
    bool contains(std::size_t frame) const noexcept { return frame >= start_index && frame <= end_index; }
    bool operator==(const GroundedMoment&) const = default;
};

// "look behind" means later in time (anchor to end), "look ahead" earlier
// (start to anchor). The names follow the original method; keep them.

/// Resolve a directive to a concrete inclusive interval.
/// LookBehind -> [anchor, len-1]; LookAhead -> [0, anchor]; LookAround ->
/// `window` frames starting at anchor - floor(window/2), shifted back inside
/// the video (whole video when len < window).
GroundedMoment ground_moment(std::size_t anchor, NavigationDirective directive, std::size_t video_len,
                             std::size_t window);

/// Moment spanning the whole video.
GroundedMoment full_video_moment(std::size_t video_len);

/// `k` indices spread uniformly over [start, end], endpoints included.
std::vector<std::size_t> resample_frames(const GroundedMoment& moment, std::size_t k);

/// Parse "(s, p, o)" lines. Returns nullopt when nothing parses.
std::optional<std::vector<SemanticTriplet>> parse_triplet_lines(std::string_view completion);
std::string format_triplets(const std::vector<SemanticTriplet>& triplets);

// -- provider-backed steps ---------------------------------------------------

FactStatement extract_fact(std::string_view question, ProviderSession& llm);

/// Caption frames in order; frame i is conditioned on the fact and every
/// earlier caption. A failed frame becomes a sentinel.
std::vector<CaptionedFrame> caption_frames(const std::vector<FrameRef>& frames, const FactStatement& fact,
                                           ProviderSession& captioner);

/// Empty result (with a transcript flag) when the completion is unusable.
std::vector<SemanticTriplet> parse_triplets(std::string_view text, ProviderSession& llm);

/// Score used when the retriever gives no valid frame: per fact triplet, the
/// best count of matching normalized fields over the frame's triplets; raw
/// caption word matches when the frame has no triplets.
std::size_t triplet_overlap(const CaptionedFrame& frame, const FactStatement& fact);

struct AnchorResult {
    std::size_t frame_index = 0;
    bool used_fallback = false;
};

AnchorResult retrieve_anchor(const std::vector<CaptionedFrame>& captions, const FactStatement& fact,
                             ProviderSession& llm);

struct NavigationResult {
    NavigationDirective directive = NavigationDirective::LookAround;
    bool defaulted = false;
};

NavigationResult navigate(std::string_view question, QuestionType type, ProviderSession& llm);

/// Attach triplets to every non-sentinel caption (one parser call each).
void annotate_triplets(std::vector<CaptionedFrame>& frames, ProviderSession& llm);

struct GroundingOptions {
    std::size_t look_around_window = 8;
};

/// Everything grounding produced for one question, kept for the trace.
struct GroundingOutcome {
    FactStatement fact;
    std::vector<CaptionedFrame> captions;
    AnchorResult anchor;
    NavigationResult navigation;
    GroundedMoment moment;
};

class CaptionStore;

/// fact -> fact-conditioned captions -> triplets -> anchor -> directive ->
/// moment. `frames[i].index` must equal i. Captions are read from and
/// written to `store` when one is given.
GroundingOutcome ground_question(const QATask& task, const std::vector<FrameRef>& frames,
                                 ProviderSession& session, const GroundingOptions& opts,
                                 const CaptionStore* store = nullptr);

nlohmann::ordered_json grounding_to_json(const GroundingOutcome& g);

// -- caption cache files -----------------------------------------------------

/// Per-video caption files, keyed by the fact hash because captions are
/// fact-conditioned. Layout: <dir>/<video>.<fact_hash>.json, plus an
/// optional fact-agnostic <dir>/<video>.json for precomputed captions.
class CaptionStore {
public:
    explicit CaptionStore(std::filesystem::path dir);

    static std::string fact_hash(std::string_view fact_text);

    std::optional<std::vector<CaptionedFrame>> load(const std::string& video_ref,
                                                    std::string_view fact_text) const;
    void save(const std::string& video_ref, std::string_view fact_text,
              const std::vector<CaptionedFrame>& frames) const;

private:
    std::filesystem::path path_for(const std::string& video_ref, const std::string& hash) const;
    std::filesystem::path dir_;
};

nlohmann::ordered_json captions_to_json(const std::string& video_ref, std::string_view fact_hash,
                                        const std::vector<CaptionedFrame>& frames);
std::vector<CaptionedFrame> captions_from_json(const nlohmann::ordered_json& doc);

} // namespace vgtree
