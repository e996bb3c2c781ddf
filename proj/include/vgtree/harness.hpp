#pragma once

#include "vgtree/providers.hpp"
#include "vgtree/qa_model.hpp"
#include "vgtree/tree_engine.hpp"

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace vgtree {

/// How one provider role is served.
struct BackendConfig {
    /// oracle | remote | echo
    std::string backend = "oracle";
    std::string endpoint_url;
    std::string model_id;
    std::string api_key_env;
    double requests_per_second = 0.0;
    double burst = 1.0;
    double noise_epsilon = 0.0;
    std::uint64_t noise_seed = 0;
    bool logprobs = true;

    bool operator==(const BackendConfig&) const = default;
};

struct RunConfig {
    std::size_t frames_per_video = 24;
    std::size_t max_depth = 5;
    std::size_t prover_frame_count = 8;
    ProverKind prover_kind = ProverKind::Video;
    std::size_t look_around_window = 8;
    ExpansionMode expansion = ExpansionMode::Dynamic;
    GroundingMode grounding = GroundingMode::Grounded;
    std::size_t concurrency = 1;
    int malformed_retries = 2;
    RetryPolicy retry;
    bool allow_text_fallback = true;
    /// Fraction of failed tasks above which a run exits with code 3.
    double failure_threshold = 0.05;

    std::string cache_dir;
    std::string caption_dir;
    std::string templates_path;
    /// Directory holding one sub-directory of frame images per video_ref.
    std::string frames_root;
    /// Frame rate of the extracted frame files, used for timestamps.
    double frames_fps = 1.0;
    /// JSON {task_id: [start_s, end_s]} for GroundTruthIntervals mode.
    std::string intervals_path;
    /// Include wall time in reports (makes reruns differ).
    bool report_timing = false;

    BackendConfig default_backend;
    std::map<ProviderRole, BackendConfig> roles;

    const BackendConfig& backend_for(ProviderRole role) const;
    /// Throws ConfigError describing the first invalid field.
    void validate() const;
};

/// Parse an INI-style file: [run], [retry], [default] and one section per
/// provider role (captioner, decomposer, ...). Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
/// Same, from text already in memory.
RunConfig parse_run_config(const std::string& content);

nlohmann::ordered_json config_to_json(const RunConfig& c);
/// Short stable hash of the evaluation-relevant configuration.
std::string config_digest(const RunConfig& c);

/// Hub with one backend per role as configured. Roles sharing an identical
/// backend config share one backend instance.
std::shared_ptr<ProviderHub> build_hub(const RunConfig& c);

/// Frames for a task: synthetic references resolve to their world's
/// timeline, anything else to image files under frames_root/<video_ref>.
VideoContext resolve_video(const QATask& task, const RunConfig& c,
                           const std::map<std::string, std::pair<double, double>>& intervals = {});

std::map<std::string, std::pair<double, double>> load_intervals(const std::filesystem::path& path);

struct TaskRow {
    std::string task_id;
    QuestionType question_type = QuestionType::Unknown;
    std::optional<std::size_t> ground_truth;
    std::optional<std::size_t> selected;
    bool correct = false;
    bool failed = false;
    std::string error;
    std::map<std::string, std::size_t> calls;
    std::size_t decompositions = 0;
    std::size_t prunes = 0;
    std::size_t cache_hits = 0;
};

struct AccuracyCell {
    std::size_t answered = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
};

struct EvalReport {
    std::string dataset;
    DatasetVariant variant = DatasetVariant::Original;
    std::string config_digest;
    std::string task_ids_digest;
    std::string grounding;
    std::string expansion;
    std::size_t tasks = 0;
    AccuracyCell overall;
    std::map<std::string, AccuracyCell> per_type;
    std::map<std::string, std::size_t> calls;
    std::map<std::string, double> calls_avg;
    std::size_t decompositions = 0;
    double decompositions_avg = 0.0;
    std::size_t prunes = 0;
    std::vector<std::string> failed;
    std::vector<TaskRow> rows;
    std::optional<double> wall_time_s;
};

struct EvalRun {
    EvalReport report;
    std::vector<TaskResult> results;
    /// Requests that reached a backend during this run (cache misses).
    std::size_t backend_calls = 0;
    std::size_t cache_hits = 0;
};

struct EvalOptions {
    /// Write <id>.trace.json and <id>.transcript.jsonl per task when set.
    std::optional<std::filesystem::path> trace_dir;
    /// Keep full TaskResults in the returned run.
    bool keep_results = true;
};

/// Evaluate every task. Failures are recorded per task; the run completes.
EvalRun run_eval(const Dataset& dataset, const RunConfig& config, const ProviderHub& hub,
                 const EvalOptions& opts = {});

/// Aggregate rows into a report (rows keep dataset order).
EvalReport summarize(const Dataset& dataset, const RunConfig& config, std::vector<TaskRow> rows);

std::string task_ids_digest(const Dataset& dataset);

nlohmann::ordered_json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::ordered_json& doc);
std::string render_report_markdown(const EvalReport& r);

/// Trace document: the forest plus grounding details and the question type.
nlohmann::ordered_json trace_to_json(const QATask& task, const TaskResult& result);
/// Write trace files; returns the trace path. Throws IoError.
std::filesystem::path emit_trace(const QATask& task, const TaskResult& result, const std::filesystem::path& dir);
/// Human-readable tree with prune events.
std::string render_trace_text(const nlohmann::ordered_json& trace);

/// Recompute overall accuracy from the trace files in `dir`.
AccuracyCell accuracy_from_traces(const std::filesystem::path& dir);

struct DeltaRow {
    std::string key;
    double a = 0.0;
    double b = 0.0;
    double delta = 0.0;
};

struct Comparison {
    std::string label_a;
    std::string label_b;
    std::vector<DeltaRow> accuracy;
    std::vector<DeltaRow> calls_avg;
};

/// Deltas are b - a. Throws MismatchedDatasets when task sets differ.
Comparison compare_runs(const EvalReport& a, const EvalReport& b);
std::string render_comparison_markdown(const Comparison& c);

enum class ExitCode : int { Success = 0, ConfigError = 1, AllFailed = 2, PartialFailure = 3 };

ExitCode exit_code_for(const EvalReport& r, double failure_threshold);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

} // namespace vgtree
