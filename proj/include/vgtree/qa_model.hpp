#pragma once

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vgtree {

enum class QuestionType { Temporal, Causal, Descriptive, Spatial, Action, Object, Unknown };

std::string_view to_string(QuestionType t);
std::optional<QuestionType> question_type_from_string(std::string_view s);

struct AnswerOption {
    std::size_t index = 0;
    std::string text;

    bool operator==(const AnswerOption&) const = default;
};

/// One multiple-choice question bound to a video.
struct QATask {
    std::string id;
    std::string video_ref;
    std::string question;
    std::vector<AnswerOption> options;
    std::optional<std::size_t> ground_truth_index;
    QuestionType question_type = QuestionType::Unknown;
    /// Keys of the source record this library does not interpret. Written
    /// back unchanged on serialization.
    nlohmann::ordered_json extras = nlohmann::ordered_json::object();

    std::size_t arity() const noexcept { return options.size(); }
    const std::string& option_text(std::size_t i) const { return options.at(i).text; }

    bool operator==(const QATask&) const = default;
};

/// Build a task with option indices assigned from position.
QATask make_task(std::string id, std::string video_ref, std::string question,
                 const std::vector<std::string>& options,
                 std::optional<std::size_t> ground_truth = std::nullopt,
                 QuestionType type = QuestionType::Unknown);

enum class DatasetVariant { Original, Rewritten };

std::string_view to_string(DatasetVariant v);

struct Dataset {
    std::string name;
    std::vector<QATask> tasks;
    DatasetVariant variant = DatasetVariant::Original;

    const QATask* find(std::string_view id) const;
};

enum class Violation {
    EmptyId,
    EmptyQuestion,
    TooFewOptions,
    EmptyOption,
    DuplicateOption,
    OptionIndexMismatch,
    GroundTruthOutOfRange,
};

std::string_view to_string(Violation v);

/// Check every QATask invariant. Violations are reported, never thrown.
std::vector<Violation> validate_task(const QATask& task);

enum class DatasetFormat { JsonLines, NextQaCsv };

/// Load a dataset. Without a hint the format follows the file extension
/// (.csv selects the NExT-QA style CSV importer, anything else JSON lines).
/// Throws IoError, SchemaError (with a line-numbered problem list) or
/// DuplicateIdError.
Dataset load_dataset(const std::filesystem::path& path,
                     std::optional<DatasetFormat> format_hint = std::nullopt);

/// Parse canonical JSON lines from memory. `name` becomes the dataset name.
Dataset parse_dataset_jsonl(std::string_view content, std::string name);

/// Parse a NExT-QA style CSV (video, question, answer, qid, type, a0..aN).
Dataset parse_nextqa_csv(std::string_view content, std::string name);

nlohmann::ordered_json task_to_json(const QATask& task);
/// Convert one canonical record. Throws SchemaError describing the problems.
QATask task_from_json(const nlohmann::ordered_json& record);

std::string serialize_dataset(const Dataset& dataset);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

} // namespace vgtree
