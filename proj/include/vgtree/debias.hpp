#pragma once

#include "vgtree/providers.hpp"
#include "vgtree/qa_model.hpp"

#include <json.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace vgtree {

enum class RewriteViolation {
    QuestionChanged,
    GroundTruthAltered,
    DistractorsUnchanged,
    DuplicateOrEmptyOption,
    OptionCountChanged,
};

std::string_view to_string(RewriteViolation v);

/// Empty iff the candidate keeps the question and ground truth byte-for-byte,
/// changes every distractor (normalized comparison), has pairwise distinct
/// non-empty options and the same option count.
std::vector<RewriteViolation> validate_rewrite(const QATask& original, const QATask& candidate);

struct RewriteResult {
    QATask original;
    QATask rewritten;
    int attempts = 0;
    /// Problems of each rejected attempt, in order.
    std::vector<std::vector<std::string>> violations_history;
};

struct RewriteOptions {
    int max_attempts = 3;
    /// Substituted into the prompt; tune wording per dataset via templates.
    std::string dataset_name = "video QA";
};

/// Ask the rewriter for new distractors until one candidate validates.
/// Throws PreconditionError without a ground truth, FailedRewrite after
/// max_attempts, and lets ProviderError through.
RewriteResult rewrite_answers(const QATask& task, ProviderSession& rewriter, const RewriteOptions& opts = {});

struct ProbeOutcome {
    std::string task_id;
    std::optional<std::size_t> predicted;
    /// Malformed completion; counted apart from wrong answers.
    bool abstained = false;
};

/// Answer from question and options alone; no frames are attached.
ProbeOutcome blind_probe(const QATask& task, ProviderSession& llm);

/// Option index named by a completion: a letter ("B", "(B)", "Option B"),
/// a 1-based number, or the option text itself.
std::optional<std::size_t> parse_choice(std::string_view completion, const QATask& task);

struct TypeAccuracy {
    std::size_t n = 0;
    std::size_t correct = 0;
    std::size_t abstained = 0;
    double accuracy = 0.0;
};

struct BiasReport {
    std::string dataset;
    DatasetVariant variant = DatasetVariant::Original;
    std::size_t n = 0;
    std::size_t correct = 0;
    std::size_t abstained = 0;
    /// correct / n over probed tasks with ground truth; abstentions count as
    /// not correct.
    double blind_accuracy = 0.0;
    std::map<std::string, TypeAccuracy> per_type;
};

/// Throws PreconditionError when no probed task has a ground truth.
BiasReport bias_report(const Dataset& dataset, const std::vector<ProbeOutcome>& probes);

nlohmann::ordered_json bias_report_to_json(const BiasReport& r);

/// Probe every task sequentially through `hub`.
std::vector<ProbeOutcome> probe_dataset(const Dataset& dataset, const ProviderHub& hub,
                                        std::size_t* calls = nullptr);

struct DebiasOutcome {
    /// Variant Rewritten; failed tasks keep their original options, flagged.
    Dataset dataset;
    std::vector<RewriteResult> accepted;
    std::vector<std::string> failed_ids;
    std::size_t calls = 0;
};

/// Rewrite every task that has a ground truth. Each rewritten record carries
/// variant="Rewritten" and a provenance block {rewriter, prompt_version,
/// attempts}.
DebiasOutcome rewrite_dataset(const Dataset& dataset, const ProviderHub& hub, const RewriteOptions& opts = {});

/// Re-run validate_rewrite on every record marked rewritten, pairing records
/// by id. Returns offending task ids with their violations.
std::map<std::string, std::vector<RewriteViolation>> audit_rewrites(const Dataset& original,
                                                                    const Dataset& rewritten);

} // namespace vgtree
