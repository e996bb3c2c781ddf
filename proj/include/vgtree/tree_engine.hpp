#pragma once

#include "vgtree/grounding.hpp"
#include "vgtree/providers.hpp"
#include "vgtree/prover.hpp"
#include "vgtree/qa_model.hpp"

#include <json.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace vgtree {

/// Where a statement came from: the answer option it restates, or the
/// parent node and slot it was decomposed into.
struct StatementOrigin {
    std::optional<std::size_t> option_index;
    std::string parent_id;
    int child_slot = 0;
};

struct Statement {
    std::string text;
    /// Roots sit at depth 1.
    std::size_t depth = 1;
    StatementOrigin origin;
};

/// direct = prover belief in the statement; proof = product of the
/// children's finals when the node was decomposed; final = max of the two.
struct ScoreCard {
    double direct = 0.0;
    std::optional<double> proof;
    double final = 0.0;
};

enum class NodeStatus { LeafMaxDepth, LeafPruned, Internal };

std::string_view to_string(NodeStatus s);

/// A decomposition that was computed and then thrown away. Kept for audit.
struct PrunedRecord {
    enum class Reason { Pruned, Failed };
    Reason reason = Reason::Pruned;
    /// Discarded sub-statements and their direct scores.
    std::vector<std::pair<std::string, double>> children;
    /// Product of the discarded children's direct scores.
    std::optional<double> proof_estimate;
    std::string error;
};

struct EntailmentNode {
    std::string id;
    Statement statement;
    ScoreCard scores;
    std::vector<std::string> children;
    NodeStatus status = NodeStatus::LeafMaxDepth;
    std::optional<PrunedRecord> pruned;
};

struct EntailmentForest {
    std::string task_id;
    /// One root per answer option, option order.
    std::vector<std::string> roots;
    std::map<std::string, EntailmentNode> nodes;
    std::size_t selected_index = 0;
    /// Transcript entries per provider role.
    std::map<std::string, std::size_t> call_counts;
    /// decompose() invocations below each root.
    std::vector<std::size_t> decompositions_per_root;
    std::optional<std::size_t> ground_truth_index;
    bool failed = false;
    std::string error;

    EntailmentNode& node(const std::string& id);
    const EntailmentNode& node(const std::string& id) const;
};

enum class ExpansionMode {
    /// Prune a decomposition as soon as the children's direct scores cannot
    /// beat the parent's direct score.
    Dynamic,
    /// Expand every node down to max depth.
    Static,
};

std::string_view to_string(ExpansionMode m);

struct TreeConfig {
    std::size_t max_depth = 5;
    ExpansionMode mode = ExpansionMode::Dynamic;
    /// Re-asks after an unparseable completion.
    int malformed_retries = 2;
    ProverKind prover_kind = ProverKind::Video;
    std::size_t prover_frame_count = 8;
};

/// One declarative statement per option, option order.
std::vector<Statement> generate_root_statements(const QATask& task, ProviderSession& decomposer,
                                                int malformed_retries = 2);

/// Parse a decomposition completion. Returns nullopt unless exactly two
/// non-empty sub-statements distinct from the parent and each other are found.
std::optional<std::pair<std::string, std::string>> parse_decomposition(std::string_view completion,
                                                                      std::string_view parent);

/// Split into two sub-statements one level deeper. Origins are left for the
/// caller to fill. Precondition: statement.depth < max_depth.
std::pair<Statement, Statement> decompose(const Statement& statement, ProviderSession& decomposer,
                                          std::size_t max_depth, int malformed_retries = 2);

inline double proof_score(double left_final, double right_final) { return left_final * right_final; }

/// Inputs shared by every expansion step of one task.
struct ExpansionContext {
    const GroundedMoment& moment;
    const std::vector<FrameRef>& frames;
    ProviderSession& session;
    const TreeConfig& config;
};

struct ExpansionOutcome {
    NodeStatus status = NodeStatus::LeafMaxDepth;
    std::size_t decompositions = 0;
    std::size_t prunes = 0;
};

/// Expand `node_id` in place (its direct score must already be set) and
/// recurse into kept children. Provider failures degrade the node to a
/// pruned leaf with a failure record.
ExpansionOutcome expand_node(EntailmentForest& forest, const std::string& node_id, ExpansionContext& ctx);

/// Recompute every final bottom-up: leaves final = direct, internal nodes
/// proof = product of children finals and final = max(direct, proof).
/// Idempotent. Throws StructuralError on a malformed tree.
void backtrace(EntailmentForest& forest);

/// Index of the root with the highest final score, lowest index on ties.
std::size_t select_answer(const EntailmentForest& forest);

enum class GroundingMode { Grounded, FullVideo, GroundTruthIntervals };

std::string_view to_string(GroundingMode m);
std::optional<GroundingMode> grounding_mode_from_string(std::string_view s);

struct EngineConfig {
    TreeConfig tree;
    GroundingMode grounding = GroundingMode::Grounded;
    std::size_t look_around_window = 8;
    const CaptionStore* caption_store = nullptr;
};

/// What the engine needs to know about the task's video.
struct VideoContext {
    std::vector<FrameRef> frames;
    /// [start_s, end_s] used by GroundTruthIntervals mode.
    std::optional<std::pair<double, double>> external_interval_s;
};

struct TaskResult {
    EntailmentForest forest;
    Transcript transcript;
    std::optional<GroundingOutcome> grounding;
    std::optional<GroundedMoment> moment;
};

/// Moment covering an externally supplied time interval.
GroundedMoment moment_from_interval(const std::vector<FrameRef>& frames, double start_s, double end_s);

/// Ground, build one root per option, expand, backtrace, select. Provider and
/// grounding failures mark the forest failed instead of throwing.
TaskResult evaluate_task(const QATask& task, const VideoContext& video, const ProviderHub& hub,
                         const EngineConfig& config);

struct PruneEvent {
    std::string node_id;
    double direct = 0.0;
    double proof_estimate = 0.0;
};

std::vector<PruneEvent> prune_events(const EntailmentForest& forest);

nlohmann::ordered_json forest_to_json(const EntailmentForest& forest);
EntailmentForest forest_from_json(const nlohmann::ordered_json& doc);

} // namespace vgtree
