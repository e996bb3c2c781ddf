#include "vgtree/tree_engine.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/text.hpp"

#include <algorithm>
#include <functional>

namespace vgtree {

using json = nlohmann::ordered_json;

namespace {

std::string clean_statement(std::string_view raw)
{
    auto s = text::strip_enumerator(raw);
    for (std::string_view label : {"statement:", "sub-statement1:", "sub-statement2:", "sub-statement 1:",
                                   "sub-statement 2:", "sub-statement:"}) {
        if (text::starts_with_ci(s, label)) {
            s = text::trim(std::string_view(s).substr(label.size()));
            break;
        }
    }
    while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        s = text::trim(std::string_view(s).substr(1, s.size() - 2));
    return s;
}

bool has_enumerator(std::string_view line)
{
    return text::strip_enumerator(line) != text::trim(line);
}

std::string child_id(const std::string& parent, int slot)
{
    return parent + "." + std::to_string(slot);
}

NodeStatus status_from_string(std::string_view s)
{
    if (s == "Internal")
        return NodeStatus::Internal;
    if (s == "Leaf_Pruned")
        return NodeStatus::LeafPruned;
    if (s == "Leaf_MaxDepth")
        return NodeStatus::LeafMaxDepth;
    throw StructuralError("unknown node status '" + std::string(s) + "'");
}

double finalize(EntailmentForest& forest, const std::string& id, std::size_t guard)
{
    if (guard > forest.nodes.size())
        throw StructuralError("cycle detected at node " + id);
    auto& n = forest.node(id);
    const bool internal = n.status == NodeStatus::Internal;
    if (internal != (n.children.size() == 2) || (!internal && !n.children.empty()))
        throw StructuralError("node " + id + " has " + std::to_string(n.children.size()) +
                              " children but status " + std::string(to_string(n.status)));
    if (!internal) {
        n.scores.proof.reset();
        n.scores.final = n.scores.direct;
        return n.scores.final;
    }
    // copy ids: recursion may rehash nothing (std::map), but keep it explicit
    const auto left = n.children[0];
    const auto right = n.children[1];
    double l = finalize(forest, left, guard + 1);
    double r = finalize(forest, right, guard + 1);
    auto& again = forest.node(id);
    again.scores.proof = proof_score(l, r);
    again.scores.final = std::max(again.scores.direct, *again.scores.proof);
    return again.scores.final;
}

} // namespace

std::string_view to_string(NodeStatus s)
{
    switch (s) {
    case NodeStatus::LeafMaxDepth:
        return "Leaf_MaxDepth";
    case NodeStatus::LeafPruned:
        return "Leaf_Pruned";
    case NodeStatus::Internal:
        return "Internal";
    }
    return "Leaf_MaxDepth";
}

std::string_view to_string(ExpansionMode m)
{
    return m == ExpansionMode::Dynamic ? "dynamic" : "static";
}

std::string_view to_string(GroundingMode m)
{
    switch (m) {
    case GroundingMode::Grounded:
        return "grounded";
    case GroundingMode::FullVideo:
        return "full";
    case GroundingMode::GroundTruthIntervals:
        return "gt";
    }
    return "grounded";
}

std::optional<GroundingMode> grounding_mode_from_string(std::string_view s)
{
    auto n = text::to_lower(s);
    if (n == "grounded")
        return GroundingMode::Grounded;
    if (n == "full" || n == "fullvideo" || n == "full_video" || n == "full-video")
        return GroundingMode::FullVideo;
    if (n == "gt" || n == "groundtruthintervals" || n == "ground_truth_intervals")
        return GroundingMode::GroundTruthIntervals;
    return std::nullopt;
}

EntailmentNode& EntailmentForest::node(const std::string& id)
{
    auto it = nodes.find(id);
    if (it == nodes.end())
        throw StructuralError("missing node " + id);
    return it->second;
}

const EntailmentNode& EntailmentForest::node(const std::string& id) const
{
    auto it = nodes.find(id);
    if (it == nodes.end())
        throw StructuralError("missing node " + id);
    return it->second;
}

std::vector<Statement> generate_root_statements(const QATask& task, ProviderSession& decomposer,
                                                int malformed_retries)
{
    if (text::trim(task.question).empty() || task.options.empty())
        throw PreconditionError("task " + task.id + " needs a question and at least one option");
    std::vector<Statement> out;
    out.reserve(task.options.size());
    for (const auto& opt : task.options) {
        PromptArgs args{{"question", task.question}, {"answer", opt.text}};
        std::string statement;
        for (int attempt = 0; attempt <= malformed_retries && statement.empty(); ++attempt) {
            CallOptions co;
            co.attempt = attempt;
            auto completion = decomposer.complete("declarative", args, {}, co);
            for (const auto& line : text::split_lines(completion)) {
                statement = clean_statement(line);
                if (!statement.empty())
                    break;
            }
            if (statement.empty())
                decomposer.transcript().flag_last("malformed_statement");
        }
        if (statement.empty())
            throw MalformedCompletion("no declarative statement for option " + std::to_string(opt.index) +
                                      " of task " + task.id);
        Statement s;
        s.text = std::move(statement);
        s.depth = 1;
        s.origin.option_index = opt.index;
        out.push_back(std::move(s));
    }
    return out;
}

std::optional<std::pair<std::string, std::string>> parse_decomposition(std::string_view completion,
                                                                      std::string_view parent)
{
    std::vector<std::string> picked;

    auto trimmed = text::trim(completion);
    if (!trimmed.empty() && trimmed.front() == '[') {
        try {
            auto j = json::parse(trimmed);
            for (const auto& e : j)
                if (e.is_string())
                    picked.push_back(clean_statement(e.get<std::string>()));
        } catch (const json::exception&) {
            picked.clear();
        }
    }

    if (picked.empty()) {
        std::vector<std::string> enumerated;
        std::vector<std::string> plain;
        for (const auto& line : text::split_lines(completion)) {
            if (text::trim(line).empty())
                continue;
            auto c = clean_statement(line);
            if (c.empty())
                continue;
            plain.push_back(c);
            if (has_enumerator(line) || text::starts_with_ci(text::trim(line), "sub-statement"))
                enumerated.push_back(c);
        }
        picked = enumerated.size() == 2 ? enumerated : plain;
    }

    if (picked.size() != 2)
        return std::nullopt;
    auto a = text::normalize(picked[0]);
    auto b = text::normalize(picked[1]);
    auto p = text::normalize(parent);
    if (a.empty() || b.empty() || a == b || a == p || b == p)
        return std::nullopt;
    return std::make_pair(picked[0], picked[1]);
}

std::pair<Statement, Statement> decompose(const Statement& statement, ProviderSession& decomposer,
                                          std::size_t max_depth, int malformed_retries)
{
    if (statement.depth >= max_depth)
        throw PreconditionError("cannot decompose a statement at max depth " + std::to_string(max_depth));
    PromptArgs args{{"statement", statement.text}};
    for (int attempt = 0; attempt <= malformed_retries; ++attempt) {
        CallOptions co;
        co.attempt = attempt;
        auto completion = decomposer.complete("decompose", args, {}, co);
        if (auto parsed = parse_decomposition(completion, statement.text)) {
            Statement a;
            a.text = std::move(parsed->first);
            a.depth = statement.depth + 1;
            Statement b;
            b.text = std::move(parsed->second);
            b.depth = statement.depth + 1;
            return {std::move(a), std::move(b)};
        }
        decomposer.transcript().flag_last("malformed_decomposition");
    }
    throw MalformedCompletion("could not parse two sub-statements for: " + statement.text);
}

ExpansionOutcome expand_node(EntailmentForest& forest, const std::string& node_id, ExpansionContext& ctx)
{
    ExpansionOutcome out;
    Statement parent = forest.node(node_id).statement;
    const double direct = forest.node(node_id).scores.direct;

    auto make_leaf = [&](NodeStatus status, std::optional<PrunedRecord> record) {
        auto& n = forest.node(node_id);
        n.status = status;
        n.children.clear();
        n.pruned = std::move(record);
        n.scores.proof.reset();
        n.scores.final = n.scores.direct;
        out.status = status;
    };

    if (parent.depth >= ctx.config.max_depth) {
        make_leaf(NodeStatus::LeafMaxDepth, std::nullopt);
        return out;
    }

    std::pair<Statement, Statement> kids;
    double s1 = 0.0;
    double s2 = 0.0;
    try {
        ++out.decompositions;
        kids = decompose(parent, ctx.session, ctx.config.max_depth, ctx.config.malformed_retries);
        s1 = prove(kids.first.text, ctx.moment, ctx.frames, ctx.config.prover_kind, ctx.config.prover_frame_count,
                   ctx.session)
                 .score;
        s2 = prove(kids.second.text, ctx.moment, ctx.frames, ctx.config.prover_kind,
                   ctx.config.prover_frame_count, ctx.session)
                 .score;
    } catch (const ProviderError& e) {
        PrunedRecord rec;
        rec.reason = PrunedRecord::Reason::Failed;
        rec.error = e.what();
        if (!kids.first.text.empty())
            rec.children = {{kids.first.text, s1}, {kids.second.text, s2}};
        make_leaf(NodeStatus::LeafPruned, std::move(rec));
        return out;
    }

    const double estimate = proof_score(s1, s2);
    if (ctx.config.mode == ExpansionMode::Dynamic && estimate < direct) {
        PrunedRecord rec;
        rec.reason = PrunedRecord::Reason::Pruned;
        rec.children = {{kids.first.text, s1}, {kids.second.text, s2}};
        rec.proof_estimate = estimate;
        make_leaf(NodeStatus::LeafPruned, std::move(rec));
        ++out.prunes;
        return out;
    }

    const std::array<std::pair<Statement*, double>, 2> made{{{&kids.first, s1}, {&kids.second, s2}}};
    std::vector<std::string> ids;
    for (int slot = 0; slot < 2; ++slot) {
        EntailmentNode child;
        child.id = child_id(node_id, slot);
        child.statement = std::move(*made[slot].first);
        child.statement.origin.parent_id = node_id;
        child.statement.origin.child_slot = slot;
        child.scores.direct = made[slot].second;
        child.scores.final = made[slot].second;
        ids.push_back(child.id);
        forest.nodes.insert_or_assign(child.id, std::move(child));
    }
    {
        auto& n = forest.node(node_id);
        n.children = ids;
        n.status = NodeStatus::Internal;
        n.pruned.reset();
    }
    out.status = NodeStatus::Internal;

    for (const auto& id : ids) {
        auto sub = expand_node(forest, id, ctx);
        out.decompositions += sub.decompositions;
        out.prunes += sub.prunes;
    }

    auto& n = forest.node(node_id);
    n.scores.proof = proof_score(forest.node(ids[0]).scores.final, forest.node(ids[1]).scores.final);
    n.scores.final = std::max(n.scores.direct, *n.scores.proof);
    return out;
}

void backtrace(EntailmentForest& forest)
{
    for (const auto& r : forest.roots)
        finalize(forest, r, 0);
}

std::size_t select_answer(const EntailmentForest& forest)
{
    if (forest.roots.empty())
        throw EmptyForest();
    std::size_t best = 0;
    double best_score = forest.node(forest.roots[0]).scores.final;
    for (std::size_t i = 1; i < forest.roots.size(); ++i) {
        double s = forest.node(forest.roots[i]).scores.final;
        if (s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

GroundedMoment moment_from_interval(const std::vector<FrameRef>& frames, double start_s, double end_s)
{
    if (frames.empty())
        throw GroundingError("no frames for external interval");
    if (end_s < start_s)
        std::swap(start_s, end_s);
    std::size_t start = frames.size() - 1;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        if (frames[i].timestamp_s >= start_s) {
            start = i;
            break;
        }
    }
    std::size_t end = start;
    for (std::size_t i = start; i < frames.size(); ++i)
        if (frames[i].timestamp_s <= end_s)
            end = i;
    GroundedMoment m;
    m.anchor_index = start;
    m.directive = NavigationDirective::LookBehind;
    m.start_index = start;
    m.end_index = end;
    m.video_len = frames.size();
    m.source = MomentSource::External;
    return m;
}

TaskResult evaluate_task(const QATask& task, const VideoContext& video, const ProviderHub& hub,
                         const EngineConfig& config)
{
    TaskResult result;
    auto& forest = result.forest;
    forest.task_id = task.id;
    forest.ground_truth_index = task.ground_truth_index;
    ProviderSession session(hub, result.transcript);

    auto fail = [&](const std::exception& e) {
        forest.failed = true;
        forest.error = e.what();
    };

    try {
        if (video.frames.empty())
            throw GroundingError("video '" + task.video_ref + "' resolved to no frames");

        switch (config.grounding) {
        case GroundingMode::Grounded: {
            GroundingOptions gopts;
            gopts.look_around_window = config.look_around_window;
            result.grounding = ground_question(task, video.frames, session, gopts, config.caption_store);
            result.moment = result.grounding->moment;
            break;
        }
        case GroundingMode::FullVideo:
            result.moment = full_video_moment(video.frames.size());
            break;
        case GroundingMode::GroundTruthIntervals:
            if (!video.external_interval_s)
                throw GroundingError("no ground-truth interval for task " + task.id);
            result.moment =
                moment_from_interval(video.frames, video.external_interval_s->first, video.external_interval_s->second);
            break;
        }

        auto statements = generate_root_statements(task, session, config.tree.malformed_retries);
        for (auto& st : statements) {
            EntailmentNode root;
            root.id = "n" + std::to_string(*st.origin.option_index);
            root.statement = std::move(st);
            root.scores.direct = prove(root.statement.text, *result.moment, video.frames, config.tree.prover_kind,
                                       config.tree.prover_frame_count, session)
                                     .score;
            root.scores.final = root.scores.direct;
            forest.roots.push_back(root.id);
            forest.nodes.insert_or_assign(root.id, std::move(root));
        }

        ExpansionContext ctx{*result.moment, video.frames, session, config.tree};
        for (const auto& r : forest.roots)
            forest.decompositions_per_root.push_back(expand_node(forest, r, ctx).decompositions);

        backtrace(forest);
        forest.selected_index = select_answer(forest);
    } catch (const ProviderError& e) {
        fail(e);
    } catch (const GroundingError& e) {
        fail(e);
    }
    forest.call_counts = result.transcript.counts_by_role();
    return result;
}

std::vector<PruneEvent> prune_events(const EntailmentForest& forest)
{
    std::vector<PruneEvent> out;
    for (const auto& [id, n] : forest.nodes)
        if (n.pruned && n.pruned->reason == PrunedRecord::Reason::Pruned && n.pruned->proof_estimate)
            out.push_back({id, n.scores.direct, *n.pruned->proof_estimate});
    return out;
}

json forest_to_json(const EntailmentForest& forest)
{
    json doc;
    doc["task_id"] = forest.task_id;
    doc["roots"] = forest.roots;
    json nodes = json::object();
    for (const auto& [id, n] : forest.nodes) {
        json jn;
        jn["text"] = n.statement.text;
        jn["depth"] = n.statement.depth;
        jn["direct"] = n.scores.direct;
        jn["proof"] = n.scores.proof ? json(*n.scores.proof) : json(nullptr);
        jn["final"] = n.scores.final;
        jn["status"] = std::string(to_string(n.status));
        jn["children"] = n.children;
        if (n.pruned) {
            json pr;
            pr["reason"] = n.pruned->reason == PrunedRecord::Reason::Pruned ? "pruned" : "failed";
            json kids = json::array();
            for (const auto& [t, s] : n.pruned->children)
                kids.push_back({{"text", t}, {"direct", s}});
            pr["children"] = std::move(kids);
            pr["proof_estimate"] = n.pruned->proof_estimate ? json(*n.pruned->proof_estimate) : json(nullptr);
            if (!n.pruned->error.empty())
                pr["error"] = n.pruned->error;
            jn["pruned_record"] = std::move(pr);
        } else {
            jn["pruned_record"] = nullptr;
        }
        nodes[id] = std::move(jn);
    }
    doc["nodes"] = std::move(nodes);
    doc["selected_index"] = forest.failed ? json(nullptr) : json(forest.selected_index);
    json counts = json::object();
    for (const auto& [k, v] : forest.call_counts)
        counts[k] = v;
    doc["call_counts"] = std::move(counts);
    doc["decompositions_per_root"] = forest.decompositions_per_root;
    doc["ground_truth"] = forest.ground_truth_index ? json(*forest.ground_truth_index) : json(nullptr);
    doc["failed"] = forest.failed;
    if (forest.failed)
        doc["error"] = forest.error;
    return doc;
}

EntailmentForest forest_from_json(const json& doc)
{
    EntailmentForest f;
    try {
        f.task_id = doc.at("task_id").get<std::string>();
        f.roots = doc.at("roots").get<std::vector<std::string>>();
        for (const auto& [id, jn] : doc.at("nodes").items()) {
            EntailmentNode n;
            n.id = id;
            n.statement.text = jn.at("text").get<std::string>();
            n.statement.depth = jn.at("depth").get<std::size_t>();
            n.scores.direct = jn.at("direct").get<double>();
            if (!jn.at("proof").is_null())
                n.scores.proof = jn["proof"].get<double>();
            n.scores.final = jn.at("final").get<double>();
            n.status = status_from_string(jn.at("status").get<std::string>());
            n.children = jn.at("children").get<std::vector<std::string>>();
            if (auto pr = jn.find("pruned_record"); pr != jn.end() && !pr->is_null()) {
                PrunedRecord rec;
                rec.reason = pr->at("reason") == "pruned" ? PrunedRecord::Reason::Pruned : PrunedRecord::Reason::Failed;
                for (const auto& k : pr->at("children"))
                    rec.children.emplace_back(k.at("text").get<std::string>(), k.at("direct").get<double>());
                if (!pr->at("proof_estimate").is_null())
                    rec.proof_estimate = (*pr)["proof_estimate"].get<double>();
                rec.error = pr->value("error", std::string());
                n.pruned = std::move(rec);
            }
            auto dot = id.rfind('.');
            if (dot != std::string::npos) {
                n.statement.origin.parent_id = id.substr(0, dot);
                n.statement.origin.child_slot = std::stoi(id.substr(dot + 1));
            }
            f.nodes.insert_or_assign(id, std::move(n));
        }
        for (std::size_t i = 0; i < f.roots.size(); ++i)
            f.node(f.roots[i]).statement.origin.option_index = i;
        if (!doc.at("selected_index").is_null())
            f.selected_index = doc["selected_index"].get<std::size_t>();
        for (const auto& [k, v] : doc.at("call_counts").items())
            f.call_counts[k] = v.get<std::size_t>();
        if (doc.contains("decompositions_per_root"))
            f.decompositions_per_root = doc["decompositions_per_root"].get<std::vector<std::size_t>>();
        if (doc.contains("ground_truth") && !doc["ground_truth"].is_null())
            f.ground_truth_index = doc["ground_truth"].get<std::size_t>();
        f.failed = doc.value("failed", false);
        f.error = doc.value("error", std::string());
    } catch (const json::exception& e) {
        throw StructuralError(std::string("malformed forest trace: ") + e.what());
    }
    return f;
}

} // namespace vgtree
