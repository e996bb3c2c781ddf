#include "vgtree/debias.hpp"

#include "vgtree/errors.hpp"
#include "vgtree/synthetic_world.hpp"
#include "vgtree/text.hpp"

#include <cctype>
#include <regex>
#include <set>

namespace vgtree {

using json = nlohmann::ordered_json;

std::string_view to_string(RewriteViolation v)
{
    switch (v) {
    case RewriteViolation::QuestionChanged:
        return "QuestionChanged";
    case RewriteViolation::GroundTruthAltered:
        return "GroundTruthAltered";
    case RewriteViolation::DistractorsUnchanged:
        return "DistractorsUnchanged";
    case RewriteViolation::DuplicateOrEmptyOption:
        return "DuplicateOrEmptyOption";
    case RewriteViolation::OptionCountChanged:
        return "OptionCountChanged";
    }
    return "QuestionChanged";
}

std::vector<RewriteViolation> validate_rewrite(const QATask& original, const QATask& candidate)
{
    std::vector<RewriteViolation> out;
    if (candidate.question != original.question)
        out.push_back(RewriteViolation::QuestionChanged);

    if (original.ground_truth_index) {
        auto gt = *original.ground_truth_index;
        if (candidate.ground_truth_index != original.ground_truth_index || gt >= candidate.options.size() ||
            gt >= original.options.size() || candidate.options[gt].text != original.options[gt].text)
            out.push_back(RewriteViolation::GroundTruthAltered);
    }

    auto shared = std::min(original.options.size(), candidate.options.size());
    for (std::size_t i = 0; i < shared; ++i) {
        if (original.ground_truth_index == i)
            continue;
        if (text::normalize(candidate.options[i].text) == text::normalize(original.options[i].text)) {
            out.push_back(RewriteViolation::DistractorsUnchanged);
            break;
        }
    }

    std::set<std::string> seen;
    for (const auto& o : candidate.options) {
        auto n = text::normalize(o.text);
        if (n.empty() || !seen.insert(n).second) {
            out.push_back(RewriteViolation::DuplicateOrEmptyOption);
            break;
        }
    }

    if (candidate.options.size() != original.options.size())
        out.push_back(RewriteViolation::OptionCountChanged);
    return out;
}

namespace {

std::vector<std::string> option_texts(const QATask& t)
{
    std::vector<std::string> out;
    for (const auto& o : t.options)
        out.push_back(o.text);
    return out;
}

// N-1 lines are the new distractors in order; N lines must contain the
// ground truth, which is dropped.
std::optional<std::vector<std::string>> parse_distractors(std::string_view completion, const QATask& task)
{
    std::vector<std::string> lines;
    for (const auto& l : text::split_lines(completion)) {
        auto s = text::strip_enumerator(l);
        if (!s.empty())
            lines.push_back(s);
    }
    const auto& gt = task.option_text(*task.ground_truth_index);
    if (lines.size() + 1 == task.arity())
        return lines;
    if (lines.size() == task.arity()) {
        std::vector<std::string> out;
        for (const auto& l : lines)
            if (text::normalize(l) != text::normalize(gt))
                out.push_back(l);
        if (out.size() + 1 == task.arity())
            return out;
    }
    return std::nullopt;
}

} // namespace

RewriteResult rewrite_answers(const QATask& task, ProviderSession& rewriter, const RewriteOptions& opts)
{
    if (!task.ground_truth_index || *task.ground_truth_index >= task.arity())
        throw PreconditionError("task " + task.id + " has no ground truth to protect");
    if (opts.max_attempts < 1)
        throw PreconditionError("max_attempts must be at least 1");

    const auto gt = *task.ground_truth_index;
    PromptArgs args{
        {"dataset", opts.dataset_name},
        {"distractor_count", std::to_string(task.arity() - 1)},
        {"question", task.question},
        {"answer", task.option_text(gt)},
        {"options", render_option_lines(option_texts(task))},
    };

    RewriteResult result;
    result.original = task;
    for (int attempt = 0; attempt < opts.max_attempts; ++attempt) {
        result.attempts = attempt + 1;
        CallOptions co;
        co.attempt = attempt;
        auto completion = rewriter.complete("rewrite", args, {}, co);
        auto distractors = parse_distractors(completion, task);
        if (!distractors) {
            rewriter.transcript().flag_last("malformed_rewrite");
            result.violations_history.push_back({"MalformedCompletion"});
            continue;
        }
        QATask candidate = task;
        for (std::size_t i = 0, d = 0; i < candidate.arity(); ++i)
            if (i != gt)
                candidate.options[i].text = (*distractors)[d++];
        auto violations = validate_rewrite(task, candidate);
        if (violations.empty()) {
            result.rewritten = std::move(candidate);
            return result;
        }
        std::vector<std::string> names;
        for (auto v : violations)
            names.emplace_back(to_string(v));
        rewriter.transcript().flag_last("rewrite_rejected");
        result.violations_history.push_back(std::move(names));
    }
    throw FailedRewrite(task.id, result.violations_history);
}

std::optional<std::size_t> parse_choice(std::string_view completion, const QATask& task)
{
    static const std::regex kLetter(R"(^\W*(?:option|answer)?\W*([A-Za-z])(?:\W|$))", std::regex::icase);
    static const std::regex kNumber(R"(^\W*(?:option|answer)?\W*(\d+)(?:\W|$))", std::regex::icase);
    auto s = text::trim(completion);
    if (s.empty())
        return std::nullopt;

    auto norm = text::normalize(s);
    for (std::size_t i = 0; i < task.arity(); ++i)
        if (norm == text::normalize(task.option_text(i)))
            return i;

    std::smatch m;
    if (std::regex_search(s, m, kLetter)) {
        auto c = static_cast<char>(std::toupper(static_cast<unsigned char>(m[1].str()[0])));
        std::size_t idx = static_cast<std::size_t>(c - 'A');
        // a lone word like "I" or "a" is only a choice when it is in range
        if (idx < task.arity())
            return idx;
    }
    if (std::regex_search(s, m, kNumber)) {
        auto n = std::stoul(m[1].str());
        if (n >= 1 && n <= task.arity())
            return n - 1;
    }
    return std::nullopt;
}

ProbeOutcome blind_probe(const QATask& task, ProviderSession& llm)
{
    ProbeOutcome out;
    out.task_id = task.id;
    PromptArgs args{{"question", task.question}, {"options", render_option_lines(option_texts(task))}};
    std::string completion;
    try {
        completion = llm.complete("blind_probe", args, {});
    } catch (const MalformedResponse&) {
    } catch (const MalformedCompletion&) {
    }
    out.predicted = parse_choice(completion, task);
    if (!out.predicted) {
        out.abstained = true;
        if (llm.transcript().size() > 0)
            llm.transcript().flag_last("probe_abstained");
    }
    return out;
}

BiasReport bias_report(const Dataset& dataset, const std::vector<ProbeOutcome>& probes)
{
    BiasReport r;
    r.dataset = dataset.name;
    r.variant = dataset.variant;
    for (const auto& p : probes) {
        const auto* task = dataset.find(p.task_id);
        if (!task || !task->ground_truth_index)
            continue;
        bool ok = !p.abstained && p.predicted == task->ground_truth_index;
        auto& bucket = r.per_type[std::string(to_string(task->question_type))];
        ++r.n;
        ++bucket.n;
        r.correct += ok;
        bucket.correct += ok;
        r.abstained += p.abstained;
        bucket.abstained += p.abstained;
    }
    if (r.n == 0)
        throw PreconditionError("bias report needs at least one probed task with ground truth");
    r.blind_accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
    for (auto& [_, b] : r.per_type)
        b.accuracy = static_cast<double>(b.correct) / static_cast<double>(b.n);
    return r;
}

json bias_report_to_json(const BiasReport& r)
{
    json doc;
    doc["dataset"] = r.dataset;
    doc["variant"] = std::string(to_string(r.variant));
    doc["n"] = r.n;
    doc["correct"] = r.correct;
    doc["abstained"] = r.abstained;
    doc["blind_accuracy"] = r.blind_accuracy;
    json types = json::object();
    for (const auto& [k, b] : r.per_type)
        types[k] = {{"n", b.n}, {"correct", b.correct}, {"abstained", b.abstained}, {"accuracy", b.accuracy}};
    doc["per_type"] = std::move(types);
    return doc;
}

std::vector<ProbeOutcome> probe_dataset(const Dataset& dataset, const ProviderHub& hub, std::size_t* calls)
{
    std::vector<ProbeOutcome> out;
    out.reserve(dataset.tasks.size());
    for (const auto& t : dataset.tasks) {
        Transcript tr;
        ProviderSession session(hub, tr);
        out.push_back(blind_probe(t, session));
        if (calls)
            *calls += tr.size();
    }
    return out;
}

DebiasOutcome rewrite_dataset(const Dataset& dataset, const ProviderHub& hub, const RewriteOptions& opts)
{
    DebiasOutcome out;
    out.dataset.name = dataset.name;
    out.dataset.variant = DatasetVariant::Rewritten;
    const auto& tmpl = hub.templates().get("rewrite");
    const auto rewriter_id = hub.backend(ProviderRole::Rewriter).model_id();

    for (const auto& task : dataset.tasks) {
        if (!task.ground_truth_index) {
            out.dataset.tasks.push_back(task);
            continue;
        }
        Transcript tr;
        ProviderSession session(hub, tr);
        try {
            auto res = rewrite_answers(task, session, opts);
            auto rewritten = res.rewritten;
            rewritten.extras["variant"] = std::string(to_string(DatasetVariant::Rewritten));
            rewritten.extras["provenance"] = {
                {"rewriter", rewriter_id}, {"prompt_version", tmpl.version}, {"attempts", res.attempts}};
            rewritten.extras.erase("rewrite_failed");
            out.dataset.tasks.push_back(std::move(rewritten));
            out.accepted.push_back(std::move(res));
        } catch (const FailedRewrite&) {
            auto kept = task;
            kept.extras["rewrite_failed"] = true;
            out.dataset.tasks.push_back(std::move(kept));
            out.failed_ids.push_back(task.id);
        } catch (const ProviderError& e) {
            // the rewriter itself is unreachable: keep the task, mark it
            auto kept = task;
            kept.extras["rewrite_failed"] = true;
            kept.extras["rewrite_error"] = e.what();
            out.dataset.tasks.push_back(std::move(kept));
            out.failed_ids.push_back(task.id);
        }
        out.calls += tr.size();
    }
    return out;
}

std::map<std::string, std::vector<RewriteViolation>> audit_rewrites(const Dataset& original, const Dataset& rewritten)
{
    std::map<std::string, std::vector<RewriteViolation>> out;
    for (const auto& t : rewritten.tasks) {
        auto v = t.extras.find("variant");
        if (v == t.extras.end() || *v != "Rewritten" || !t.extras.contains("provenance"))
            continue;
        const auto* orig = original.find(t.id);
        if (!orig) {
            out[t.id] = {RewriteViolation::QuestionChanged};
            continue;
        }
        auto violations = validate_rewrite(*orig, t);
        if (!violations.empty())
            out[t.id] = std::move(violations);
    }
    return out;
}

} // namespace vgtree
