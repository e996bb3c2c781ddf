#include "vgtree/scripted_backend.hpp"

#include "vgtree/errors.hpp"

namespace vgtree {

void ScriptedBackend::set_score(const std::string& statement, double s)
{
    std::lock_guard lock(mu_);
    scores_[statement] = s;
}

void ScriptedBackend::set_decomposition(const std::string& statement, std::string left, std::string right)
{
    std::lock_guard lock(mu_);
    decompositions_[statement] = {std::move(left), std::move(right)};
}

void ScriptedBackend::set_declarative(const std::string& answer, std::string statement)
{
    std::lock_guard lock(mu_);
    declaratives_[answer] = std::move(statement);
}

void ScriptedBackend::set_text(const std::string& template_name, std::string completion)
{
    std::lock_guard lock(mu_);
    texts_[template_name] = std::move(completion);
}

void ScriptedBackend::fail_template(const std::string& template_name)
{
    std::lock_guard lock(mu_);
    failing_templates_.insert(template_name);
}

void ScriptedBackend::fail_statement(const std::string& statement)
{
    std::lock_guard lock(mu_);
    failing_statements_.insert(statement);
}

std::size_t ScriptedBackend::calls(const std::string& template_name) const
{
    std::lock_guard lock(mu_);
    auto it = calls_.find(template_name);
    return it == calls_.end() ? 0 : it->second;
}

ModelResponse ScriptedBackend::generate(const ModelRequest& r)
{
    std::lock_guard lock(mu_);
    ++calls_[r.template_name];
    auto statement_it = r.args.find("statement");
    std::string statement = statement_it == r.args.end() ? "" : statement_it->second;

    if (failing_templates_.contains(r.template_name) || (!statement.empty() && failing_statements_.contains(statement)))
        throw TransportError("scripted failure for '" + r.template_name + "'");
    if (auto it = texts_.find(r.template_name); it != texts_.end())
        return {it->second, std::nullopt};

    if (r.template_name == "prove") {
        auto it = scores_.find(statement);
        double s = it == scores_.end() ? default_score_ : it->second;
        return {s >= 0.5 ? "True" : "False", TokenDistribution{{"True", s}, {"False", 1.0 - s}}};
    }
    if (r.template_name == "decompose") {
        auto it = decompositions_.find(statement);
        if (it != decompositions_.end())
            return {"1. " + it->second.first + "\n2. " + it->second.second, std::nullopt};
        return {"1. " + statement + " (part 1)\n2. " + statement + " (part 2)", std::nullopt};
    }
    if (r.template_name == "declarative") {
        auto answer = r.args.at("answer");
        auto it = declaratives_.find(answer);
        return {it == declaratives_.end() ? answer : it->second, std::nullopt};
    }
    throw MalformedResponse("no scripted completion for '" + r.template_name + "'");
}

} // namespace vgtree
