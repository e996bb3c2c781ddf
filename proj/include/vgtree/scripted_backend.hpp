#pragma once

#include "vgtree/providers.hpp"

#include <map>
#include <mutex>
#include <set>
#include <string>
#include <utility>

namespace vgtree {

/// Backend answering from fixed tables. Used to replay worked examples and
/// to drive the engine through exact score patterns in tests.
class ScriptedBackend : public ModelBackend {
public:
    /// Prover score for a statement; sent as a {True: s, False: 1-s} distribution.
    void set_score(const std::string& statement, double s);
    void set_default_score(double s) { default_score_ = s; }
    void set_decomposition(const std::string& statement, std::string left, std::string right);
    /// Declarative statement for an answer option text.
    void set_declarative(const std::string& answer, std::string statement);
    /// Fixed completion for every request of a template.
    void set_text(const std::string& template_name, std::string completion);
    /// Requests for this template throw TransportError.
    void fail_template(const std::string& template_name);
    /// Requests whose statement argument equals this throw TransportError.
    void fail_statement(const std::string& statement);

    ModelResponse generate(const ModelRequest& request) override;
    std::string model_id() const override { return "scripted"; }

    std::size_t calls(const std::string& template_name) const;

private:
    mutable std::mutex mu_;
    std::map<std::string, double> scores_;
    double default_score_ = 0.5;
    std::map<std::string, std::pair<std::string, std::string>> decompositions_;
    std::map<std::string, std::string> declaratives_;
    std::map<std::string, std::string> texts_;
    std::set<std::string> failing_templates_;
    std::set<std::string> failing_statements_;
    std::map<std::string, std::size_t> calls_;
};

} // namespace vgtree
