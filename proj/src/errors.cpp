#include "vgtree/errors.hpp"

#include "vgtree/text.hpp"

namespace vgtree {

SchemaError::SchemaError(std::vector<std::string> problems)
    : Error("schema validation failed:\n  " + text::join(problems, "\n  ")),
      problems_(std::move(problems))
{
}

FailedRewrite::FailedRewrite(std::string task_id, std::vector<std::vector<std::string>> history)
    : Error("rewrite failed for task " + task_id + " after " + std::to_string(history.size()) +
            " attempt(s)"),
      history_(std::move(history))
{
}

} // namespace vgtree
