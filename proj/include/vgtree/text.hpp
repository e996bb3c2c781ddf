#pragma once

#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared by the parsers and validators.
namespace vgtree::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);

/// Lowercase, strip punctuation, collapse whitespace runs to one space.
std::string normalize(std::string_view s);

std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split_words(std::string_view s);

bool starts_with_ci(std::string_view s, std::string_view prefix);

/// Replace every occurrence of `from` with `to`.
std::string replace_all(std::string s, std::string_view from, std::string_view to);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Remove list decorations such as "1.", "2)", "-", "*", "(A)" from the
/// front of a line.
std::string strip_enumerator(std::string_view line);

} // namespace vgtree::text
