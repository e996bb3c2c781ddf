#include "vgtree/text.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace vgtree::text {

namespace {
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
} // namespace

std::string trim(std::string_view s)
{
    auto b = s.begin();
    auto e = s.end();
    while (b != e && is_space(*b))
        ++b;
    while (e != b && is_space(*(e - 1)))
        --e;
    return std::string(b, e);
}

std::string to_lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string normalize(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c >= 0x80) {
            if (pending_space && !out.empty())
                out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (std::isspace(c)) {
            pending_space = true;
        }
        // other punctuation is dropped without introducing a break
    }
    return out;
}

std::vector<std::string> split_lines(std::string_view s)
{
    std::vector<std::string> out;
    std::string line;
    std::istringstream in{std::string(s)};
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        out.push_back(line);
    }
    return out;
}

std::vector<std::string> split_words(std::string_view s)
{
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    std::string w;
    while (in >> w)
        out.push_back(w);
    return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix)
{
    if (s.size() < prefix.size())
        return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    }
    return true;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to)
{
    if (from.empty())
        return s;
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep)
{
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i)
            out.append(sep);
        out.append(parts[i]);
    }
    return out;
}

std::string strip_enumerator(std::string_view line)
{
    std::string s = trim(line);
    if (s.empty())
        return s;
    if (s[0] == '-' || s[0] == '*' || s[0] == '+')
        return trim(std::string_view(s).substr(1));
    // "(A)" / "(1)"
    if (s[0] == '(') {
        auto close = s.find(')');
        if (close != std::string::npos && close <= 4)
            return trim(std::string_view(s).substr(close + 1));
    }
    // "1." "12)" "A." "B)"
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])))
        ++i;
    if (i == 0 && s.size() >= 2 && std::isupper(static_cast<unsigned char>(s[0])))
        i = 1;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')' || s[i] == ':')) {
        // "A." only counts when followed by whitespace, so "I." style words survive
        if (i + 1 == s.size() || is_space(s[i + 1]))
            return trim(std::string_view(s).substr(i + 1));
    }
    return s;
}

} // namespace vgtree::text
