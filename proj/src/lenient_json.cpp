#include "sage/lenient_json.hpp"

#include <vector>

namespace sage {

namespace {

std::string strip_fences(std::string_view raw) {
    std::string s(raw);
    auto open = s.find("```");
    if (open == std::string::npos) return s;
    auto line_end = s.find('\n', open);
    if (line_end == std::string::npos) return s;
    auto close = s.find("```", line_end);
    if (close == std::string::npos) return s.substr(line_end + 1);
    return s.substr(line_end + 1, close - line_end - 1);
}

}  // namespace

std::string repair_json_text(std::string_view raw) {
    std::string s = strip_fences(raw);
    auto start = s.find_first_of("[{");
    if (start == std::string::npos) return {};

    std::string out;
    std::vector<char> stack;
    bool in_string = false;
    bool escape = false;
    for (std::size_t i = start; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            out.push_back(c);
            if (escape) escape = false;
            else if (c == '\\') escape = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') {
            in_string = true;
            out.push_back(c);
        } else if (c == '{' || c == '[') {
            stack.push_back(c == '{' ? '}' : ']');
            out.push_back(c);
        } else if (c == '}' || c == ']') {
            if (stack.empty() || stack.back() != c) continue;  // stray closer
            // drop a trailing comma before the closer
            auto last = out.find_last_not_of(" \t\r\n");
            if (last != std::string::npos && out[last] == ',') out.erase(last, 1);
            stack.pop_back();
            out.push_back(c);
            if (stack.empty()) break;  // first complete value wins
        } else {
            out.push_back(c);
        }
    }
    if (in_string) out.push_back('"');
    while (!stack.empty()) {
        auto last = out.find_last_not_of(" \t\r\n");
        if (last != std::string::npos && (out[last] == ',' || out[last] == ':')) {
            if (out[last] == ':') out += " null";
            else out.erase(last, 1);
        }
        out.push_back(stack.back());
        stack.pop_back();
    }
    return out;
}

std::optional<nlohmann::json> parse_lenient(std::string_view raw) {
    std::string fixed = repair_json_text(raw);
    if (fixed.empty()) return std::nullopt;
    auto j = nlohmann::json::parse(fixed, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
}

}  // namespace sage
