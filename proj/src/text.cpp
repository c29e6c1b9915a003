#include "sage/text.hpp"

#include <cctype>
#include <cstdio>
#include <map>

namespace sage::text {

namespace {
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }
}  // namespace

std::string canonicalize(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(lower(c));
    }
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (is_alnum(c)) {
            cur.push_back(lower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::set<std::string> token_set(std::string_view s) {
    auto toks = tokenize(s);
    return {toks.begin(), toks.end()};
}

std::string boundary_form(std::string_view s) {
    std::string out = " ";
    for (const auto& t : tokenize(s)) {
        out += t;
        out.push_back(' ');
    }
    return out;
}

bool contains_at_boundary(std::string_view haystack, std::string_view needle) {
    std::string n = boundary_form(needle);
    if (n.size() <= 1) return false;
    return boundary_form(haystack).find(n) != std::string::npos;
}

std::vector<std::string> split_sentences(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        cur.push_back(c);
        bool end = (c == '.' || c == '!' || c == '?') && (i + 1 == s.size() || is_space(s[i + 1]));
        if (end) {
            auto t = trim(cur);
            if (!t.empty()) out.push_back(t);
            cur.clear();
        }
    }
    auto t = trim(cur);
    if (!t.empty()) out.push_back(t);
    return out;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string content_hash(std::string_view s) { return hex64(fnv1a64(s)); }

std::string normalize_answer(std::string_view s) {
    std::string no_punct;
    for (char c : s) {
        if (std::ispunct(static_cast<unsigned char>(c))) continue;
        no_punct.push_back(lower(c));
    }
    std::string out;
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        if (word != "a" && word != "an" && word != "the") {
            if (!out.empty()) out.push_back(' ');
            out += word;
        }
        word.clear();
    };
    for (char c : no_punct) {
        if (is_space(c)) flush();
        else word.push_back(c);
    }
    flush();
    return out;
}

namespace {
std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}
}  // namespace

double token_f1(std::string_view prediction, std::string_view gold) {
    auto p = split_ws(normalize_answer(prediction));
    auto g = split_ws(normalize_answer(gold));
    if (p.empty() || g.empty()) return (p.empty() && g.empty()) ? 1.0 : 0.0;
    std::map<std::string, int> counts;
    for (auto& t : g) ++counts[t];
    int common = 0;
    for (auto& t : p) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            ++common;
            --it->second;
        }
    }
    if (common == 0) return 0.0;
    double precision = static_cast<double>(common) / static_cast<double>(p.size());
    double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

bool exact_match(std::string_view prediction, std::string_view gold) {
    return normalize_answer(prediction) == normalize_answer(gold);
}

bool is_capitalized_word(std::string_view w) {
    return !w.empty() && std::isupper(static_cast<unsigned char>(w[0])) != 0;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

}  // namespace sage::text
