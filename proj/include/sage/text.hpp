#pragma once
// String normalisation, tokenisation and hashing shared across modules.

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace sage::text {

// Lowercase, trim, collapse internal whitespace runs to one space.
std::string canonicalize(std::string_view s);

// Lowercased maximal runs of ASCII alphanumerics.
std::vector<std::string> tokenize(std::string_view s);
std::set<std::string> token_set(std::string_view s);

// Normalised text with every non-alphanumeric run replaced by one space, padded
// with a leading and trailing space so that " " + needle + " " tests a
// token-boundary match.
std::string boundary_form(std::string_view s);
bool contains_at_boundary(std::string_view haystack, std::string_view needle);

std::vector<std::string> split_sentences(std::string_view s);

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::string content_hash(std::string_view s);

// SQuAD-style answer normalisation: lowercase, drop punctuation and articles,
// collapse whitespace.
std::string normalize_answer(std::string_view s);
double token_f1(std::string_view prediction, std::string_view gold);
bool exact_match(std::string_view prediction, std::string_view gold);

bool is_capitalized_word(std::string_view w);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string trim(std::string_view s);

}  // namespace sage::text
