#pragma once
// Best-effort JSON repair for model-generated text.
//
// Strips markdown fences, starts at the first '{' or '[', closes unbalanced
// brackets and strings, drops trailing commas, then hands the result to the
// strict parser. Returns nullopt when nothing parseable remains.

#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace sage {

std::optional<nlohmann::json> parse_lenient(std::string_view raw);

// The repaired text that parse_lenient feeds to the strict parser.
std::string repair_json_text(std::string_view raw);

}  // namespace sage
