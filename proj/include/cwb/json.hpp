#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "cwb/error.hpp"

namespace cwb {

using json = nlohmann::json;

// Parses a JSON document, converting library exceptions into ParseError.
json parse_json(std::string_view text);

// Reads and parses a JSON file; missing/unreadable files raise Io errors.
json read_json_file(const std::string& path);

// Writes `text` to `path` (truncating). Raises Io errors.
void write_text_file(const std::string& path, std::string_view text);
std::string read_text_file(const std::string& path);

namespace detail {

inline const json& require(const json& obj, const char* key, std::string_view context) {
  if (!obj.is_object() || !obj.contains(key)) {
    fail(ErrorKind::Validation, errc::schema_error,
         std::string(context) + ": missing field \"" + key + "\"");
  }
  return obj.at(key);
}

}  // namespace detail
}  // namespace cwb
