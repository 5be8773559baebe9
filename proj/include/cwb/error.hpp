#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cwb {

// Broad failure classes. The service maps them onto HTTP statuses and the
// CLI onto exit codes, so every thrown error must pick one.
enum class ErrorKind {
  Validation,   // malformed input, unknown names, schema problems
  NotFound,     // unknown session or resource
  Conflict,     // graph mutations rejected (cycle, role conflict)
  Statistical,  // statistical preconditions not met
  Io,           // filesystem / stream failures
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string code, const std::string& detail)
      : std::runtime_error(detail), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Stable snake_case identifier, e.g. "cycle" or "missing_designation".
  const std::string& code() const noexcept { return code_; }

private:
  ErrorKind kind_;
  std::string code_;
};

namespace errc {
inline constexpr std::string_view cycle = "cycle";
inline constexpr std::string_view unknown_node = "unknown_node";
inline constexpr std::string_view duplicate_node = "duplicate_node";
inline constexpr std::string_view duplicate_edge = "duplicate_edge";
inline constexpr std::string_view self_edge = "self_edge";
inline constexpr std::string_view invalid_name = "invalid_name";
inline constexpr std::string_view unknown_edge = "unknown_edge";
inline constexpr std::string_view role_conflict = "role_conflict";
inline constexpr std::string_view missing_designation = "missing_designation";
inline constexpr std::string_view parse_error = "parse_error";
inline constexpr std::string_view schema_error = "schema_error";
inline constexpr std::string_view empty_dataset = "empty_dataset";
inline constexpr std::string_view unknown_column = "unknown_column";
inline constexpr std::string_view not_categorical = "not_categorical";
inline constexpr std::string_view not_numeric = "not_numeric";
inline constexpr std::string_view all_missing = "all_missing";
inline constexpr std::string_view degenerate_treatment = "degenerate_treatment";
inline constexpr std::string_view missing_covariate = "missing_covariate";
inline constexpr std::string_view length_mismatch = "length_mismatch";
inline constexpr std::string_view score_out_of_range = "score_out_of_range";
inline constexpr std::string_view empty_input = "empty_input";
inline constexpr std::string_view empty_group = "empty_group";
inline constexpr std::string_view non_positive_weight = "non_positive_weight";
inline constexpr std::string_view both_adjustments_given = "both_adjustments_given";
inline constexpr std::string_view unknown_covariate = "unknown_covariate";
inline constexpr std::string_view no_controls = "no_controls";
inline constexpr std::string_view missing_scores = "missing_scores";
inline constexpr std::string_view singular_covariance = "singular_covariance";
inline constexpr std::string_view stale_ids = "stale_ids";
inline constexpr std::string_view missing_outcome = "missing_outcome";
inline constexpr std::string_view too_many_variables = "too_many_variables";
inline constexpr std::string_view unknown_variable = "unknown_variable";
inline constexpr std::string_view hash_mismatch = "hash_mismatch";
inline constexpr std::string_view io_error = "io_error";
inline constexpr std::string_view not_found = "not_found";
inline constexpr std::string_view bad_request = "bad_request";
inline constexpr std::string_view payload_too_large = "payload_too_large";
}  // namespace errc

[[noreturn]] inline void fail(ErrorKind kind, std::string_view code, const std::string& detail) {
  throw Error(kind, std::string(code), detail);
}

}  // namespace cwb
