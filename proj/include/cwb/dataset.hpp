#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwb/json.hpp"

namespace cwb {

using RowId = std::int64_t;

enum class ColumnKind { Binary, Continuous, Categorical };

std::string_view to_string(ColumnKind kind);
ColumnKind column_kind_from_string(std::string_view text);

// One typed column. Binary and Continuous columns live in `numbers` with NaN
// marking a missing cell. Categorical columns live in `labels` with "" as the
// missing marker. Binary columns decoded from yes/no or true/false keep the
// original strings in `labels` so they can still be one-hot expanded.
struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  std::vector<double> numbers;
  std::vector<std::string> labels;

  std::size_t size() const { return kind == ColumnKind::Categorical ? labels.size() : numbers.size(); }
  std::size_t n_missing() const;
  bool is_numeric() const { return kind != ColumnKind::Categorical; }
  bool string_coded() const { return kind == ColumnKind::Binary && !labels.empty(); }
  // Sorted distinct non-missing levels (categorical or string-coded binary).
  std::vector<std::string> levels() const;

  bool operator==(const Column& other) const;
};

// Immutable column table. Rows carry stable 0-based ids that survive
// filtering, so a subset can always be traced back to the source rows.
class Dataset {
public:
  Dataset() = default;
  // Validates equal column lengths, unique names and strictly increasing ids.
  Dataset(std::vector<Column> columns, std::vector<RowId> row_ids);

  std::size_t n_rows() const { return row_ids_.size(); }
  std::size_t n_columns() const { return columns_.size(); }
  const std::vector<Column>& columns() const { return columns_; }
  const std::vector<RowId>& row_ids() const { return row_ids_; }

  bool has_column(std::string_view name) const;
  const Column& column(std::string_view name) const;
  // Numeric view of a Binary/Continuous column; throws not_numeric otherwise.
  std::span<const double> numeric(std::string_view name) const;

  std::optional<std::size_t> position_of(RowId id) const;

  // Rows whose ids appear in `ids` (any order, duplicates collapse). Unknown
  // ids throw stale_ids.
  Dataset select_ids(std::span<const RowId> ids) const;
  // Rows at the given positions, which must be strictly increasing.
  Dataset select_positions(std::span<const std::size_t> positions) const;

  // Replaces a same-named column in place or appends a new one.
  Dataset with_column(Column column) const;

  bool operator==(const Dataset&) const = default;

private:
  std::vector<Column> columns_;
  std::vector<RowId> row_ids_;
};

struct CsvOptions {
  std::map<std::string, ColumnKind> typing_overrides;
  // 0 sniffs the header for ',', ';' or tab.
  char delimiter = 0;
};

Dataset parse_csv(std::string_view text, const CsvOptions& options = {});
Dataset load_csv(std::istream& in, const CsvOptions& options = {});
Dataset load_csv_file(const std::string& path, const CsvOptions& options = {});

// Replaces a categorical (or string-coded binary) column by k-1 indicator
// columns "<col>=<level>", dropping the lexicographically smallest level.
Dataset one_hot(const Dataset& ds, std::string_view column);

// Maps variable names onto dataset columns: an exact column match wins,
// otherwise a name expands to its one-hot columns "<name>=<level>". Unknown
// names throw missing_covariate. Order follows the input, then column order.
std::vector<std::string> resolve_columns(const Dataset& ds, std::span<const std::string> names);

enum class ThresholdMode { Median, Mean, Value };

ThresholdMode threshold_mode_from_string(std::string_view text);

// Binary column with 1 where x >= threshold. Median/Mean derive the threshold
// from the non-missing data. The result replaces `column` unless `out_name`
// names a different column.
Dataset binarize_at(const Dataset& ds, std::string_view column, ThresholdMode mode, double value = 0.0,
                    std::optional<std::string> out_name = std::nullopt);

// NaN-skipping statistics. Even-length median is the mean of the middle pair.
double median_of(std::span<const double> values);
double mean_of(std::span<const double> values);

struct CompleteCases {
  Dataset data;
  std::size_t n_dropped = 0;
};

// Drops rows with a missing value in any of the listed columns.
CompleteCases complete_cases(const Dataset& ds, std::span<const std::string> columns);

// Applies a preparation recipe, binarizations first:
//   {"binarize": [{"column", "mode": "median"|"mean"|"value", "value"?, "out"?}],
//    "one_hot": ["col", ...] | "all"}
// "all" expands every categorical column.
Dataset apply_prep(const Dataset& ds, const json& prep);

// {"columns":[{"name","kind","n_missing"}], "n_rows"}
json dataset_summary(const Dataset& ds);
// Lossless form used for session persistence.
json dataset_to_json(const Dataset& ds);
Dataset dataset_from_json(const json& doc);

}  // namespace cwb
