#include "cwb/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

namespace cwb {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(ws) - first + 1);
}

bool is_missing_token(std::string_view s) {
  if (s.empty()) return true;
  const std::string l = lower(s);
  return l == "na" || l == "n/a" || l == "nan" || l == "null";
}

std::optional<double> parse_number(std::string_view s) {
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Maps yes/no and true/false (case-insensitive) onto 1/0.
std::optional<double> parse_boolean_word(std::string_view s) {
  const std::string l = lower(s);
  if (l == "yes" || l == "true") return 1.0;
  if (l == "no" || l == "false") return 0.0;
  return std::nullopt;
}

// RFC 4180 record splitter. Handles quoted fields, doubled quotes and
// embedded newlines; unquoted fields are trimmed.
class CsvReader {
public:
  CsvReader(std::string_view text, char delimiter) : text_(text), delim_(delimiter) {
    if (text_.starts_with("\xEF\xBB\xBF")) text_.remove_prefix(3);
  }

  bool next(std::vector<std::string>& fields, std::size_t& line_no) {
    fields.clear();
    // Skip blank lines between records.
    while (pos_ < text_.size() && (text_[pos_] == '\n' || text_[pos_] == '\r')) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
    if (pos_ >= text_.size()) return false;
    line_no = line_ + 1;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (quoted) {
        if (c == '"') {
          if (pos_ + 1 < text_.size() && text_[pos_ + 1] == '"') {
            field.push_back('"');
            pos_ += 2;
            continue;
          }
          quoted = false;
          ++pos_;
          continue;
        }
        if (c == '\n') ++line_;
        field.push_back(c);
        ++pos_;
        continue;
      }
      if (c == '"' && trim(field).empty()) {
        quoted = true;
        was_quoted = true;
        field.clear();
        ++pos_;
        continue;
      }
      if (c == delim_) {
        fields.push_back(was_quoted ? field : std::string(trim(field)));
        field.clear();
        was_quoted = false;
        ++pos_;
        continue;
      }
      if (c == '\n' || c == '\r') {
        if (c == '\r' && pos_ + 1 < text_.size() && text_[pos_ + 1] == '\n') ++pos_;
        ++pos_;
        ++line_;
        break;
      }
      field.push_back(c);
      ++pos_;
    }
    if (quoted) {
      fail(ErrorKind::Validation, errc::parse_error, "unterminated quoted field starting on line " + std::to_string(line_no));
    }
    fields.push_back(was_quoted ? field : std::string(trim(field)));
    return true;
  }

private:
  std::string_view text_;
  char delim_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

char sniff_delimiter(std::string_view text) {
  const auto eol = text.find('\n');
  const std::string_view header = text.substr(0, eol);
  std::size_t commas = 0, semis = 0, tabs = 0;
  bool quoted = false;
  for (char c : header) {
    if (c == '"') quoted = !quoted;
    if (quoted) continue;
    commas += c == ',';
    semis += c == ';';
    tabs += c == '\t';
  }
  if (semis > commas && semis >= tabs) return ';';
  if (tabs > commas && tabs > semis) return '\t';
  return ',';
}

Column build_column(std::string name, std::vector<std::string> raw, std::optional<ColumnKind> forced) {
  Column col;
  col.name = std::move(name);
  const std::size_t n = raw.size();

  bool all_numeric = true;
  bool all_bool_words = true;
  bool numeric_binary = true;
  for (const auto& cell : raw) {
    if (is_missing_token(cell)) continue;
    auto num = parse_number(cell);
    if (!num) {
      all_numeric = false;
    } else if (*num != 0.0 && *num != 1.0) {
      numeric_binary = false;
    }
    if (!parse_boolean_word(cell)) all_bool_words = false;
  }

  auto as_numbers = [&](bool binary) {
    col.numbers.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      col.numbers[i] = is_missing_token(raw[i]) ? kNaN : *parse_number(raw[i]);
    }
    col.kind = binary ? ColumnKind::Binary : ColumnKind::Continuous;
  };
  auto as_bool_words = [&] {
    col.kind = ColumnKind::Binary;
    col.numbers.resize(n);
    col.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (is_missing_token(raw[i])) {
        col.numbers[i] = kNaN;
      } else {
        col.numbers[i] = *parse_boolean_word(raw[i]);
        col.labels[i] = raw[i];
      }
    }
  };
  auto as_labels = [&] {
    col.kind = ColumnKind::Categorical;
    col.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) col.labels[i] = is_missing_token(raw[i]) ? std::string() : raw[i];
  };

  if (!forced) {
    if (all_numeric) {
      as_numbers(numeric_binary);
    } else if (all_bool_words) {
      as_bool_words();
    } else {
      as_labels();
    }
    return col;
  }

  switch (*forced) {
    case ColumnKind::Binary:
      if (all_numeric && numeric_binary) {
        as_numbers(true);
      } else if (all_bool_words) {
        as_bool_words();
      } else {
        fail(ErrorKind::Validation, errc::schema_error, "column " + col.name + " cannot be typed as binary");
      }
      break;
    case ColumnKind::Continuous:
      if (!all_numeric) fail(ErrorKind::Validation, errc::not_numeric, "column " + col.name + " is not numeric");
      as_numbers(false);
      break;
    case ColumnKind::Categorical:
      as_labels();
      break;
  }
  return col;
}

bool same_number(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

std::string_view to_string(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::Binary: return "binary";
    case ColumnKind::Continuous: return "continuous";
    case ColumnKind::Categorical: return "categorical";
  }
  return "continuous";
}

ColumnKind column_kind_from_string(std::string_view text) {
  const std::string l = lower(text);
  if (l == "binary") return ColumnKind::Binary;
  if (l == "continuous") return ColumnKind::Continuous;
  if (l == "categorical") return ColumnKind::Categorical;
  fail(ErrorKind::Validation, errc::bad_request, "unknown column kind: " + std::string(text));
}

std::size_t Column::n_missing() const {
  if (kind == ColumnKind::Categorical) {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::string()));
  }
  return static_cast<std::size_t>(std::count_if(numbers.begin(), numbers.end(), [](double v) { return std::isnan(v); }));
}

std::vector<std::string> Column::levels() const {
  std::set<std::string> distinct;
  for (const auto& l : labels) {
    if (!l.empty()) distinct.insert(l);
  }
  return {distinct.begin(), distinct.end()};
}

bool Column::operator==(const Column& other) const {
  return name == other.name && kind == other.kind && labels == other.labels &&
         std::equal(numbers.begin(), numbers.end(), other.numbers.begin(), other.numbers.end(), same_number);
}

Dataset::Dataset(std::vector<Column> columns, std::vector<RowId> row_ids)
    : columns_(std::move(columns)), row_ids_(std::move(row_ids)) {
  std::set<std::string> names;
  for (const auto& c : columns_) {
    if (!names.insert(c.name).second) fail(ErrorKind::Validation, errc::schema_error, "duplicate column " + c.name);
    if (c.size() != row_ids_.size()) {
      fail(ErrorKind::Validation, errc::schema_error, "column " + c.name + " length differs from row count");
    }
    if (c.string_coded() && c.labels.size() != c.numbers.size()) {
      fail(ErrorKind::Validation, errc::schema_error, "column " + c.name + " label/value length mismatch");
    }
    if (c.kind == ColumnKind::Binary) {
      for (double v : c.numbers) {
        if (!std::isnan(v) && v != 0.0 && v != 1.0) {
          fail(ErrorKind::Validation, errc::schema_error, "binary column " + c.name + " holds a non 0/1 value");
        }
      }
    }
  }
  for (std::size_t i = 1; i < row_ids_.size(); ++i) {
    if (row_ids_[i] <= row_ids_[i - 1]) fail(ErrorKind::Validation, errc::schema_error, "row ids must be strictly increasing");
  }
}

bool Dataset::has_column(std::string_view name) const {
  return std::any_of(columns_.begin(), columns_.end(), [&](const Column& c) { return c.name == name; });
}

const Column& Dataset::column(std::string_view name) const {
  for (const auto& c : columns_) {
    if (c.name == name) return c;
  }
  fail(ErrorKind::Validation, errc::unknown_column, "unknown column: " + std::string(name));
}

std::span<const double> Dataset::numeric(std::string_view name) const {
  const Column& c = column(name);
  if (!c.is_numeric()) fail(ErrorKind::Validation, errc::not_numeric, "column " + c.name + " is categorical");
  return c.numbers;
}

std::optional<std::size_t> Dataset::position_of(RowId id) const {
  auto it = std::lower_bound(row_ids_.begin(), row_ids_.end(), id);
  if (it == row_ids_.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - row_ids_.begin());
}

Dataset Dataset::select_ids(std::span<const RowId> ids) const {
  std::vector<std::size_t> positions;
  positions.reserve(ids.size());
  for (RowId id : ids) {
    auto pos = position_of(id);
    if (!pos) fail(ErrorKind::Validation, errc::stale_ids, "row id " + std::to_string(id) + " is not in the dataset");
    positions.push_back(*pos);
  }
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  return select_positions(positions);
}

Dataset Dataset::select_positions(std::span<const std::size_t> positions) const {
  std::vector<Column> cols;
  cols.reserve(columns_.size());
  for (const auto& c : columns_) {
    Column sub{c.name, c.kind, {}, {}};
    if (!c.numbers.empty()) {
      sub.numbers.reserve(positions.size());
      for (auto p : positions) sub.numbers.push_back(c.numbers.at(p));
    }
    if (!c.labels.empty()) {
      sub.labels.reserve(positions.size());
      for (auto p : positions) sub.labels.push_back(c.labels.at(p));
    }
    cols.push_back(std::move(sub));
  }
  std::vector<RowId> ids;
  ids.reserve(positions.size());
  for (auto p : positions) ids.push_back(row_ids_.at(p));
  return Dataset(std::move(cols), std::move(ids));
}

Dataset Dataset::with_column(Column column) const {
  std::vector<Column> cols = columns_;
  auto it = std::find_if(cols.begin(), cols.end(), [&](const Column& c) { return c.name == column.name; });
  if (it != cols.end()) {
    *it = std::move(column);
  } else {
    cols.push_back(std::move(column));
  }
  return Dataset(std::move(cols), row_ids_);
}

Dataset parse_csv(std::string_view text, const CsvOptions& options) {
  const char delim = options.delimiter != 0 ? options.delimiter : sniff_delimiter(text);
  CsvReader reader(text, delim);
  std::vector<std::string> header;
  std::size_t line = 0;
  if (!reader.next(header, line)) fail(ErrorKind::Validation, errc::empty_dataset, "CSV has no header row");
  {
    std::set<std::string> seen;
    for (const auto& h : header) {
      if (h.empty()) fail(ErrorKind::Validation, errc::parse_error, "empty column name in header");
      if (!seen.insert(h).second) fail(ErrorKind::Validation, errc::parse_error, "duplicate header: " + h);
    }
  }
  for (const auto& [name, kind] : options.typing_overrides) {
    if (std::find(header.begin(), header.end(), name) == header.end()) {
      fail(ErrorKind::Validation, errc::unknown_column, "typing override for unknown column " + name);
    }
  }

  std::vector<std::vector<std::string>> cells(header.size());
  std::vector<std::string> fields;
  while (reader.next(fields, line)) {
    if (fields.size() != header.size()) {
      fail(ErrorKind::Validation, errc::parse_error,
           "line " + std::to_string(line) + ": expected " + std::to_string(header.size()) + " fields, got " +
               std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) cells[j].push_back(std::move(fields[j]));
  }
  const std::size_t n = cells.empty() ? 0 : cells.front().size();
  if (n == 0) fail(ErrorKind::Validation, errc::empty_dataset, "CSV has no data rows");

  std::vector<Column> cols;
  cols.reserve(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) {
    std::optional<ColumnKind> forced;
    if (auto it = options.typing_overrides.find(header[j]); it != options.typing_overrides.end()) forced = it->second;
    cols.push_back(build_column(header[j], std::move(cells[j]), forced));
  }
  std::vector<RowId> ids(n);
  std::iota(ids.begin(), ids.end(), RowId{0});
  return Dataset(std::move(cols), std::move(ids));
}

Dataset load_csv(std::istream& in, const CsvOptions& options) {
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), options);
}

Dataset load_csv_file(const std::string& path, const CsvOptions& options) {
  return parse_csv(read_text_file(path), options);
}

Dataset one_hot(const Dataset& ds, std::string_view name) {
  if (!ds.has_column(name)) {
    // Already expanded: only the indicator columns remain.
    const std::string prefix = std::string(name) + "=";
    for (const auto& c : ds.columns()) {
      if (c.name.starts_with(prefix)) {
        fail(ErrorKind::Validation, errc::not_categorical, "column " + std::string(name) + " is already one-hot encoded");
      }
    }
  }
  const Column& src = ds.column(name);
  if (src.kind != ColumnKind::Categorical && !src.string_coded()) {
    fail(ErrorKind::Validation, errc::not_categorical, "column " + src.name + " is not categorical");
  }
  const auto levels = src.levels();
  std::vector<Column> indicators;
  for (std::size_t k = 1; k < levels.size(); ++k) {
    Column ind{src.name + "=" + levels[k], ColumnKind::Binary, {}, {}};
    ind.numbers.resize(src.labels.size());
    for (std::size_t i = 0; i < src.labels.size(); ++i) {
      const auto& l = src.labels[i];
      ind.numbers[i] = l.empty() ? kNaN : (l == levels[k] ? 1.0 : 0.0);
    }
    indicators.push_back(std::move(ind));
  }
  std::vector<Column> cols;
  for (const auto& c : ds.columns()) {
    if (c.name == src.name) {
      for (auto& ind : indicators) cols.push_back(std::move(ind));
    } else {
      cols.push_back(c);
    }
  }
  return Dataset(std::move(cols), ds.row_ids());
}

ThresholdMode threshold_mode_from_string(std::string_view text) {
  const std::string l = lower(text);
  if (l == "median") return ThresholdMode::Median;
  if (l == "mean") return ThresholdMode::Mean;
  if (l == "value") return ThresholdMode::Value;
  fail(ErrorKind::Validation, errc::bad_request, "unknown threshold mode: " + std::string(text));
}

double median_of(std::span<const double> values) {
  std::vector<double> v;
  v.reserve(values.size());
  for (double x : values) {
    if (!std::isnan(x)) v.push_back(x);
  }
  if (v.empty()) fail(ErrorKind::Statistical, errc::all_missing, "median of an all-missing column");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double mean_of(std::span<const double> values) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double x : values) {
    if (std::isnan(x)) continue;
    sum += x;
    ++n;
  }
  if (n == 0) fail(ErrorKind::Statistical, errc::all_missing, "mean of an all-missing column");
  return sum / static_cast<double>(n);
}

Dataset binarize_at(const Dataset& ds, std::string_view name, ThresholdMode mode, double value,
                    std::optional<std::string> out_name) {
  const Column& src = ds.column(name);
  if (src.kind != ColumnKind::Continuous) {
    fail(ErrorKind::Validation, errc::not_numeric, "column " + src.name + " is not continuous");
  }
  double threshold = value;
  if (mode == ThresholdMode::Median) threshold = median_of(src.numbers);
  if (mode == ThresholdMode::Mean) threshold = mean_of(src.numbers);
  if (mode == ThresholdMode::Value &&
      std::all_of(src.numbers.begin(), src.numbers.end(), [](double v) { return std::isnan(v); })) {
    fail(ErrorKind::Statistical, errc::all_missing, "column " + src.name + " has no values");
  }
  Column out{out_name.value_or(src.name), ColumnKind::Binary, {}, {}};
  out.numbers.reserve(src.numbers.size());
  for (double x : src.numbers) out.numbers.push_back(std::isnan(x) ? kNaN : (x >= threshold ? 1.0 : 0.0));
  return ds.with_column(std::move(out));
}

CompleteCases complete_cases(const Dataset& ds, std::span<const std::string> columns) {
  std::vector<const Column*> used;
  for (const auto& name : columns) used.push_back(&ds.column(name));
  std::vector<std::size_t> keep;
  keep.reserve(ds.n_rows());
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    bool ok = true;
    for (const Column* c : used) {
      if (c->kind == ColumnKind::Categorical ? c->labels[i].empty() : std::isnan(c->numbers[i])) {
        ok = false;
        break;
      }
    }
    if (ok) keep.push_back(i);
  }
  if (keep.size() == ds.n_rows()) return {ds, 0};
  return {ds.select_positions(keep), ds.n_rows() - keep.size()};
}

json dataset_summary(const Dataset& ds) {
  json cols = json::array();
  for (const auto& c : ds.columns()) {
    cols.push_back({{"name", c.name}, {"kind", std::string(to_string(c.kind))}, {"n_missing", c.n_missing()}});
  }
  return json{{"columns", std::move(cols)}, {"n_rows", ds.n_rows()}};
}

json dataset_to_json(const Dataset& ds) {
  json cols = json::array();
  for (const auto& c : ds.columns()) {
    json col{{"name", c.name}, {"kind", std::string(to_string(c.kind))}};
    if (c.is_numeric()) {
      json values = json::array();
      for (double v : c.numbers) values.push_back(std::isnan(v) ? json(nullptr) : json(v));
      col["values"] = std::move(values);
    }
    if (!c.labels.empty()) col["labels"] = c.labels;
    cols.push_back(std::move(col));
  }
  return json{{"columns", std::move(cols)}, {"row_ids", ds.row_ids()}};
}

Dataset dataset_from_json(const json& doc) {
  try {
    std::vector<Column> cols;
    for (const auto& c : detail::require(doc, "columns", "dataset")) {
      Column col;
      col.name = c.at("name").get<std::string>();
      col.kind = column_kind_from_string(c.at("kind").get<std::string>());
      if (c.contains("values")) {
        for (const auto& v : c["values"]) col.numbers.push_back(v.is_null() ? kNaN : v.get<double>());
      }
      if (c.contains("labels")) col.labels = c["labels"].get<std::vector<std::string>>();
      cols.push_back(std::move(col));
    }
    return Dataset(std::move(cols), detail::require(doc, "row_ids", "dataset").get<std::vector<RowId>>());
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("dataset document: ") + e.what());
  }
}

std::vector<std::string> resolve_columns(const Dataset& ds, std::span<const std::string> names) {
  std::vector<std::string> out;
  for (const auto& name : names) {
    if (ds.has_column(name)) {
      out.push_back(name);
      continue;
    }
    const std::string prefix = name + "=";
    bool any = false;
    for (const auto& c : ds.columns()) {
      if (c.name.starts_with(prefix)) {
        out.push_back(c.name);
        any = true;
      }
    }
    if (!any) fail(ErrorKind::Validation, errc::missing_covariate, "no column matches variable " + name);
  }
  return out;
}

Dataset apply_prep(const Dataset& ds, const json& prep) {
  if (prep.is_null()) return ds;
  if (!prep.is_object()) fail(ErrorKind::Validation, errc::schema_error, "preparation recipe must be an object");
  try {
    Dataset out = ds;
    if (prep.contains("binarize")) {
      for (const auto& b : prep["binarize"]) {
        const auto column = detail::require(b, "column", "binarize").get<std::string>();
        const auto mode = threshold_mode_from_string(b.value("mode", std::string("median")));
        const double value = b.value("value", 0.0);
        if (mode == ThresholdMode::Value && !b.contains("value")) {
          fail(ErrorKind::Validation, errc::schema_error, "binarize " + column + ": mode value needs a value");
        }
        std::optional<std::string> out_name;
        if (b.contains("out")) out_name = b["out"].get<std::string>();
        out = binarize_at(out, column, mode, value, out_name);
      }
    }
    if (prep.contains("one_hot")) {
      const json& oh = prep["one_hot"];
      std::vector<std::string> cols;
      if (oh.is_string() && oh.get<std::string>() == "all") {
        for (const auto& c : out.columns()) {
          if (c.kind == ColumnKind::Categorical || c.string_coded()) cols.push_back(c.name);
        }
      } else {
        cols = oh.get<std::vector<std::string>>();
      }
      for (const auto& c : cols) out = one_hot(out, c);
    }
    return out;
  } catch (const json::exception& e) {
    fail(ErrorKind::Validation, errc::schema_error, std::string("preparation recipe: ") + e.what());
  }
}

}  // namespace cwb
