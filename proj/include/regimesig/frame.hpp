#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "regimesig/error.hpp"

namespace regimesig {

enum class Frequency { Daily, Monthly, Intraday10Min };

/// Naive (zone-less) instant, seconds since 1970-01-01T00:00:00.
struct Timestamp {
  std::int64_t seconds = 0;
  friend auto operator<=>(const Timestamp&, const Timestamp&) = default;
};

using Cell = std::optional<double>;
using Column = std::vector<Cell>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace detail

inline Timestamp make_timestamp(int year, unsigned month, unsigned day, int hour = 0, int minute = 0,
                                int second = 0) {
  using namespace std::chrono;
  const sys_days d{std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day}};
  return Timestamp{static_cast<std::int64_t>(d.time_since_epoch().count()) * 86400 + hour * 3600 +
                   minute * 60 + second};
}

/// Parses `YYYY-MM-DD`, `YYYY-MM-DDTHH:MM[:SS]` or the same with a space separator.
inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  s = detail::trim(s);
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0;
  unsigned mo = 0, d = 0;
  if (!detail::parse_int(s.substr(0, 4), y) || !detail::parse_int(s.substr(5, 2), mo) ||
      !detail::parse_int(s.substr(8, 2), d))
    return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo},
                                        std::chrono::day{d}};
  if (!ymd.ok()) return std::nullopt;
  int hh = 0, mm = 0, ss = 0;
  if (s.size() > 10) {
    if ((s[10] != 'T' && s[10] != ' ') || s.size() < 16 || s[13] != ':') return std::nullopt;
    if (!detail::parse_int(s.substr(11, 2), hh) || !detail::parse_int(s.substr(14, 2), mm))
      return std::nullopt;
    if (s.size() > 16) {
      if (s.size() != 19 || s[16] != ':' || !detail::parse_int(s.substr(17, 2), ss))
        return std::nullopt;
    }
    if (hh > 23 || mm > 59 || ss > 59) return std::nullopt;
  }
  return make_timestamp(y, mo, d, hh, mm, ss);
}

inline std::string format_timestamp(Timestamp t, Frequency f) {
  using namespace std::chrono;
  const std::int64_t days = t.seconds >= 0 ? t.seconds / 86400 : -((-t.seconds + 86399) / 86400);
  const std::int64_t rem = t.seconds - days * 86400;
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  std::ostringstream os;
  os << std::setfill('0') << std::setw(4) << static_cast<int>(ymd.year()) << '-' << std::setw(2)
     << static_cast<unsigned>(ymd.month()) << '-' << std::setw(2)
     << static_cast<unsigned>(ymd.day());
  if (f == Frequency::Intraday10Min) {
    os << 'T' << std::setw(2) << rem / 3600 << ':' << std::setw(2) << (rem / 60) % 60 << ':'
       << std::setw(2) << rem % 60;
  }
  return os.str();
}

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::optional<double> parse_double(std::string_view s) {
  s = detail::trim(s);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// Timestamp-indexed table of named columns of optional reals.
///
/// Immutable once built; every transformation returns a new frame.
/// Invariants: timestamps strictly increasing; every column has one cell per timestamp.
class TimeSeriesFrame {
 public:
  TimeSeriesFrame() = default;

  TimeSeriesFrame(Frequency freq, std::vector<Timestamp> timestamps,
                  std::vector<std::pair<std::string, Column>> columns)
      : freq_(freq), timestamps_(std::move(timestamps)), columns_(std::move(columns)) {
    for (std::size_t i = 1; i < timestamps_.size(); ++i)
      require(timestamps_[i - 1] < timestamps_[i], Errc::UnsortableDates,
              "timestamps must be strictly increasing");
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      require(columns_[c].second.size() == timestamps_.size(), Errc::ShapeMismatch,
              "column '" + columns_[c].first + "' length differs from index length");
      for (std::size_t d = 0; d < c; ++d)
        require(columns_[d].first != columns_[c].first, Errc::InvalidArgument,
                "duplicate column '" + columns_[c].first + "'");
    }
  }

  Frequency frequency() const noexcept { return freq_; }
  std::size_t size() const noexcept { return timestamps_.size(); }
  const std::vector<Timestamp>& timestamps() const noexcept { return timestamps_; }
  const std::vector<std::pair<std::string, Column>>& columns() const noexcept { return columns_; }

  std::vector<std::string> column_names() const {
    std::vector<std::string> names;
    names.reserve(columns_.size());
    for (const auto& [n, _] : columns_) names.push_back(n);
    return names;
  }

  bool has_column(std::string_view name) const {
    return std::any_of(columns_.begin(), columns_.end(),
                       [&](const auto& c) { return c.first == name; });
  }

  const Column& column(std::string_view name) const {
    for (const auto& [n, col] : columns_)
      if (n == name) return col;
    fail(Errc::UnknownColumn, std::string(name));
  }

  /// Column as plain doubles; any missing cell is an error.
  std::vector<double> values(std::string_view name) const {
    const auto& col = column(name);
    std::vector<double> out;
    out.reserve(col.size());
    for (std::size_t i = 0; i < col.size(); ++i) {
      require(col[i].has_value(), Errc::InvalidArgument,
              "missing value in column '" + std::string(name) + "' at row " + std::to_string(i));
      out.push_back(*col[i]);
    }
    return out;
  }

  TimeSeriesFrame with_column(std::string name, Column values) const {
    auto cols = columns_;
    cols.emplace_back(std::move(name), std::move(values));
    return TimeSeriesFrame(freq_, timestamps_, std::move(cols));
  }

  TimeSeriesFrame select(const std::vector<std::string>& names) const {
    std::vector<std::pair<std::string, Column>> cols;
    for (const auto& n : names) cols.emplace_back(n, column(n));
    return TimeSeriesFrame(freq_, timestamps_, std::move(cols));
  }

  TimeSeriesFrame slice(std::size_t begin, std::size_t end) const {
    std::vector<Timestamp> ts(timestamps_.begin() + static_cast<std::ptrdiff_t>(begin),
                              timestamps_.begin() + static_cast<std::ptrdiff_t>(end));
    auto cols = columns_;
    for (auto& [_, col] : cols)
      col = Column(col.begin() + static_cast<std::ptrdiff_t>(begin),
                   col.begin() + static_cast<std::ptrdiff_t>(end));
    return TimeSeriesFrame(freq_, std::move(ts), std::move(cols));
  }

  friend bool operator==(const TimeSeriesFrame&, const TimeSeriesFrame&) = default;

 private:
  Frequency freq_ = Frequency::Daily;
  std::vector<Timestamp> timestamps_;
  std::vector<std::pair<std::string, Column>> columns_;
};

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

struct CsvSchema {
  Frequency frequency = Frequency::Daily;
  /// Columns that must appear in the header (besides `date`). Empty = accept any.
  std::vector<std::string> required;
};

inline TimeSeriesFrame read_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) fail(Errc::EmptyFile, "no header row");
  const auto header = detail::split_commas(line);
  require(!header.empty() && header[0] == "date", Errc::MissingColumn,
          "first column must be named 'date'");
  std::vector<std::string> names(header.begin() + 1, header.end());
  for (const auto& r : schema.required)
    require(std::find(names.begin(), names.end(), r) != names.end(), Errc::MissingColumn, r);

  std::vector<std::pair<Timestamp, std::vector<Cell>>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_commas(line);
    const auto ts = parse_timestamp(fields[0]);
    require(ts.has_value(), Errc::InvalidArgument,
            "unparseable date on line " + std::to_string(line_no));
    std::vector<Cell> cells(names.size());
    for (std::size_t c = 0; c < names.size(); ++c)
      if (c + 1 < fields.size()) cells[c] = parse_double(fields[c + 1]);
    rows.emplace_back(*ts, std::move(cells));
  }
  require(!rows.empty(), Errc::EmptyFile, "no data rows");
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < rows.size(); ++i)
    require(rows[i - 1].first < rows[i].first, Errc::UnsortableDates,
            "duplicate timestamp " + format_timestamp(rows[i].first, schema.frequency));

  std::vector<Timestamp> ts;
  std::vector<std::pair<std::string, Column>> cols;
  for (const auto& n : names) cols.emplace_back(n, Column{});
  for (auto& [t, cells] : rows) {
    ts.push_back(t);
    for (std::size_t c = 0; c < names.size(); ++c) cols[c].second.push_back(cells[c]);
  }
  return TimeSeriesFrame(schema.frequency, std::move(ts), std::move(cols));
}

inline TimeSeriesFrame load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  require(in.good(), Errc::Io, "cannot open " + path);
  return read_csv(in, schema);
}

inline void write_csv(std::ostream& out, const TimeSeriesFrame& frame) {
  out << "date";
  for (const auto& [n, _] : frame.columns()) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < frame.size(); ++i) {
    out << format_timestamp(frame.timestamps()[i], frame.frequency());
    for (const auto& [_, col] : frame.columns()) {
      out << ',';
      if (col[i]) out << format_double(*col[i]);
    }
    out << '\n';
  }
}

inline void save_csv(const std::string& path, const TimeSeriesFrame& frame) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), Errc::Io, "cannot write " + path);
  write_csv(out, frame);
}

// ---------------------------------------------------------------------------
// Alignment, lagging, splitting
// ---------------------------------------------------------------------------

enum class FillPolicy { ForwardFill, Drop };

/// Puts every frame onto one timestamp grid.
///
/// The grid is the inner join of the timestamps of all frames already at
/// `target`. Columns of other frames are as-of joined: each grid row takes the
/// latest non-missing value stamped at or before it, never a later one.
/// ForwardFill then fills gaps in grid columns from earlier rows; Drop removes
/// every row that still has a missing cell.
inline TimeSeriesFrame align(const std::vector<TimeSeriesFrame>& frames, Frequency target,
                             FillPolicy fill) {
  std::vector<const TimeSeriesFrame*> grid_frames;
  for (const auto& f : frames)
    if (f.frequency() == target) grid_frames.push_back(&f);
  require(!grid_frames.empty(), Errc::NoGridFrame, "no frame at the target frequency");

  std::vector<Timestamp> grid = grid_frames.front()->timestamps();
  for (std::size_t g = 1; g < grid_frames.size(); ++g) {
    std::vector<Timestamp> next;
    const auto& other = grid_frames[g]->timestamps();
    std::set_intersection(grid.begin(), grid.end(), other.begin(), other.end(),
                          std::back_inserter(next));
    grid = std::move(next);
  }
  require(!grid.empty(), Errc::DisjointRanges, "grid frames share no timestamps");

  std::vector<std::pair<std::string, Column>> cols;
  for (const auto& f : frames) {
    const auto& ts = f.timestamps();
    for (const auto& [name, src] : f.columns()) {
      Column out(grid.size());
      if (f.frequency() == target) {
        std::size_t j = 0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
          while (ts[j] < grid[i]) ++j;
          out[i] = src[j];
        }
      } else {
        // as-of join: latest published value with timestamp <= grid time
        std::size_t j = 0;
        Cell last;
        for (std::size_t i = 0; i < grid.size(); ++i) {
          while (j < ts.size() && ts[j] <= grid[i]) {
            if (src[j]) last = src[j];
            ++j;
          }
          out[i] = last;
        }
      }
      cols.emplace_back(name, std::move(out));
    }
  }

  if (fill == FillPolicy::ForwardFill) {
    for (auto& [_, col] : cols)
      for (std::size_t i = 1; i < col.size(); ++i)
        if (!col[i]) col[i] = col[i - 1];
    return TimeSeriesFrame(target, std::move(grid), std::move(cols));
  }

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::all_of(cols.begin(), cols.end(), [&](const auto& c) { return c.second[i].has_value(); }))
      keep.push_back(i);
  std::vector<Timestamp> kept_ts;
  for (auto i : keep) kept_ts.push_back(grid[i]);
  for (auto& [_, col] : cols) {
    Column kept;
    for (auto i : keep) kept.push_back(col[i]);
    col = std::move(kept);
  }
  return TimeSeriesFrame(target, std::move(kept_ts), std::move(cols));
}

/// Adds `<column>_lag<k>`: row i holds the value of row i-k; the first k rows are missing.
inline TimeSeriesFrame lag(const TimeSeriesFrame& frame, const std::string& column, std::size_t k) {
  require(k >= 1, Errc::InvalidArgument, "lag k must be >= 1");
  const auto& src = frame.column(column);
  require(k < frame.size(), Errc::LagTooLarge,
          "lag " + std::to_string(k) + " >= row count " + std::to_string(frame.size()));
  Column out(frame.size());
  for (std::size_t i = k; i < frame.size(); ++i) out[i] = src[i - k];
  return frame.with_column(column + "_lag" + std::to_string(k), std::move(out));
}

struct SplitSpec {
  double train_frac = 0.70;
  double val_frac = 0.15;
  double test_frac = 0.15;

  void validate() const {
    require(train_frac > 0 && val_frac > 0 && test_frac > 0, Errc::InvalidArgument,
            "split fractions must be positive");
    require(std::abs(train_frac + val_frac + test_frac - 1.0) <= 1e-9, Errc::InvalidArgument,
            "split fractions must sum to 1");
  }

  /// Row counts (train, val, test): floor, floor, remainder.
  std::tuple<std::size_t, std::size_t, std::size_t> sizes(std::size_t n) const {
    validate();
    // the epsilon guards exact products such as 100 * 0.7 against representation error
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_frac + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_frac + 1e-9));
    return {n_train, n_val, n - n_train - n_val};
  }
};

struct FrameSplit {
  TimeSeriesFrame train, val, test;
};

inline FrameSplit chronological_split(const TimeSeriesFrame& frame, const SplitSpec& spec = {}) {
  require(frame.size() >= 10, Errc::TooFewRows, "need at least 10 rows to split");
  const auto [a, b, c] = spec.sizes(frame.size());
  return {frame.slice(0, a), frame.slice(a, a + b), frame.slice(a + b, a + b + c)};
}

}  // namespace regimesig
