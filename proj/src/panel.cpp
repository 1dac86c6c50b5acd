#include "efm/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <regex>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "efm/error.hpp"
#include "efm/harness.hpp"
#include "efm/log.hpp"
#include "efm/parallel.hpp"
#include "efm/rng.hpp"

namespace efm {

namespace {

constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
        cell += '"';
        ++k;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(trim(cell));
  return out;
}

std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  double v;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) return std::nullopt;
  return v;
}

std::optional<std::string> parse_date(const std::string& s) {
  static const std::regex iso(R"(^(\d{4})-(\d{1,2})(?:-(\d{1,2}))?$)");
  static const std::regex us(R"(^(\d{1,2})/(\d{1,2})/(\d{4})$)");
  std::smatch m;
  int y, mo, d;
  if (std::regex_match(s, m, iso)) {
    y = std::stoi(m[1]);
    mo = std::stoi(m[2]);
    d = m[3].matched ? std::stoi(m[3]) : 1;
  } else if (std::regex_match(s, m, us)) {
    mo = std::stoi(m[1]);
    d = std::stoi(m[2]);
    y = std::stoi(m[3]);
  } else {
    return std::nullopt;
  }
  if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
  return fmt::format("{:04d}-{:02d}-{:02d}", y, mo, d);
}

double column_mean(const Eigen::MatrixXd& v, Eigen::Index c, std::size_t& observed) {
  double sum = 0.0;
  observed = 0;
  for (Eigen::Index r = 0; r < v.rows(); ++r)
    if (!std::isnan(v(r, c))) {
      sum += v(r, c);
      ++observed;
    }
  return observed ? sum / static_cast<double>(observed) : kMissing;
}

} // namespace

std::size_t PanelSource::missing_count() const {
  return static_cast<std::size_t>(values.array().isNaN().count());
}

PanelSource parse_panel(const std::string& text, const std::string& source_name, const LoadOptions& options) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw DimensionError(fmt::format("{}: no header row", source_name));

  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError(fmt::format("{}:{}: expected {} fields, found {}", source_name, lineno,
                                   header.size(), cells.size()));
    if (rows.empty() && options.skip_transform_row && cells[0].rfind("Transform", 0) == 0) continue;
    rows.push_back(std::move(cells));
    row_lines.push_back(lineno);
  }
  if (rows.empty()) throw DimensionError(fmt::format("{}: header present but no data rows", source_name));

  const std::set<std::string> markers(options.missing_markers.begin(), options.missing_markers.end());
  auto is_missing = [&](const std::string& c) { return c.empty() || markers.count(c) > 0; };

  PanelSource src;
  src.path = source_name;
  const auto& first = rows.front()[0];
  src.has_dates = !is_missing(first) && !parse_number(first);
  const std::size_t offset = src.has_dates ? 1 : 0;
  if (header.size() <= offset) throw DimensionError(fmt::format("{}: no variable columns", source_name));

  std::set<std::string> seen;
  for (std::size_t c = offset; c < header.size(); ++c) {
    if (!seen.insert(header[c]).second)
      throw ParseError(fmt::format("{}:1: duplicate column name '{}'", source_name, header[c]));
    src.names.push_back(header[c]);
  }

  src.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(src.names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (src.has_dates) {
      auto d = parse_date(rows[r][0]);
      if (!d)
        throw ParseError(fmt::format("{}:{}: cannot read date '{}'", source_name, row_lines[r], rows[r][0]));
      src.dates.push_back(*d);
    }
    for (std::size_t c = offset; c < header.size(); ++c) {
      const auto& cell = rows[r][c];
      double v = kMissing;
      if (!is_missing(cell)) {
        auto num = parse_number(cell);
        if (!num || !std::isfinite(*num))
          throw ParseError(fmt::format("{}:{}: non-numeric value '{}' in column '{}'", source_name,
                                       row_lines[r], cell, header[c]));
        v = *num;
      }
      src.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - offset)) = v;
    }
  }
  return src;
}

PanelSource load_panel(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_panel(buf.str(), path.string(), options);
}

void check_panel_source(const PanelSource& src) {
  if (src.cols() < 3) throw DimensionError(fmt::format("panel needs at least 3 variables (got {})", src.cols()));
  if (src.rows() < 12) throw DimensionError(fmt::format("panel needs at least 12 rows (got {})", src.rows()));
}

PanelSource impute_missing(const PanelSource& src, ImputeMethod method) {
  PanelSource out = src;
  if (method == ImputeMethod::ColumnMean) {
    for (Eigen::Index c = 0; c < src.values.cols(); ++c) {
      std::size_t observed;
      const double mean = column_mean(src.values, c, observed);
      if (observed == 0)
        throw DataError(fmt::format("variable '{}' has no observed values", src.names[static_cast<std::size_t>(c)]));
      for (Eigen::Index r = 0; r < src.values.rows(); ++r)
        if (std::isnan(out.values(r, c))) out.values(r, c) = mean;
    }
    return out;
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < src.values.rows(); ++r)
    if (!src.values.row(r).array().isNaN().any()) keep.push_back(r);
  out.values.resize(static_cast<Eigen::Index>(keep.size()), src.values.cols());
  out.dates.clear();
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.values.row(static_cast<Eigen::Index>(k)) = src.values.row(keep[k]);
    if (src.has_dates) out.dates.push_back(src.dates[static_cast<std::size_t>(keep[k])]);
  }
  return out;
}

PanelSource difference(const PanelSource& src, DifferenceKind kind, const std::vector<std::size_t>& columns) {
  if (src.rows() < 2) throw DimensionError("differencing needs at least two rows");
  std::vector<std::size_t> cols = columns;
  if (cols.empty())
    for (std::size_t c = 0; c < src.cols(); ++c) cols.push_back(c);
  PanelSource out = src;
  const Eigen::Index t = src.values.rows();
  out.values = src.values.bottomRows(t - 1);
  for (std::size_t c : cols) {
    if (c >= src.cols()) throw BoundsError(fmt::format("difference: column {} out of range", c));
    const auto ci = static_cast<Eigen::Index>(c);
    for (Eigen::Index r = 1; r < t; ++r) {
      const double a = src.values(r - 1, ci), b = src.values(r, ci);
      if (kind == DifferenceKind::First) {
        out.values(r - 1, ci) = b - a;
      } else {
        if ((!std::isnan(a) && !(a > 0.0)) || (!std::isnan(b) && !(b > 0.0)))
          throw DomainError(fmt::format("log difference of non-positive value in '{}' row {}", src.names[c], r));
        out.values(r - 1, ci) = std::log(b) - std::log(a);
      }
    }
  }
  if (src.has_dates) out.dates.erase(out.dates.begin());
  return out;
}

MagnificationConfig PanelRunConfig::panel_magnification() {
  MagnificationConfig m;
  m.K = 200;
  return m;
}

Eigen::MatrixXd window_matrix(const PanelSource& src, std::size_t start, std::size_t end, bool standardize) {
  if (!(start < end) || end > src.rows())
    throw BoundsError(fmt::format("window [{}, {}) outside 0..{}", start, end, src.rows()));
  Eigen::MatrixXd x = src.values.middleRows(static_cast<Eigen::Index>(start),
                                            static_cast<Eigen::Index>(end - start)).transpose();
  if (x.array().isNaN().any()) throw DataError("window contains missing values; impute first");
  if (standardize) {
    const double n = static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mean = x.row(r).mean();
      x.row(r).array() -= mean;
      const double sd = std::sqrt(x.row(r).squaredNorm() / n);
      if (sd > 0.0) x.row(r) /= sd;
    }
  }
  return x;
}

std::vector<std::size_t> window_starts(std::size_t rows, std::size_t window, std::size_t step) {
  if (window == 0 || step == 0) throw ConfigError("window and step must be positive");
  if (window > rows) throw ConfigError(fmt::format("window {} exceeds the {} available rows", window, rows));
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + window <= rows; s += step) out.push_back(s);
  return out;
}

std::vector<WindowResult> rolling_estimate(const PanelSource& src, const PanelRunConfig& cfg) {
  check_panel_source(src);
  if (src.missing_count() > 0) throw DataError("panel has missing values; impute first");
  const auto starts = window_starts(src.rows(), cfg.window, cfg.step);
  cfg.magnification.validate();
  std::vector<WindowResult> out(starts.size());
  parallel_for(starts.size(), cfg.threads, [&](std::size_t w) {
    WindowResult r;
    r.index = w;
    r.start = starts[w];
    r.end = starts[w] + cfg.window;
    r.label_start = src.has_dates ? src.dates[r.start] : std::to_string(r.start);
    r.label_end = src.has_dates ? src.dates[r.end - 1] : std::to_string(r.end - 1);

    PanelMatrix panel{window_matrix(src, r.start, r.end, cfg.standardize), LoadedProvenance{src.path}};
    validate_panel(panel);
    const auto cache = gram_matrix(panel);
    const auto spec = spectrum(cache);
    r.gaps = gap_ratios(spec, std::min(cfg.gap_count, spec.size() - 2));
    MagnificationConfig mag = cfg.magnification;
    const std::size_t room = std::min(panel.p(), panel.n());
    if (room < 4) throw DimensionError(fmt::format("window {} leaves min(p, n) = {} < 4", w, room));
    if (mag.o + 3 > room) {
      mag.o = room - 3;
      warn_once("panel-o-clamped", fmt::format("o reduced to {} to fit min(p, n) = {}", mag.o, room));
    }
    r.on = onatski_estimate(spec, mag.o, panel.n(), cfg.nu);
    mag.seed = child_seed(cfg.seed, {w});
    mag.threads = 1;
    r.ma = estimate_factors(cache, spec, mag, {cfg.none_flagged, cfg.nu});
    out[w] = std::move(r);
  });
  return out;
}

std::string timeline_csv(const std::vector<WindowResult>& windows) {
  std::ostringstream os;
  os << "window_start,window_end,r_on,r_ma\n";
  for (const auto& w : windows)
    os << fmt::format("{},{},{},{}\n", w.label_start, w.label_end, w.on.r_hat, w.ma.r_hat);
  return os.str();
}

nlohmann::json to_json(const WindowResult& w) {
  nlohmann::json gaps = nlohmann::json::array();
  for (double g : w.gaps) gaps.push_back(std::isfinite(g) ? nlohmann::json(g) : nlohmann::json(nullptr));
  nlohmann::json t = nlohmann::json::array();
  if (w.ma.detection)
    for (const auto& r : w.ma.detection->records) t.push_back(r.stat);
  return {{"schema_version", kSchemaVersion},
          {"window", w.index},
          {"start_row", w.start},
          {"end_row", w.end},
          {"window_start", w.label_start},
          {"window_end", w.label_end},
          {"gaps", gaps},
          {"T", t},
          {"r_on", w.on.r_hat},
          {"r_ma", w.ma.r_hat},
          {"on", to_json(w.on)},
          {"ma", to_json(w.ma)}};
}

void write_panel_outputs(const std::vector<WindowResult>& windows, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "windows");
  write_text_file(dir / "timeline.csv", timeline_csv(windows));
  RunArtifacts art;
  art.timeline.emplace();
  for (const auto& w : windows) art.timeline->emplace_back(w.label_start + "/" + w.label_end, w.ma.r_hat);
  write_text_file(dir / plot_file_name(PlotKind::FactorTimeline), emit_plot_data(art, PlotKind::FactorTimeline));
  for (const auto& w : windows)
    write_text_file(dir / "windows" / fmt::format("window_{:03d}.json", w.index), to_json(w).dump(2) + "\n");
}

} // namespace efm
