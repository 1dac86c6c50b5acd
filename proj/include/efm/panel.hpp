#pragma once

// Real-panel workflow: CSV ingestion, missing-value handling, simple
// differencing, and rolling-window factor counts.
//
// Panels are stored T x N (rows = time, columns = variables); each window is
// transposed to the model orientation p = N, n = window length.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "efm/estimators.hpp"
#include "efm/magnify.hpp"

namespace efm {

struct PanelSource {
  std::string path;
  bool has_dates = false;
  std::vector<std::string> dates; ///< ISO yyyy-mm-dd, one per row when has_dates
  std::vector<std::string> names;
  Eigen::MatrixXd values;         ///< T x N, NaN marks a missing value

  std::size_t rows() const noexcept { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(values.cols()); }
  std::size_t missing_count() const;
};

struct LoadOptions {
  /// Cell spellings read as missing in addition to the empty cell.
  std::vector<std::string> missing_markers{"NA", "NaN", "nan", ".", "-"};
  /// Skip a leading data row whose first cell starts with "Transform" (the
  /// transformation-code row of some macro panels).
  bool skip_transform_row = true;
};

PanelSource load_panel(const std::filesystem::path& path, const LoadOptions& options = {});
PanelSource parse_panel(const std::string& text, const std::string& source_name,
                        const LoadOptions& options = {});

/// Shape guard for the estimation workflow: N >= 3 and T >= 12.
void check_panel_source(const PanelSource& src);

enum class ImputeMethod { ColumnMean, Drop };

PanelSource impute_missing(const PanelSource& src, ImputeMethod method);

enum class DifferenceKind { First, LogFirst };

/// Replaces the listed columns (all when empty) by their first or log first
/// difference and drops the first row. Missing values propagate.
PanelSource difference(const PanelSource& src, DifferenceKind kind,
                       const std::vector<std::size_t>& columns = {});

struct PanelRunConfig {
  std::size_t window = 48;
  std::size_t step = 48;
  MagnificationConfig magnification = panel_magnification();
  double nu = 9.0;
  NoneFlaggedRule none_flagged = NoneFlaggedRule::Onatski;
  bool standardize = true;
  std::uint64_t seed = 20240501;
  std::size_t threads = 1;
  std::size_t gap_count = 10;

  static MagnificationConfig panel_magnification();
};

struct WindowResult {
  std::size_t index = 0;
  std::size_t start = 0; ///< first row
  std::size_t end = 0;   ///< one past the last row
  std::string label_start, label_end;
  std::vector<double> gaps;
  FactorEstimate on;
  FactorEstimate ma;
};

/// Rows [start, end) as a p x n matrix (variables x time), optionally centered
/// and scaled to unit variance per variable.
Eigen::MatrixXd window_matrix(const PanelSource& src, std::size_t start, std::size_t end,
                              bool standardize);

/// Window start rows: 0, step, 2 step, ... while start + window <= T.
std::vector<std::size_t> window_starts(std::size_t rows, std::size_t window, std::size_t step);

std::vector<WindowResult> rolling_estimate(const PanelSource& src, const PanelRunConfig& config);

std::string timeline_csv(const std::vector<WindowResult>& windows);
nlohmann::json to_json(const WindowResult& w);

/// Writes timeline.csv, factor_timeline.csv and windows/window_NNN.json.
void write_panel_outputs(const std::vector<WindowResult>& windows, const std::filesystem::path& dir);

} // namespace efm
