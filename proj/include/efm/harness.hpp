#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efm/estimators.hpp"
#include "efm/magnify.hpp"
#include "efm/model.hpp"

namespace efm {

inline constexpr int kSchemaVersion = 1;

struct ExperimentConfig {
  std::string scenario = "sigma-I";
  PopulationModel model{400, {12.0, 6.0}};
  RadiusLaw law = RadiusLaw::multivariate_t(4.3);
  std::size_t n = 400;
  std::size_t reps = 200;
  MagnificationConfig magnification = desk_magnification();
  std::optional<double> onatski_nu;
  NoneFlaggedRule none_flagged = NoneFlaggedRule::Onatski;
  std::uint64_t seed = 20240501;
  std::string output_dir = "out";
  /// Worker count; not part of the results.
  std::size_t threads = 1;

  static MagnificationConfig desk_magnification();
  /// Throws ConfigError on inconsistent fields.
  void validate() const;
  bool operator==(const ExperimentConfig& other) const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Missing fields keep the values of `base`.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::json to_json(const RadiusLaw& law);
RadiusLaw radius_law_from_json(const nlohmann::json& j);
RadiusLaw radius_law_from_string(const std::string& s);

struct RepRecord {
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  std::size_t m = 0;
  bool ok = false;
  std::size_t r_on = 0;
  std::size_t r_ma = 0;
  std::optional<std::size_t> r_star;
  std::size_t f_hat = 0;
  std::string error; ///< "<Kind>: message" for failed reps
};

struct MetricsSummary {
  std::size_t reps = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  double over_on = 0.0;
  double over_ma = 0.0;
  double exact_on = 0.0;
  double exact_ma = 0.0;
  std::optional<double> false_positive; ///< nullopt when On is never exact
  std::size_t on_exact_count = 0;
};

/// Diagnostic artifacts kept from the first completed replication.
struct RunArtifacts {
  std::optional<Spectrum> spectrum;
  std::optional<std::vector<double>> gaps;
  std::optional<double> nu;
  std::optional<DetectionReport> detection;
  std::optional<std::vector<std::pair<std::string, std::size_t>>> timeline;
};

struct MetricsTable {
  std::vector<RepRecord> records;
  MetricsSummary summary;
  RunArtifacts artifacts;
  double seconds = 0.0;
};

/// Per-replication seed.
std::uint64_t rep_seed(const ExperimentConfig& cfg, std::size_t rep);

/// Runs one replication; throws on failure.
RepRecord run_replication(const ExperimentConfig& cfg, std::size_t rep,
                          RunArtifacts* artifacts = nullptr);

MetricsTable run_experiment(const ExperimentConfig& cfg);

MetricsSummary compute_metrics(const std::vector<RepRecord>& records);

std::string records_csv(const std::vector<RepRecord>& records);
std::vector<RepRecord> parse_records_csv(const std::string& text);
nlohmann::json to_json(const MetricsSummary& s);

enum class PlotKind { Scree, GapSeries, FluctuationSeries, FactorTimeline };

/// CSV text for one figure panel. Throws MissingArtifact naming the step that
/// produces the needed data.
std::string emit_plot_data(const RunArtifacts& artifacts, PlotKind kind);
std::string plot_file_name(PlotKind kind);

/// Writes records.csv, summary.json, timing.json, effective_config.json and
/// the available plot CSVs into `dir`.
void write_experiment_outputs(const ExperimentConfig& cfg, const MetricsTable& table,
                              const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path, const std::string& text);

} // namespace efm
