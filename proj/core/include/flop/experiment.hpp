#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flop/config.hpp"
#include "flop/dataset.hpp"
#include "flop/evaluation.hpp"
#include "flop/federation.hpp"
#include "flop/partition.hpp"

namespace flop {

struct ExperimentData {
  Dataset train;
  std::optional<Dataset> test;  // global test set, if any
};

/// Loads (or generates) the configured data and applies per-class limits.
ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Everything derived from config + data + seed before training starts.
struct ExperimentSetup {
  ModelSpec spec;
  SplitSpec split;
  PartitionPlan plan;
  std::vector<ClientSplit> splits;
};

/// Partitions and splits the data. Cross-field constraints are checked here.
ExperimentSetup prepare_experiment(const ExperimentConfig& config,
                                   const ExperimentData& data, std::uint64_t seed);

struct RoundRecord {
  std::size_t round = 0;
  double mean_loss = 0.0;
  double mean_accuracy = 0.0;
  std::vector<double> client_loss;
  std::vector<double> client_accuracy;
  std::optional<double> global_accuracy;
  std::optional<double> global_loss;
  ConfusionMatrix confusion;  // empty unless globally tested
  std::vector<std::size_t> sampled;  // clients trained this round
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct RunSummary {
  std::uint64_t seed = 0;
  Mode mode = Mode::kFlop;
  double best_local_accuracy = 0.0;
  std::size_t best_round = 0;
  double final_local_accuracy = 0.0;
  double final_local_loss = 0.0;
  std::optional<double> final_global_accuracy;
};

struct RunResult {
  RunSummary summary;
  std::vector<RoundRecord> records;
};

struct RunOptions {
  /// Where files go; empty disables persistence.
  std::filesystem::path output_dir;
  AuditHook audit;
  std::function<void(std::uint64_t seed, const RoundRecord&)> progress;
};

/// One seed: train, evaluate per cadence, append metrics after every
/// evaluated round.
RunResult run_seed(const ExperimentConfig& config, const ExperimentData& data,
                   std::uint64_t seed, const RunOptions& options = {});

/// All seeds of the config. With several seeds each run writes into
/// `seed_<s>/` under the output directory; summary.csv sits at the top.
std::vector<RunResult> run_experiment(const ExperimentConfig& config,
                                      const RunOptions& options = {});
std::vector<RunResult> run_experiment(const ExperimentConfig& config,
                                      const ExperimentData& data,
                                      const RunOptions& options = {});

RunSummary summarize(const std::vector<RoundRecord>& records, std::uint64_t seed,
                     Mode mode);

struct SampleStats {
  double mean = 0.0;
  double stddev = 0.0;  // n - 1 denominator; NaN for n < 2
};
SampleStats sample_stats(std::span<const double> values);

std::string summary_csv(std::span<const RunResult> runs);

inline constexpr const char* kMetricsHeader = "# flop-metrics v1";

struct MetricsRow {
  std::size_t round = 0;
  std::string scope;  // local_mean | local | global
  std::optional<std::size_t> client;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Parses a metrics.csv written by run_seed.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Aligns the local_mean rows of several runs (directories or metrics
/// files). The first run is the reference for the delta columns.
std::string compare_runs(std::span<const std::filesystem::path> runs);

/// Per-client class histograms of the partition the config produces.
std::string partition_stats_csv(const ExperimentConfig& config,
                                const ExperimentData& data, std::uint64_t seed);

/// "%.17g", which round-trips doubles.
std::string format_double(double v);

}  // namespace flop
