#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flop/dataset.hpp"
#include "flop/federation.hpp"
#include "flop/model.hpp"
#include "flop/optimizer.hpp"
#include "flop/partition.hpp"

namespace flop {

struct DatasetConfig {
  DatasetSource source = DatasetSource::kFashionMnist;
  /// Directory (fashion-mnist, cifar10) or container file (synthetic, optional).
  std::string path;
  /// Held-out container for synthetic data loaded from `path`.
  std::string test_path;
  /// Keep only the first N training samples of each class; 0 keeps all.
  std::size_t train_per_class = 0;
  std::size_t test_per_class = 0;
  /// Synthetic generation when `path` is empty.
  std::vector<std::size_t> synthetic_train_counts;
  std::vector<std::size_t> synthetic_test_counts;
  std::size_t synthetic_channels = 1;
  std::size_t synthetic_height = 16;
  std::size_t synthetic_width = 16;
  double synthetic_noise = 0.25;
  /// Generation seed, independent of the run seeds so every run sees the same data.
  std::uint64_t synthetic_seed = 7;
};

struct ModelConfig {
  /// "small_cnn", "cifar_cnn" or "custom" (uses `layers`).
  std::string arch = "small_cnn";
  std::vector<LayerSpec> layers;
  /// Layer index; negative counts from the end (-1 = before the last layer).
  long split = -1;
};

struct PartitionConfig {
  PartitionScheme scheme = PartitionScheme::kNonIid;
  double lambda = 0.6;
  std::size_t chunks_per_class = 10;
  double train_fraction = 0.7;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  PartitionConfig partition;
  OptimizerConfig optimizer;
  bool reset_optimizer_each_round = false;

  Mode mode = Mode::kFlop;
  std::size_t clients = 10;            // S
  std::size_t clients_per_round = 2;   // m
  std::size_t rounds = 10;
  std::size_t local_epochs = 1;        // E
  std::size_t batch_size = 60;         // B
  double beta = 1.0;
  bool weighted = false;

  /// Local testing after every `eval_every` rounds (round 0 and the last
  /// round are always evaluated).
  std::size_t eval_every = 1;
  /// Global testing cadence; 0 disables it.
  std::size_t global_eval_every = 0;

  std::vector<std::uint64_t> seeds = {1};
  std::size_t threads = 1;
  std::string output_dir = "runs/default";
};

/// Parses and validates a JSON config. Unknown keys are rejected.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolved config as pretty JSON (threads and output_dir omitted since
/// they do not affect results).
std::string to_json(const ExperimentConfig& config);

/// Field-level checks that do not need the data.
void validate(const ExperimentConfig& config);

/// Model for the configured architecture and input shape.
ModelSpec resolve_model(const ExperimentConfig& config, std::size_t channels,
                        std::size_t height, std::size_t width, std::size_t classes);

SplitSpec resolve_split(const ExperimentConfig& config, const ModelSpec& spec);

}  // namespace flop
