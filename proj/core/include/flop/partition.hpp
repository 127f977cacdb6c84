#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "flop/rng.hpp"

namespace flop {

enum class PartitionScheme { kNonIid, kIid };

std::string_view to_string(PartitionScheme scheme);
PartitionScheme parse_partition_scheme(std::string_view name);

/// A block of same-class samples (non-IID) or a client's whole slice (IID,
/// label = -1).
struct Chunk {
  int label = -1;
  std::size_t index = 0;  // position of the chunk within its class
  std::vector<std::size_t> samples;
};

struct PartitionPlan {
  PartitionScheme scheme = PartitionScheme::kNonIid;
  double lambda = 0.0;
  std::size_t chunks_per_class = 0;
  std::size_t chunks_per_client = 0;
  std::uint64_t seed = 0;
  /// clients[u] lists client u's chunks in draw order.
  std::vector<std::vector<Chunk>> clients;

  std::size_t client_count() const noexcept { return clients.size(); }

  /// Sample indices of client u, concatenated in draw order.
  std::vector<std::size_t> client_samples(std::size_t client) const;
};

/// Label-skewed assignment of equal class chunks.
///
/// Samples are grouped by class (stable in index order) and each class is
/// cut into `chunks_per_class` equal chunks. Clients draw in id order, one
/// chunk at a time, until each holds total_chunks / clients chunks. For
/// client u the designated class is u mod K: it is chosen with probability
/// `lambda`, every other class with (1 - lambda) / (K - 1). Exhausted classes
/// drop out and the remaining weights are renormalized; if no weight remains
/// the non-exhausted classes are chosen uniformly. The chunk inside the
/// chosen class is uniform over that class's remaining chunks.
PartitionPlan partition_noniid(std::span<const int> labels, std::size_t classes,
                               std::size_t clients,
                               std::size_t chunks_per_class, double lambda,
                               Rng& rng);

/// One shuffle, then equal contiguous slices of floor(N / clients); the
/// remainder is dropped with a warning on stderr.
PartitionPlan partition_iid(std::size_t samples, std::size_t clients, Rng& rng);

/// histogram[u][c] = samples of class c held by client u.
std::vector<std::vector<std::size_t>> class_histogram(
    const PartitionPlan& plan, std::span<const int> labels, std::size_t classes);

struct ClientSplit {
  std::size_t client = 0;
  double train_fraction = 0.0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then the first floor(fraction * n) samples train and the
/// rest test. Both parts must be non-empty.
ClientSplit split_local(std::size_t client, std::span<const std::size_t> samples,
                        double train_fraction, Rng& rng);

}  // namespace flop
