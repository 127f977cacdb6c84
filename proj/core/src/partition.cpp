#include "flop/partition.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <string>

#include "flop/error.hpp"

namespace flop {

std::string_view to_string(PartitionScheme scheme) {
  return scheme == PartitionScheme::kNonIid ? "noniid" : "iid";
}

PartitionScheme parse_partition_scheme(std::string_view name) {
  if (name == "noniid") return PartitionScheme::kNonIid;
  if (name == "iid") return PartitionScheme::kIid;
  throw ConfigError("unknown partition scheme '" + std::string(name) + "'");
}

std::vector<std::size_t> PartitionPlan::client_samples(std::size_t client) const {
  std::vector<std::size_t> out;
  for (const Chunk& c : clients.at(client)) {
    out.insert(out.end(), c.samples.begin(), c.samples.end());
  }
  return out;
}

namespace {

std::size_t draw_class(std::span<const std::size_t> remaining,
                       std::size_t designated, double lambda, Rng& rng) {
  const std::size_t k = remaining.size();
  std::vector<double> weight(k, 0.0);
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (remaining[c] == 0) continue;
    if (k == 1) {
      weight[c] = 1.0;
    } else {
      weight[c] = c == designated ? lambda
                                  : (1.0 - lambda) / static_cast<double>(k - 1);
    }
    total += weight[c];
  }
  if (!(total > 0.0)) {
    for (std::size_t c = 0; c < k; ++c) weight[c] = remaining[c] > 0 ? 1.0 : 0.0;
    total = std::accumulate(weight.begin(), weight.end(), 0.0);
  }
  const double u = rng.uniform() * total;
  double cumulative = 0.0;
  std::size_t last = k;
  for (std::size_t c = 0; c < k; ++c) {
    if (weight[c] <= 0.0) continue;
    cumulative += weight[c];
    last = c;
    if (u < cumulative) return c;
  }
  return last;  // u rounded up to total
}

}  // namespace

PartitionPlan partition_noniid(std::span<const int> labels, std::size_t classes,
                               std::size_t clients,
                               std::size_t chunks_per_class, double lambda,
                               Rng& rng) {
  if (classes == 0) throw ConfigError("partition: class count must be positive");
  if (clients == 0) throw ConfigError("partition: client count must be positive");
  if (chunks_per_class == 0) {
    throw ConfigError("partition: chunks_per_class must be positive");
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("partition: lambda must lie in [0, 1]");
  }

  // Step 1: group sample indices by class, keeping index order.
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw LabelError("partition: label " + std::to_string(l) + " of sample " +
                       std::to_string(i) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
    by_class[static_cast<std::size_t>(l)].push_back(i);
  }

  // Step 2: equal chunks per class.
  for (std::size_t c = 0; c < classes; ++c) {
    if (by_class[c].empty() || by_class[c].size() % chunks_per_class != 0) {
      throw ConfigError("partition: class " + std::to_string(c) + " has " +
                        std::to_string(by_class[c].size()) +
                        " samples, not a positive multiple of chunks_per_class=" +
                        std::to_string(chunks_per_class));
    }
  }
  const std::size_t total_chunks = classes * chunks_per_class;
  if (total_chunks % clients != 0) {
    throw ConfigError("partition: " + std::to_string(total_chunks) +
                      " chunks cannot be split evenly over " +
                      std::to_string(clients) + " clients");
  }

  PartitionPlan plan;
  plan.scheme = PartitionScheme::kNonIid;
  plan.lambda = lambda;
  plan.chunks_per_class = chunks_per_class;
  plan.chunks_per_client = total_chunks / clients;
  plan.seed = rng.seed();
  plan.clients.resize(clients);

  // remaining_chunks[c] holds the untaken chunk positions of class c.
  std::vector<std::vector<std::size_t>> remaining_chunks(classes);
  std::vector<std::size_t> remaining_count(classes, chunks_per_class);
  for (auto& r : remaining_chunks) {
    r.resize(chunks_per_class);
    std::iota(r.begin(), r.end(), std::size_t{0});
  }

  // Step 3: clients draw in id order, one chunk per draw.
  for (std::size_t u = 0; u < clients; ++u) {
    const std::size_t designated = u % classes;
    for (std::size_t draw = 0; draw < plan.chunks_per_client; ++draw) {
      const std::size_t c = draw_class(remaining_count, designated, lambda, rng);
      auto& pool = remaining_chunks[c];
      const std::size_t pick = rng.below(pool.size());
      const std::size_t chunk_index = pool[pick];
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      --remaining_count[c];

      const std::size_t size = by_class[c].size() / chunks_per_class;
      Chunk chunk;
      chunk.label = static_cast<int>(c);
      chunk.index = chunk_index;
      const auto first = by_class[c].begin() +
                         static_cast<std::ptrdiff_t>(chunk_index * size);
      chunk.samples.assign(first, first + static_cast<std::ptrdiff_t>(size));
      plan.clients[u].push_back(std::move(chunk));
    }
  }
  return plan;
}

PartitionPlan partition_iid(std::size_t samples, std::size_t clients, Rng& rng) {
  if (clients == 0) throw ConfigError("partition: client count must be positive");
  if (clients > samples) {
    throw ConfigError("partition: " + std::to_string(clients) +
                      " clients for only " + std::to_string(samples) + " samples");
  }
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());

  const std::size_t per = samples / clients;
  if (samples % clients != 0) {
    std::cerr << "warning: IID partition drops " << samples % clients
              << " of " << samples << " samples (" << clients
              << " clients)\n";
  }
  PartitionPlan plan;
  plan.scheme = PartitionScheme::kIid;
  plan.chunks_per_client = 1;
  plan.seed = rng.seed();
  plan.clients.resize(clients);
  for (std::size_t u = 0; u < clients; ++u) {
    Chunk chunk;
    chunk.index = u;
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(u * per);
    chunk.samples.assign(first, first + static_cast<std::ptrdiff_t>(per));
    plan.clients[u].push_back(std::move(chunk));
  }
  return plan;
}

std::vector<std::vector<std::size_t>> class_histogram(
    const PartitionPlan& plan, std::span<const int> labels, std::size_t classes) {
  std::vector<std::vector<std::size_t>> hist(plan.client_count(),
                                             std::vector<std::size_t>(classes, 0));
  for (std::size_t u = 0; u < plan.client_count(); ++u) {
    for (const Chunk& c : plan.clients[u]) {
      for (std::size_t i : c.samples) {
        ++hist[u][static_cast<std::size_t>(labels[i])];
      }
    }
  }
  return hist;
}

ClientSplit split_local(std::size_t client, std::span<const std::size_t> samples,
                        double train_fraction, Rng& rng) {
  if (samples.size() < 2) {
    throw ConfigError("client " + std::to_string(client) + " holds " +
                      std::to_string(samples.size()) +
                      " samples; a local train/test split needs at least 2");
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("local train fraction must lie strictly between 0 and 1");
  }
  std::vector<std::size_t> order(samples.begin(), samples.end());
  rng.shuffle(order.begin(), order.end());
  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(order.size())));
  if (n_train == 0 || n_train == order.size()) {
    throw ConfigError("client " + std::to_string(client) + ": fraction " +
                      std::to_string(train_fraction) + " of " +
                      std::to_string(order.size()) +
                      " samples leaves an empty local train or test set");
  }
  ClientSplit split;
  split.client = client;
  split.train_fraction = train_fraction;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return split;
}

}  // namespace flop
