#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "flop/dataset.hpp"
#include "flop/federation.hpp"
#include "flop/model.hpp"

namespace flop {

struct EvalResult {
  double loss = 0.0;      // mean cross-entropy
  double accuracy = 0.0;  // correct / count
  std::size_t correct = 0;
  std::size_t count = 0;
};

/// Evaluates `params` on the rows `indices` of `data`, in batches.
EvalResult evaluate(const ParamSet& params, const ModelSpec& spec,
                    const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size = 500);

/// K x K counts, rows = true class, columns = predicted class.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct LocalTestResult {
  double mean_loss = 0.0;
  double mean_accuracy = 0.0;
  std::vector<double> client_loss;
  std::vector<double> client_accuracy;
};

/// Each client tests its own model [M_s, M_p^u] on its own local test split;
/// the means are unweighted over all clients.
LocalTestResult local_test(std::span<const ClientState> clients,
                           const ModelSpec& spec, const Dataset& data,
                           std::size_t threads = 1);

/// Elementwise mean of every parameter (shared and private) over `models`,
/// summed in the given order then divided by the count.
ParamSet consensus_model(std::span<const ParamSet> models);

struct GlobalTestResult {
  double accuracy = 0.0;
  double loss = 0.0;
  ConfusionMatrix confusion;
};

/// Consensus of all client models evaluated on a held-out test set.
GlobalTestResult global_test(std::span<const ClientState> clients,
                             const ModelSpec& spec, const Dataset& test_set);

/// Evaluates one model on the whole `test_set` and fills a confusion matrix.
GlobalTestResult test_model(const ParamSet& params, const ModelSpec& spec,
                            const Dataset& test_set);

}  // namespace flop
