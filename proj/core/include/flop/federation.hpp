#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "flop/dataset.hpp"
#include "flop/model.hpp"
#include "flop/optimizer.hpp"
#include "flop/partition.hpp"
#include "flop/rng.hpp"

namespace flop {

/// kFlop exchanges only the Shared prefix; kFedAvg runs the same pipeline
/// with the split forced to share the whole model.
enum class Mode { kFlop, kFedAvg };

std::string_view to_string(Mode mode);
Mode parse_mode(std::string_view name);

struct ServerState {
  ParamSet shared;  // M_s
  std::size_t round = 0;
  double beta = 1.0;
};

struct ClientState {
  std::size_t id = 0;
  ParamSet params;  // M^u = [M_s^u, M_p^u]
  ClientSplit data;
  Optimizer optimizer;
  Rng batch_rng;
};

/// A client's change to the shared parameters over one round,
/// before - after. Each element is carried as an unevaluated sum
/// delta + residual, where delta is the rounded difference and residual the
/// exact rounding error, so the pair equals before - after exactly.
struct SharedDelta {
  std::size_t client = 0;
  ParamSet delta;
  ParamSet residual;
  std::size_t samples = 0;
};

/// Plain-valued delta (zero residual), e.g. for tests or external input.
SharedDelta make_delta(std::size_t client, ParamSet delta, std::size_t samples = 0);

struct RoundPlan {
  std::size_t round = 0;
  std::vector<std::size_t> clients;  // U_t, draw order
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
};

/// m distinct ids from [0, total), uniform without replacement (partial
/// Fisher-Yates).
std::vector<std::size_t> sample_clients(std::size_t total, std::size_t m, Rng& rng);

struct LocalTrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  bool reset_optimizer = false;
};

/// Installs `incoming_shared` into the client, trains the full model for the
/// given epochs (fresh shuffle per epoch, short last batch kept) and returns
/// before - after for every shared parameter.
SharedDelta local_train(ClientState& client, const ParamSet& incoming_shared,
                        const Dataset& train_data, const ModelSpec& spec,
                        const LocalTrainOptions& options);

/// One mini-batch step: forward, softmax cross-entropy, backward, optimizer.
/// Returns the batch loss.
double train_step(ParamSet& params, Optimizer& optimizer, const ModelSpec& spec,
                  const Tensor& batch, std::span<const int> labels);

/// M_s <- M_s - beta * (1/|U|) * sum_u delta_u, accumulated in ascending
/// client id. With `weighted`, the mean uses sample counts instead.
void aggregate(ServerState& server, std::vector<SharedDelta> deltas,
               bool weighted = false);

/// Called with every structure the server sees: "delta", "residual" (per
/// client) and "server" (after each update).
using AuditHook = std::function<void(std::string_view stage, std::size_t round,
                                     std::size_t client, const ParamSet& params)>;

/// Audit hook that flags any Private-tagged entry or any name the clients
/// hold privately.
class PrivacyAuditor {
 public:
  explicit PrivacyAuditor(std::vector<std::string> private_names);

  void inspect(std::string_view stage, std::size_t round, std::size_t client,
               const ParamSet& params);
  AuditHook hook();

  std::size_t inspected() const noexcept { return inspected_; }
  std::size_t violations() const noexcept { return violations_.size(); }
  const std::vector<std::string>& violation_log() const noexcept { return violations_; }

 private:
  std::vector<std::string> private_names_;
  std::size_t inspected_ = 0;
  std::vector<std::string> violations_;
};

struct FederationConfig {
  Mode mode = Mode::kFlop;
  std::size_t clients_per_round = 1;  // m
  std::size_t epochs = 1;             // E
  std::size_t batch_size = 32;        // B
  double beta = 1.0;
  bool weighted = false;
  bool reset_optimizer_each_round = false;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

struct RoundResult {
  RoundPlan plan;
  std::vector<std::size_t> trained;  // U_t ascending
};

/// Server plus all clients of one simulated federation.
class Federation {
 public:
  /// The server's M_s comes from the "init" stream with index 0; client u's
  /// private layers come from "init" index u + 1. `splits[u]` indexes into
  /// `train_data`.
  Federation(ModelSpec spec, SplitSpec split, FederationConfig config,
             OptimizerConfig optimizer, const Dataset& train_data,
             std::vector<ClientSplit> splits);

  /// U_t for the next round, drawn from the ("sampler", t) stream.
  RoundPlan plan_round() const;

  /// Sampled clients train (possibly in parallel), the server aggregates in
  /// client-id order, and the new M_s is broadcast to every client.
  RoundResult run_round();

  void set_audit_hook(AuditHook hook) { audit_ = std::move(hook); }

  const ModelSpec& spec() const noexcept { return spec_; }
  const SplitSpec& split() const noexcept { return split_; }
  const FederationConfig& config() const noexcept { return config_; }
  const ServerState& server() const noexcept { return server_; }
  const std::vector<ClientState>& clients() const noexcept { return clients_; }
  const Dataset& train_data() const noexcept { return *train_data_; }

 private:
  ModelSpec spec_;
  SplitSpec split_;
  FederationConfig config_;
  const Dataset* train_data_;
  ServerState server_;
  std::vector<ClientState> clients_;
  AuditHook audit_;
};

/// Runs `work(i)` for i in [0, count) on up to `threads` threads. Exceptions
/// are rethrown for the lowest failing index.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& work);

}  // namespace flop
