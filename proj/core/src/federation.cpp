#include "flop/federation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

#include "flop/error.hpp"
#include "flop/tape.hpp"

namespace flop {

std::string_view to_string(Mode mode) {
  return mode == Mode::kFlop ? "flop" : "fedavg";
}

Mode parse_mode(std::string_view name) {
  if (name == "flop") return Mode::kFlop;
  if (name == "fedavg") return Mode::kFedAvg;
  throw ConfigError("unknown mode '" + std::string(name) + "' (flop|fedavg)");
}

SharedDelta make_delta(std::size_t client, ParamSet delta, std::size_t samples) {
  SharedDelta d;
  d.client = client;
  d.samples = samples;
  for (const auto& p : delta) {
    d.residual.add({p.name, Tensor::zeros_like(p.tensor), ParamTag::kShared});
  }
  d.delta = std::move(delta);
  return d;
}

std::vector<std::size_t> sample_clients(std::size_t total, std::size_t m, Rng& rng) {
  if (m == 0 || m > total) {
    throw ConfigError("cannot sample " + std::to_string(m) + " of " +
                      std::to_string(total) + " clients");
  }
  std::vector<std::size_t> ids(total);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + rng.below(total - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(m);
  return ids;
}

double train_step(ParamSet& params, Optimizer& optimizer, const ModelSpec& spec,
                  const Tensor& batch, std::span<const int> labels) {
  Tape tape;
  std::vector<Var> vars;
  const Var logits = record_forward(tape, params, spec, batch, vars);
  const Var loss = tape.softmax_xent(logits, labels);
  tape.backward(loss);
  ParamSet grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.add({params[i].name, tape.grad(vars[i]), params[i].tag});
  }
  optimizer.step(params, grads);
  return tape.value(loss)[0];
}

SharedDelta local_train(ClientState& client, const ParamSet& incoming_shared,
                        const Dataset& train_data, const ModelSpec& spec,
                        const LocalTrainOptions& options) {
  if (client.data.train.empty()) {
    throw ProtocolError("client " + std::to_string(client.id) +
                        " has an empty local training set");
  }
  if (options.batch_size == 0) throw ConfigError("batch size must be positive");
  assign_shared(client.params, incoming_shared);
  if (options.reset_optimizer) client.optimizer.reset();

  std::vector<std::size_t> order = client.data.train;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    order = client.data.train;
    client.batch_rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor batch = train_data.batch(idx);
      const std::vector<int> labels = train_data.batch_labels(idx);
      train_step(client.params, client.optimizer, spec, batch, labels);
    }
  }

  SharedDelta out;
  out.client = client.id;
  out.samples = client.data.train.size();
  std::size_t next = 0;
  for (const auto& p : client.params) {
    if (p.tag != ParamTag::kShared) continue;
    const Tensor& before = incoming_shared[next++].tensor;
    Tensor delta(before.shape());
    Tensor residual(before.shape());
    for (std::size_t i = 0; i < before.size(); ++i) {
      // TwoSum: before - after == delta + residual exactly.
      const double a = before[i];
      const double b = -p.tensor[i];
      const double s = a + b;
      const double bb = s - a;
      const double err = (a - (s - bb)) + (b - bb);
      delta[i] = s;
      residual[i] = err;
    }
    out.delta.add({p.name, std::move(delta), ParamTag::kShared});
    out.residual.add({p.name, std::move(residual), ParamTag::kShared});
  }
  return out;
}

namespace {

void check_keys(const ParamSet& server, const ParamSet& incoming,
                std::size_t client, const char* what) {
  if (incoming.size() != server.size()) {
    throw ProtocolError("client " + std::to_string(client) + " " + what +
                        " has " + std::to_string(incoming.size()) +
                        " entries, server holds " + std::to_string(server.size()));
  }
  for (std::size_t i = 0; i < server.size(); ++i) {
    if (incoming[i].name != server[i].name ||
        incoming[i].tensor.shape() != server[i].tensor.shape()) {
      throw ProtocolError("client " + std::to_string(client) + " " + what +
                          " entry '" + incoming[i].name + "' " +
                          shape_string(incoming[i].tensor.shape()) +
                          " does not match server '" + server[i].name + "' " +
                          shape_string(server[i].tensor.shape()));
    }
    if (incoming[i].tag != ParamTag::kShared) {
      throw ProtocolError("client " + std::to_string(client) + " " + what +
                          " carries private parameter '" + incoming[i].name + "'");
    }
  }
}

}  // namespace

void aggregate(ServerState& server, std::vector<SharedDelta> deltas, bool weighted) {
  if (deltas.empty()) throw ProtocolError("aggregate: no client updates");
  if (!(server.beta > 0.0)) throw ConfigError("aggregate: beta must be positive");
  std::sort(deltas.begin(), deltas.end(),
            [](const SharedDelta& a, const SharedDelta& b) { return a.client < b.client; });
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (i > 0 && deltas[i].client == deltas[i - 1].client) {
      throw ProtocolError("aggregate: duplicate update from client " +
                          std::to_string(deltas[i].client));
    }
    check_keys(server.shared, deltas[i].delta, deltas[i].client, "delta");
    check_keys(server.shared, deltas[i].residual, deltas[i].client, "residual");
  }

  // Per-client weights: 1 each (plain mean) or n_u.
  std::vector<double> weight(deltas.size(), 1.0);
  double total_weight = static_cast<double>(deltas.size());
  if (weighted) {
    total_weight = 0.0;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      if (deltas[i].samples == 0) {
        throw ProtocolError("aggregate: weighted mean needs sample counts (client " +
                            std::to_string(deltas[i].client) + ")");
      }
      weight[i] = static_cast<double>(deltas[i].samples);
      total_weight += weight[i];
    }
  }
  const double scale = server.beta / total_weight;

  for (std::size_t p = 0; p < server.shared.size(); ++p) {
    auto theta = server.shared[p].tensor.data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      double sum = 0.0, sum_residual = 0.0;
      for (std::size_t i = 0; i < deltas.size(); ++i) {
        if (weighted) {
          sum += weight[i] * deltas[i].delta[p].tensor[j];
          sum_residual += weight[i] * deltas[i].residual[p].tensor[j];
        } else {
          sum += deltas[i].delta[p].tensor[j];
          sum_residual += deltas[i].residual[p].tensor[j];
        }
      }
      const double step = scale * sum;
      const double step_residual = scale * sum_residual;
      // theta - step as an exact pair (t, e), then fold in the residual.
      const double a = theta[j];
      const double b = -step;
      const double t = a + b;
      const double bb = t - a;
      const double e = (a - (t - bb)) + (b - bb);
      theta[j] = t + (e - step_residual);
    }
  }
  ++server.round;
}

PrivacyAuditor::PrivacyAuditor(std::vector<std::string> private_names)
    : private_names_(std::move(private_names)) {}

void PrivacyAuditor::inspect(std::string_view stage, std::size_t round,
                             std::size_t client, const ParamSet& params) {
  ++inspected_;
  for (const auto& p : params) {
    const bool private_name =
        std::find(private_names_.begin(), private_names_.end(), p.name) !=
        private_names_.end();
    if (p.tag != ParamTag::kShared || private_name) {
      violations_.push_back(std::string(stage) + " round " + std::to_string(round) +
                            " client " + std::to_string(client) + ": '" +
                            p.name + "' (" + std::string(to_string(p.tag)) + ")");
    }
  }
}

AuditHook PrivacyAuditor::hook() {
  return [this](std::string_view stage, std::size_t round, std::size_t client,
                const ParamSet& params) { inspect(stage, round, client, params); };
}

void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& work) {
  std::vector<std::exception_ptr> errors(count);
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        work(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            work(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Federation::Federation(ModelSpec spec, SplitSpec split, FederationConfig config,
                       OptimizerConfig optimizer, const Dataset& train_data,
                       std::vector<ClientSplit> splits)
    : spec_(std::move(spec)),
      split_(split),
      config_(config),
      train_data_(&train_data) {
  validate(spec_);
  validate(optimizer);
  if (config_.mode == Mode::kFedAvg) split_ = SplitSpec::share_all(spec_);
  if (split_.boundary > spec_.layer_count()) {
    throw ConfigError("split boundary " + std::to_string(split_.boundary) +
                      " outside [0, " + std::to_string(spec_.layer_count()) + "]");
  }
  if (splits.empty()) throw ConfigError("federation needs at least one client");
  if (config_.clients_per_round == 0 || config_.clients_per_round > splits.size()) {
    throw ConfigError("clients_per_round=" + std::to_string(config_.clients_per_round) +
                      " must lie in [1, " + std::to_string(splits.size()) + "]");
  }
  if (config_.batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(config_.beta > 0.0)) throw ConfigError("beta must be positive");

  Rng server_init(config_.seed, "init", 0);
  const ParamSet initial = build_model(spec_, split_, server_init);
  server_.shared = shared_view(initial);
  server_.beta = config_.beta;

  clients_.reserve(splits.size());
  for (std::size_t u = 0; u < splits.size(); ++u) {
    if (splits[u].client != u) {
      throw ConfigError("client splits must be ordered by id");
    }
    Rng init(config_.seed, "init", u + 1);
    ParamSet params = build_model(spec_, split_, init);
    assign_shared(params, server_.shared);
    clients_.push_back(ClientState{u, std::move(params), std::move(splits[u]),
                                   Optimizer(optimizer),
                                   Rng(config_.seed, "batch", u)});
  }
}

RoundPlan Federation::plan_round() const {
  Rng sampler(config_.seed, "sampler", server_.round);
  RoundPlan plan;
  plan.round = server_.round;
  plan.clients = sample_clients(clients_.size(), config_.clients_per_round, sampler);
  plan.epochs = config_.epochs;
  plan.batch_size = config_.batch_size;
  return plan;
}

RoundResult Federation::run_round() {
  RoundResult result;
  result.plan = plan_round();
  result.trained = result.plan.clients;
  std::sort(result.trained.begin(), result.trained.end());

  const LocalTrainOptions options{config_.epochs, config_.batch_size,
                                  config_.reset_optimizer_each_round};
  const ParamSet broadcast = server_.shared;
  std::vector<SharedDelta> deltas(result.trained.size());
  const std::size_t round = server_.round;
  parallel_for(result.trained.size(), config_.threads, [&](std::size_t i) {
    const std::size_t u = result.trained[i];
    try {
      deltas[i] = local_train(clients_[u], broadcast, *train_data_, spec_, options);
    } catch (const Error& e) {
      throw Error(e.category(), "round " + std::to_string(round) + ", client " +
                                    std::to_string(u) + ": " + e.what());
    }
  });

  if (audit_) {
    for (const auto& d : deltas) {
      audit_("delta", round, d.client, d.delta);
      audit_("residual", round, d.client, d.residual);
    }
  }
  aggregate(server_, std::move(deltas), config_.weighted);
  if (audit_) audit_("server", round, static_cast<std::size_t>(-1), server_.shared);

  for (auto& c : clients_) assign_shared(c.params, server_.shared);
  return result;
}

}  // namespace flop
