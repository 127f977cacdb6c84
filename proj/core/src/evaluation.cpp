#include "flop/evaluation.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "flop/error.hpp"
#include "flop/ops.hpp"

namespace flop {

namespace {

std::size_t argmax_row(const double* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

/// Visits (true label, predicted label) and accumulates loss * batch.
template <typename Visit>
double run_batches(const ParamSet& params, const ModelSpec& spec,
                   const Dataset& data, std::span<const std::size_t> indices,
                   std::size_t batch_size, Visit&& visit) {
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    const auto idx = indices.subspan(start, end - start);
    const Tensor logits = forward(params, spec, data.batch(idx));
    const std::vector<int> labels = data.batch_labels(idx);
    const ops::XentResult xent = ops::softmax_xent(logits, labels);
    loss_sum += xent.loss * static_cast<double>(idx.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      visit(labels[r], argmax_row(logits.data().data() + r * k, k));
    }
  }
  return loss_sum;
}

}  // namespace

EvalResult evaluate(const ParamSet& params, const ModelSpec& spec,
                    const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size) {
  if (indices.empty()) throw ProtocolError("evaluate: empty sample set");
  EvalResult r;
  const double loss_sum =
      run_batches(params, spec, data, indices, batch_size,
                  [&](int truth, std::size_t pred) {
                    if (static_cast<std::size_t>(truth) == pred) ++r.correct;
                  });
  r.count = indices.size();
  r.loss = loss_sum / static_cast<double>(r.count);
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.count);
  return r;
}

LocalTestResult local_test(std::span<const ClientState> clients,
                           const ModelSpec& spec, const Dataset& data,
                           std::size_t threads) {
  if (clients.empty()) throw ProtocolError("local_test: no clients");
  LocalTestResult out;
  out.client_loss.resize(clients.size());
  out.client_accuracy.resize(clients.size());
  parallel_for(clients.size(), threads, [&](std::size_t i) {
    const ClientState& c = clients[i];
    if (c.data.test.empty()) {
      throw ProtocolError("client " + std::to_string(c.id) +
                          " has an empty local test set");
    }
    const EvalResult r = evaluate(c.params, spec, data, c.data.test);
    out.client_loss[i] = r.loss;
    out.client_accuracy[i] = r.accuracy;
  });
  double loss = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    loss += out.client_loss[i];
    acc += out.client_accuracy[i];
  }
  out.mean_loss = loss / static_cast<double>(clients.size());
  out.mean_accuracy = acc / static_cast<double>(clients.size());
  return out;
}

ParamSet consensus_model(std::span<const ParamSet> models) {
  if (models.empty()) throw ProtocolError("consensus: no models");
  for (std::size_t m = 1; m < models.size(); ++m) {
    if (models[m].size() != models[0].size()) {
      throw ProtocolError("consensus: model " + std::to_string(m) +
                          " has a different architecture");
    }
    for (std::size_t p = 0; p < models[0].size(); ++p) {
      if (models[m][p].name != models[0][p].name ||
          models[m][p].tensor.shape() != models[0][p].tensor.shape()) {
        throw ProtocolError("consensus: model " + std::to_string(m) +
                            " parameter '" + models[m][p].name +
                            "' does not match '" + models[0][p].name + "'");
      }
    }
  }
  ParamSet out = models[0];
  const double n = static_cast<double>(models.size());
  for (std::size_t p = 0; p < out.size(); ++p) {
    auto dst = out[p].tensor.data();
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double sum = 0.0;
      for (const auto& m : models) sum += m[p].tensor[j];
      dst[j] = sum / n;
    }
  }
  return out;
}

GlobalTestResult test_model(const ParamSet& params, const ModelSpec& spec,
                            const Dataset& test_set) {
  std::vector<std::size_t> all(test_set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (all.empty()) throw ProtocolError("global test set is empty");
  GlobalTestResult r;
  r.confusion.assign(spec.classes, std::vector<std::size_t>(spec.classes, 0));
  const double loss_sum = run_batches(
      params, spec, test_set, all, 500, [&](int truth, std::size_t pred) {
        ++r.confusion[static_cast<std::size_t>(truth)][pred];
      });
  std::size_t trace = 0;
  for (std::size_t c = 0; c < spec.classes; ++c) trace += r.confusion[c][c];
  r.accuracy = static_cast<double>(trace) / static_cast<double>(all.size());
  r.loss = loss_sum / static_cast<double>(all.size());
  return r;
}

GlobalTestResult global_test(std::span<const ClientState> clients,
                             const ModelSpec& spec, const Dataset& test_set) {
  std::vector<ParamSet> models;
  models.reserve(clients.size());
  for (const auto& c : clients) models.push_back(c.params);
  return test_model(consensus_model(models), spec, test_set);
}

}  // namespace flop
