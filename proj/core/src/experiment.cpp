#include "flop/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include "flop/error.hpp"

namespace flop {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

/// Appends text and forces it to disk before returning.
void durable_append(const fs::path& path, const std::string& text) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw StateError("cannot open '" + path.string() + "' for writing");
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n < 0) {
      ::close(fd);
      throw StateError("write to '" + path.string() + "' failed");
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

void write_file(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::remove(path, ec);
  durable_append(path, text);
}

std::string metrics_rows(const RoundRecord& r) {
  std::string out;
  const std::string t = std::to_string(r.round);
  out += t + ",local_mean,," + format_double(r.mean_loss) + "," +
         format_double(r.mean_accuracy) + "\n";
  for (std::size_t u = 0; u < r.client_loss.size(); ++u) {
    out += t + ",local," + std::to_string(u) + "," + format_double(r.client_loss[u]) +
           "," + format_double(r.client_accuracy[u]) + "\n";
  }
  if (r.global_accuracy) {
    out += t + ",global,," + format_double(*r.global_loss) + "," +
           format_double(*r.global_accuracy) + "\n";
  }
  return out;
}

std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "# rows: true class, columns: predicted class\ntrue";
  for (std::size_t k = 0; k < m.size(); ++k) out += "," + std::to_string(k);
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += std::to_string(i);
    for (std::size_t v : m[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Dataset apply_limit(Dataset d, std::size_t per_class) {
  return per_class == 0 ? std::move(d) : d.limit_per_class(per_class);
}

}  // namespace

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  const DatasetConfig& dc = config.dataset;
  ExperimentData out;
  switch (dc.source) {
    case DatasetSource::kFashionMnist:
      out.train = load_fashion_mnist(dc.path, DatasetSplit::kTrain);
      out.test = load_fashion_mnist(dc.path, DatasetSplit::kTest);
      break;
    case DatasetSource::kCifar10:
      out.train = load_cifar10(dc.path, DatasetSplit::kTrain);
      out.test = load_cifar10(dc.path, DatasetSplit::kTest);
      break;
    case DatasetSource::kSynthetic:
      if (!dc.path.empty()) {
        out.train = load_dataset(dc.path);
        if (!dc.test_path.empty()) out.test = load_dataset(dc.test_path);
      } else {
        // Train and test share prototypes, so draw them as one set and split
        // each class's first test_counts[k] rows off as the test set.
        const std::size_t k = dc.synthetic_train_counts.size();
        std::vector<std::size_t> test_counts = dc.synthetic_test_counts;
        if (test_counts.empty()) test_counts.assign(k, 0);
        SyntheticSpec spec;
        spec.channels = dc.synthetic_channels;
        spec.height = dc.synthetic_height;
        spec.width = dc.synthetic_width;
        spec.noise = dc.synthetic_noise;
        for (std::size_t c = 0; c < k; ++c) {
          spec.class_counts.push_back(dc.synthetic_train_counts[c] + test_counts[c]);
        }
        Rng rng(dc.synthetic_seed, "synthetic", 0);
        Dataset all = gen_synthetic(spec, rng);
        std::vector<std::size_t> seen(k, 0), train_idx, test_idx;
        for (std::size_t i = 0; i < all.size(); ++i) {
          const auto c = static_cast<std::size_t>(all.labels[i]);
          (seen[c]++ < test_counts[c] ? test_idx : train_idx).push_back(i);
        }
        out.train = all.subset(train_idx);
        if (!test_idx.empty()) out.test = all.subset(test_idx);
      }
      break;
  }
  out.train = apply_limit(std::move(out.train), dc.train_per_class);
  if (out.test) out.test = apply_limit(std::move(*out.test), dc.test_per_class);
  return out;
}

ExperimentSetup prepare_experiment(const ExperimentConfig& config,
                                   const ExperimentData& data, std::uint64_t seed) {
  validate(config);
  const Dataset& train = data.train;
  if (train.size() == 0) throw ConfigError("training set is empty");
  if (data.test && (data.test->classes != train.classes ||
                    data.test->image_size() != train.image_size())) {
    throw ConfigError("global test set does not match the training set's shape");
  }
  if (config.global_eval_every > 0 && !data.test) {
    throw ConfigError("evaluation.global_every needs a global test set");
  }

  ExperimentSetup s;
  s.spec = resolve_model(config, train.channels(), train.height(), train.width(),
                         train.classes);
  s.split = resolve_split(config, s.spec);

  Rng part_rng(seed, "partition", 0);
  if (config.partition.scheme == PartitionScheme::kNonIid) {
    s.plan = partition_noniid(train.labels, train.classes, config.clients,
                              config.partition.chunks_per_class,
                              config.partition.lambda, part_rng);
  } else {
    s.plan = partition_iid(train.size(), config.clients, part_rng);
  }
  s.splits.reserve(config.clients);
  for (std::size_t u = 0; u < config.clients; ++u) {
    const std::vector<std::size_t> samples = s.plan.client_samples(u);
    Rng split_rng(seed, "split", u);
    s.splits.push_back(
        split_local(u, samples, config.partition.train_fraction, split_rng));
  }
  return s;
}

RunSummary summarize(const std::vector<RoundRecord>& records, std::uint64_t seed,
                     Mode mode) {
  if (records.empty()) throw StateError("no evaluated rounds to summarize");
  RunSummary s;
  s.seed = seed;
  s.mode = mode;
  s.best_local_accuracy = -1.0;
  for (const RoundRecord& r : records) {
    if (r.mean_accuracy > s.best_local_accuracy) {
      s.best_local_accuracy = r.mean_accuracy;
      s.best_round = r.round;
    }
    if (r.global_accuracy) s.final_global_accuracy = r.global_accuracy;
  }
  s.final_local_accuracy = records.back().mean_accuracy;
  s.final_local_loss = records.back().mean_loss;
  return s;
}

RunResult run_seed(const ExperimentConfig& config, const ExperimentData& data,
                   std::uint64_t seed, const RunOptions& options) {
  ExperimentSetup setup = prepare_experiment(config, data, seed);

  FederationConfig fc;
  fc.mode = config.mode;
  fc.clients_per_round = config.clients_per_round;
  fc.epochs = config.local_epochs;
  fc.batch_size = config.batch_size;
  fc.beta = config.beta;
  fc.weighted = config.weighted;
  fc.reset_optimizer_each_round = config.reset_optimizer_each_round;
  fc.threads = config.threads;
  fc.seed = seed;
  Federation fed(setup.spec, setup.split, fc, config.optimizer, data.train,
                 std::move(setup.splits));
  if (options.audit) fed.set_audit_hook(options.audit);

  const bool persist = !options.output_dir.empty();
  const fs::path metrics = options.output_dir / "metrics.csv";
  const fs::path timing = options.output_dir / "timing.csv";
  if (persist) {
    fs::create_directories(options.output_dir);
    ExperimentConfig resolved = config;
    resolved.seeds = {seed};
    write_file(options.output_dir / "config.resolved.json", to_json(resolved));
    write_file(metrics, std::string(kMetricsHeader) +
                            "\nround,scope,client,loss,accuracy\n");
    write_file(timing, "# wall-clock seconds; not deterministic\n"
                       "round,train_seconds,eval_seconds,clients\n");
  }

  RunResult result;
  std::vector<std::size_t> sampled;
  double train_seconds = 0.0;
  for (std::size_t t = 0;; ++t) {
    const bool last = t == config.rounds;
    if (t > 0) {
      const auto start = std::chrono::steady_clock::now();
      RoundResult rr = fed.run_round();
      train_seconds += seconds_since(start);
      sampled.insert(sampled.end(), rr.trained.begin(), rr.trained.end());
    }
    if (t == 0 || last || t % config.eval_every == 0) {
      const auto start = std::chrono::steady_clock::now();
      RoundRecord rec;
      rec.round = t;
      try {
        LocalTestResult lt = local_test(fed.clients(), fed.spec(), data.train,
                                        config.threads);
        rec.mean_loss = lt.mean_loss;
        rec.mean_accuracy = lt.mean_accuracy;
        rec.client_loss = std::move(lt.client_loss);
        rec.client_accuracy = std::move(lt.client_accuracy);
        if (config.global_eval_every > 0 &&
            (last || t % config.global_eval_every == 0)) {
          GlobalTestResult gt = global_test(fed.clients(), fed.spec(), *data.test);
          rec.global_accuracy = gt.accuracy;
          rec.global_loss = gt.loss;
          rec.confusion = std::move(gt.confusion);
        }
      } catch (const Error& e) {
        throw Error(e.category(),
                    "evaluation after round " + std::to_string(t) + ": " + e.what());
      }
      rec.sampled = std::move(sampled);
      sampled.clear();
      rec.train_seconds = train_seconds;
      train_seconds = 0.0;
      rec.eval_seconds = seconds_since(start);

      if (persist) {
        if (!rec.confusion.empty()) {
          write_file(options.output_dir / ("confusion_round_" + std::to_string(t) + ".csv"),
                     confusion_csv(rec.confusion));
        }
        durable_append(metrics, metrics_rows(rec));
        std::string clients;
        for (std::size_t i = 0; i < rec.sampled.size(); ++i) {
          clients += (i ? ";" : "") + std::to_string(rec.sampled[i]);
        }
        durable_append(timing, std::to_string(t) + "," + format_double(rec.train_seconds) +
                                   "," + format_double(rec.eval_seconds) + "," + clients +
                                   "\n");
      }
      if (options.progress) options.progress(seed, rec);
      result.records.push_back(std::move(rec));
    }
    if (last) break;
  }
  result.summary = summarize(result.records, seed, config.mode);
  return result;
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config,
                                      const RunOptions& options) {
  validate(config);
  const ExperimentData data = load_experiment_data(config);
  return run_experiment(config, data, options);
}

std::vector<RunResult> run_experiment(const ExperimentConfig& config,
                                      const ExperimentData& data,
                                      const RunOptions& options) {
  validate(config);
  // Fail on cross-field problems before any seed starts training.
  for (std::uint64_t seed : config.seeds) prepare_experiment(config, data, seed);

  std::vector<RunResult> runs;
  for (std::uint64_t seed : config.seeds) {
    RunOptions o = options;
    if (!o.output_dir.empty() && config.seeds.size() > 1) {
      o.output_dir /= "seed_" + std::to_string(seed);
    }
    runs.push_back(run_seed(config, data, seed, o));
  }
  if (!options.output_dir.empty()) {
    write_file(options.output_dir / "summary.csv", summary_csv(runs));
  }
  return runs;
}

SampleStats sample_stats(std::span<const double> values) {
  SampleStats s;
  if (values.empty()) {
    s.mean = s.stddev = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) {
    s.stddev = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

std::string summary_csv(std::span<const RunResult> runs) {
  std::string out =
      "# flop-summary v1; std uses the n-1 denominator\n"
      "seed,mode,best_local_accuracy,best_round,final_local_accuracy,"
      "final_local_loss,final_global_accuracy\n";
  std::vector<double> best, final_acc, final_loss, global;
  for (const RunResult& r : runs) {
    const RunSummary& s = r.summary;
    out += std::to_string(s.seed) + "," + std::string(to_string(s.mode)) + "," +
           format_double(s.best_local_accuracy) + "," + std::to_string(s.best_round) +
           "," + format_double(s.final_local_accuracy) + "," +
           format_double(s.final_local_loss) + "," +
           (s.final_global_accuracy ? format_double(*s.final_global_accuracy) : "") +
           "\n";
    best.push_back(s.best_local_accuracy);
    final_acc.push_back(s.final_local_accuracy);
    final_loss.push_back(s.final_local_loss);
    if (s.final_global_accuracy) global.push_back(*s.final_global_accuracy);
  }
  if (runs.empty()) return out;
  const std::string mode(to_string(runs.front().summary.mode));
  auto cell = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
  const SampleStats b = sample_stats(best), fa = sample_stats(final_acc),
                    fl = sample_stats(final_loss);
  const SampleStats g = global.size() == runs.size() ? sample_stats(global)
                                                     : SampleStats{NAN, NAN};
  out += "mean," + mode + "," + cell(b.mean) + ",," + cell(fa.mean) + "," +
         cell(fl.mean) + "," + cell(g.mean) + "\n";
  out += "std," + mode + "," + cell(b.stddev) + ",," + cell(fa.stddev) + "," +
         cell(fl.stddev) + "," + cell(g.stddev) + "\n";
  return out;
}

std::vector<MetricsRow> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open metrics file '" + path.string() + "'");
  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError("'" + path.string() + "' is not a flop-metrics v1 file", 0);
  }
  offset += line.size() + 1;
  if (!std::getline(in, line) || line != "round,scope,client,loss,accuracy") {
    throw FormatError("'" + path.string() + "' has an unexpected column header", offset);
  }
  offset += line.size() + 1;
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') {
      offset += line.size() + 1;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 5) {
      throw FormatError("'" + path.string() + "': row needs 5 cells", offset);
    }
    MetricsRow r;
    try {
      std::size_t used = 0;
      r.round = std::stoull(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument("round");
      r.scope = cells[1];
      if (!cells[2].empty()) r.client = std::stoull(cells[2]);
      r.loss = std::stod(cells[3]);
      r.accuracy = std::stod(cells[4]);
    } catch (const std::exception&) {
      throw FormatError("'" + path.string() + "': malformed row '" + line + "'", offset);
    }
    rows.push_back(std::move(r));
    offset += line.size() + 1;
  }
  return rows;
}

std::string compare_runs(std::span<const fs::path> runs) {
  if (runs.empty()) throw ConfigError("compare needs at least one run");
  struct Series {
    std::vector<std::size_t> rounds;
    std::vector<double> loss, acc;
  };
  std::vector<Series> series;
  for (const fs::path& p : runs) {
    const fs::path file = fs::is_directory(p) ? p / "metrics.csv" : p;
    Series s;
    for (const MetricsRow& r : read_metrics(file)) {
      if (r.scope != "local_mean") continue;
      s.rounds.push_back(r.round);
      s.loss.push_back(r.loss);
      s.acc.push_back(r.accuracy);
    }
    if (s.rounds.empty()) {
      throw AlignmentError("'" + file.string() + "' has no evaluated rounds");
    }
    series.push_back(std::move(s));
  }
  for (std::size_t i = 1; i < series.size(); ++i) {
    if (series[i].rounds != series[0].rounds) {
      throw AlignmentError("run " + std::to_string(i) + " ('" + runs[i].string() +
                           "') evaluates a different round grid than run 0 ('" +
                           runs[0].string() + "')");
    }
  }

  std::string out = "# flop-compare v1; deltas are run_i minus run0\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    out += "# run" + std::to_string(i) + ": " + runs[i].string() + "\n";
  }
  out += "round";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const std::string n = "run" + std::to_string(i);
    out += "," + n + "_loss," + n + "_accuracy";
    if (i > 0) out += "," + n + "_loss_delta," + n + "_accuracy_delta";
  }
  out += "\n";
  auto row = [&](const std::string& label, auto loss_of, auto acc_of) {
    std::string line = label;
    for (std::size_t i = 0; i < series.size(); ++i) {
      line += "," + format_double(loss_of(i)) + "," + format_double(acc_of(i));
      if (i > 0) {
        line += "," + format_double(loss_of(i) - loss_of(0)) + "," +
                format_double(acc_of(i) - acc_of(0));
      }
    }
    return line + "\n";
  };
  const std::size_t n = series[0].rounds.size();
  for (std::size_t t = 0; t < n; ++t) {
    out += row(
        std::to_string(series[0].rounds[t]),
        [&](std::size_t i) { return series[i].loss[t]; },
        [&](std::size_t i) { return series[i].acc[t]; });
  }
  out += row(
      "final", [&](std::size_t i) { return series[i].loss[n - 1]; },
      [&](std::size_t i) { return series[i].acc[n - 1]; });
  auto best_at = [&](std::size_t i) {
    return static_cast<std::size_t>(
        std::max_element(series[i].acc.begin(), series[i].acc.end()) -
        series[i].acc.begin());
  };
  out += row(
      "best", [&](std::size_t i) { return series[i].loss[best_at(i)]; },
      [&](std::size_t i) { return series[i].acc[best_at(i)]; });
  return out;
}

std::string partition_stats_csv(const ExperimentConfig& config,
                                const ExperimentData& data, std::uint64_t seed) {
  const ExperimentSetup s = prepare_experiment(config, data, seed);
  const std::size_t k = data.train.classes;
  const auto hist = class_histogram(s.plan, data.train.labels, k);
  std::string out = "# flop-partition v1; scheme=" +
                    std::string(to_string(config.partition.scheme)) +
                    " lambda=" + format_double(config.partition.lambda) +
                    " seed=" + std::to_string(seed) + "\nclient,designated,samples,train,test";
  for (std::size_t c = 0; c < k; ++c) out += ",class_" + std::to_string(c);
  out += "\n";
  for (std::size_t u = 0; u < hist.size(); ++u) {
    std::size_t total = 0;
    for (std::size_t v : hist[u]) total += v;
    out += std::to_string(u) + "," +
           (config.partition.scheme == PartitionScheme::kNonIid ? std::to_string(u % k)
                                                                 : std::string()) +
           "," + std::to_string(total) + "," + std::to_string(s.splits[u].train.size()) +
           "," + std::to_string(s.splits[u].test.size());
    for (std::size_t v : hist[u]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

}  // namespace flop
