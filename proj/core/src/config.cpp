#include "flop/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "flop/error.hpp"
#include "json.hpp"

namespace flop {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

LayerSpec parse_layer(const json& j, std::size_t i) {
  const std::string where = "model.layers[" + std::to_string(i) + "]";
  reject_unknown(j, {"type", "outputs", "kernel", "stride", "padding", "relu", "pool"},
                 where);
  LayerSpec l;
  std::string type = "conv";
  read(j, "type", type, where);
  if (type == "conv") {
    l.kind = LayerKind::kConv;
  } else if (type == "linear") {
    l.kind = LayerKind::kLinear;
    l.relu = false;
  } else {
    throw ConfigError(where + ".type must be conv or linear");
  }
  read(j, "outputs", l.outputs, where);
  read(j, "kernel", l.kernel, where);
  read(j, "stride", l.stride, where);
  read(j, "padding", l.padding, where);
  read(j, "relu", l.relu, where);
  read(j, "pool", l.pool, where);
  return l;
}

json layer_json(const LayerSpec& l) {
  json j;
  j["type"] = l.kind == LayerKind::kConv ? "conv" : "linear";
  j["outputs"] = l.outputs;
  if (l.kind == LayerKind::kConv) {
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["padding"] = l.padding;
    j["pool"] = l.pool;
  }
  j["relu"] = l.relu;
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(root,
                 {"dataset", "model", "partition", "optimizer", "federation",
                  "evaluation", "seed", "seeds", "threads", "output_dir"},
                 "config");

  ExperimentConfig c;
  if (root.contains("dataset")) {
    const json& d = root["dataset"];
    reject_unknown(d, {"kind", "path", "test_path", "train_per_class", "test_per_class", "synthetic"},
                   "dataset");
    std::string kind = "fashion-mnist";
    read(d, "kind", kind, "dataset");
    c.dataset.source = parse_dataset_source(kind);
    read(d, "path", c.dataset.path, "dataset");
    read(d, "test_path", c.dataset.test_path, "dataset");
    read(d, "train_per_class", c.dataset.train_per_class, "dataset");
    read(d, "test_per_class", c.dataset.test_per_class, "dataset");
    if (d.contains("synthetic")) {
      const json& s = d["synthetic"];
      reject_unknown(s, {"train_counts", "test_counts", "channels", "height", "width",
                         "noise", "seed"},
                     "dataset.synthetic");
      read(s, "train_counts", c.dataset.synthetic_train_counts, "dataset.synthetic");
      read(s, "test_counts", c.dataset.synthetic_test_counts, "dataset.synthetic");
      read(s, "channels", c.dataset.synthetic_channels, "dataset.synthetic");
      read(s, "height", c.dataset.synthetic_height, "dataset.synthetic");
      read(s, "width", c.dataset.synthetic_width, "dataset.synthetic");
      read(s, "noise", c.dataset.synthetic_noise, "dataset.synthetic");
      read(s, "seed", c.dataset.synthetic_seed, "dataset.synthetic");
    }
  }
  if (root.contains("model")) {
    const json& m = root["model"];
    reject_unknown(m, {"arch", "layers", "split"}, "model");
    read(m, "arch", c.model.arch, "model");
    if (m.contains("layers")) {
      if (!m["layers"].is_array()) throw ConfigError("model.layers must be an array");
      for (std::size_t i = 0; i < m["layers"].size(); ++i) {
        c.model.layers.push_back(parse_layer(m["layers"][i], i));
      }
    }
    if (m.contains("split")) {
      const json& s = m["split"];
      if (s.is_string()) {
        const std::string v = s.get<std::string>();
        if (v == "before_last") {
          c.model.split = -1;
        } else if (v == "all") {
          c.model.split = 1L << 20;  // clamped to layer count in resolve_split
        } else if (v == "none") {
          c.model.split = 0;
        } else {
          throw ConfigError("model.split must be an integer, before_last, all or none");
        }
      } else {
        read(m, "split", c.model.split, "model");
      }
    }
  }
  if (root.contains("partition")) {
    const json& p = root["partition"];
    reject_unknown(p, {"scheme", "lambda", "chunks_per_class", "train_fraction"},
                   "partition");
    std::string scheme = "noniid";
    read(p, "scheme", scheme, "partition");
    c.partition.scheme = parse_partition_scheme(scheme);
    read(p, "lambda", c.partition.lambda, "partition");
    read(p, "chunks_per_class", c.partition.chunks_per_class, "partition");
    read(p, "train_fraction", c.partition.train_fraction, "partition");
  }
  if (root.contains("optimizer")) {
    const json& o = root["optimizer"];
    reject_unknown(o, {"kind", "learning_rate", "weight_decay", "beta1", "beta2",
                       "epsilon", "reset_each_round"},
                   "optimizer");
    std::string kind = "sgd";
    read(o, "kind", kind, "optimizer");
    c.optimizer.kind = parse_optimizer_kind(kind);
    read(o, "learning_rate", c.optimizer.learning_rate, "optimizer");
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
    read(o, "beta1", c.optimizer.beta1, "optimizer");
    read(o, "beta2", c.optimizer.beta2, "optimizer");
    read(o, "epsilon", c.optimizer.epsilon, "optimizer");
    read(o, "reset_each_round", c.reset_optimizer_each_round, "optimizer");
  }
  if (root.contains("federation")) {
    const json& f = root["federation"];
    reject_unknown(f, {"mode", "clients", "clients_per_round", "rounds", "local_epochs",
                       "batch_size", "beta", "weighted"},
                   "federation");
    std::string mode = "flop";
    read(f, "mode", mode, "federation");
    c.mode = parse_mode(mode);
    read(f, "clients", c.clients, "federation");
    read(f, "clients_per_round", c.clients_per_round, "federation");
    read(f, "rounds", c.rounds, "federation");
    read(f, "local_epochs", c.local_epochs, "federation");
    read(f, "batch_size", c.batch_size, "federation");
    read(f, "beta", c.beta, "federation");
    read(f, "weighted", c.weighted, "federation");
  }
  if (root.contains("evaluation")) {
    const json& e = root["evaluation"];
    reject_unknown(e, {"every", "global_every"}, "evaluation");
    read(e, "every", c.eval_every, "evaluation");
    read(e, "global_every", c.global_eval_every, "evaluation");
  }
  if (root.contains("seed") && root.contains("seeds")) {
    throw ConfigError("give either seed or seeds, not both");
  }
  if (root.contains("seed")) {
    std::uint64_t s = 0;
    read(root, "seed", s, "config");
    c.seeds = {s};
  }
  read(root, "seeds", c.seeds, "config");
  read(root, "threads", c.threads, "config");
  read(root, "output_dir", c.output_dir, "config");
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  ExperimentConfig c = parse_config(ss.str());
  // Relative dataset paths resolve against the config file's directory.
  if (!c.dataset.path.empty() && std::filesystem::path(c.dataset.path).is_relative()) {
    const auto candidate = path.parent_path() / c.dataset.path;
    if (std::filesystem::exists(candidate)) c.dataset.path = candidate.string();
  }
  if (!c.dataset.test_path.empty() &&
      std::filesystem::path(c.dataset.test_path).is_relative()) {
    const auto candidate = path.parent_path() / c.dataset.test_path;
    if (std::filesystem::exists(candidate)) c.dataset.test_path = candidate.string();
  }
  return c;
}

void validate(const ExperimentConfig& c) {
  if (c.clients == 0) throw ConfigError("federation.clients must be positive");
  if (c.clients_per_round == 0 || c.clients_per_round > c.clients) {
    throw ConfigError("federation.clients_per_round must lie in [1, clients]");
  }
  if (c.batch_size == 0) throw ConfigError("federation.batch_size must be positive");
  if (!(c.beta > 0.0)) throw ConfigError("federation.beta must be positive");
  if (c.eval_every == 0) throw ConfigError("evaluation.every must be positive");
  if (c.seeds.empty()) throw ConfigError("at least one seed is required");
  if (c.threads == 0) throw ConfigError("threads must be positive");
  if (!(c.partition.lambda >= 0.0 && c.partition.lambda <= 1.0)) {
    throw ConfigError("partition.lambda must lie in [0, 1]");
  }
  if (c.partition.chunks_per_class == 0) {
    throw ConfigError("partition.chunks_per_class must be positive");
  }
  if (!(c.partition.train_fraction > 0.0 && c.partition.train_fraction < 1.0)) {
    throw ConfigError("partition.train_fraction must lie strictly between 0 and 1");
  }
  validate(c.optimizer);
  if (c.model.arch != "small_cnn" && c.model.arch != "cifar_cnn" &&
      c.model.arch != "custom") {
    throw ConfigError("model.arch must be small_cnn, cifar_cnn or custom");
  }
  if (c.model.arch == "custom" && c.model.layers.empty()) {
    throw ConfigError("model.arch custom needs model.layers");
  }
  if (c.dataset.source == DatasetSource::kSynthetic && c.dataset.path.empty()) {
    if (c.dataset.synthetic_train_counts.empty()) {
      throw ConfigError("synthetic dataset needs synthetic.train_counts or a path");
    }
    if (!c.dataset.synthetic_test_counts.empty() &&
        c.dataset.synthetic_test_counts.size() != c.dataset.synthetic_train_counts.size()) {
      throw ConfigError("synthetic.test_counts must list one count per class");
    }
  } else if (c.dataset.path.empty()) {
    throw ConfigError("dataset.path is required for " +
                      std::string(to_string(c.dataset.source)));
  }
}

ModelSpec resolve_model(const ExperimentConfig& c, std::size_t channels,
                        std::size_t height, std::size_t width, std::size_t classes) {
  ModelSpec spec;
  if (c.model.arch == "small_cnn") {
    spec = small_cnn(channels, height, width, classes);
  } else if (c.model.arch == "cifar_cnn") {
    spec = cifar_cnn(classes);
    spec.channels = channels;
    spec.height = height;
    spec.width = width;
  } else {
    spec.name = "custom";
    spec.channels = channels;
    spec.height = height;
    spec.width = width;
    spec.classes = classes;
    spec.layers = c.model.layers;
  }
  validate(spec);
  return spec;
}

SplitSpec resolve_split(const ExperimentConfig& c, const ModelSpec& spec) {
  const long layers = static_cast<long>(spec.layer_count());
  long boundary = c.model.split;
  if (boundary < 0) boundary += layers;
  if (boundary > layers && c.model.split == (1L << 20)) boundary = layers;
  if (boundary < 0 || boundary > layers) {
    throw ConfigError("model.split " + std::to_string(c.model.split) +
                      " outside the " + std::to_string(layers) + "-layer model");
  }
  return SplitSpec{static_cast<std::size_t>(boundary)};
}

std::string to_json(const ExperimentConfig& c) {
  json j;
  j["dataset"]["kind"] = std::string(to_string(c.dataset.source));
  j["dataset"]["path"] = c.dataset.path;
  if (!c.dataset.test_path.empty()) j["dataset"]["test_path"] = c.dataset.test_path;
  j["dataset"]["train_per_class"] = c.dataset.train_per_class;
  j["dataset"]["test_per_class"] = c.dataset.test_per_class;
  if (c.dataset.source == DatasetSource::kSynthetic) {
    json s;
    s["train_counts"] = c.dataset.synthetic_train_counts;
    s["test_counts"] = c.dataset.synthetic_test_counts;
    s["channels"] = c.dataset.synthetic_channels;
    s["height"] = c.dataset.synthetic_height;
    s["width"] = c.dataset.synthetic_width;
    s["noise"] = c.dataset.synthetic_noise;
    s["seed"] = c.dataset.synthetic_seed;
    j["dataset"]["synthetic"] = s;
  }
  j["model"]["arch"] = c.model.arch;
  if (!c.model.layers.empty()) {
    json layers = json::array();
    for (const auto& l : c.model.layers) layers.push_back(layer_json(l));
    j["model"]["layers"] = layers;
  }
  j["model"]["split"] = c.model.split;
  j["partition"]["scheme"] = std::string(to_string(c.partition.scheme));
  j["partition"]["lambda"] = c.partition.lambda;
  j["partition"]["chunks_per_class"] = c.partition.chunks_per_class;
  j["partition"]["train_fraction"] = c.partition.train_fraction;
  j["optimizer"]["kind"] = std::string(to_string(c.optimizer.kind));
  j["optimizer"]["learning_rate"] = c.optimizer.learning_rate;
  j["optimizer"]["weight_decay"] = c.optimizer.weight_decay;
  j["optimizer"]["beta1"] = c.optimizer.beta1;
  j["optimizer"]["beta2"] = c.optimizer.beta2;
  j["optimizer"]["epsilon"] = c.optimizer.epsilon;
  j["optimizer"]["reset_each_round"] = c.reset_optimizer_each_round;
  j["federation"]["mode"] = std::string(to_string(c.mode));
  j["federation"]["clients"] = c.clients;
  j["federation"]["clients_per_round"] = c.clients_per_round;
  j["federation"]["rounds"] = c.rounds;
  j["federation"]["local_epochs"] = c.local_epochs;
  j["federation"]["batch_size"] = c.batch_size;
  j["federation"]["beta"] = c.beta;
  j["federation"]["weighted"] = c.weighted;
  j["evaluation"]["every"] = c.eval_every;
  j["evaluation"]["global_every"] = c.global_eval_every;
  j["seeds"] = c.seeds;
  return j.dump(2) + "\n";
}

}  // namespace flop
