#include "flop/model.hpp"

#include <cmath>

#include "flop/error.hpp"
#include "flop/ops.hpp"

namespace flop {

std::string_view to_string(ParamTag tag) {
  return tag == ParamTag::kShared ? "shared" : "private";
}

ParamSet::ParamSet(std::vector<Param> params) {
  for (auto& p : params) add(std::move(p));
}

void ParamSet::add(Param p) {
  if (find(p.name) != nullptr) {
    throw ConfigError("duplicate parameter name '" + p.name + "'");
  }
  params_.push_back(std::move(p));
}

const Param* ParamSet::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.name);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i].name != other[i].name ||
        params_[i].tensor.shape() != other[i].tensor.shape() ||
        params_[i].tag != other[i].tag) {
      return false;
    }
  }
  return true;
}

std::uint64_t checksum(const ParamSet& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params) {
    for (unsigned char c : p.name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= checksum(p.tensor);
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

ParamSet filter(const ParamSet& params, ParamTag tag) {
  ParamSet out;
  for (const auto& p : params) {
    if (p.tag == tag) out.add(p);
  }
  return out;
}

}  // namespace

ParamSet shared_view(const ParamSet& params) {
  return filter(params, ParamTag::kShared);
}

ParamSet private_view(const ParamSet& params) {
  return filter(params, ParamTag::kPrivate);
}

void assign_shared(ParamSet& params, const ParamSet& new_shared) {
  std::size_t next = 0;
  for (auto& p : params) {
    if (p.tag != ParamTag::kShared) continue;
    if (next >= new_shared.size()) {
      throw ProtocolError("shared update is missing parameter '" + p.name + "'");
    }
    const Param& src = new_shared[next++];
    if (src.name != p.name || src.tensor.shape() != p.tensor.shape()) {
      throw ProtocolError("shared update entry '" + src.name + "' " +
                          shape_string(src.tensor.shape()) +
                          " does not match '" + p.name + "' " +
                          shape_string(p.tensor.shape()));
    }
    if (src.tag != ParamTag::kShared) {
      throw ProtocolError("shared update carries private parameter '" +
                          src.name + "'");
    }
  }
  if (next != new_shared.size()) {
    throw ProtocolError("shared update has " +
                        std::to_string(new_shared.size()) +
                        " entries, model shares " + std::to_string(next));
  }
  next = 0;
  for (auto& p : params) {
    if (p.tag == ParamTag::kShared) p.tensor = new_shared[next++].tensor;
  }
}

ParamSet replace_shared(const ParamSet& params, const ParamSet& new_shared) {
  ParamSet out = params;
  assign_shared(out, new_shared);
  return out;
}

ModelSpec small_cnn(std::size_t channels, std::size_t height,
                    std::size_t width, std::size_t classes) {
  ModelSpec spec;
  spec.name = "small_cnn";
  spec.channels = channels;
  spec.height = height;
  spec.width = width;
  spec.classes = classes;
  spec.layers = {
      {LayerKind::kConv, 16, 5, 1, 0, true, 2},
      {LayerKind::kConv, 32, 5, 1, 0, true, 2},
      {LayerKind::kLinear, classes, 0, 1, 0, false, 0},
  };
  return spec;
}

ModelSpec cifar_cnn(std::size_t classes) {
  ModelSpec spec;
  spec.name = "cifar_cnn";
  spec.channels = 3;
  spec.height = 32;
  spec.width = 32;
  spec.classes = classes;
  spec.layers = {
      {LayerKind::kConv, 16, 3, 1, 1, true, 0},
      {LayerKind::kConv, 16, 3, 1, 1, true, 2},
      {LayerKind::kConv, 32, 3, 1, 1, true, 0},
      {LayerKind::kConv, 32, 3, 1, 1, true, 2},
      {LayerKind::kLinear, classes, 0, 1, 0, false, 0},
  };
  return spec;
}

namespace {

struct Walk {
  std::vector<ParamShape> params;
  std::size_t out_features = 0;
};

Walk walk(const ModelSpec& spec) {
  auto fail = [&](std::size_t layer, const std::string& why) {
    throw ConfigError("model '" + spec.name + "' layer " +
                      std::to_string(layer) + ": " + why);
  };
  if (spec.layers.empty()) throw ConfigError("model '" + spec.name + "' has no layers");
  if (spec.channels == 0 || spec.height == 0 || spec.width == 0 ||
      spec.classes == 0) {
    throw ConfigError("model '" + spec.name + "' has a zero input dimension or class count");
  }
  Walk w;
  std::size_t c = spec.channels, h = spec.height, wd = spec.width;
  bool flat = false;
  std::size_t features = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.outputs == 0) fail(i, "zero outputs");
    if (l.kind == LayerKind::kConv) {
      if (flat) fail(i, "convolution after a linear layer");
      if (l.kernel == 0 || l.stride == 0) fail(i, "kernel and stride must be >= 1");
      if (l.kernel > h + 2 * l.padding || l.kernel > wd + 2 * l.padding) {
        fail(i, "kernel larger than padded input " + std::to_string(h) + "x" +
                    std::to_string(wd));
      }
      const std::string base = "conv" + std::to_string(i);
      w.params.push_back({base + ".weight", {l.outputs, c, l.kernel, l.kernel}, i});
      w.params.push_back({base + ".bias", {l.outputs}, i});
      h = ops::conv_output_extent(h, l.kernel, l.stride, l.padding);
      wd = ops::conv_output_extent(wd, l.kernel, l.stride, l.padding);
      c = l.outputs;
      if (l.pool) {
        if (l.pool > h || l.pool > wd) fail(i, "pool window exceeds feature map");
        h = ops::conv_output_extent(h, l.pool, l.pool, 0);
        wd = ops::conv_output_extent(wd, l.pool, l.pool, 0);
      }
    } else {
      if (l.pool) fail(i, "pooling after a linear layer");
      const std::size_t in = flat ? features : c * h * wd;
      const std::string base = "linear" + std::to_string(i);
      w.params.push_back({base + ".weight", {in, l.outputs}, i});
      w.params.push_back({base + ".bias", {l.outputs}, i});
      flat = true;
      features = l.outputs;
    }
  }
  if (!flat || spec.layers.back().kind != LayerKind::kLinear) {
    throw ConfigError("model '" + spec.name + "' must end in a linear layer");
  }
  if (features != spec.classes) {
    throw ConfigError("model '" + spec.name + "' outputs " +
                      std::to_string(features) + " values for " +
                      std::to_string(spec.classes) + " classes");
  }
  w.out_features = features;
  return w;
}

}  // namespace

void validate(const ModelSpec& spec) { walk(spec); }

std::vector<ParamShape> param_shapes(const ModelSpec& spec) {
  return walk(spec).params;
}

ParamSet build_model(const ModelSpec& spec, const SplitSpec& split, Rng& rng) {
  const auto shapes = param_shapes(spec);
  if (split.boundary > spec.layer_count()) {
    throw ConfigError("split boundary " + std::to_string(split.boundary) +
                      " outside [0, " + std::to_string(spec.layer_count()) + "]");
  }
  ParamSet params;
  for (const auto& ps : shapes) {
    Tensor t(ps.shape);
    if (ps.shape.size() > 1) {
      // weight: fan_in is everything but the output axis
      const std::size_t fan_in = spec.layers[ps.layer].kind == LayerKind::kConv
                                     ? shape_size(ps.shape) / ps.shape[0]
                                     : ps.shape[0];
      const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : t.data()) v = rng.normal() * scale;
    }
    params.add({ps.name, std::move(t),
                ps.layer < split.boundary ? ParamTag::kShared : ParamTag::kPrivate});
  }
  return params;
}

namespace {

void check_batch(const ModelSpec& spec, const Tensor& batch) {
  if (batch.rank() != 4 || batch.dim(1) != spec.channels ||
      batch.dim(2) != spec.height || batch.dim(3) != spec.width) {
    throw DimensionError("model '" + spec.name + "' expects Bx" +
                         std::to_string(spec.channels) + "x" +
                         std::to_string(spec.height) + "x" +
                         std::to_string(spec.width) + " input, got " +
                         shape_string(batch.shape()));
  }
}

void check_params(const ModelSpec& spec, const ParamSet& params) {
  const auto shapes = param_shapes(spec);
  if (shapes.size() != params.size()) {
    throw DimensionError("model '" + spec.name + "' needs " +
                         std::to_string(shapes.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (shapes[i].name != params[i].name ||
        shapes[i].shape != params[i].tensor.shape()) {
      throw DimensionError("parameter '" + params[i].name + "' " +
                           shape_string(params[i].tensor.shape()) +
                           " does not match '" + shapes[i].name + "' " +
                           shape_string(shapes[i].shape));
    }
  }
}

}  // namespace

Tensor forward(const ParamSet& params, const ModelSpec& spec,
               const Tensor& batch) {
  check_batch(spec, batch);
  check_params(spec, params);
  Tensor x = batch;
  std::size_t p = 0;
  for (const LayerSpec& l : spec.layers) {
    const Tensor& w = params[p++].tensor;
    const Tensor& b = params[p++].tensor;
    if (l.kind == LayerKind::kConv) {
      x = ops::conv2d(x, w, b, l.stride, l.padding);
      if (l.relu) x = ops::relu(x);
      if (l.pool) x = ops::maxpool2d(x, l.pool, l.pool).output;
    } else {
      const std::size_t rows = x.dim(0);
      if (x.rank() != 2) x = std::move(x).reshaped({rows, x.size() / rows});
      x = ops::matmul(x, w);
      const std::size_t cols = x.dim(1);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) x[r * cols + c] += b[c];
      if (l.relu) x = ops::relu(x);
    }
  }
  return x;
}

Var record_forward(Tape& tape, const ParamSet& params, const ModelSpec& spec,
                   const Tensor& batch, std::vector<Var>& param_vars) {
  check_batch(spec, batch);
  check_params(spec, params);
  param_vars.clear();
  for (const auto& p : params) param_vars.push_back(tape.leaf(p.tensor, true));
  Var x = tape.leaf(batch, false);
  std::size_t p = 0;
  for (const LayerSpec& l : spec.layers) {
    const Var w = param_vars[p++];
    const Var b = param_vars[p++];
    if (l.kind == LayerKind::kConv) {
      x = tape.conv2d(x, w, b, l.stride, l.padding);
      if (l.relu) x = tape.relu(x);
      if (l.pool) x = tape.maxpool2d(x, l.pool, l.pool);
    } else {
      if (tape.value(x).rank() != 2) x = tape.flatten(x);
      x = tape.add_row_bias(tape.matmul(x, w), b);
      if (l.relu) x = tape.relu(x);
    }
  }
  return x;
}

}  // namespace flop
