#pragma once

#include <map>
#include <optional>

#include <nlohmann/json.hpp>

#include "npr/ad/ops.hpp"
#include "npr/ad/ops_nn.hpp"

namespace npr::ad {

using ordered_json = nlohmann::ordered_json;

enum class LayerKind {
  Linear, ReLU, Tanh, Sigmoid, BatchNorm, GroupNorm, Dropout,
  Conv3D, MaxPool3D, MaxPool1D, Concat, Reshape, Repeat, Flatten,
};

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Linear: return "Linear";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::Tanh: return "Tanh";
    case LayerKind::Sigmoid: return "Sigmoid";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::GroupNorm: return "GroupNorm";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::Conv3D: return "Conv3D";
    case LayerKind::MaxPool3D: return "MaxPool3D";
    case LayerKind::MaxPool1D: return "MaxPool1D";
    case LayerKind::Concat: return "Concat";
    case LayerKind::Reshape: return "Reshape";
    case LayerKind::Repeat: return "Repeat";
    case LayerKind::Flatten: return "Flatten";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& s);

struct LayerDef {
  std::string name;
  LayerKind kind = LayerKind::Linear;
  std::vector<std::string> inputs;

  long in = 0, out = 0;                      // Linear
  long channels = 0, groups = 0;             // BatchNorm (channels) / GroupNorm
  std::array<long, 3> kernel{1, 1, 1};       // Conv3D / MaxPool3D
  std::array<long, 3> stride{1, 1, 1};
  std::array<long, 3> pad{0, 0, 0};
  long in_channels = 0, out_channels = 0;    // Conv3D
  double p = 0.0;                            // Dropout
  Shape target_shape;                        // Reshape
};

struct NetworkSpec {
  std::string name;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<LayerDef> layers;

  ordered_json to_json() const;
  static NetworkSpec from_json(const ordered_json& j);

  // Chain-style helpers used by the named architecture builders.
  LayerDef& add(LayerDef d) {
    layers.push_back(std::move(d));
    return layers.back();
  }
};

enum class Mode { Train, Eval };

template <typename T>
struct Network {
  NetworkSpec spec;
  std::map<std::string, Tensor<T>> params;   // "<layer>.w" etc.
  std::map<std::string, Tensor<T>> buffers;  // running statistics (non-trainable)

  void init(Rng& rng);
  // Trainable parameters in layer order (deterministic).
  std::vector<std::pair<std::string, Tensor<T>>> trainable() const;
  std::map<std::string, Tensor<T>> forward(const std::map<std::string, Tensor<T>>& inputs,
                                           Mode mode, Rng* rng = nullptr,
                                           bool update_bn_stats = true) const;
  Tensor<T> forward1(const Tensor<T>& input, Mode mode, Rng* rng = nullptr,
                     bool update_bn_stats = true) const {
    if (spec.inputs.size() != 1 || spec.outputs.size() != 1)
      throw std::invalid_argument("forward1 requires a single-input/single-output network");
    auto out = forward({{spec.inputs[0], input}}, mode, rng, update_bn_stats);
    return out.at(spec.outputs[0]);
  }
  // Deep copy (cloned parameter storage; shared spec).
  Network clone() const;
  void set_requires_grad(bool rg) {
    for (auto& [k, t] : params) const_cast<Tensor<T>&>(t).set_requires_grad(rg);
  }
};

template <typename T>
void Network<T>::init(Rng& rng) {
  params.clear();
  buffers.clear();
  auto kaiming = [&](Shape s, long fan_in) {
    T bound = T(std::sqrt(6.0 / double(fan_in)));
    auto t = Tensor<T>::zeros(s, true);
    for (auto& v : t.values()) v = T(rng.uniform(-bound, bound));
    return t;
  };
  for (auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::Linear:
        params[l.name + ".w"] = kaiming({l.out, l.in}, l.in);
        params[l.name + ".b"] = Tensor<T>::zeros({l.out}, true);
        break;
      case LayerKind::Conv3D: {
        long fan = l.in_channels * l.kernel[0] * l.kernel[1] * l.kernel[2];
        params[l.name + ".w"] =
            kaiming({l.out_channels, l.in_channels, l.kernel[0], l.kernel[1], l.kernel[2]}, fan);
        params[l.name + ".b"] = Tensor<T>::zeros({l.out_channels}, true);
        break;
      }
      case LayerKind::BatchNorm:
      case LayerKind::GroupNorm:
        params[l.name + ".gamma"] = Tensor<T>::filled({l.channels}, T(1), true);
        params[l.name + ".beta"] = Tensor<T>::zeros({l.channels}, true);
        if (l.kind == LayerKind::BatchNorm) {
          buffers[l.name + ".running_mean"] = Tensor<T>::zeros({l.channels});
          buffers[l.name + ".running_var"] = Tensor<T>::filled({l.channels}, T(1));
        }
        break;
      default:
        break;
    }
  }
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Network<T>::trainable() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (auto& l : spec.layers)
    for (const char* suff : {".w", ".b", ".gamma", ".beta"}) {
      auto it = params.find(l.name + suff);
      if (it != params.end()) out.push_back(*it);
    }
  return out;
}

template <typename T>
Network<T> Network<T>::clone() const {
  Network<T> c;
  c.spec = spec;
  for (auto& [k, t] : params) {
    c.params[k] = Tensor<T>::from_data(t.shape(), t.values(), t.requires_grad());
  }
  for (auto& [k, t] : buffers) c.buffers[k] = Tensor<T>::from_data(t.shape(), t.values());
  return c;
}

template <typename T>
std::map<std::string, Tensor<T>> Network<T>::forward(
    const std::map<std::string, Tensor<T>>& inputs, Mode mode, Rng* rng,
    bool update_bn_stats) const {
  std::map<std::string, Tensor<T>> env;
  for (auto& in_name : spec.inputs) {
    auto it = inputs.find(in_name);
    if (it == inputs.end()) throw std::invalid_argument("missing network input '" + in_name + "'");
    env[in_name] = it->second;
  }
  bool training = mode == Mode::Train;
  for (auto& l : spec.layers) {
    std::vector<Tensor<T>> in;
    for (auto& nm : l.inputs) {
      auto it = env.find(nm);
      if (it == env.end())
        throw std::invalid_argument("layer '" + l.name + "': unknown input '" + nm + "'");
      in.push_back(it->second);
    }
    try {
      Tensor<T> out;
      switch (l.kind) {
        case LayerKind::Linear:
          out = linear(in.at(0), params.at(l.name + ".w"), params.at(l.name + ".b"));
          break;
        case LayerKind::ReLU: out = relu(in.at(0)); break;
        case LayerKind::Tanh: out = tanh_op(in.at(0)); break;
        case LayerKind::Sigmoid: out = sigmoid(in.at(0)); break;
        case LayerKind::BatchNorm: {
          auto& rm = const_cast<Tensor<T>&>(buffers.at(l.name + ".running_mean"));
          auto& rv = const_cast<Tensor<T>&>(buffers.at(l.name + ".running_var"));
          out = batchnorm(in.at(0), params.at(l.name + ".gamma"), params.at(l.name + ".beta"),
                          rm, rv, training, update_bn_stats);
          break;
        }
        case LayerKind::GroupNorm:
          out = groupnorm(in.at(0), params.at(l.name + ".gamma"), params.at(l.name + ".beta"),
                          l.groups);
          break;
        case LayerKind::Dropout: out = dropout(in.at(0), l.p, training, rng); break;
        case LayerKind::Conv3D:
          out = conv3d(in.at(0), params.at(l.name + ".w"), params.at(l.name + ".b"), l.stride,
                       l.pad);
          break;
        case LayerKind::MaxPool3D: out = maxpool3d(in.at(0), l.kernel, l.stride, l.pad); break;
        case LayerKind::MaxPool1D: out = max_rows(in.at(0)); break;
        case LayerKind::Concat: out = concat_cols(in); break;
        case LayerKind::Reshape: out = reshape(in.at(0), l.target_shape); break;
        case LayerKind::Repeat: out = repeat_rows(in.at(0), in.at(1).rows()); break;
        case LayerKind::Flatten: out = reshape(in.at(0), Shape{1, in.at(0).size()}); break;
      }
      env[l.name] = out;
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("layer '" + l.name + "' (" + layer_kind_name(l.kind) +
                                  "): " + e.what());
    } catch (const std::out_of_range&) {
      throw std::invalid_argument("layer '" + l.name + "': missing parameters (init not run?)");
    }
  }
  std::map<std::string, Tensor<T>> out;
  for (auto& nm : spec.outputs) {
    auto it = env.find(nm);
    if (it == env.end()) throw std::invalid_argument("unknown network output '" + nm + "'");
    out[nm] = it->second;
  }
  return out;
}

}  // namespace npr::ad
