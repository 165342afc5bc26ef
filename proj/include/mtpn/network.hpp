#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtpn/architecture.hpp"
#include "mtpn/autograd.hpp"
#include "mtpn/config.hpp"
#include "mtpn/detection.hpp"

namespace mtpn {

/// Parameter groups that a training phase can freeze, keyed by path prefix.
enum class ParamGroup { backbone, fusion, det_head, seg_heads };

inline std::vector<std::string> group_prefixes(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone:
      return {"backbone."};
    case ParamGroup::fusion:
      return {"neck."};
    case ParamGroup::det_head:
      return {"det_head."};
    case ParamGroup::seg_heads:
      return {"seg_drivable.", "seg_lane."};
  }
  return {};
}

inline std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::backbone:
      return "backbone";
    case ParamGroup::fusion:
      return "fusion";
    case ParamGroup::det_head:
      return "det_head";
    case ParamGroup::seg_heads:
      return "seg_heads";
  }
  return "?";
}

inline ParamGroup parse_param_group(std::string_view s) {
  if (s == "backbone") return ParamGroup::backbone;
  if (s == "fusion") return ParamGroup::fusion;
  if (s == "det_head") return ParamGroup::det_head;
  if (s == "seg_heads") return ParamGroup::seg_heads;
  throw ConfigError("frozen_parameter_groups", "unknown group '" + std::string(s) + "'");
}

inline bool has_prefix(std::string_view name, std::string_view prefix) {
  return name.substr(0, prefix.size()) == prefix;
}

/// Batchnorm running statistics are stored and serialized like parameters
/// but never receive gradients.
inline bool is_buffer(std::string_view name) {
  auto ends = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
  };
  return ends(".bn.mean") || ends(".bn.var");
}

struct Model {
  ModelConfig config;
  std::map<std::string, Tensor<float>> parameters;
  std::set<std::string> trainable;

  std::int64_t parameter_count() const {
    std::int64_t total = 0;
    for (const auto& [_, t] : parameters) total += t.numel();
    return total;
  }

  const Tensor<float>& param(const std::string& name) const {
    auto it = parameters.find(name);
    if (it == parameters.end()) throw Error("model has no parameter '" + name + "'");
    return it->second;
  }

  std::set<std::string> learnable_names() const {
    std::set<std::string> out;
    for (const auto& [name, _] : parameters)
      if (!is_buffer(name)) out.insert(name);
    return out;
  }
};

enum class InitKind { he_uniform, zeros, ones };

struct ParamDecl {
  std::string name;
  Shape shape;
  InitKind init = InitKind::zeros;
  std::int64_t fan_in = 1;
};

/// Walks the topology on shapes only and records every parameter it touches.
class ParamDeclBackend {
 public:
  using Value = Shape;

  const std::vector<ParamDecl>& decls() const { return decls_; }

  Shape conv(const Shape& x, const std::string& path, const ConvSpec& s) {
    const Shape wshape{s.cout, s.cin / s.groups, s.kernel, s.kernel};
    declare({path + ".weight", wshape, InitKind::he_uniform, wshape.c * wshape.h * wshape.w});
    if (s.bias) declare({path + ".bias", {1, s.cout, 1, 1}, InitKind::zeros, 1});
    return ops::conv_output_shape(x, wshape, {s.stride, s.stride, s.pad, s.pad, s.groups});
  }
  Shape batchnorm(const Shape& x, const std::string& path, int c, GammaInit gamma) {
    const Shape v{1, c, 1, 1};
    declare({path + ".gamma", v, gamma == GammaInit::one ? InitKind::ones : InitKind::zeros, 1});
    declare({path + ".beta", v, InitKind::zeros, 1});
    declare({path + ".mean", v, InitKind::zeros, 1});
    declare({path + ".var", v, InitKind::ones, 1});
    return x;
  }
  Shape relu(const Shape& x, const std::string&) { return x; }
  Shape relu6(const Shape& x, const std::string&) { return x; }
  Shape add(const Shape& a, const Shape&, const std::string&) { return a; }
  Shape concat(const std::vector<Shape>& xs, const std::string&) {
    Shape out = xs.front();
    out.c = 0;
    for (const Shape& s : xs) out.c += s.c;
    return out;
  }
  Shape maxpool(const Shape& x, const ops::PoolParams& p, const std::string&) {
    return ops::pool_output_shape("maxpool", x, p);
  }
  Shape resize(const Shape& x, std::int64_t h, std::int64_t w, const std::string&) { return {x.n, x.c, h, w}; }
  Shape fuse(const std::vector<Shape>& xs, const std::string& path) {
    declare({path + ".weight", {1, static_cast<std::int64_t>(xs.size()), 1, 1}, InitKind::ones, 1});
    return xs.front();
  }
  Shape shape(const Shape& x) const { return x; }

 private:
  void declare(ParamDecl d) {
    if (seen_.insert(d.name).second) decls_.push_back(std::move(d));
  }

  std::vector<ParamDecl> decls_;
  std::set<std::string> seen_;
};

inline std::vector<ParamDecl> declare_parameters(const ModelConfig& cfg) {
  ParamDeclBackend backend;
  Topology<ParamDeclBackend> topo(backend, cfg);
  topo.full(Shape{1, 3, cfg.input_h, cfg.input_w});
  return backend.decls();
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
}  // namespace detail

/// Instantiates every parameter with He-uniform weights (bound sqrt(6 / fan_in)).
/// Each tensor draws from its own stream seeded by (seed, name), so the
/// values do not depend on declaration order.
inline Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config = config;
  for (const ParamDecl& d : declare_parameters(config)) {
    Tensor<float> t(d.shape);
    switch (d.init) {
      case InitKind::zeros:
        break;
      case InitKind::ones:
        std::fill(t.data().begin(), t.data().end(), 1.0f);
        break;
      case InitKind::he_uniform: {
        std::mt19937_64 rng(detail::splitmix64(seed ^ detail::fnv1a(d.name)));
        const double bound = std::sqrt(6.0 / static_cast<double>(d.fan_in));
        for (float& v : t.data()) v = static_cast<float>((2.0 * detail::unit_uniform(rng) - 1.0) * bound);
        break;
      }
    }
    m.parameters.emplace(d.name, std::move(t));
  }
  m.trainable = m.learnable_names();
  return m;
}

/// Executes the topology on real tensors through the autograd graph.
/// Parameters are borrowed from the model, which must outlive the graph.
class GraphBackend {
 public:
  using Value = ag::Var<float>;

  /// With track_gradients, trainable parameters become gradient-requiring leaves.
  GraphBackend(const Model& model, bool track_gradients) : model_(model), track_(track_gradients) {}

  Value conv(const Value& x, const std::string& path, const ConvSpec& s) {
    Value w = param(path + ".weight");
    Value b = s.bias ? param(path + ".bias") : Value{};
    return ag::conv2d(x, w, b, {s.stride, s.stride, s.pad, s.pad, s.groups});
  }
  Value batchnorm(const Value& x, const std::string& path, int, GammaInit) {
    return ag::batchnorm(x, param(path + ".gamma"), param(path + ".beta"), param(path + ".mean"),
                         param(path + ".var"), kBatchnormEps);
  }
  Value relu(const Value& x, const std::string&) { return ag::relu(x); }
  Value relu6(const Value& x, const std::string&) { return ag::relu6(x); }
  Value add(const Value& a, const Value& b, const std::string&) { return ag::add(a, b); }
  Value concat(const std::vector<Value>& xs, const std::string&) { return ag::concat_channels(xs); }
  Value maxpool(const Value& x, const ops::PoolParams& p, const std::string&) { return ag::maxpool(x, p); }
  Value resize(const Value& x, std::int64_t h, std::int64_t w, const std::string&) {
    return ag::resize_bilinear(x, h, w);
  }
  Value fuse(const std::vector<Value>& xs, const std::string& path) {
    return ag::weighted_fusion(xs, param(path + ".weight"), kFusionEps);
  }
  Shape shape(const Value& v) const { return v.shape(); }

  /// Leaf for a named parameter, created once per backend.
  Value param(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    const Tensor<float>& t = model_.param(name);
    const bool grad = track_ && model_.trainable.contains(name);
    Value v = Value::borrow(t, grad);
    leaves_.emplace(name, v);
    return v;
  }

  /// Gradients accumulated on parameter leaves by the last backward pass.
  std::map<std::string, const Tensor<float>*> gradients() const {
    std::map<std::string, const Tensor<float>*> out;
    for (const auto& [name, v] : leaves_)
      if (v.grad()) out.emplace(name, v.grad());
    return out;
  }

 private:
  const Model& model_;
  bool track_;
  std::unordered_map<std::string, Value> leaves_;
};

struct Pyramid {
  Tensor<float> c2, c3, c4, c5;
};

struct FusedFeatures {
  Tensor<float> p3, p4, p5;
};

namespace detail {
inline RawPredictions<float> to_raw(const HeadsOf<ag::Var<float>>& h) {
  return {{h.detection[0].value(), h.detection[1].value(), h.detection[2].value()}, h.drivable.value(),
          h.lane.value()};
}
}  // namespace detail

/// Stride-4/8/16/32 features of the configured backbone.
inline Pyramid backbone_forward(const Model& model, const Tensor<float>& image) {
  ag::NoGradGuard no_grad;
  GraphBackend backend(model, false);
  Topology<GraphBackend> topo(backend, model.config);
  auto p = topo.backbone(ag::Var<float>::borrow(image, false));
  return {p.c2.value(), p.c3.value(), p.c4.value(), p.c5.value()};
}

inline FusedFeatures fuse_pyramid(const Model& model, const Pyramid& pyr) {
  ag::NoGradGuard no_grad;
  GraphBackend backend(model, false);
  Topology<GraphBackend> topo(backend, model.config);
  using V = ag::Var<float>;
  auto f = topo.neck({V::borrow(pyr.c2, false), V::borrow(pyr.c3, false), V::borrow(pyr.c4, false),
                      V::borrow(pyr.c5, false)});
  return {f.p3.value(), f.p4.value(), f.p5.value()};
}

inline RawPredictions<float> heads_forward(const Model& model, const FusedFeatures& fused,
                                           const Tensor<float>& skip_c2) {
  ag::NoGradGuard no_grad;
  GraphBackend backend(model, false);
  Topology<GraphBackend> topo(backend, model.config);
  using V = ag::Var<float>;
  auto h = topo.heads({V::borrow(fused.p3, false), V::borrow(fused.p4, false), V::borrow(fused.p5, false)},
                      V::borrow(skip_c2, false));
  return detail::to_raw(h);
}

/// Full inference forward pass; intermediate maps are released as soon as
/// they are consumed.
inline RawPredictions<float> forward(const Model& model, const Tensor<float>& image) {
  ag::NoGradGuard no_grad;
  GraphBackend backend(model, false);
  Topology<GraphBackend> topo(backend, model.config);
  return detail::to_raw(topo.full(ag::Var<float>::borrow(image, false)));
}

}  // namespace mtpn
