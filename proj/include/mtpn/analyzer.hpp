#pragma once

#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "mtpn/architecture.hpp"
#include "mtpn/config.hpp"

namespace mtpn {

struct LayerCost {
  std::string path;
  std::string kind;
  std::int64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  Shape output;
};

struct CostReport {
  std::string model_label;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<LayerCost> per_layer;
  std::int64_t total_params = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_flops = 0;
  std::int64_t est_model_size_bytes = 0;
};

/// Shape-only walk of the topology that prices every layer from closed-form
/// formulas. Deliberately does not call into the operator implementations.
class CostBackend {
 public:
  using Value = Shape;

  const std::vector<LayerCost>& layers() const { return layers_; }
  const std::vector<std::pair<std::string, Shape>>& tensors() const { return tensors_; }

  Shape conv(const Shape& x, const std::string& path, const ConvSpec& s) {
    if (x.c != s.cin) throw ShapeError(path, "cin", "input has " + std::to_string(x.c) + " channels, layer expects " + std::to_string(s.cin));
    if (s.cin % s.groups || s.cout % s.groups) throw ShapeError(path, "groups", "channels not divisible by groups");
    const std::int64_t ho = (x.h + 2 * s.pad - s.kernel) / s.stride + 1;
    const std::int64_t wo = (x.w + 2 * s.pad - s.kernel) / s.stride + 1;
    if (ho < 1 || wo < 1) throw ShapeError(path, "height/width", "non-positive output size");
    const Shape out{x.n, s.cout, ho, wo};
    const std::int64_t per_filter = (s.cin / s.groups) * s.kernel * s.kernel;
    const auto macs = static_cast<std::uint64_t>(out.numel() * per_filter);
    std::uint64_t flops = 2 * macs;
    std::int64_t params = 0;
    if (first_visit(path)) {
      params = s.cout * per_filter;
      tensor(path + ".weight", {s.cout, s.cin / s.groups, s.kernel, s.kernel});
      if (s.bias) {
        params += s.cout;
        tensor(path + ".bias", {1, s.cout, 1, 1});
      }
    }
    if (s.bias) flops += static_cast<std::uint64_t>(out.numel());
    layers_.push_back({path, "conv", params, macs, flops, out});
    return out;
  }

  Shape batchnorm(const Shape& x, const std::string& path, int c, GammaInit) {
    if (x.c != c) throw ShapeError(path, "c", "channel mismatch");
    std::int64_t params = 0;
    if (first_visit(path)) {
      for (const char* f : {".gamma", ".beta", ".mean", ".var"}) tensor(path + f, {1, c, 1, 1});
      params = 4 * std::int64_t{c};
    }
    layers_.push_back({path, "batchnorm", params, 0, 2 * elems(x), x});
    return x;
  }

  Shape relu(const Shape& x, const std::string& path) { return pointwise(x, path, "relu", 1); }
  Shape relu6(const Shape& x, const std::string& path) { return pointwise(x, path, "relu6", 1); }

  Shape add(const Shape& a, const Shape& b, const std::string& path) {
    if (!(a == b)) throw ShapeError(path, "shape", a.str() + " vs " + b.str());
    return pointwise(a, path, "add", 1);
  }

  Shape concat(const std::vector<Shape>& xs, const std::string& path) {
    Shape out = xs.front();
    out.c = 0;
    for (const Shape& s : xs) {
      if (s.n != out.n || s.h != out.h || s.w != out.w) throw ShapeError(path, "h/w", "concat operands disagree");
      out.c += s.c;
    }
    layers_.push_back({path, "concat", 0, 0, 0, out});
    return out;
  }

  Shape maxpool(const Shape& x, const ops::PoolParams& p, const std::string& path) {
    const Shape out{x.n, x.c, (x.h + 2 * p.pad - p.kernel) / p.stride + 1, (x.w + 2 * p.pad - p.kernel) / p.stride + 1};
    layers_.push_back({path, "maxpool", 0, 0, static_cast<std::uint64_t>(p.kernel * p.kernel) * elems(out), out});
    return out;
  }

  Shape resize(const Shape& x, std::int64_t h, std::int64_t w, const std::string& path) {
    const Shape out{x.n, x.c, h, w};
    layers_.push_back({path, "resize_bilinear", 0, 0, 8 * elems(out), out});
    return out;
  }

  Shape fuse(const std::vector<Shape>& xs, const std::string& path) {
    for (const Shape& s : xs)
      if (!(s == xs.front())) throw ShapeError(path, "shape", "fusion inputs disagree");
    const auto m = static_cast<std::int64_t>(xs.size());
    const bool fresh = first_visit(path);
    if (fresh) tensor(path + ".weight", {1, m, 1, 1});
    layers_.push_back({path, "fusion", fresh ? m : 0, 0, static_cast<std::uint64_t>(2 * m - 1) * elems(xs.front()), xs.front()});
    return xs.front();
  }

  Shape shape(const Shape& x) const { return x; }

 private:
  static std::uint64_t elems(const Shape& s) { return static_cast<std::uint64_t>(s.n * s.c * s.h * s.w); }

  Shape pointwise(const Shape& x, const std::string& path, const char* kind, std::uint64_t per) {
    layers_.push_back({path, kind, 0, 0, per * elems(x), x});
    return x;
  }

  void tensor(const std::string& name, Shape s) { tensors_.emplace_back(name, s); }

  // Shared layers (the detection head runs once per scale) own their weights once.
  bool first_visit(const std::string& path) { return visited_.insert(path).second; }

  std::vector<LayerCost> layers_;
  std::vector<std::pair<std::string, Shape>> tensors_;
  std::set<std::string> visited_;
};

/// Checkpoint bytes for a set of named rank-4 float tensors under `config`:
/// magic, version, config blob, tensor count, then per tensor its name, rank,
/// dims, dtype tag and data.
inline std::int64_t checkpoint_size_bytes(const ModelConfig& config,
                                          const std::vector<std::pair<std::string, Shape>>& tensors) {
  std::int64_t bytes = 4 + 4 + 4 + static_cast<std::int64_t>(to_json(config).dump().size()) + 4;
  for (const auto& [name, s] : tensors) bytes += 4 + static_cast<std::int64_t>(name.size()) + 4 + 4 * 4 + 1 + 4 * s.numel();
  return bytes;
}

inline std::string model_label(const ModelConfig& c) { return to_string(c.backbone); }

/// Per-layer cost of the whole network (backbone, neck, every head) at h x w, batch 1.
inline CostReport count_flops(const ModelConfig& config, std::int64_t h, std::int64_t w) {
  config.validate();
  ModelConfig::check_resolution(static_cast<int>(h), static_cast<int>(w));
  CostBackend backend;
  Topology<CostBackend> topo(backend, config);
  topo.full(Shape{1, 3, h, w});

  CostReport r;
  r.model_label = model_label(config);
  r.h = h;
  r.w = w;
  r.per_layer = backend.layers();
  for (const LayerCost& l : r.per_layer) {
    r.total_params += l.params;
    r.total_macs += l.macs;
    r.total_flops += l.flops;
  }
  r.est_model_size_bytes = checkpoint_size_bytes(config, backend.tensors());
  return r;
}

/// Parameter and size fields; priced at the configured input resolution.
inline CostReport count_params(const ModelConfig& config) { return count_flops(config, config.input_h, config.input_w); }

struct ModelComparison {
  CostReport a;
  CostReport b;
  double params_ratio = 0;  // a / b
  double macs_ratio = 0;
  double flops_ratio = 0;
  double size_ratio = 0;
};

inline ModelComparison compare_models(const CostReport& a, const CostReport& b) {
  if (a.h != b.h || a.w != b.w)
    throw ValueError("compare_models: resolution mismatch " + std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                     std::to_string(b.h) + "x" + std::to_string(b.w));
  auto ratio = [](double x, double y) { return x / y; };
  return {a,
          b,
          ratio(double(a.total_params), double(b.total_params)),
          ratio(double(a.total_macs), double(b.total_macs)),
          ratio(double(a.total_flops), double(b.total_flops)),
          ratio(double(a.est_model_size_bytes), double(b.est_model_size_bytes))};
}

inline json to_json(const CostReport& r, bool per_layer = true) {
  json j{{"model_label", r.model_label},
         {"resolution", {{"h", r.h}, {"w", r.w}}},
         {"total_params", r.total_params},
         {"total_macs", r.total_macs},
         {"total_flops", r.total_flops},
         {"est_model_size_bytes", r.est_model_size_bytes}};
  if (per_layer) {
    json rows = json::array();
    for (const LayerCost& l : r.per_layer)
      rows.push_back({{"path", l.path},
                      {"kind", l.kind},
                      {"params", l.params},
                      {"macs", l.macs},
                      {"flops", l.flops},
                      {"output", {l.output.n, l.output.c, l.output.h, l.output.w}}});
    j["per_layer"] = std::move(rows);
  }
  return j;
}

inline json to_json(const ModelComparison& c) {
  return json{{"a", to_json(c.a, false)},
              {"b", to_json(c.b, false)},
              {"ratios",
               {{"params", c.params_ratio}, {"macs", c.macs_ratio}, {"flops", c.flops_ratio}, {"size", c.size_ratio}}}};
}

namespace detail {
inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string table_row(const std::string& a, const std::string& b, const std::string& c, const std::string& d,
                             const std::string& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %12s %16s %16s %12s\n", a.c_str(), b.c_str(), c.c_str(), d.c_str(), e.c_str());
  return buf;
}
}  // namespace detail

/// Aligned text table: backbone, parameters, FLOPs (2*MAC), MACs, model size.
inline std::string format_table(const std::vector<CostReport>& reports) {
  if (reports.empty()) return {};
  const std::string res = std::to_string(reports[0].h) + "x" + std::to_string(reports[0].w);
  std::string out = detail::table_row("Backbone", "# params", "FLOPs (" + res + ")", "MACs (" + res + ")", "Model size");
  for (const CostReport& r : reports) {
    out += detail::table_row(r.model_label, detail::fmt("%.2f M", double(r.total_params) / 1e6),
                             detail::fmt("%.2f G", double(r.total_flops) / 1e9),
                             detail::fmt("%.2f G", double(r.total_macs) / 1e9),
                             detail::fmt("%.1f MB", double(r.est_model_size_bytes) / 1e6));
  }
  return out;
}

inline std::string format_table(const ModelComparison& c) {
  std::string out = format_table(std::vector<CostReport>{c.a, c.b});
  out += detail::table_row("ratio", detail::fmt("%.2fx", c.params_ratio), detail::fmt("%.2fx", c.flops_ratio),
                           detail::fmt("%.2fx", c.macs_ratio), detail::fmt("%.2fx", c.size_ratio));
  return out;
}

}  // namespace mtpn
