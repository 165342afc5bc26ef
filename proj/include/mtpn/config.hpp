#pragma once

#include <array>
#include <cmath>
#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "mtpn/error.hpp"

namespace mtpn {

using json = nlohmann::json;

enum class Backbone { resnet50, mobilenetv2 };

inline std::string to_string(Backbone b) { return b == Backbone::resnet50 ? "resnet50" : "mobilenetv2"; }

inline Backbone parse_backbone(std::string_view s) {
  if (s == "resnet50") return Backbone::resnet50;
  if (s == "mobilenetv2") return Backbone::mobilenetv2;
  throw ConfigError("backbone", "unknown backbone '" + std::string(s) + "' (expected resnet50 or mobilenetv2)");
}

inline constexpr int kAnchorsPerCell = 3;
inline constexpr int kSegClasses = 2;
inline constexpr std::array<int, 3> kDetectionStrides{8, 16, 32};
inline constexpr float kFusionEps = 1e-4f;
inline constexpr float kBatchnormEps = 1e-5f;

/// Width and height of one prior box, in input pixels.
struct AnchorShape {
  double w = 0;
  double h = 0;
};

/// Declarative description of the multi-task network.
struct ModelConfig {
  Backbone backbone = Backbone::mobilenetv2;
  int num_classes = 10;
  int fusion_width = 128;
  int fusion_repeats = 2;
  int head_depth = 2;
  // Segmentation heads: width of the projected stride-4 skip and of the head convs.
  int skip_width = 64;
  int seg_width = 128;
  std::array<double, 3> aspect_ratios{0.5, 1.0, 2.0};
  double anchor_base_scale = 4.0;
  int input_h = 384;
  int input_w = 640;

  /// Defaults for a backbone. Segmentation head widths follow the backbone
  /// because its stride-4 feature differs by an order of magnitude in width.
  static ModelConfig for_backbone(Backbone b) {
    ModelConfig c;
    c.backbone = b;
    if (b == Backbone::resnet50) {
      c.skip_width = 256;
      c.seg_width = 256;
    }
    return c;
  }

  int detection_channels() const { return kAnchorsPerCell * (5 + num_classes); }

  void validate() const {
    auto positive = [](int v, const char* field) {
      if (v < 1) throw ConfigError(field, "must be a positive integer, got " + std::to_string(v));
    };
    positive(num_classes, "num_classes");
    positive(fusion_width, "fusion_width");
    positive(fusion_repeats, "fusion_repeats");
    positive(head_depth, "head_depth");
    positive(skip_width, "skip_width");
    positive(seg_width, "seg_width");
    check_resolution(input_h, input_w);
    for (std::size_t i = 0; i < aspect_ratios.size(); ++i) {
      if (!(aspect_ratios[i] > 0) || !std::isfinite(aspect_ratios[i]))
        throw ConfigError("aspect_ratios", "must be strictly positive");
      for (std::size_t j = 0; j < i; ++j)
        if (aspect_ratios[i] == aspect_ratios[j]) throw ConfigError("aspect_ratios", "must be distinct");
    }
    if (!(anchor_base_scale > 0) || !std::isfinite(anchor_base_scale))
      throw ConfigError("anchor_base_scale", "must be positive");
  }

  static void check_resolution(int h, int w) {
    if (h < 32 || h % 32 != 0) throw ConfigError("input_h", "must be a positive multiple of 32, got " + std::to_string(h));
    if (w < 32 || w % 32 != 0) throw ConfigError("input_w", "must be a positive multiple of 32, got " + std::to_string(w));
  }

  /// aw = base * sqrt(r), ah = base / sqrt(r) with base = anchor_base_scale * stride.
  std::array<AnchorShape, 3> anchors(int stride) const {
    std::array<AnchorShape, 3> out{};
    const double base = anchor_base_scale * stride;
    for (std::size_t i = 0; i < 3; ++i) {
      const double r = std::sqrt(aspect_ratios[i]);
      out[i] = {base * r, base / r};
    }
    return out;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Rejects any key of `j` not in `allowed`.
inline void require_known_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section), "expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(section) + "." + key, "unknown key");
  }
}

template <class T>
void read_optional(const json& j, const char* key, T& out, std::string_view section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(section) + "." + key, e.what());
  }
}

inline json to_json(const ModelConfig& c) {
  return json{{"backbone", to_string(c.backbone)},
              {"num_classes", c.num_classes},
              {"fusion_width", c.fusion_width},
              {"fusion_repeats", c.fusion_repeats},
              {"head_depth", c.head_depth},
              {"skip_width", c.skip_width},
              {"seg_width", c.seg_width},
              {"aspect_ratios", c.aspect_ratios},
              {"anchor_base_scale", c.anchor_base_scale},
              {"input_h", c.input_h},
              {"input_w", c.input_w}};
}

/// Absent keys take the backbone's defaults; unknown keys are rejected.
inline ModelConfig model_config_from_json(const json& j) {
  require_known_keys(j, "model",
                     {"backbone", "num_classes", "fusion_width", "fusion_repeats", "head_depth", "skip_width",
                      "seg_width", "aspect_ratios", "anchor_base_scale", "input_h", "input_w"});
  std::string backbone = "mobilenetv2";
  read_optional(j, "backbone", backbone, "model");
  ModelConfig c = ModelConfig::for_backbone(parse_backbone(backbone));
  read_optional(j, "num_classes", c.num_classes, "model");
  read_optional(j, "fusion_width", c.fusion_width, "model");
  read_optional(j, "fusion_repeats", c.fusion_repeats, "model");
  read_optional(j, "head_depth", c.head_depth, "model");
  read_optional(j, "skip_width", c.skip_width, "model");
  read_optional(j, "seg_width", c.seg_width, "model");
  read_optional(j, "aspect_ratios", c.aspect_ratios, "model");
  read_optional(j, "anchor_base_scale", c.anchor_base_scale, "model");
  read_optional(j, "input_h", c.input_h, "model");
  read_optional(j, "input_w", c.input_w, "model");
  c.validate();
  return c;
}

}  // namespace mtpn
