#pragma once

// Topology of the multi-task network, written once against a backend
// interface. The same walk drives real execution (GraphBackend), parameter
// declaration (ParamDeclBackend) and the analytic cost model (CostBackend).
//
// A backend provides:
//   using Value = ...;
//   Value conv(const Value&, const std::string& path, const ConvSpec&);
//   Value batchnorm(const Value&, const std::string& path, int channels, GammaInit);
//   Value relu(const Value&, const std::string& path);
//   Value relu6(const Value&, const std::string& path);
//   Value add(const Value&, const Value&, const std::string& path);
//   Value concat(const std::vector<Value>&, const std::string& path);
//   Value maxpool(const Value&, const ops::PoolParams&, const std::string& path);
//   Value resize(const Value&, int64 h, int64 w, const std::string& path);
//   Value fuse(const std::vector<Value>&, const std::string& path);
//   Shape shape(const Value&);

#include <array>
#include <string>
#include <vector>

#include "mtpn/config.hpp"
#include "mtpn/ops.hpp"

namespace mtpn {

struct ConvSpec {
  int cin = 1;
  int cout = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int groups = 1;
  bool bias = false;
};

enum class Act { none, relu, relu6 };

/// Initial value of a batchnorm scale. The last batchnorm of every residual
/// branch starts at zero so fresh blocks are identity maps.
enum class GammaInit { one, zero };

template <class V>
struct PyramidOf {
  V c2, c3, c4, c5;
};

template <class V>
struct FusedOf {
  V p3, p4, p5;
};

template <class V>
struct HeadsOf {
  std::array<V, 3> detection;
  V drivable;
  V lane;
};

inline const std::array<const char*, 2> kSegHeadNames{"seg_drivable", "seg_lane"};

template <class B>
class Topology {
 public:
  using V = typename B::Value;

  Topology(B& backend, const ModelConfig& config) : b_(backend), cfg_(config) {}

  PyramidOf<V> backbone(const V& image) {
    const Shape s = b_.shape(image);
    if (s.c != 3) throw ShapeError("backbone", "c", "expected 3 input channels, got " + std::to_string(s.c));
    if (s.h % 32 != 0) throw ShapeError("backbone", "h", "input height " + std::to_string(s.h) + " not divisible by 32");
    if (s.w % 32 != 0) throw ShapeError("backbone", "w", "input width " + std::to_string(s.w) + " not divisible by 32");
    return cfg_.backbone == Backbone::resnet50 ? resnet50(image) : mobilenetv2(image);
  }

  /// Channel counts of c2..c5 for the configured backbone.
  static std::array<int, 4> pyramid_channels(Backbone bb) {
    if (bb == Backbone::resnet50) return {256, 512, 1024, 2048};
    return {24, 32, 96, 1280};
  }

  FusedOf<V> neck(const PyramidOf<V>& pyr) {
    const auto ch = pyramid_channels(cfg_.backbone);
    const int w = cfg_.fusion_width;
    V p3 = conv_bn(pyr.c3, "neck.lateral3", {ch[1], w, 1}, Act::none);
    V p4 = conv_bn(pyr.c4, "neck.lateral4", {ch[2], w, 1}, Act::none);
    V p5 = conv_bn(pyr.c5, "neck.lateral5", {ch[3], w, 1}, Act::none);
    const ConvSpec fuse_conv{w, w, 3, 1, 1};
    const ops::PoolParams down{3, 2, 1};
    for (int r = 0; r < cfg_.fusion_repeats; ++r) {
      const std::string pre = "neck.repeat" + std::to_string(r);
      const Shape s3 = b_.shape(p3);
      const Shape s4 = b_.shape(p4);
      // top-down
      V up5 = b_.resize(p5, s4.h, s4.w, pre + ".up5");
      V td4 = conv_bn(b_.fuse({p4, up5}, pre + ".td4.fuse"), pre + ".td4", fuse_conv, Act::relu);
      V up4 = b_.resize(td4, s3.h, s3.w, pre + ".up4");
      V out3 = conv_bn(b_.fuse({p3, up4}, pre + ".out3.fuse"), pre + ".out3", fuse_conv, Act::relu);
      // bottom-up
      V dn3 = b_.maxpool(out3, down, pre + ".down3");
      V out4 = conv_bn(b_.fuse({p4, td4, dn3}, pre + ".out4.fuse"), pre + ".out4", fuse_conv, Act::relu);
      V dn4 = b_.maxpool(out4, down, pre + ".down4");
      V out5 = conv_bn(b_.fuse({p5, dn4}, pre + ".out5.fuse"), pre + ".out5", fuse_conv, Act::relu);
      p3 = out3;
      p4 = out4;
      p5 = out5;
    }
    return {p3, p4, p5};
  }

  HeadsOf<V> heads(const FusedOf<V>& fused, const V& skip_c2) {
    HeadsOf<V> out;
    const std::array<const V*, 3> levels{&fused.p3, &fused.p4, &fused.p5};
    const int w = cfg_.fusion_width;
    for (std::size_t k = 0; k < 3; ++k) {
      V y = *levels[k];
      for (int d = 0; d < cfg_.head_depth; ++d)
        y = conv_bn(y, "det_head.conv" + std::to_string(d), {w, w, 3, 1, 1}, Act::relu);
      out.detection[k] = b_.conv(y, "det_head.pred", {w, cfg_.detection_channels(), 1, 1, 0, 1, true});
    }

    const Shape s3 = b_.shape(fused.p3);
    const Shape s2 = b_.shape(skip_c2);
    const auto ch = pyramid_channels(cfg_.backbone);
    V up = b_.resize(fused.p3, 2 * s3.h, 2 * s3.w, "seg_shared.up");
    for (std::size_t h = 0; h < kSegHeadNames.size(); ++h) {
      const std::string name = kSegHeadNames[h];
      V skip = conv_bn(skip_c2, name + ".skip", {ch[0], cfg_.skip_width, 1}, Act::relu);
      V y = b_.concat({up, skip}, name + ".concat");
      int cin = w + cfg_.skip_width;
      for (int d = 0; d < cfg_.head_depth; ++d) {
        y = conv_bn(y, name + ".conv" + std::to_string(d), {cin, cfg_.seg_width, 3, 1, 1}, Act::relu);
        cin = cfg_.seg_width;
      }
      y = b_.conv(y, name + ".pred", {cfg_.seg_width, kSegClasses, 1, 1, 0, 1, true});
      y = b_.resize(y, 4 * s2.h, 4 * s2.w, name + ".upsample");
      (h == 0 ? out.drivable : out.lane) = y;
    }
    return out;
  }

  HeadsOf<V> full(const V& image) {
    PyramidOf<V> pyr = backbone(image);
    FusedOf<V> fused = neck(pyr);
    return heads(fused, pyr.c2);
  }

 private:
  V conv_bn(const V& x, const std::string& path, ConvSpec spec, Act act, GammaInit gamma = GammaInit::one) {
    V y = b_.conv(x, path + ".conv", spec);
    y = b_.batchnorm(y, path + ".bn", spec.cout, gamma);
    switch (act) {
      case Act::relu:
        return b_.relu(y, path + ".relu");
      case Act::relu6:
        return b_.relu6(y, path + ".relu6");
      case Act::none:
        break;
    }
    return y;
  }

  PyramidOf<V> resnet50(const V& image) {
    V x = conv_bn(image, "backbone.stem", {3, 64, 7, 2, 3}, Act::relu);
    x = b_.maxpool(x, {3, 2, 1}, "backbone.stem.pool");
    const std::array<int, 4> blocks{3, 4, 6, 3};
    std::array<V, 4> taps;
    int cin = 64;
    for (int stage = 0; stage < 4; ++stage) {
      const int width = 64 << stage;
      const int cout = 4 * width;
      for (int blk = 0; blk < blocks[static_cast<std::size_t>(stage)]; ++blk) {
        const int stride = (blk == 0 && stage > 0) ? 2 : 1;
        const std::string p = "backbone.layer" + std::to_string(stage + 1) + "." + std::to_string(blk);
        V out = conv_bn(x, p + ".conv1", {cin, width, 1}, Act::relu);
        out = conv_bn(out, p + ".conv2", {width, width, 3, stride, 1}, Act::relu);
        out = conv_bn(out, p + ".conv3", {width, cout, 1}, Act::none, GammaInit::zero);
        V identity = blk == 0 ? conv_bn(x, p + ".downsample", {cin, cout, 1, stride}, Act::none) : x;
        x = b_.relu(b_.add(out, identity, p + ".add"), p + ".out");
        cin = cout;
      }
      taps[static_cast<std::size_t>(stage)] = x;
    }
    return {taps[0], taps[1], taps[2], taps[3]};
  }

  PyramidOf<V> mobilenetv2(const V& image) {
    struct Stage {
      int expand, channels, repeats, stride;
    };
    static constexpr std::array<Stage, 7> stages{{
        {1, 16, 1, 1},
        {6, 24, 2, 2},
        {6, 32, 3, 2},
        {6, 64, 4, 2},
        {6, 96, 3, 1},
        {6, 160, 3, 2},
        {6, 320, 1, 1},
    }};
    V x = conv_bn(image, "backbone.stem", {3, 32, 3, 2, 1}, Act::relu6);
    int cin = 32;
    int index = 0;
    PyramidOf<V> taps;
    for (std::size_t si = 0; si < stages.size(); ++si) {
      const Stage& st = stages[si];
      for (int r = 0; r < st.repeats; ++r) {
        const int stride = r == 0 ? st.stride : 1;
        const std::string p = "backbone.block" + std::to_string(index++);
        const int hidden = cin * st.expand;
        const bool residual = stride == 1 && cin == st.channels;
        V out = x;
        if (st.expand != 1) out = conv_bn(out, p + ".expand", {cin, hidden, 1}, Act::relu6);
        out = conv_bn(out, p + ".depthwise", {hidden, hidden, 3, stride, 1, hidden}, Act::relu6);
        out = conv_bn(out, p + ".project", {hidden, st.channels, 1}, Act::none,
                      residual ? GammaInit::zero : GammaInit::one);
        x = residual ? b_.add(x, out, p + ".add") : out;
        cin = st.channels;
      }
      if (st.channels == 24) taps.c2 = x;
      if (st.channels == 32) taps.c3 = x;
      if (st.channels == 96) taps.c4 = x;
    }
    taps.c5 = conv_bn(x, "backbone.head", {cin, 1280, 1}, Act::relu6);
    return taps;
  }

  B& b_;
  const ModelConfig& cfg_;
};

}  // namespace mtpn
