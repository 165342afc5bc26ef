#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "mtpn/blas.hpp"
#include "mtpn/detection.hpp"
#include "mtpn/mask.hpp"
#include "mtpn/network.hpp"

namespace mtpn {

struct InferResult {
  std::vector<Detection> detections;
  Mask drivable;
  Mask lane;
};

/// forward -> decode -> NMS, plus per-pixel argmax of both segmentation maps.
inline InferResult infer(const Model& model, const Tensor<float>& image, double conf_thresh = 0.25,
                         double iou_thresh = 0.5) {
  if (image.shape().n != 1) throw ShapeError("infer", "n", "expects a single image");
  const RawPredictions<float> raw = forward(model, image);
  InferResult r;
  r.detections = nms(decode_detections(raw, model.config, conf_thresh), iou_thresh);
  r.drivable = argmax_mask(raw.drivable);
  r.lane = argmax_mask(raw.lane);
  return r;
}

struct Resolution {
  int h = 0;
  int w = 0;

  std::int64_t pixels() const { return std::int64_t{h} * w; }
  std::string str() const { return std::to_string(h) + "x" + std::to_string(w); }
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

/// Parses "HxW".
inline Resolution parse_resolution(std::string_view s) {
  const auto x = s.find('x');
  auto num = [&](std::string_view part) {
    if (part.empty() || part.size() > 6 || !std::all_of(part.begin(), part.end(), [](char c) { return c >= '0' && c <= '9'; }))
      throw ConfigError("resolution", "expected HxW, got '" + std::string(s) + "'");
    return std::stoi(std::string(part));
  };
  if (x == std::string_view::npos) throw ConfigError("resolution", "expected HxW, got '" + std::string(s) + "'");
  Resolution r{num(s.substr(0, x)), num(s.substr(x + 1))};
  ModelConfig::check_resolution(r.h, r.w);
  return r;
}

inline std::vector<Resolution> default_bench_resolutions() { return {{256, 384}, {256, 512}, {384, 640}, {768, 1280}}; }

struct BenchRow {
  int h = 0;
  int w = 0;
  double mean_ms = 0;
  double p50_ms = 0;
  double p90_ms = 0;
  double min_ms = 0;
  double fps = 0;
};

struct BenchReport {
  std::string model_label;
  std::string device;
  int threads = 1;
  int warmup_iters = 0;
  int timed_iters = 0;
  bool include_postprocess = false;
  std::vector<BenchRow> rows;
  std::string timestamp;
};

struct BenchOptions {
  std::vector<Resolution> resolutions = default_bench_resolutions();
  int warmup = 20;
  int iters = 100;
  int threads = 1;
  bool include_postprocess = false;  // time decode + NMS + mask argmax too
  std::uint64_t seed = 0;
};

inline std::string host_cpu_description() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto v = line.substr(colon + 1);
        v.erase(0, v.find_first_not_of(' '));
        return v;
      }
    }
  }
  return "unknown cpu";
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Linear interpolation between order statistics; q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

inline BenchRow summarize_timings(int h, int w, const std::vector<double>& ms) {
  BenchRow r{h, w};
  double sum = 0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / static_cast<double>(ms.size());
  r.p50_ms = percentile(ms, 0.5);
  r.p90_ms = percentile(ms, 0.9);
  r.min_ms = *std::min_element(ms.begin(), ms.end());
  r.fps = 1000.0 / r.mean_ms;
  return r;
}

/// Batch-1 latency sweep. Each resolution gets one random input, `warmup`
/// untimed passes and `iters` timed passes of the raw network forward.
inline BenchReport benchmark(const Model& model, const BenchOptions& opt) {
  if (opt.iters < 10) throw ValueError("benchmark: iters must be >= 10, got " + std::to_string(opt.iters));
  if (opt.warmup < 0) throw ValueError("benchmark: warmup must be >= 0");
  if (opt.threads < 1) throw ValueError("benchmark: threads must be >= 1");
  if (opt.resolutions.empty()) throw ValueError("benchmark: no resolutions");
  std::vector<Resolution> res = opt.resolutions;
  for (const Resolution& r : res) ModelConfig::check_resolution(r.h, r.w);
  std::stable_sort(res.begin(), res.end(), [](const Resolution& a, const Resolution& b) { return a.pixels() < b.pixels(); });

  blas::set_num_threads(opt.threads);
  BenchReport report;
  report.model_label = to_string(model.config.backbone);
  report.device = host_cpu_description();
  report.threads = opt.threads;
  report.warmup_iters = opt.warmup;
  report.timed_iters = opt.iters;
  report.include_postprocess = opt.include_postprocess;

  using clock = std::chrono::steady_clock;
  for (const Resolution& r : res) {
    Tensor<float> input(Shape{1, 3, r.h, r.w});
    std::mt19937_64 rng(detail::splitmix64(opt.seed ^ static_cast<std::uint64_t>(r.pixels())));
    for (float& v : input.data()) v = static_cast<float>(detail::unit_uniform(rng));

    auto run_once = [&] {
      if (opt.include_postprocess) {
        auto out = infer(model, input);
        (void)out;
      } else {
        auto out = forward(model, input);
        (void)out;
      }
    };
    for (int i = 0; i < opt.warmup; ++i) run_once();

    std::vector<double> ms;
    ms.reserve(static_cast<std::size_t>(opt.iters));
    for (int i = 0; i < opt.iters; ++i) {
      double elapsed = -1;
      for (int attempt = 0; attempt < 2 && elapsed < 0; ++attempt) {
        const auto t0 = clock::now();
        run_once();
        const auto t1 = clock::now();
        elapsed = std::chrono::duration<double, std::milli>(t1 - t0).count();
      }
      if (elapsed < 0) throw Error("benchmark: clock went backwards twice in a row");
      ms.push_back(elapsed);
    }
    report.rows.push_back(summarize_timings(r.h, r.w, ms));
  }
  report.timestamp = utc_timestamp();
  return report;
}

inline json to_json(const BenchReport& r) {
  json rows = json::array();
  for (const BenchRow& row : r.rows)
    rows.push_back({{"h", row.h},
                    {"w", row.w},
                    {"mean_ms", row.mean_ms},
                    {"p50_ms", row.p50_ms},
                    {"p90_ms", row.p90_ms},
                    {"min_ms", row.min_ms},
                    {"fps", row.fps}});
  return json{{"model_label", r.model_label},
              {"device", r.device},
              {"threads", r.threads},
              {"warmup_iters", r.warmup_iters},
              {"timed_iters", r.timed_iters},
              {"include_postprocess", r.include_postprocess},
              {"rows", rows},
              {"timestamp", r.timestamp}};
}

/// Problems found in a serialized report; empty when it is well formed.
inline std::vector<std::string> bench_schema_errors(const json& j) {
  std::vector<std::string> errs;
  auto need = [&](const json& obj, const char* key, auto pred, const char* what) {
    if (!obj.is_object() || !obj.contains(key) || !pred(obj.at(key)))
      errs.push_back(std::string(key) + ": missing or not " + what);
  };
  auto is_str = [](const json& v) { return v.is_string(); };
  auto is_int = [](const json& v) { return v.is_number_integer(); };
  auto is_num = [](const json& v) { return v.is_number(); };
  need(j, "model_label", is_str, "a string");
  need(j, "device", is_str, "a string");
  need(j, "threads", is_int, "an integer");
  need(j, "warmup_iters", is_int, "an integer");
  need(j, "timed_iters", is_int, "an integer");
  need(j, "timestamp", is_str, "a string");
  if (!j.is_object() || !j.contains("rows") || !j.at("rows").is_array() || j.at("rows").empty()) {
    errs.push_back("rows: missing or empty");
    return errs;
  }
  std::int64_t prev = -1;
  for (const json& row : j.at("rows")) {
    need(row, "h", is_int, "an integer");
    need(row, "w", is_int, "an integer");
    for (const char* k : {"mean_ms", "p50_ms", "p90_ms", "min_ms", "fps"}) need(row, k, is_num, "a number");
    if (!errs.empty()) return errs;
    const std::int64_t px = row.at("h").get<std::int64_t>() * row.at("w").get<std::int64_t>();
    if (px <= prev) errs.push_back("rows: not in ascending pixel count");
    prev = px;
    const double mean = row.at("mean_ms").get<double>(), fps = row.at("fps").get<double>();
    if (!(mean > 0) || std::abs(fps * mean - 1000.0) > 1.0) errs.push_back("rows: fps * mean_ms deviates from 1000");
  }
  return errs;
}

}  // namespace mtpn
