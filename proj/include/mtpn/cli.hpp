#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtpn/analyzer.hpp"
#include "mtpn/checkpoint.hpp"
#include "mtpn/image.hpp"
#include "mtpn/metrics.hpp"
#include "mtpn/run_config.hpp"
#include "mtpn/runtime.hpp"
#include "mtpn/synth.hpp"
#include "mtpn/training.hpp"

namespace mtpn::cli {

namespace fs = std::filesystem;

inline std::string fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

inline std::vector<Resolution> parse_resolution_list(const std::string& s) {
  std::vector<Resolution> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_resolution(part));
  if (out.empty()) throw ConfigError("resolutions", "empty list");
  return out;
}

struct AnalyzeArgs {
  std::string backbone;
  std::string resolution = "384x640";
  std::string config;
  std::string out;
};

inline int run_analyze(const AnalyzeArgs& a, std::ostream& out) {
  const Resolution res = parse_resolution(a.resolution);
  ModelConfig base;
  if (!a.config.empty()) base = load_run_config(a.config).model;
  auto config_for = [&](Backbone b) {
    ModelConfig c = a.config.empty() ? ModelConfig::for_backbone(b) : base;
    c.backbone = b;
    return c;
  };
  json doc;
  if (a.backbone.empty()) {
    const auto cmp = compare_models(count_flops(config_for(Backbone::resnet50), res.h, res.w),
                                    count_flops(config_for(Backbone::mobilenetv2), res.h, res.w));
    out << format_table(cmp);
    doc = to_json(cmp);
    doc["reports"] = {to_json(cmp.a), to_json(cmp.b)};
  } else {
    const CostReport r = count_flops(config_for(parse_backbone(a.backbone)), res.h, res.w);
    out << format_table(std::vector<CostReport>{r});
    out << "total_params " << r.total_params << "\ntotal_macs " << r.total_macs << "\ntotal_flops " << r.total_flops
        << "\nest_model_size_bytes " << r.est_model_size_bytes << "\n";
    doc = to_json(r);
  }
  if (!a.out.empty()) atomic_write(a.out, doc.dump(2) + "\n");
  return 0;
}

struct SynthArgs {
  int count = 0;
  std::uint64_t seed = 0;
  std::string resolution = "384x640";
  std::string difficulty = "easy";
  int classes = 10;
  std::string out;
};

inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t k) { return detail::splitmix64(seed) + k; }

inline int run_synth(const SynthArgs& a, std::ostream& out) {
  if (a.count < 1) throw ConfigError("count", "must be >= 1");
  const Resolution res = parse_resolution(a.resolution);
  const Difficulty diff = parse_difficulty(a.difficulty);
  std::vector<Sample> samples;
  for (int k = 0; k < a.count; ++k)
    samples.push_back(synth_sample(sample_seed(a.seed, std::size_t(k)), res.h, res.w, diff, a.classes));
  save_dataset(samples, a.out,
               json{{"seed", a.seed}, {"resolution", res.str()}, {"difficulty", a.difficulty}, {"classes", a.classes}});
  out << "wrote " << a.count << " samples to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string log;
  int threads = 1;
};

inline int run_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc = load_run_config(a.config);
  const std::vector<Sample> data = load_dataset(a.data);
  rc.model.input_h = int(data.front().image.shape().h);
  rc.model.input_w = int(data.front().image.shape().w);
  rc.model.validate();
  blas::set_num_threads(a.threads);
  TrainOptions opt;
  opt.loss = rc.loss;
  opt.on_epoch = [&out](const EpochRecord& e) {
    out << "epoch " << e.epoch << " phase " << e.phase << " l_total " << fixed(e.l_total, 6) << " l_det "
        << fixed(e.l_det, 6) << " l_seg " << fixed(e.l_seg, 6) << "\n"
        << std::flush;
  };
  const TrainResult r = train(rc.model, rc.train, data, opt);
  save_checkpoint(r.model, a.out);
  if (!a.log.empty()) atomic_write(a.log, to_json(r.log).dump(2) + "\n");
  out << "saved " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string ckpt;
  std::string data;
  double conf = 0.25;
  double nms = 0.5;
  double iou = 0.5;
  std::string out;
};

struct EvalSummary {
  MapResult detection;
  double miou_drivable = 0;
  double miou_lane = 0;
};

inline EvalSummary evaluate(const Model& model, const std::vector<Sample>& data, double conf, double nms_thresh,
                            double iou_thresh) {
  std::vector<std::vector<Detection>> preds;
  std::vector<std::vector<GtBox>> gts;
  EvalSummary s;
  for (const Sample& smp : data) {
    const InferResult r = infer(model, smp.image, conf, nms_thresh);
    preds.push_back(r.detections);
    gts.push_back(smp.boxes);
    s.miou_drivable += compute_miou(r.drivable, smp.drivable);
    s.miou_lane += compute_miou(r.lane, smp.lane);
  }
  s.miou_drivable /= double(data.size());
  s.miou_lane /= double(data.size());
  s.detection = compute_map(preds, gts, iou_thresh);
  return s;
}

inline int run_eval(const EvalArgs& a, std::ostream& out) {
  const Model model = load_checkpoint(a.ckpt);
  const EvalSummary s = evaluate(model, load_dataset(a.data), a.conf, a.nms, a.iou);
  if (s.detection.has_ground_truth) {
    out << "mAP@" << a.iou << " " << fixed(s.detection.map, 4) << "\nrecall " << fixed(s.detection.recall, 4) << "\n";
  } else {
    out << "mAP@" << a.iou << " n/a (no ground truth)\nrecall n/a\n";
  }
  out << "mIoU drivable " << fixed(s.miou_drivable, 4) << "\nmIoU lane " << fixed(s.miou_lane, 4) << "\n";
  if (!a.out.empty()) {
    json j{{"miou_drivable", s.miou_drivable}, {"miou_lane", s.miou_lane}};
    j["has_ground_truth"] = s.detection.has_ground_truth;
    j["map"] = s.detection.map;
    j["recall"] = s.detection.recall;
    atomic_write(a.out, j.dump(2) + "\n");
  }
  return 0;
}

struct InferArgs {
  std::string ckpt;
  std::string image;
  std::string out;
  double conf = 0.25;
  double nms = 0.5;
};

inline int run_infer(const InferArgs& a, std::ostream& out) {
  const Model model = load_checkpoint(a.ckpt);
  const Image img = read_ppm(a.image);
  const Tensor<float> t = image_to_tensor(img);
  const InferResult r = infer(model, t, a.conf, a.nms);
  write_ppm(overlay(img, r.detections, r.drivable, r.lane), a.out);
  out << r.detections.size() << " detections\n";
  for (const Detection& d : r.detections)
    out << "class " << d.class_id << " score " << fixed(d.score, 3) << " box " << fixed(d.box.cx, 1) << " "
        << fixed(d.box.cy, 1) << " " << fixed(d.box.w, 1) << " " << fixed(d.box.h, 1) << "\n";
  return 0;
}

struct BenchArgs {
  std::string backbone;
  std::string ckpt;
  std::string config;
  std::optional<int> warmup;
  std::optional<int> iters;
  std::optional<int> threads;
  std::string resolutions;
  bool postprocess = false;
  std::uint64_t seed = 0;
  std::string out;
};

inline std::string format_bench(const BenchReport& r) {
  std::string s = r.model_label + " on " + r.device + ", " + std::to_string(r.threads) + " thread(s), warmup " +
                  std::to_string(r.warmup_iters) + ", iters " + std::to_string(r.timed_iters) + "\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s %10s %10s %10s %10s %9s\n", "HxW", "mean ms", "p50 ms", "p90 ms", "min ms", "fps");
  s += buf;
  for (const BenchRow& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%-10s %10.2f %10.2f %10.2f %10.2f %9.2f\n",
                  (std::to_string(row.h) + "x" + std::to_string(row.w)).c_str(), row.mean_ms, row.p50_ms, row.p90_ms,
                  row.min_ms, row.fps);
    s += buf;
  }
  return s;
}

inline int run_bench(const BenchArgs& a, std::ostream& out) {
  if (a.backbone.empty() == a.ckpt.empty()) throw ConfigError("bench", "give exactly one of --backbone or --ckpt");
  BenchOptions opt;
  ModelConfig cfg;
  if (!a.config.empty()) {
    const RunConfig rc = load_run_config(a.config);
    opt = rc.bench;
    cfg = rc.model;
  }
  if (a.warmup) opt.warmup = *a.warmup;
  if (a.iters) opt.iters = *a.iters;
  if (a.threads) opt.threads = *a.threads;
  if (!a.resolutions.empty()) opt.resolutions = parse_resolution_list(a.resolutions);
  opt.include_postprocess = opt.include_postprocess || a.postprocess;
  opt.seed = a.seed;

  Model model;
  if (!a.ckpt.empty()) {
    model = load_checkpoint(a.ckpt);
  } else {
    const Backbone b = parse_backbone(a.backbone);
    if (a.config.empty()) cfg = ModelConfig::for_backbone(b);
    cfg.backbone = b;
    model = build_model(cfg, a.seed);
  }
  const BenchReport r = benchmark(model, opt);
  out << format_bench(r);
  if (!a.out.empty()) atomic_write(a.out, to_json(r).dump(2) + "\n");
  return 0;
}

/// Parses argv and runs one subcommand. Returns the process exit status;
/// failures print a single diagnostic line to `err`.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-task perception engine: cost analysis, synthetic data, training, evaluation, benchmarking"};
  app.name("mtpn");
  app.require_subcommand(1);

  AnalyzeArgs an;
  auto* analyze = app.add_subcommand("analyze", "Parameter, MAC and FLOP counts from the architecture alone");
  analyze->add_option("--backbone", an.backbone, "resnet50 or mobilenetv2 (default: compare both)");
  analyze->add_option("--resolution", an.resolution, "Input resolution HxW")->capture_default_str();
  analyze->add_option("--config", an.config, "Run config whose model section is used");
  analyze->add_option("--out", an.out, "Write the report as JSON");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic road-scene dataset");
  synth->add_option("--count", sy.count, "Number of samples")->required();
  synth->add_option("--seed", sy.seed, "Base seed")->capture_default_str();
  synth->add_option("--resolution", sy.resolution, "HxW")->capture_default_str();
  synth->add_option("--difficulty", sy.difficulty, "easy or medium")->capture_default_str();
  synth->add_option("--classes", sy.classes, "Number of object classes")->capture_default_str();
  synth->add_option("--out", sy.out, "Output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train on a synthetic dataset");
  train_cmd->add_option("--config", tr.config, "Run config (JSON)")->required();
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Checkpoint to write")->required();
  train_cmd->add_option("--log", tr.log, "Write the per-epoch log as JSON");
  train_cmd->add_option("--threads", tr.threads, "BLAS threads")->capture_default_str();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "mAP, recall and per-head mIoU on a dataset");
  eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  eval->add_option("--data", ev.data, "Dataset directory")->required();
  eval->add_option("--conf", ev.conf, "Score threshold")->capture_default_str();
  eval->add_option("--nms", ev.nms, "NMS IoU threshold")->capture_default_str();
  eval->add_option("--iou", ev.iou, "Matching IoU threshold")->capture_default_str();
  eval->add_option("--out", ev.out, "Write metrics as JSON");

  InferArgs in;
  auto* infer_cmd = app.add_subcommand("infer", "Run one image and render the overlay");
  infer_cmd->add_option("--ckpt", in.ckpt, "Checkpoint")->required();
  infer_cmd->add_option("--image", in.image, "Input P6 image")->required();
  infer_cmd->add_option("--out", in.out, "Output P6 overlay")->required();
  infer_cmd->add_option("--conf", in.conf, "Score threshold")->capture_default_str();
  infer_cmd->add_option("--nms", in.nms, "NMS IoU threshold")->capture_default_str();

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "Batch-1 latency sweep");
  auto* bb = bench->add_option("--backbone", be.backbone, "Benchmark a freshly built model");
  auto* ck = bench->add_option("--ckpt", be.ckpt, "Benchmark a checkpoint");
  bb->excludes(ck);
  bench->add_option("--config", be.config, "Run config (model and bench sections)");
  bench->add_option("--warmup", be.warmup, "Untimed passes per resolution (default 20)");
  bench->add_option("--iters", be.iters, "Timed passes per resolution (default 100)");
  bench->add_option("--threads", be.threads, "BLAS threads (default 1)");
  bench->add_option("--resolutions", be.resolutions, "Comma-separated HxW list");
  bench->add_flag("--postprocess", be.postprocess, "Include decode, NMS and mask argmax in the timing");
  bench->add_option("--seed", be.seed, "Seed for weights and inputs")->capture_default_str();
  bench->add_option("--out", be.out, "Write the report as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*analyze) return run_analyze(an, out);
    if (*synth) return run_synth(sy, out);
    if (*train_cmd) return run_train(tr, out);
    if (*eval) return run_eval(ev, out);
    if (*infer_cmd) return run_infer(in, out);
    if (*bench) return run_bench(be, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace mtpn::cli
