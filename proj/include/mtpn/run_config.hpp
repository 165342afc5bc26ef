#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mtpn/config.hpp"
#include "mtpn/io.hpp"
#include "mtpn/losses.hpp"
#include "mtpn/runtime.hpp"
#include "mtpn/training.hpp"

namespace mtpn {

/// Everything a CLI run can be configured with. Absent keys keep the
/// defaults below; unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainSchedule train;
  BenchOptions bench;
};

inline LossConfig loss_config_from_json(const json& j) {
  require_known_keys(j, "loss", {"alpha", "beta", "objectness", "classification", "box", "objectness_positive_weight",
                                  "lane_foreground_weight"});
  LossConfig c;
  read_optional(j, "alpha", c.weights.alpha, "loss");
  read_optional(j, "beta", c.weights.beta, "loss");
  read_optional(j, "objectness", c.terms.objectness, "loss");
  read_optional(j, "classification", c.terms.classification, "loss");
  read_optional(j, "box", c.terms.box, "loss");
  read_optional(j, "objectness_positive_weight", c.terms.objectness_positive, "loss");
  read_optional(j, "lane_foreground_weight", c.lane_foreground_weight, "loss");
  c.validate();
  return c;
}

inline TrainSchedule schedule_from_json(const json& j) {
  require_known_keys(j, "train", {"phases", "optimizer", "lr", "batch", "seed", "momentum"});
  TrainSchedule s;
  if (auto it = j.find("phases"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("train.phases", "expected an array");
    s.phases.clear();
    for (std::size_t k = 0; k < it->size(); ++k) {
      const json& pj = (*it)[k];
      const std::string sec = "train.phases[" + std::to_string(k) + "]";
      require_known_keys(pj, sec, {"epochs", "frozen"});
      Phase p;
      read_optional(pj, "epochs", p.epochs, sec);
      std::vector<std::string> frozen;
      read_optional(pj, "frozen", frozen, sec);
      for (const auto& g : frozen) p.frozen.insert(parse_param_group(g));
      s.phases.push_back(std::move(p));
    }
  }
  std::string opt = to_string(s.optimizer);
  read_optional(j, "optimizer", opt, "train");
  s.optimizer = parse_optimizer(opt);
  read_optional(j, "lr", s.learning_rate, "train");
  read_optional(j, "batch", s.batch_size, "train");
  read_optional(j, "seed", s.seed, "train");
  read_optional(j, "momentum", s.momentum, "train");
  s.validate();
  return s;
}

inline BenchOptions bench_options_from_json(const json& j) {
  require_known_keys(j, "bench", {"resolutions", "warmup", "iters", "threads", "include_postprocess", "seed"});
  BenchOptions b;
  std::vector<std::string> res;
  read_optional(j, "resolutions", res, "bench");
  if (!res.empty()) {
    b.resolutions.clear();
    for (const auto& r : res) b.resolutions.push_back(parse_resolution(r));
  }
  read_optional(j, "warmup", b.warmup, "bench");
  read_optional(j, "iters", b.iters, "bench");
  read_optional(j, "threads", b.threads, "bench");
  read_optional(j, "include_postprocess", b.include_postprocess, "bench");
  read_optional(j, "seed", b.seed, "bench");
  if (b.iters < 10) throw ConfigError("bench.iters", "must be >= 10");
  if (b.warmup < 0) throw ConfigError("bench.warmup", "must be >= 0");
  if (b.threads < 1) throw ConfigError("bench.threads", "must be >= 1");
  return b;
}

inline RunConfig run_config_from_json(const json& j) {
  require_known_keys(j, "config", {"model", "loss", "train", "bench"});
  RunConfig c;
  c.model = model_config_from_json(j.value("model", json::object()));
  c.loss = loss_config_from_json(j.value("loss", json::object()));
  c.train = schedule_from_json(j.value("train", json::object()));
  c.bench = bench_options_from_json(j.value("bench", json::object()));
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError(path.string(), e.what());
  }
  return run_config_from_json(j);
}

inline json to_json(const RunConfig& c) {
  json phases = json::array();
  for (const Phase& p : c.train.phases) {
    json frozen = json::array();
    for (ParamGroup g : p.frozen) frozen.push_back(to_string(g));
    phases.push_back({{"epochs", p.epochs}, {"frozen", frozen}});
  }
  json res = json::array();
  for (const Resolution& r : c.bench.resolutions) res.push_back(r.str());
  return json{{"model", to_json(c.model)},
              {"loss",
               {{"alpha", c.loss.weights.alpha},
                {"beta", c.loss.weights.beta},
                {"objectness", c.loss.terms.objectness},
                {"classification", c.loss.terms.classification},
                {"box", c.loss.terms.box},
                {"objectness_positive_weight", c.loss.terms.objectness_positive},
                {"lane_foreground_weight", c.loss.lane_foreground_weight}}},
              {"train",
               {{"phases", phases},
                {"optimizer", to_string(c.train.optimizer)},
                {"lr", c.train.learning_rate},
                {"batch", c.train.batch_size},
                {"seed", c.train.seed},
                {"momentum", c.train.momentum}}},
              {"bench",
               {{"resolutions", res},
                {"warmup", c.bench.warmup},
                {"iters", c.bench.iters},
                {"threads", c.bench.threads},
                {"include_postprocess", c.bench.include_postprocess},
                {"seed", c.bench.seed}}}};
}

}  // namespace mtpn
