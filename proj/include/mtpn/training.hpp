#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "mtpn/losses.hpp"
#include "mtpn/network.hpp"
#include "mtpn/synth.hpp"

namespace mtpn {

struct Phase {
  int epochs = 1;
  std::set<ParamGroup> frozen;
};

enum class OptimizerKind { adam, sgd_momentum };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd_momentum"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd_momentum") return OptimizerKind::sgd_momentum;
  throw ConfigError("train.optimizer", "unknown optimizer '" + std::string(s) + "' (expected adam or sgd_momentum)");
}

struct TrainSchedule {
  std::vector<Phase> phases{{5, {}}, {5, {ParamGroup::seg_heads}}};
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  int batch_size = 2;
  std::uint64_t seed = 0;
  double momentum = 0.9;

  void validate() const {
    if (phases.empty()) throw ConfigError("train.phases", "need at least one phase");
    for (std::size_t p = 0; p < phases.size(); ++p) {
      if (phases[p].epochs < 1) throw ConfigError("train.phases[" + std::to_string(p) + "].epochs", "must be >= 1");
      if (phases[p].frozen.size() >= 4)
        throw ConfigError("train.phases[" + std::to_string(p) + "].frozen", "every parameter group is frozen");
    }
    if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ConfigError("train.lr", "must be finite and >= 0");
    if (batch_size < 1) throw ConfigError("train.batch", "must be >= 1");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum", "must lie in [0, 1)");
  }
};

/// Restricts model.trainable to learnable parameters outside the frozen groups.
inline void apply_phase(Model& model, const Phase& phase) {
  std::vector<std::string> prefixes;
  for (ParamGroup g : phase.frozen) {
    const auto ps = group_prefixes(g);
    bool found = false;
    for (const auto& p : ps)
      for (const auto& [name, _] : model.parameters) found = found || has_prefix(name, p);
    if (!found) throw ConfigError("frozen_parameter_groups", "group '" + to_string(g) + "' matches no parameter");
    prefixes.insert(prefixes.end(), ps.begin(), ps.end());
  }
  model.trainable.clear();
  for (const std::string& name : model.learnable_names()) {
    bool frozen = false;
    for (const auto& p : prefixes) frozen = frozen || has_prefix(name, p);
    if (!frozen) model.trainable.insert(name);
  }
}

inline void apply_phase(Model& model, const std::vector<std::string>& frozen_groups) {
  Phase p;
  for (const auto& g : frozen_groups) p.frozen.insert(parse_param_group(g));
  apply_phase(model, p);
}

/// Per-parameter optimizer state, keyed by name. Only names in
/// model.trainable are updated; the rest keep their state untouched.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double momentum = 0.9) : kind_(kind), lr_(lr), momentum_(momentum) {}

  void step(Model& model, const std::map<std::string, const Tensor<float>*>& grads) {
    for (const std::string& name : model.trainable) {
      auto g = grads.find(name);
      if (g == grads.end()) continue;
      Tensor<float>& p = model.parameters.at(name);
      auto pd = p.data();
      auto gd = g->second->data();
      State& st = state_[name];
      if (st.m.empty()) {
        st.m.assign(pd.size(), 0.0f);
        if (kind_ == OptimizerKind::adam) st.v.assign(pd.size(), 0.0f);
      }
      ++st.t;
      if (kind_ == OptimizerKind::sgd_momentum) {
        for (std::size_t i = 0; i < pd.size(); ++i) {
          st.m[i] = static_cast<float>(momentum_ * st.m[i] + gd[i]);
          pd[i] -= static_cast<float>(lr_ * st.m[i]);
        }
      } else {
        const double c1 = 1.0 - std::pow(kBeta1, st.t);
        const double c2 = 1.0 - std::pow(kBeta2, st.t);
        for (std::size_t i = 0; i < pd.size(); ++i) {
          st.m[i] = static_cast<float>(kBeta1 * st.m[i] + (1 - kBeta1) * gd[i]);
          st.v[i] = static_cast<float>(kBeta2 * st.v[i] + (1 - kBeta2) * double(gd[i]) * gd[i]);
          const double mh = st.m[i] / c1;
          const double vh = st.v[i] / c2;
          pd[i] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + kEps));
        }
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  struct State {
    std::vector<float> m, v;
    int t = 0;
  };
  OptimizerKind kind_;
  double lr_;
  double momentum_;
  std::map<std::string, State> state_;
};

struct StepRecord {
  int step = 0;  // 1-based over the whole run
  int epoch = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  int epoch = 0;  // 1-based, contiguous across phases
  int phase = 0;  // 1-based
  double l_total = 0;
  double l_det = 0;
  double l_seg = 0;
  double learning_rate = 0;
  std::optional<LossBreakdown> probe;  // loss on the held probe sample after the epoch
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;
};

inline json to_json(const LossBreakdown& b) {
  return json{{"l_total", b.l_total}, {"l_det", b.l_det},   {"l_seg", b.l_seg},
              {"alpha", b.alpha},     {"beta", b.beta},     {"det_components", b.det_components}};
}

inline json to_json(const TrainLog& log) {
  json epochs = json::array();
  for (const EpochRecord& e : log.epochs) {
    json r{{"epoch", e.epoch},   {"phase", e.phase}, {"l_total", e.l_total},
           {"l_det", e.l_det},   {"l_seg", e.l_seg}, {"learning_rate", e.learning_rate}};
    if (e.probe) r["probe"] = to_json(*e.probe);
    epochs.push_back(std::move(r));
  }
  return json{{"epochs", epochs}};
}

struct TrainOptions {
  LossConfig loss;
  const Sample* probe = nullptr;        // evaluated after every epoch when set
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(int phase, const Model&)> on_phase_start;
};

struct TrainResult {
  Model model;
  TrainLog log;
};

/// Loss of one sample under the current parameters, no gradients.
inline LossBreakdown probe_loss(const Model& model, const Sample& s, const LossConfig& loss) {
  const RawPredictions<float> raw = forward(model, s.image);
  const Shape sh = s.image.shape();
  const TargetAssignment t = assign_targets(s.boxes, model.config, sh.h, sh.w);
  return evaluate_loss(raw, std::span<const TargetAssignment>(&t, 1), std::span<const Mask>(&s.drivable, 1),
                       std::span<const Mask>(&s.lane, 1), loss);
}

/// One optimizer step on a batch; returns the batch loss.
inline LossBreakdown train_step(Model& model, Optimizer& opt, std::span<const Sample* const> batch,
                                const LossConfig& loss, int epoch) {
  const Tensor<float> images = stack_images(batch);
  std::vector<TargetAssignment> targets;
  std::vector<Mask> drivable, lane;
  for (const Sample* s : batch) {
    targets.push_back(assign_targets(s->boxes, model.config, images.shape().h, images.shape().w));
    drivable.push_back(s->drivable);
    lane.push_back(s->lane);
  }
  GraphBackend backend(model, true);
  Topology<GraphBackend> topo(backend, model.config);
  const auto heads = topo.full(ag::Var<float>::borrow(images, false));
  MultiTaskLoss l = multitask_loss(heads, targets, drivable, lane, loss);
  if (!std::isfinite(l.breakdown.l_total)) throw DivergenceError(epoch, "non-finite loss " + std::to_string(l.breakdown.l_total));
  ag::backward(l.node);
  opt.step(model, backend.gradients());
  return l.breakdown;
}

/// Runs the phases in order. Sample order within an epoch is a seeded
/// shuffle, so a run is reproducible for a fixed seed and thread count.
inline TrainResult train(const ModelConfig& config, const TrainSchedule& schedule, const std::vector<Sample>& dataset,
                         const TrainOptions& options = {}) {
  schedule.validate();
  options.loss.validate();
  if (dataset.empty()) throw ValueError("train: dataset is empty");
  const Shape s0 = dataset.front().image.shape();
  for (const Sample& s : dataset)
    if (!(s.image.shape() == s0)) throw ValueError("train: samples have inconsistent resolutions");

  TrainResult out{build_model(config, schedule.seed), {}};
  Optimizer opt(schedule.optimizer, schedule.learning_rate, schedule.momentum);
  std::mt19937_64 rng(detail::splitmix64(schedule.seed ^ 0x7a11ULL));
  std::vector<std::size_t> order(dataset.size());

  int epoch = 0, step = 0;
  for (std::size_t p = 0; p < schedule.phases.size(); ++p) {
    apply_phase(out.model, schedule.phases[p]);
    if (options.on_phase_start) options.on_phase_start(int(p) + 1, out.model);
    for (int e = 0; e < schedule.phases[p].epochs; ++e) {
      ++epoch;
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(detail::unit_uniform(rng) * double(i))]);

      double det_sum = 0, seg_sum = 0;
      int steps = 0;
      for (std::size_t b = 0; b < order.size(); b += std::size_t(schedule.batch_size)) {
        std::vector<const Sample*> batch;
        for (std::size_t k = b; k < std::min(order.size(), b + std::size_t(schedule.batch_size)); ++k)
          batch.push_back(&dataset[order[k]]);
        const LossBreakdown l = train_step(out.model, opt, batch, options.loss, epoch);
        StepRecord rec{++step, epoch, l};
        out.log.steps.push_back(rec);
        if (options.on_step) options.on_step(rec);
        det_sum += l.l_det;
        seg_sum += l.l_seg;
        ++steps;
      }
      EpochRecord er;
      er.epoch = epoch;
      er.phase = int(p) + 1;
      er.l_det = det_sum / steps;
      er.l_seg = seg_sum / steps;
      er.l_total = total_loss(er.l_det, er.l_seg, options.loss.weights).l_total;
      er.learning_rate = schedule.learning_rate;
      if (options.probe) er.probe = probe_loss(out.model, *options.probe, options.loss);
      out.log.epochs.push_back(er);
      if (options.on_epoch) options.on_epoch(er);
    }
  }
  return out;
}

}  // namespace mtpn
