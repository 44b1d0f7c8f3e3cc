#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "msfm/backbone/backbone.hpp"
#include "msfm/numerics/serialize.hpp"
#include "msfm/pretrain/objective.hpp"
#include "msfm/pretrain/optim.hpp"
#include "msfm/pretrain/views.hpp"

namespace msfm::pre {

struct PretrainConfig {
  ViewPlan views;
  AugmentConfig augment;
  SigRegConfig sigreg;
  ScheduleConfig schedule;
  AdamWConfig adamw;
  double lambda = 0.015;
  std::size_t proj_dim = 128;
  std::size_t proj_hidden = 0;  // 0: twice the pooled width
  std::size_t batch = 4;
  std::size_t total_steps = 1000;
  std::uint64_t seed = 0;          // parameter initialization
  std::uint64_t augment_seed = 0;  // batch order, views, SIGReg directions

  static PretrainConfig paper() { return {}; }
  static PretrainConfig desk() {
    PretrainConfig c;
    c.proj_dim = 32;
    c.schedule.peak_lr = 1e-3;
    c.total_steps = 200;
    return c;
  }
};

inline constexpr char kProjector[] = "proj";

// Encoder and projector parameters in one store; the teacher is a clone.
inline ParamStore init_student(const bb::Model& m, const PretrainConfig& c) {
  ParamStore ps = bb::init_encoder(m, c.seed);
  CounterRng rng = CounterRng::derive(c.seed, Purpose::Init, {0x70726f6aull});
  const std::size_t pooled = m.cfg.trunk_dim();
  add_projector(ps, kProjector, pooled, c.proj_hidden ? c.proj_hidden : 2 * pooled, c.proj_dim, rng);
  return ps;
}

struct TrainState {
  ParamStore student, teacher;
  AdamW opt;
  std::uint64_t step = 0;
};

inline TrainState init_state(const bb::Model& m, const PretrainConfig& c) {
  TrainState s;
  s.student = init_student(m, c);
  s.teacher = s.student.clone();
  s.opt = AdamW(s.student, c.adamw);
  return s;
}

// Samples usable for view construction; `skipped` counts the rest.
inline std::vector<synth::MultiSample> usable_samples(std::vector<synth::MultiSample> data, const ViewPlan& plan, std::size_t* skipped = nullptr) {
  std::vector<synth::MultiSample> out;
  std::size_t n = 0;
  for (auto& s : data) {
    if (s.rasters.size() >= plan.global_sensor_count)
      out.push_back(std::move(s));
    else
      ++n;
  }
  if (skipped) *skipped = n;
  return out;
}

// Dataset indices of the step's batch, drawn without replacement from the
// step's own stream so any step can be replayed in isolation.
inline std::vector<std::size_t> batch_indices(std::size_t n, const PretrainConfig& c, std::uint64_t step) {
  require(n >= c.batch && c.batch > 0, "pretrain: batch " + std::to_string(c.batch) + " exceeds " + std::to_string(n) + " usable samples");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  CounterRng rng = CounterRng::derive(c.augment_seed, Purpose::Sampling, {0x62617463ull, step});
  for (std::size_t i = 0; i < c.batch; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(c.batch);
  return idx;
}

// Augmented views, [sample][view] with the globals first.
using BatchViews = std::vector<std::vector<View>>;

inline BatchViews prepare_views(const std::vector<const synth::MultiSample*>& batch, const PretrainConfig& c, std::uint64_t step) {
  BatchViews out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::uint64_t seed = CounterRng::derive(c.augment_seed, Purpose::Augment, {step, b}).next_u64();
    auto views = build_views(*batch[b], c.views, seed);
    for (std::size_t v = 0; v < views.size(); ++v) views[v] = augment_view(views[v], c.augment, seed ^ (0x9e3779b97f4a7c15ull * (v + 1)));
    out.push_back(std::move(views));
  }
  return out;
}

inline Var project_view(const Binding& p, const bb::Model& m, const View& v) {
  std::map<std::string, Var> in;
  for (const auto& [id, x] : v.rasters) in.emplace(id, Var::constant(x));
  return projector(p, kProjector, bb::encode(p, m, in).pooled);
}

struct BatchLoss {
  LossParts parts;
  Var z;  // (views, batch, proj_dim)
};

// Student over every view, teacher over the globals, then the combined loss.
// NumericFaults are re-raised with the stage that produced them.
inline BatchLoss batch_loss(const Binding& student, const Binding& teacher, const bb::Model& m, const PretrainConfig& c,
                            const BatchViews& views, std::uint64_t step) {
  require(!views.empty(), "batch_loss: empty batch");
  const std::size_t B = views.size(), V = views.front().size();
  std::string stage = "student forward";
  try {
    std::vector<Var> rows(V * B);
    std::vector<Var> targets;
    for (std::size_t b = 0; b < B; ++b) {
      require(views[b].size() == V, "batch_loss: samples carry different view counts");
      stage = "student forward";
      for (std::size_t v = 0; v < V; ++v) rows[v * B + b] = ops::reshape(project_view(student, m, views[b][v]), {1, c.proj_dim});
      stage = "teacher forward";
      std::vector<Var> th;
      for (const auto& view : views[b])
        if (view.role == ViewRole::Global) th.push_back(project_view(teacher, m, view));
      targets.push_back(ops::reshape(teacher_target(th), {1, c.proj_dim}));
    }
    stage = "loss";
    BatchLoss out;
    out.z = ops::reshape(ops::concat(rows, 0), {V, B, c.proj_dim});
    out.parts = total_loss(out.z, ops::concat(targets, 0), c.lambda, c.sigreg, c.augment_seed, step);
    return out;
  } catch (const NumericFault& e) {
    throw NumericFault(stage + ": " + e.op(), e.node_id());
  }
}

// Mean over projection dimensions of the per-dimension variance across rows.
inline double projection_variance(const Tensor& z) {
  const std::size_t P = z.shape().back(), n = z.numel() / P;
  double total = 0.0;
  for (std::size_t j = 0; j < P; ++j) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += z[i * P + j];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sq += (z[i * P + j] - mean) * (z[i * P + j] - mean);
    total += sq / static_cast<double>(n);
  }
  return total / static_cast<double>(P);
}

struct StepMetrics {
  std::uint64_t step = 0;
  double lr = 0.0, momentum = 0.0;
  double loss = 0.0, inv = 0.0, sigreg = 0.0;
  double grad_norm = 0.0, proj_var = 0.0;
};

// One JSON object per line; %.17g keeps every bit of each double.
inline std::string to_jsonl(const StepMetrics& s) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "{\"step\":" << s.step << ",\"lr\":" << num(s.lr) << ",\"momentum\":" << num(s.momentum) << ",\"loss\":" << num(s.loss)
     << ",\"inv\":" << num(s.inv) << ",\"sigreg\":" << num(s.sigreg) << ",\"grad_norm\":" << num(s.grad_norm)
     << ",\"proj_var\":" << num(s.proj_var) << "}";
  return os.str();
}

// Forward, backward, AdamW on the student at the scheduled lr, then the EMA
// teacher update at the scheduled momentum.
inline StepMetrics train_step(TrainState& st, const bb::Model& m, const PretrainConfig& c, const std::vector<synth::MultiSample>& data) {
  require(st.step < c.total_steps, "train_step: run already at step " + std::to_string(st.step) + " of " + std::to_string(c.total_steps));
  const auto idx = batch_indices(data.size(), c, st.step);
  std::vector<const synth::MultiSample*> batch;
  for (auto i : idx) batch.push_back(&data[i]);
  const BatchViews views = prepare_views(batch, c, st.step);
  const ScheduleValues sched = schedules(static_cast<double>(st.step), c.total_steps, c.schedule);

  Binding student(st.student, true);
  Binding teacher(st.teacher, false);
  const BatchLoss bl = batch_loss(student, teacher, m, c, views, st.step);
  StepMetrics out;
  out.step = st.step;
  out.lr = sched.lr;
  out.momentum = sched.momentum;
  out.loss = bl.parts.total.item();
  out.inv = bl.parts.inv.item();
  out.sigreg = bl.parts.sig.item();
  out.proj_var = projection_variance(bl.z.value());

  const Gradients grads = backward(bl.parts.total);
  std::unordered_map<std::string, const Tensor*> by_name;
  double g2 = 0.0;
  for (const auto& name : st.student.names()) {
    auto it = student.bound().find(name);
    if (it == student.bound().end()) continue;
    const Tensor* g = grads.find(it->second);
    if (!g) continue;
    by_name.emplace(name, g);
    for (double v : g->storage()) g2 += v * v;
  }
  out.grad_norm = std::sqrt(g2);
  if (!std::isfinite(out.grad_norm)) throw NumericFault("gradient", 0);
  st.opt.step(st.student, by_name, sched.lr);
  ema_update(st.teacher, st.student, sched.momentum);
  ++st.step;
  return out;
}

// ---- checkpoints ---------------------------------------------------------------

inline constexpr double kCheckpointVersion = 1;

// student/<p>, teacher/<p>, adam.m/<p>, adam.v/<p> plus state/{version, step,
// adam_t, seed_hi, seed_lo, aug_hi, aug_lo}.
inline void save_checkpoint(const std::filesystem::path& path, const TrainState& st, const PretrainConfig& c) {
  io::NamedTensors out;
  auto put = [&](const std::string& prefix, const ParamStore& ps) {
    for (const auto& name : ps.names()) out.emplace_back(prefix + name, ps.get(name));
  };
  put("student/", st.student);
  put("teacher/", st.teacher);
  put("adam.m/", st.opt.first_moment());
  put("adam.v/", st.opt.second_moment());
  out.emplace_back("state/version", Tensor::scalar(kCheckpointVersion));
  out.emplace_back("state/step", Tensor::scalar(static_cast<double>(st.step)));
  out.emplace_back("state/adam_t", Tensor::scalar(static_cast<double>(st.opt.steps())));
  out.emplace_back("state/seed_hi", Tensor::scalar(static_cast<double>(c.seed >> 32)));
  out.emplace_back("state/seed_lo", Tensor::scalar(static_cast<double>(c.seed & 0xffffffffull)));
  out.emplace_back("state/aug_hi", Tensor::scalar(static_cast<double>(c.augment_seed >> 32)));
  out.emplace_back("state/aug_lo", Tensor::scalar(static_cast<double>(c.augment_seed & 0xffffffffull)));
  io::save(path, out);
}

// Restores into a state initialized for the same model and config. A container
// written by another checkpoint version raises VersionMismatch; a different
// seed or parameter layout raises DataError.
inline void load_checkpoint(const std::filesystem::path& path, TrainState& st, const PretrainConfig& c) {
  const io::NamedTensors in = io::load(path);
  std::unordered_map<std::string, const Tensor*> by;
  for (const auto& [name, t] : in) by.emplace(name, &t);
  auto scalar = [&](const std::string& key) {
    auto it = by.find(key);
    if (it == by.end()) throw DataError(path.string() + ": checkpoint lacks " + key);
    return it->second->item();
  };
  const double version = scalar("state/version");
  if (version != kCheckpointVersion)
    throw VersionMismatch(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  auto seed_of = [&](const std::string& k) {
    return (static_cast<std::uint64_t>(scalar("state/" + k + "_hi")) << 32) | static_cast<std::uint64_t>(scalar("state/" + k + "_lo"));
  };
  if (seed_of("seed") != c.seed || seed_of("aug") != c.augment_seed)
    throw DataError(path.string() + ": checkpoint seeds (" + std::to_string(seed_of("seed")) + ", " + std::to_string(seed_of("aug")) +
                    ") differ from the config (" + std::to_string(c.seed) + ", " + std::to_string(c.augment_seed) + ")");
  auto get = [&](const std::string& prefix, ParamStore& ps) {
    std::size_t found = 0;
    for (const auto& name : ps.names()) {
      auto it = by.find(prefix + name);
      if (it == by.end() || it->second->shape() != ps.get(name).shape())
        throw DataError(path.string() + ": checkpoint does not match the model at " + prefix + name);
      ps.get(name) = *it->second;
      ++found;
    }
    return found;
  };
  std::size_t n = get("student/", st.student) + get("teacher/", st.teacher);
  n += get("adam.m/", st.opt.first_moment()) + get("adam.v/", st.opt.second_moment());
  if (n + 7 != in.size()) throw DataError(path.string() + ": checkpoint holds parameters the model does not have");
  st.step = static_cast<std::uint64_t>(scalar("state/step"));
  st.opt.set_steps(static_cast<std::uint64_t>(scalar("state/adam_t")));
}

}  // namespace msfm::pre
