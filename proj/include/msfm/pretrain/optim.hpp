#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <unordered_map>

#include "msfm/numerics/params.hpp"

namespace msfm::pre {

struct ScheduleConfig {
  double peak_lr = 1e-5;
  double warmup_frac = 0.05;
  double momentum_start = 0.996;
  double momentum_end = 1.0;
};

struct ScheduleValues {
  double lr = 0.0;
  double momentum = 0.0;
};

inline std::size_t warmup_steps(std::size_t total, const ScheduleConfig& c) {
  return static_cast<std::size_t>(std::llround(c.warmup_frac * static_cast<double>(total)));
}

// Linear warmup to the peak, then cosine decay to 0 at `total`; EMA momentum
// follows a cosine from momentum_start to momentum_end over the whole run.
// `step` is real-valued so the curves can be probed between integer steps.
inline ScheduleValues schedules(double step, std::size_t total, const ScheduleConfig& c) {
  require(total > 0 && step >= 0.0 && step <= static_cast<double>(total),
          "schedules: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  const double T = static_cast<double>(total);
  const double W = static_cast<double>(warmup_steps(total, c));
  ScheduleValues v;
  if (step < W)
    v.lr = c.peak_lr * step / W;
  else if (W >= T)
    v.lr = c.peak_lr;
  else
    v.lr = c.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - W) / (T - W)));
  v.momentum = c.momentum_end - (c.momentum_end - c.momentum_start) * 0.5 * (1.0 + std::cos(std::numbers::pi * step / T));
  return v;
}

// teacher <- m teacher + (1 - m) student, parameter by parameter.
inline void ema_update(ParamStore& teacher, const ParamStore& student, double m) {
  require(m >= 0.0 && m <= 1.0, "ema_update: momentum " + std::to_string(m) + " outside [0, 1]");
  require(teacher.same_layout(student), "ema_update: teacher and student layouts differ");
  for (const auto& name : teacher.names()) {
    Tensor& t = teacher.get(name);
    const Tensor& s = student.get(name);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = m * t[i] + (1.0 - m) * s[i];
  }
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Matrices and higher-rank weights decay; biases, norm gains and the learned
// position and role tables do not.
inline bool decays(const std::string& name, const Tensor& t) {
  return t.rank() >= 2 && name != "pos" && name != "fuse.role";
}

// AdamW with decoupled weight decay (p -= lr * wd * p) and bias-corrected
// moments. Parameters without a gradient entry still decay and still see their
// moments decay, matching a zero gradient.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const ParamStore& params, AdamWConfig c) : cfg_(c) {
    for (const auto& name : params.names()) {
      m_.add(name, Tensor(params.get(name).shape()));
      v_.add(name, Tensor(params.get(name).shape()));
    }
  }

  void step(ParamStore& params, const std::unordered_map<std::string, const Tensor*>& grads, double lr) {
    require(params.same_layout(m_), "AdamW: parameter layout changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& name : params.names()) {
      Tensor& p = params.get(name);
      Tensor& m = m_.get(name);
      Tensor& v = v_.get(name);
      auto it = grads.find(name);
      const Tensor* g = it == grads.end() ? nullptr : it->second;
      const double wd = decays(name, p) ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = g ? (*g)[i] : 0.0;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
        p[i] -= lr * (update + wd * p[i]);
      }
    }
  }

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return t_; }
  ParamStore& first_moment() noexcept { return m_; }
  ParamStore& second_moment() noexcept { return v_; }
  const ParamStore& first_moment() const noexcept { return m_; }
  const ParamStore& second_moment() const noexcept { return v_; }
  void set_steps(std::uint64_t t) noexcept { t_ = t; }

 private:
  AdamWConfig cfg_;
  ParamStore m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace msfm::pre
