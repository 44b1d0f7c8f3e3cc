#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "msfm/downstream/routing.hpp"
#include "msfm/pretrain/optim.hpp"
#include "msfm/synth/dataset.hpp"

namespace msfm::ds {

// ---- segmentation head ----------------------------------------------------------

struct SegHeadConfig {
  std::vector<std::size_t> stages{0, 1, 2};  // pyramid levels fed to the head
  std::size_t width = 128;
  std::size_t classes = 2;
};

inline std::string head_proj(std::size_t stage) { return "head.proj." + std::to_string(stage); }

inline void check_head(const SegHeadConfig& c, std::size_t levels) {
  require(!c.stages.empty(), "seg head: select at least one pyramid stage");
  require(c.classes >= 2, "seg head: need at least two classes, got " + std::to_string(c.classes));
  require(c.width >= 1, "seg head: width must be positive");
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    require(c.stages[i] < levels, "seg head: stage " + std::to_string(c.stages[i]) + " beyond the pyramid");
    for (std::size_t j = 0; j < i; ++j) require(c.stages[i] != c.stages[j], "seg head: stage listed twice");
  }
}

// Weights are truncated normals scaled by 1/sqrt(fan_in); biases start at 0.
inline ParamStore init_seg_head(const std::vector<std::size_t>& pyramid_widths, const SegHeadConfig& c, std::uint64_t seed) {
  check_head(c, pyramid_widths.size());
  CounterRng rng = CounterRng::derive(seed, Purpose::Probe, {0x68656164ull});
  ParamStore ps;
  auto lin = [&](const std::string& name, std::size_t in, std::size_t out) {
    ps.add(name + ".w", nn::trunc_normal({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
    ps.add(name + ".b", Tensor(Shape{out}));
  };
  for (auto st : c.stages) lin(head_proj(st), pyramid_widths[st], c.width);
  const std::size_t cat = c.width * c.stages.size();
  lin("head.refine", 9 * cat, c.width);
  lin("head.cls", c.width, c.classes);
  return ps;
}

// Project each selected map to the head width, upsample to the finest
// selected resolution, concatenate, 3x3 convolution with GELU, then the 1x1
// classifier. Output (H, W, classes).
inline Var seg_head_forward(const Binding& p, const SegHeadConfig& c, const FeaturePyramid& f) {
  check_head(c, f.maps.size());
  std::size_t H = 0, W = 0;
  for (auto st : c.stages) {
    H = std::max(H, f.maps[st].dim(0));
    W = std::max(W, f.maps[st].dim(1));
  }
  std::vector<Var> parts;
  for (auto st : c.stages) {
    const Var& x = f.maps[st];
    Var y = ops::linear(x, p(head_proj(st) + ".w"), p(head_proj(st) + ".b"));
    if (x.dim(0) != H || x.dim(1) != W) y = ops::resize_bilinear_hwc(y, H, W);
    parts.push_back(y);
  }
  const Var cat = parts.size() == 1 ? parts[0] : ops::concat(parts, 2);
  const Var r = ops::gelu(ops::conv2d_hwc(cat, p("head.refine.w"), p("head.refine.b"), 3, 1, 1));
  return ops::linear(r, p("head.cls.w"), p("head.cls.b"));
}

// Logits bilinearly resized to the label raster, then mean pixel cross-entropy.
inline Var seg_loss(const Var& logits, const Tensor& label) {
  require(label.rank() == 2, "seg_loss: label must be (H, W)");
  const std::size_t H = label.dim(0), W = label.dim(1), C = logits.dim(2);
  Var l = logits;
  if (l.dim(0) != H || l.dim(1) != W) l = ops::resize_bilinear_hwc(l, H, W);
  std::vector<int> lab(H * W);
  for (std::size_t i = 0; i < lab.size(); ++i) lab[i] = static_cast<int>(label[i]);
  return ops::cross_entropy(ops::reshape(l, {H * W, C}), lab);
}

inline std::vector<int> predict(const Var& logits, std::size_t H, std::size_t W) {
  Var l = logits;
  if (l.dim(0) != H || l.dim(1) != W) l = ops::resize_bilinear_hwc(l, H, W);
  const std::size_t C = l.dim(2);
  std::vector<int> out(H * W);
  const Tensor& v = l.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (v[i * C + c] > v[i * C + best]) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

// ---- evaluation -----------------------------------------------------------------

struct SegReport {
  std::vector<double> iou;      // per class; NaN when absent from both maps
  double miou = 0.0;            // over classes not NaN
  double pixel_accuracy = 0.0;
  std::size_t pixels = 0;
};

// IoU from summed per-class intersections and unions over all maps.
class SegAccumulator {
 public:
  explicit SegAccumulator(std::size_t classes) : inter_(classes, 0), uni_(classes, 0) {
    require(classes >= 2, "miou: need at least two classes");
  }

  void add(const std::vector<int>& pred, const std::vector<int>& truth) {
    require(pred.size() == truth.size(), "miou: prediction has " + std::to_string(pred.size()) + " pixels, truth " + std::to_string(truth.size()));
    const std::size_t C = inter_.size();
    for (std::size_t i = 0; i < pred.size(); ++i) {
      require(pred[i] >= 0 && truth[i] >= 0 && static_cast<std::size_t>(pred[i]) < C && static_cast<std::size_t>(truth[i]) < C,
              "miou: label out of range");
      const auto a = static_cast<std::size_t>(pred[i]), b = static_cast<std::size_t>(truth[i]);
      if (a == b) {
        ++inter_[a];
        ++uni_[a];
        ++correct_;
      } else {
        ++uni_[a];
        ++uni_[b];
      }
    }
    pixels_ += pred.size();
  }

  SegReport report() const {
    SegReport r;
    r.pixels = pixels_;
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < inter_.size(); ++c) {
      if (uni_[c] == 0) {
        r.iou.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      r.iou.push_back(static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]));
      sum += r.iou.back();
      ++n;
    }
    r.miou = n ? sum / static_cast<double>(n) : 0.0;
    r.pixel_accuracy = pixels_ ? static_cast<double>(correct_) / static_cast<double>(pixels_) : 0.0;
    return r;
  }

 private:
  std::vector<std::size_t> inter_, uni_;
  std::size_t correct_ = 0, pixels_ = 0;
};

inline SegReport miou(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t classes) {
  SegAccumulator acc(classes);
  acc.add(pred, truth);
  return acc.report();
}

inline std::string format_report(const SegReport& r) {
  std::string out = "class  iou\n";
  char buf[96];
  for (std::size_t c = 0; c < r.iou.size(); ++c) {
    if (std::isnan(r.iou[c]))
      std::snprintf(buf, sizeof buf, "%-5zu  absent\n", c);
    else
      std::snprintf(buf, sizeof buf, "%-5zu  %.6f\n", c, r.iou[c]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean   %.6f\npixel_accuracy %.6f\npixels %zu\n", r.miou, r.pixel_accuracy, r.pixels);
  return out + buf;
}

// ---- probe training ---------------------------------------------------------------

struct ProbeConfig {
  SegHeadConfig head;
  std::size_t epochs = 100;
  std::size_t batch = 4;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  static ProbeConfig paper() { return {}; }
  static ProbeConfig desk() {
    ProbeConfig c;
    c.batch = 1;
    c.lr = 1e-3;
    return c;
  }
};

// Encoder features are computed once with gradients off, so the encoder is
// frozen by construction; only head.* parameters see the optimizer.
struct ProbeSample {
  FeaturePyramid features;
  Tensor label;
};

inline std::vector<ProbeSample> extract_features(const ParamStore& encoder, const bb::Model& m, const std::vector<synth::MultiSample>& data) {
  const Binding p(encoder, false);
  std::vector<ProbeSample> out;
  for (const auto& s : data) {
    require(s.label.has_value(), "probe: sample " + s.location_id + " has no label raster");
    std::map<std::string, Var> rasters;
    for (const auto& [id, r] : s.rasters) rasters.emplace(id, Var::constant(r));
    FeaturePyramid f = encode_features(p, m, rasters);
    for (auto& v : f.maps) v = Var::constant(v.value());
    out.push_back({std::move(f), *s.label});
  }
  return out;
}

struct ProbeEpoch {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean over batches
};

struct ProbeResult {
  ParamStore head;
  std::vector<ProbeEpoch> history;
  SegReport train_report;
};

inline SegReport evaluate_probe(const ParamStore& head, const SegHeadConfig& c, const std::vector<ProbeSample>& data) {
  SegAccumulator acc(c.classes);
  const Binding p(head, false);
  for (const auto& s : data) {
    const auto pred = predict(seg_head_forward(p, c, s.features), s.label.dim(0), s.label.dim(1));
    std::vector<int> truth(s.label.numel());
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = static_cast<int>(s.label[i]);
    acc.add(pred, truth);
  }
  return acc.report();
}

inline Var probe_batch_loss(const Binding& p, const SegHeadConfig& c, const std::vector<ProbeSample>& data, const std::vector<std::size_t>& idx) {
  std::vector<Var> losses;
  for (auto i : idx) losses.push_back(ops::reshape(seg_loss(seg_head_forward(p, c, data[i].features), data[i].label), {1}));
  return ops::mean(ops::concat(losses, 0));
}

// Cross-entropy, AdamW with cosine decay from `lr` to 0 over all steps, a
// fresh sample order each epoch.
inline ProbeResult train_probe(const std::vector<ProbeSample>& data, const ProbeConfig& c,
                               const std::function<void(const ProbeEpoch&)>& on_epoch = {}) {
  require(!data.empty(), "train_probe: empty dataset");
  require(c.epochs >= 1 && c.batch >= 1, "train_probe: epochs and batch must be positive");
  ProbeResult res;
  res.head = init_seg_head(data.front().features.widths(), c.head, c.seed);
  pre::AdamW opt(res.head, pre::AdamWConfig{0.9, 0.999, 1e-8, c.weight_decay});
  const std::size_t per_epoch = (data.size() + c.batch - 1) / c.batch;
  const std::size_t total = per_epoch * c.epochs;
  const pre::ScheduleConfig sched{c.lr, 0.0, 1.0, 1.0};
  std::size_t step = 0;
  std::vector<std::size_t> order(data.size());
  for (std::size_t e = 0; e < c.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    CounterRng rng = CounterRng::derive(c.seed, Purpose::Probe, {0x65706f63ull, e});
    shuffle_in_place(order, rng);
    ProbeEpoch ep{e, pre::schedules(static_cast<double>(step), total, sched).lr, 0.0};
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b * c.batch),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), (b + 1) * c.batch)));
      Binding p(res.head, true);
      const Var loss = probe_batch_loss(p, c.head, data, idx);
      if (!std::isfinite(loss.item())) throw NumericFault("probe loss", 0);
      const Gradients g = backward(loss);
      std::unordered_map<std::string, const Tensor*> by_name;
      for (const auto& [name, v] : p.bound())
        if (const Tensor* t = g.find(v)) by_name.emplace(name, t);
      opt.step(res.head, by_name, pre::schedules(static_cast<double>(step), total, sched).lr);
      ep.loss += loss.item() / static_cast<double>(per_epoch);
      ++step;
    }
    res.history.push_back(ep);
    if (on_epoch) on_epoch(ep);
  }
  res.train_report = evaluate_probe(res.head, c.head, data);
  return res;
}

}  // namespace msfm::ds
