#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msfm/backbone/backbone.hpp"
#include "msfm/cli/config.hpp"
#include "msfm/corpus/pipeline.hpp"
#include "msfm/corpus/validate.hpp"
#include "msfm/downstream/probe.hpp"
#include "msfm/downstream/routing.hpp"
#include "msfm/numerics/gradcheck.hpp"
#include "msfm/numerics/serialize.hpp"
#include "msfm/pretrain/trainer.hpp"
#include "msfm/synth/dataset.hpp"

namespace msfm::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kData = 3,
  kNumeric = 4,
  kAcceptance = 5,
  kVersion = 6,
};

inline const std::vector<std::pair<std::string, std::string>>& commands() {
  static const std::vector<std::pair<std::string, std::string>> c{
      {"gen-data", "write a synthetic multi-sensor dataset to data.dir"},
      {"corpus-sim", "build and validate a paired corpus from a synthetic acquisition archive"},
      {"pretrain", "self-supervised pretraining with metric log and checkpoints in out.dir"},
      {"probe", "train a segmentation head on a frozen encoder and write its evaluation table"},
      {"gradcheck", "compare analytic and finite-difference gradients; exit 5 above 1e-4"},
      {"describe", "print the encoder parameter report"},
  };
  return c;
}

inline constexpr double kPaperParams = 156e6;
inline constexpr double kGradTolerance = 1e-4;

// ---- configuration -------------------------------------------------------------

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// All keys with their defaults for the given scale preset ("desk" or "paper").
inline RunConfig defaults(const std::string& scale) {
  if (scale != "desk" && scale != "paper") throw ConfigError("scale must be 'desk' or 'paper', got '" + scale + "'");
  const bool paper = scale == "paper";
  const bb::BackboneConfig bc = paper ? bb::BackboneConfig::paper() : bb::BackboneConfig::desk();
  const pre::PretrainConfig pc = paper ? pre::PretrainConfig::paper() : pre::PretrainConfig::desk();
  const ds::ProbeConfig probe = paper ? ds::ProbeConfig::paper() : ds::ProbeConfig::desk();
  const corpus::CorpusConfig cc;
  const synth::SampleOptions so;

  RunConfig c;
  c.define("scale", scale, "preset for every default: desk or paper");
  c.define("grid", paper ? "64" : "8", "token grid side; fixed at 64 for the paper suite");
  c.define("seed.init", "0", "parameter initialization");
  c.define("seed.data", "0", "synthetic scenes, archive and corpus rebalancing");
  c.define("seed.augment", "0", "batch order, views and SIGReg directions");
  c.define("out.dir", "run", "artifact directory");

  c.define("data.dir", "data", "dataset directory (gen-data writes, pretrain and probe read)");
  c.define("data.count", "32", "locations written by gen-data");
  c.define("data.hsi_presence", fmt(so.hsi_presence), "probability that each hyperspectral sensor is present");
  c.define("data.label_classes", "4", "label classes per location; 0 writes no labels");

  c.define("backbone.dim", std::to_string(bc.dim), "stage-1 width D");
  c.define("backbone.fusion_dim", std::to_string(bc.fusion_dim), "fusion width");
  c.define("backbone.depths", join({bc.depths[0], bc.depths[1], bc.depths[2]}), "blocks per stage");
  c.define("backbone.heads", std::to_string(bc.heads), "stage-1 attention heads");

  c.define("pretrain.steps", std::to_string(pc.total_steps), "total optimizer steps");
  c.define("pretrain.batch", std::to_string(pc.batch), "locations per step");
  c.define("pretrain.lambda", fmt(pc.lambda), "SIGReg weight");
  c.define("pretrain.proj_dim", std::to_string(pc.proj_dim), "projector output width");
  c.define("pretrain.lr", fmt(pc.schedule.peak_lr), "peak learning rate");
  c.define("pretrain.warmup_frac", fmt(pc.schedule.warmup_frac), "linear warmup share of the steps");
  c.define("pretrain.momentum_start", fmt(pc.schedule.momentum_start), "teacher EMA momentum at step 0");
  c.define("pretrain.momentum_end", fmt(pc.schedule.momentum_end), "teacher EMA momentum at the last step");
  c.define("pretrain.weight_decay", fmt(pc.adamw.weight_decay), "AdamW decoupled weight decay");
  c.define("pretrain.checkpoint_every", "50", "steps between numbered checkpoints; 0 keeps only last.ckpt");
  c.define("pretrain.resume", "", "checkpoint to resume from");
  c.define("pretrain.stop_after", "0", "stop once this step is reached (0: run to the end)");

  c.define("views.global", std::to_string(pc.views.global_views), "global views per location");
  c.define("views.local", std::to_string(pc.views.local_views), "local views per location");
  c.define("views.global_sensors", std::to_string(pc.views.global_sensor_count), "sensors per global view");
  c.define("sigreg.directions", std::to_string(pc.sigreg.directions), "random projection directions");
  c.define("sigreg.nodes", std::to_string(pc.sigreg.nodes), "quadrature nodes");
  c.define("sigreg.t_max", fmt(pc.sigreg.t_max), "quadrature range");

  c.define("corpus.records", "10000", "minimum size of the generated archive");
  c.define("corpus.archive", "", "records file to use instead of a generated archive");
  c.define("corpus.locations", "", "locations file to use with corpus.archive");
  c.define("corpus.levels", std::to_string(cc.rebalance.levels), "hierarchical k-means levels");
  c.define("corpus.branching", std::to_string(cc.rebalance.branching), "clusters per level");
  c.define("corpus.keep.emit", fmt(cc.keep_fraction.at("emit")), "share of EMIT-only locations kept");
  c.define("corpus.keep.enmap_emit", fmt(cc.keep_fraction.at("enmap+emit")), "share of EnMAP+EMIT locations kept");
  c.define("qc.max_geo_rmse", fmt(cc.qc.max_geo_rmse), "metres; rejected above");
  c.define("qc.max_invalid", fmt(cc.qc.max_invalid), "invalid-pixel share; rejected above");
  c.define("qc.hsi_cloud_max", fmt(cc.qc.hsi_cloud_max), "hyperspectral cloud share; rejected at or above");
  c.define("qc.optical_cloud_max", fmt(cc.qc.optical_cloud_max), "optical cloud share; rejected at or above");
  c.define("pairing.optical_window", std::to_string(cc.pairing.optical_window), "days");
  c.define("pairing.sar_window", std::to_string(cc.pairing.sar_window), "days");
  c.define("pairing.cloud_max", fmt(cc.pairing.optical_cloud_max), "paired optical cloud share; kept below");
  c.define("pairing.max_timestamps", std::to_string(cc.pairing.max_timestamps), "records per sensor and location");
  c.define("pairing.dedup_days", std::to_string(cc.pairing.dedup_days), "same-sensor records this close are duplicates");

  c.define("probe.checkpoint", "", "pretraining checkpoint for the encoder; empty uses a random encoder");
  c.define("probe.epochs", std::to_string(probe.epochs), "training epochs");
  c.define("probe.batch", std::to_string(probe.batch), "samples per step");
  c.define("probe.lr", fmt(probe.lr), "peak learning rate (cosine decay)");
  c.define("probe.weight_decay", fmt(probe.weight_decay), "AdamW weight decay");
  c.define("probe.stages", join(probe.head.stages), "pyramid stages fed to the head");
  c.define("probe.width", std::to_string(probe.head.width), "head width");
  c.define("probe.eval_dir", "", "labelled dataset for evaluation; empty evaluates on data.dir");

  c.define("gradcheck.eps", "1e-05", "central-difference step");
  c.define("gradcheck.coords", "2", "coordinates checked per tensor");
  c.define("gradcheck.grid", "4", "token grid side of the checked model");
  return c;
}

// Config file first, then command-line overrides; `scale` picks the preset
// before anything else is applied.
inline RunConfig resolve(const std::string& config_file, const std::vector<std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> kv;
  if (!config_file.empty()) kv = read_config_file(config_file);
  for (const auto& o : overrides) kv.push_back(split_assignment(o, "argument"));
  std::string scale = "desk";
  for (const auto& [k, v] : kv)
    if (k == "scale") scale = v;
  RunConfig c = defaults(scale);
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

inline bb::Model build_model(const RunConfig& c, std::size_t grid_override = 0) {
  const bool paper = c.str("scale") == "paper";
  bb::BackboneConfig bc = paper ? bb::BackboneConfig::paper() : bb::BackboneConfig::desk();
  bc.dim = c.count("backbone.dim");
  bc.spectral.token_dim = bc.dim;
  bc.fusion_dim = c.count("backbone.fusion_dim");
  bc.heads = c.count("backbone.heads");
  const auto depths = c.counts("backbone.depths");
  if (depths.size() != 3) throw ConfigError("backbone.depths needs three values");
  for (std::size_t i = 0; i < 3; ++i) bc.depths[i] = depths[i];
  const std::size_t grid = grid_override ? grid_override : c.count("grid");
  try {
    if (paper) {
      if (grid != 64) throw ConfigError("the paper suite has a fixed 64-token grid");
      return bb::Model(synth::make_sensor_suite(synth::Scale::Paper), bc);
    }
    return bb::Model(synth::make_sensor_suite(synth::Scale::Desk, grid), bc);
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("backbone configuration: ") + e.what());
  }
}

inline pre::PretrainConfig pretrain_config(const RunConfig& c) {
  pre::PretrainConfig p = c.str("scale") == "paper" ? pre::PretrainConfig::paper() : pre::PretrainConfig::desk();
  p.seed = c.count("seed.init");
  p.augment_seed = c.count("seed.augment");
  p.total_steps = c.count("pretrain.steps");
  p.batch = c.count("pretrain.batch");
  p.lambda = c.real("pretrain.lambda");
  p.proj_dim = c.count("pretrain.proj_dim");
  p.schedule.peak_lr = c.real("pretrain.lr");
  p.schedule.warmup_frac = c.real("pretrain.warmup_frac");
  p.schedule.momentum_start = c.real("pretrain.momentum_start");
  p.schedule.momentum_end = c.real("pretrain.momentum_end");
  p.adamw.weight_decay = c.real("pretrain.weight_decay");
  p.views.global_views = c.count("views.global");
  p.views.local_views = c.count("views.local");
  p.views.global_sensor_count = c.count("views.global_sensors");
  p.sigreg.directions = c.count("sigreg.directions");
  p.sigreg.nodes = c.count("sigreg.nodes");
  p.sigreg.t_max = c.real("sigreg.t_max");
  if (p.total_steps == 0 || p.batch == 0 || p.proj_dim == 0) throw ConfigError("pretrain.steps, pretrain.batch and pretrain.proj_dim must be positive");
  if (p.lambda < 0.0 || p.schedule.peak_lr < 0.0) throw ConfigError("pretrain.lambda and pretrain.lr must be non-negative");
  if (p.schedule.warmup_frac < 0.0 || p.schedule.warmup_frac > 1.0) throw ConfigError("pretrain.warmup_frac must lie in [0, 1]");
  return p;
}

inline corpus::CorpusConfig corpus_config(const RunConfig& c) {
  corpus::CorpusConfig cc;
  cc.seed = c.count("seed.data");
  cc.qc.max_geo_rmse = c.real("qc.max_geo_rmse");
  cc.qc.max_invalid = c.real("qc.max_invalid");
  cc.qc.hsi_cloud_max = c.real("qc.hsi_cloud_max");
  cc.qc.optical_cloud_max = c.real("qc.optical_cloud_max");
  cc.pairing.optical_window = static_cast<std::int64_t>(c.count("pairing.optical_window"));
  cc.pairing.sar_window = static_cast<std::int64_t>(c.count("pairing.sar_window"));
  cc.pairing.optical_cloud_max = c.real("pairing.cloud_max");
  cc.pairing.max_timestamps = c.count("pairing.max_timestamps");
  cc.pairing.dedup_days = static_cast<std::int64_t>(c.count("pairing.dedup_days"));
  cc.rebalance.levels = c.count("corpus.levels");
  cc.rebalance.branching = c.count("corpus.branching");
  cc.keep_fraction = {{"emit", c.real("corpus.keep.emit")}, {"enmap+emit", c.real("corpus.keep.enmap_emit")}};
  for (const auto& [k, f] : cc.keep_fraction)
    if (f < 0.0 || f > 1.0) throw ConfigError("keep fraction for " + k + " must lie in [0, 1]");
  if (cc.pairing.max_timestamps == 0 || cc.rebalance.levels == 0 || cc.rebalance.branching < 2)
    throw ConfigError("pairing.max_timestamps and corpus.levels must be positive, corpus.branching at least 2");
  return cc;
}

inline ds::ProbeConfig probe_config(const RunConfig& c) {
  ds::ProbeConfig p = c.str("scale") == "paper" ? ds::ProbeConfig::paper() : ds::ProbeConfig::desk();
  p.seed = c.count("seed.init");
  p.epochs = c.count("probe.epochs");
  p.batch = c.count("probe.batch");
  p.lr = c.real("probe.lr");
  p.weight_decay = c.real("probe.weight_decay");
  p.head.stages = c.counts("probe.stages");
  p.head.width = c.count("probe.width");
  p.head.classes = c.count("data.label_classes");
  if (p.epochs == 0 || p.batch == 0 || p.head.width == 0) throw ConfigError("probe.epochs, probe.batch and probe.width must be positive");
  if (p.head.classes < 2) throw ConfigError("probing needs data.label_classes >= 2");
  try {
    ds::check_head(p.head, 3);
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("probe head: ") + e.what());
  }
  return p;
}

// ---- helpers -----------------------------------------------------------------------

// Every raster must belong to the model suite with the suite's shape.
inline void check_dataset(const std::vector<synth::MultiSample>& data, const bb::Model& m, const std::string& where) {
  if (data.empty()) throw DataError(where + ": dataset is empty");
  for (const auto& s : data)
    for (const auto& [id, x] : s.rasters) {
      const synth::SensorSpec* spec = nullptr;
      for (const auto& sp : m.suite)
        if (sp.id == id) spec = &sp;
      if (!spec) throw DataError(where + ": " + s.location_id + " carries sensor '" + id + "' that the model suite lacks");
      const Shape want{spec->channels, spec->crop_px, spec->crop_px};
      if (x.shape() != want)
        throw DataError(where + ": " + s.location_id + "/" + id + " has shape " + shape_str(x.shape()) + ", the suite expects " + shape_str(want));
    }
}

inline std::vector<synth::MultiSample> load_dataset(const std::string& dir, const bb::Model& m) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory '" + dir + "' does not exist");
  auto data = synth::read_dataset(dir);
  check_dataset(data, m, dir);
  return data;
}

// The encoder half of a pretraining checkpoint (student/ entries).
inline ParamStore load_encoder(const std::filesystem::path& path, const bb::Model& m) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint '" + path.string() + "' does not exist");
  const io::NamedTensors in = io::load(path);
  std::map<std::string, const Tensor*> by;
  for (const auto& [name, t] : in) by.emplace(name, &t);
  auto v = by.find("state/version");
  if (v == by.end()) throw DataError(path.string() + ": not a pretraining checkpoint");
  if (v->second->item() != pre::kCheckpointVersion)
    throw VersionMismatch(path.string() + ": checkpoint version " + fmt(v->second->item()) + ", expected " + fmt(pre::kCheckpointVersion));
  ParamStore enc = bb::init_encoder(m, 0);
  for (const auto& name : enc.names()) {
    auto it = by.find("student/" + name);
    if (it == by.end() || it->second->shape() != enc.get(name).shape())
      throw DataError(path.string() + ": checkpoint does not match the configured backbone at " + name);
    enc.get(name) = *it->second;
  }
  return enc;
}

inline std::string ckpt_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

// Keeps the first `n` lines of a metric log, so a resumed run continues the
// log of the run it resumes.
inline void truncate_lines(const std::filesystem::path& path, std::size_t n) {
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    std::string l;
    while (lines.size() < n && std::getline(in, l)) lines.push_back(l);
  }
  if (lines.size() < n) throw DataError(path.string() + ": metric log has " + std::to_string(lines.size()) + " records, the checkpoint is at step " + std::to_string(n));
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << "\n";
}

// ---- commands ---------------------------------------------------------------------

inline int cmd_gen_data(const RunConfig& c, std::ostream& out) {
  const bb::Model m = build_model(c);
  synth::SampleOptions opt;
  opt.hsi_presence = c.real("data.hsi_presence");
  opt.label_classes = c.count("data.label_classes");
  if (opt.hsi_presence < 0.0 || opt.hsi_presence > 1.0) throw ConfigError("data.hsi_presence must lie in [0, 1]");
  if (opt.label_classes == 1) throw ConfigError("data.label_classes must be 0 or at least 2");
  const std::size_t n = c.count("data.count");
  if (n == 0) throw ConfigError("data.count must be positive");
  std::vector<synth::MultiSample> samples;
  for (std::uint64_t i = 0; i < n; ++i) samples.push_back(synth::generate_sample(c.count("seed.data"), i, m.suite, opt));
  const std::filesystem::path dir = c.str("data.dir");
  synth::write_dataset(samples, dir);
  c.write(dir / "config.txt");
  out << "wrote " << n << " locations to " << dir.string() << "\n";
  return kOk;
}

inline int cmd_corpus_sim(const RunConfig& c, std::ostream& out) {
  const corpus::CorpusConfig cc = corpus_config(c);
  const std::filesystem::path dir = c.str("out.dir");
  std::filesystem::create_directories(dir);
  c.write(dir / "config.txt");

  corpus::Archive ar;
  if (!c.str("corpus.archive").empty() || !c.str("corpus.locations").empty()) {
    if (c.str("corpus.archive").empty() || c.str("corpus.locations").empty())
      throw ConfigError("corpus.archive and corpus.locations must be given together");
    for (const char* k : {"corpus.archive", "corpus.locations"})
      if (!std::filesystem::exists(c.str(k))) throw DataError(std::string(k) + ": '" + c.str(k) + "' does not exist");
    ar.records = corpus::read_records(c.str("corpus.archive"));
    ar.locations = corpus::read_locations(c.str("corpus.locations"));
  } else {
    corpus::ArchiveOptions ao;
    ao.min_records = c.count("corpus.records");
    ar = corpus::generate_archive(c.count("seed.data"), ao);
    corpus::write_records(dir / "archive_records.txt", ar.records);
    corpus::write_locations(dir / "archive_locations.txt", ar.locations);
  }

  const corpus::CorpusOutput res = corpus::run_pipeline(ar.records, ar.locations, cc);
  corpus::write_records(dir / "kept.txt", res.kept);
  {
    std::ofstream rej(dir / "rejected.txt");
    for (const auto& [r, rule] : res.rejected_qc) rej << corpus::format_record(r) << " rule=" << corpus::rule_name(rule) << "\n";
    if (!rej) throw DataError("cannot write " + (dir / "rejected.txt").string());
  }
  const std::string summary = corpus::format_summary(res.summary);
  {
    std::ofstream s(dir / "summary.txt");
    s << summary;
  }
  out << summary;

  const auto violations = corpus::validate_corpus(ar.records, res.kept, res.rebalanced, cc.qc, cc.pairing);
  for (const auto& v : violations) out << "violation: " << v << "\n";
  out << "validator: " << violations.size() << " violations\n";
  return violations.empty() ? kOk : kAcceptance;
}

inline int cmd_pretrain(const RunConfig& c, std::ostream& out) {
  const bb::Model m = build_model(c);
  const pre::PretrainConfig pc = pretrain_config(c);
  std::size_t skipped = 0;
  const auto data = pre::usable_samples(load_dataset(c.str("data.dir"), m), pc.views, &skipped);
  if (data.empty()) throw DataError("no location carries enough sensors for the configured views");
  const std::filesystem::path dir = c.str("out.dir");
  std::filesystem::create_directories(dir);
  c.write(dir / "config.txt");

  pre::TrainState st = pre::init_state(m, pc);
  const std::filesystem::path log_path = dir / "metrics.jsonl";
  if (!c.str("pretrain.resume").empty()) {
    const std::filesystem::path from = c.str("pretrain.resume");
    if (!std::filesystem::exists(from)) throw DataError("checkpoint '" + from.string() + "' does not exist");
    pre::load_checkpoint(from, st, pc);
    truncate_lines(log_path, st.step);
    out << "resumed at step " << st.step << "\n";
  } else {
    std::ofstream(log_path, std::ios::trunc);
  }
  std::ofstream log(log_path, std::ios::app);
  if (!log) throw DataError("cannot write " + log_path.string());

  const std::uint64_t every = c.count("pretrain.checkpoint_every");
  const std::uint64_t stop = c.count("pretrain.stop_after");
  const std::uint64_t end = stop ? std::min<std::uint64_t>(stop, pc.total_steps) : pc.total_steps;
  out << data.size() << " usable locations (" << skipped << " skipped), steps " << st.step << " -> " << end << "\n";
  while (st.step < end) {
    const pre::StepMetrics s = pre::train_step(st, m, pc, data);
    log << pre::to_jsonl(s) << "\n" << std::flush;
    if (st.step % 10 == 0 || st.step == end)
      out << "step " << st.step << " loss " << fmt(s.loss) << " inv " << fmt(s.inv) << " sigreg " << fmt(s.sigreg) << "\n" << std::flush;
    if (every && st.step % every == 0) pre::save_checkpoint(dir / ckpt_name(st.step), st, pc);
  }
  pre::save_checkpoint(dir / "last.ckpt", st, pc);
  out << "checkpoint " << (dir / "last.ckpt").string() << "\n";
  return kOk;
}

inline int cmd_probe(const RunConfig& c, std::ostream& out) {
  const bb::Model m = build_model(c);
  const ds::ProbeConfig pc = probe_config(c);
  const std::string ckpt = c.str("probe.checkpoint");
  const ParamStore encoder = ckpt.empty() ? bb::init_encoder(m, c.count("seed.init")) : load_encoder(ckpt, m);

  auto labelled = [&](const std::string& dir) {
    const auto data = load_dataset(dir, m);
    for (const auto& s : data) {
      if (!s.label) throw DataError(dir + ": location " + s.location_id + " has no label raster");
      for (double v : s.label->storage())
        if (v < 0.0 || v >= static_cast<double>(pc.head.classes) || v != std::floor(v))
          throw DataError(dir + ": location " + s.location_id + " has label " + fmt(v) + " outside the " + std::to_string(pc.head.classes) + " classes");
    }
    return ds::extract_features(encoder, m, data);
  };
  const auto train = labelled(c.str("data.dir"));
  const auto eval = c.str("probe.eval_dir").empty() ? train : labelled(c.str("probe.eval_dir"));

  const std::filesystem::path dir = c.str("out.dir");
  std::filesystem::create_directories(dir);
  c.write(dir / "config.txt");
  std::ofstream log(dir / "probe_metrics.jsonl", std::ios::trunc);
  const ds::ProbeResult res = ds::train_probe(train, pc, [&](const ds::ProbeEpoch& e) {
    log << "{\"epoch\":" << e.epoch << ",\"lr\":" << fmt(e.lr) << ",\"loss\":" << fmt(e.loss) << "}\n";
    if ((e.epoch + 1) % 10 == 0) out << "epoch " << e.epoch + 1 << " loss " << fmt(e.loss) << "\n" << std::flush;
  });
  io::NamedTensors head;
  for (const auto& n : res.head.names()) head.emplace_back(n, res.head.get(n));
  io::save(dir / "head.msfm", head);
  const std::string table = ds::format_report(ds::evaluate_probe(res.head, pc.head, eval));
  std::ofstream(dir / "eval.txt") << table;
  out << table;
  return kOk;
}

struct GradcheckOutcome {
  double pretrain_error = 0.0, head_error = 0.0;
  std::size_t pretrain_coords = 0, head_coords = 0;
  std::string pretrain_worst, head_worst;
  // Coordinates whose gradient sat below the central-difference resolution
  // and were compared against it instead of against themselves.
  std::size_t pretrain_floored = 0, head_floored = 0;
};

// Full pretraining loss (student parameters, frozen teacher) and probe-head
// loss on a small desk model, both against central differences.
inline GradcheckOutcome run_gradcheck(const RunConfig& c) {
  const bb::Model m = build_model(c, c.count("gradcheck.grid"));
  pre::PretrainConfig pc = pretrain_config(c);
  pc.batch = 2;
  std::vector<synth::MultiSample> data;
  synth::SampleOptions so;
  so.label_classes = 3;
  for (std::uint64_t i = 0; i < 2; ++i) data.push_back(synth::generate_sample(c.count("seed.data"), i, m.suite, so));

  ParamStore student = pre::init_student(m, pc);
  // Move off the initialization so no parameter sits at an exact zero or symmetry.
  for (const auto& n : student.names()) {
    CounterRng r(synth::id_hash(n), 1);
    for (auto& v : student.get(n).storage()) v += 0.05 * r.normal();
  }
  const ParamStore teacher = student.clone();
  const auto views = pre::prepare_views({&data[0], &data[1]}, pc, 0);
  GradCheckOptions opt;
  opt.eps = c.real("gradcheck.eps");
  opt.coords_per_tensor = c.count("gradcheck.coords");
  opt.seed = c.count("seed.init");
  if (!(opt.eps > 0.0) || opt.coords_per_tensor == 0) throw ConfigError("gradcheck.eps and gradcheck.coords must be positive");

  GradcheckOutcome o;
  const auto pretrain_loss = [&](const Binding& p) { return pre::batch_loss(p, Binding(teacher, false), m, pc, views, 0).parts.total; };
  opt.abs_floor = fd_resolution(pretrain_loss(Binding(student, false)).item(), opt.eps) / kGradTolerance;
  const auto a = grad_check(student, pretrain_loss, opt);
  o.pretrain_error = a.max_rel_error;
  o.pretrain_coords = a.coords_checked;
  o.pretrain_worst = a.worst_param + "[" + std::to_string(a.worst_index) + "]";
  o.pretrain_floored = a.floored;

  ds::SegHeadConfig hc;
  hc.classes = 3;
  hc.width = 16;
  const auto feats = ds::extract_features(student, m, {data[0]});
  ParamStore head = ds::init_seg_head(feats[0].features.widths(), hc, c.count("seed.init"));
  const auto head_loss = [&](const Binding& p) { return ds::seg_loss(ds::seg_head_forward(p, hc, feats[0].features), feats[0].label); };
  opt.abs_floor = fd_resolution(head_loss(Binding(head, false)).item(), opt.eps) / kGradTolerance;
  const auto b = grad_check(head, head_loss, opt);
  o.head_error = b.max_rel_error;
  o.head_coords = b.coords_checked;
  o.head_worst = b.worst_param + "[" + std::to_string(b.worst_index) + "]";
  o.head_floored = b.floored;
  return o;
}

inline int cmd_gradcheck(const RunConfig& c, std::ostream& out) {
  const GradcheckOutcome o = run_gradcheck(c);
  out << "pretraining loss: max relative error " << fmt(o.pretrain_error) << " over " << o.pretrain_coords << " coordinates, "
      << o.pretrain_floored << " below resolution (worst " << o.pretrain_worst << ")\n";
  out << "probe head loss:  max relative error " << fmt(o.head_error) << " over " << o.head_coords << " coordinates, " << o.head_floored
      << " below resolution (worst " << o.head_worst << ")\n";
  const bool ok = o.pretrain_error < kGradTolerance && o.head_error < kGradTolerance;
  out << (ok ? "ok" : "FAILED") << ": tolerance " << fmt(kGradTolerance) << "\n";
  return ok ? kOk : kAcceptance;
}

inline std::string format_params(const bb::ParamReport& r) {
  std::ostringstream s;
  for (const auto& [name, n] : r.rows) s << std::left << std::setw(24) << name << std::right << std::setw(14) << n << "\n";
  s << std::left << std::setw(24) << "total" << std::right << std::setw(14) << r.total << "\n";
  return s.str();
}

inline int cmd_describe(const RunConfig& c, std::ostream& out) {
  const bb::Model m = build_model(c);
  const ParamStore ps = bb::init_encoder(m, c.count("seed.init"));
  const bb::ParamReport r = bb::describe(ps, m);
  out << "scale " << c.str("scale") << ", grid " << m.grid << ", " << m.suite.size() << " sensors\n" << format_params(r);
  if (c.str("scale") != "paper") return kOk;
  const double dev = (static_cast<double>(r.total) - kPaperParams) / kPaperParams;
  out << "deviation from 156M: " << std::showpos << std::fixed << std::setprecision(2) << 100.0 * dev << "%" << std::noshowpos << "\n";
  return kOk;
}

inline int dispatch(const std::string& command, const RunConfig& c, std::ostream& out) {
  if (command == "gen-data") return cmd_gen_data(c, out);
  if (command == "corpus-sim") return cmd_corpus_sim(c, out);
  if (command == "pretrain") return cmd_pretrain(c, out);
  if (command == "probe") return cmd_probe(c, out);
  if (command == "gradcheck") return cmd_gradcheck(c, out);
  if (command == "describe") return cmd_describe(c, out);
  throw ConfigError("unknown command '" + command + "'");
}

// Parses the command line, runs one command and maps failures to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-sensor hyperspectral foundation model toolkit", "msfm"};
  app.require_subcommand(0, 1);
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every config key with its desk default and exit");
  std::string config_file;
  std::vector<std::string> overrides;
  for (const auto& [name, help] : commands()) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_file, "key = value file applied before the command-line overrides");
    sub->add_option("overrides", overrides, "key=value settings");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }
  if (list_keys) {
    out << defaults("desk").help();
    return kOk;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return kConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return dispatch(command, resolve(config_file, overrides), out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const VersionMismatch& e) {
    err << "version mismatch: " << e.what() << "\n";
    return kVersion;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericFault& e) {
    err << "numeric fault: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace msfm::cli
