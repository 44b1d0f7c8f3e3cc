#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msfm/numerics/error.hpp"
#include "msfm/numerics/rng.hpp"
#include "msfm/numerics/serialize.hpp"
#include "msfm/synth/scene.hpp"
#include "msfm/synth/sensors.hpp"

namespace msfm::synth {

struct MultiSample {
  std::string location_id;
  std::map<std::string, Tensor> rasters;  // sensor id -> (C, crop, crop)
  std::map<std::string, std::int64_t> timestamps;
  std::optional<Tensor> label;  // (px, px) class indices, probe datasets only

  std::set<std::string> available() const {
    std::set<std::string> s;
    for (const auto& [id, _] : rasters) s.insert(id);
    return s;
  }
  bool operator==(const MultiSample&) const = default;
};

struct SampleOptions {
  SceneOptions scene;
  // Each hyperspectral sensor is present with this probability; at least one
  // always is. Non-hyperspectral sensors are always present.
  double hsi_presence = 0.6;
  std::size_t label_classes = 0;  // 0: no label raster
  std::size_t label_px = 0;       // 0: the common token grid side
  bool noise = true;
};

inline std::string location_name(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "loc%06llu", static_cast<unsigned long long>(index));
  return buf;
}

// One location: a fresh latent scene rendered by a random sensor subset.
inline MultiSample generate_sample(std::uint64_t seed, std::uint64_t index, const Suite& suite, const SampleOptions& opt = {}) {
  CounterRng rng = CounterRng::derive(seed, Purpose::Sampling, {index});
  const std::uint64_t scene_seed = rng.next_u64();
  const LatentScene scene = generate_scene(scene_seed, suite, opt.scene);
  std::vector<std::size_t> hsi;
  std::vector<bool> use(suite.size(), false);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    if (suite[i].kind == SensorKind::HSI) {
      hsi.push_back(i);
      use[i] = rng.bernoulli(opt.hsi_presence);
    } else {
      use[i] = true;
    }
  }
  if (!hsi.empty()) {
    bool any = false;
    for (auto i : hsi) any = any || use[i];
    if (!any) use[hsi[rng.below(hsi.size())]] = true;
  }
  MultiSample s;
  s.location_id = location_name(index);
  const auto anchor = static_cast<std::int64_t>(rng.below(1461));
  const std::uint64_t noise_seed = rng.next_u64();
  for (std::size_t i = 0; i < suite.size(); ++i) {
    if (!use[i]) continue;
    const auto& spec = suite[i];
    s.rasters.emplace(spec.id, render_sensor(scene, spec, noise_seed, opt.noise ? -1.0 : 0.0));
    const std::int64_t spread = spec.kind == SensorKind::SAR ? 700 : spec.kind == SensorKind::HSI ? 0 : 150;
    s.timestamps.emplace(spec.id, anchor + (spread ? static_cast<std::int64_t>(rng.below(2 * spread + 1)) - spread : 0));
  }
  if (opt.label_classes > 0) {
    const std::size_t px = opt.label_px ? opt.label_px : suite[0].grid();
    const auto lab = dominant_labels(scene, px, opt.label_classes);
    Tensor t(Shape{px, px});
    for (std::size_t i = 0; i < lab.size(); ++i) t[i] = lab[i];
    s.label = std::move(t);
  }
  return s;
}

// Dataset directory layout:
//   index.txt          "msfm-dataset <version>" then one line per location:
//                      <id> <sensor,...> <sensor:day,...> <label 0|1>
//   <id>.msfm          numerics container, tensors "raster/<sensor>" and "label"
inline constexpr int kDatasetVersion = 1;

struct IndexEntry {
  std::string location_id;
  std::vector<std::string> sensors;
  std::map<std::string, std::int64_t> timestamps;
  bool has_label = false;
};

inline void write_dataset(const std::vector<MultiSample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.txt", std::ios::trunc);
  if (!index) throw DataError("cannot write dataset index in '" + dir.string() + "'");
  index << "msfm-dataset " << kDatasetVersion << "\n";
  for (const auto& s : samples) {
    require(!s.location_id.empty() && s.location_id.find_first_of(" \t\n/") == std::string::npos,
            "write_dataset: invalid location id '" + s.location_id + "'");
    io::NamedTensors t;
    std::string sensors, days;
    for (const auto& [id, r] : s.rasters) {
      t.emplace_back("raster/" + id, r);
      sensors += (sensors.empty() ? "" : ",") + id;
      auto ts = s.timestamps.find(id);
      require(ts != s.timestamps.end(), "write_dataset: " + s.location_id + " has no timestamp for " + id);
      days += (days.empty() ? "" : ",") + id + ":" + std::to_string(ts->second);
    }
    require(!s.rasters.empty(), "write_dataset: " + s.location_id + " has no rasters");
    if (s.label) t.emplace_back("label", *s.label);
    io::save(dir / (s.location_id + ".msfm"), t);
    index << s.location_id << ' ' << sensors << ' ' << days << ' ' << (s.label ? 1 : 0) << "\n";
  }
  if (!index) throw DataError("write failed for dataset index in '" + dir.string() + "'");
}

inline std::vector<IndexEntry> read_index(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.txt");
  if (!in) throw DataError("cannot open dataset index in '" + dir.string() + "'");
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "msfm-dataset") throw DataError(dir.string() + ": not a dataset index");
  if (version != kDatasetVersion)
    throw VersionMismatch(dir.string() + ": dataset version " + std::to_string(version) + ", expected " + std::to_string(kDatasetVersion));
  std::vector<IndexEntry> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    IndexEntry e;
    std::string sensors, days;
    int label = -1;
    if (!(ls >> e.location_id >> sensors >> days >> label) || (label != 0 && label != 1))
      throw DataError(dir.string() + ": malformed index line '" + line + "'");
    std::istringstream ss(sensors);
    for (std::string id; std::getline(ss, id, ',');) e.sensors.push_back(id);
    std::istringstream ds(days);
    for (std::string kv; std::getline(ds, kv, ',');) {
      const auto colon = kv.find(':');
      if (colon == std::string::npos) throw DataError(dir.string() + ": malformed timestamp '" + kv + "' for " + e.location_id);
      try {
        e.timestamps[kv.substr(0, colon)] = std::stoll(kv.substr(colon + 1));
      } catch (const std::exception&) {
        throw DataError(dir.string() + ": malformed timestamp '" + kv + "' for " + e.location_id);
      }
    }
    e.has_label = label == 1;
    out.push_back(std::move(e));
  }
  return out;
}

inline MultiSample read_location(const std::filesystem::path& dir, const IndexEntry& e) {
  const auto path = dir / (e.location_id + ".msfm");
  if (!std::filesystem::exists(path)) throw DataError("location " + e.location_id + ": missing payload " + path.string());
  const auto tensors = io::load(path, "location " + e.location_id);
  MultiSample s;
  s.location_id = e.location_id;
  s.timestamps = e.timestamps;
  for (const auto& [name, t] : tensors) {
    if (name.rfind("raster/", 0) == 0)
      s.rasters.emplace(name.substr(7), t);
    else if (name == "label")
      s.label = t;
    else
      throw DataError("location " + e.location_id + ": unexpected tensor '" + name + "'");
  }
  std::set<std::string> listed(e.sensors.begin(), e.sensors.end());
  if (listed != s.available() || listed.size() != e.timestamps.size() || e.has_label != s.label.has_value())
    throw DataError("location " + e.location_id + ": payload does not match the index");
  return s;
}

inline std::vector<MultiSample> read_dataset(const std::filesystem::path& dir) {
  std::vector<MultiSample> out;
  for (const auto& e : read_index(dir)) out.push_back(read_location(dir, e));
  return out;
}

}  // namespace msfm::synth
