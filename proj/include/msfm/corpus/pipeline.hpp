#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "msfm/corpus/records.hpp"

namespace msfm::corpus {

// ---- quality control ------------------------------------------------------------

enum class QcRule { GeoRmse, InvalidFrac, HsiCloud, OpticalCloud };

inline const char* rule_name(QcRule r) {
  switch (r) {
    case QcRule::GeoRmse: return "GEO_RMSE";
    case QcRule::InvalidFrac: return "INVALID_FRAC";
    case QcRule::HsiCloud: return "HSI_CLOUD";
    case QcRule::OpticalCloud: return "OPTICAL_CLOUD";
  }
  return "?";
}

struct QcPolicy {
  double max_geo_rmse = 60.0;   // reject above
  double max_invalid = 0.01;    // reject above
  double hsi_cloud_max = 0.10;  // reject at or above
  double optical_cloud_max = 0.10;  // reject at or above; pairing applies its own stricter cut
};

// First rule (in declaration order) the record breaks.
inline std::optional<QcRule> qc_violation(const AcqRecord& r, const QcPolicy& p) {
  if (r.geo_rmse > p.max_geo_rmse) return QcRule::GeoRmse;
  if (r.invalid_frac > p.max_invalid) return QcRule::InvalidFrac;
  const SensorClass c = sensor_class(r.sensor_id);
  if (c == SensorClass::HSI && r.cloud_frac >= p.hsi_cloud_max) return QcRule::HsiCloud;
  if (c == SensorClass::Optical && r.cloud_frac >= p.optical_cloud_max) return QcRule::OpticalCloud;
  return std::nullopt;
}

struct QcResult {
  std::vector<AcqRecord> kept;
  std::vector<std::pair<AcqRecord, QcRule>> rejected;
};

inline QcResult qc_filter(const std::vector<AcqRecord>& records, const QcPolicy& p = {}) {
  QcResult out;
  for (const auto& r : records) {
    if (auto v = qc_violation(r, p))
      out.rejected.emplace_back(r, *v);
    else
      out.kept.push_back(r);
  }
  return out;
}

// ---- hierarchical k-means rebalancing -----------------------------------------------

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  return h;
}

inline double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace detail

// Lloyd's k-means with k-means++ seeding. Returns the cluster of every point;
// clusters are renumbered by their smallest member index so the labelling
// does not depend on seeding order. Fewer points than k gives one cluster each.
inline std::vector<std::size_t> kmeans(const std::vector<const std::vector<double>*>& pts, std::size_t k, CounterRng& rng,
                                       std::size_t max_iter = 50) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> label(n, 0);
  if (n == 0) return label;
  if (n <= k) {
    for (std::size_t i = 0; i < n; ++i) label[i] = i;
    return label;
  }
  const std::size_t d = pts[0]->size();
  std::vector<std::vector<double>> c;
  c.push_back(*pts[rng.below(n)]);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  while (c.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], detail::sq_dist(*pts[i], c.back()));
      total += best[i];
    }
    std::size_t pick = n - 1;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < best[i]) {
          pick = i;
          break;
        }
        u -= best[i];
      }
    } else {
      pick = rng.below(n);
    }
    c.push_back(*pts[pick]);
  }
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double dd = detail::sq_dist(*pts[i], c[j]);
        if (dd < bd) {
          bd = dd;
          arg = j;
        }
      }
      if (label[i] != arg) changed = true;
      label[i] = arg;
    }
    if (!changed) break;
    std::vector<std::vector<double>> sum(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> cnt(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++cnt[label[i]];
      for (std::size_t t = 0; t < d; ++t) sum[label[i]][t] += (*pts[i])[t];
    }
    for (std::size_t j = 0; j < k; ++j)
      if (cnt[j] > 0)
        for (std::size_t t = 0; t < d; ++t) c[j][t] = sum[j][t] / static_cast<double>(cnt[j]);
  }
  std::vector<std::size_t> remap(k, k);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (remap[label[i]] == k) remap[label[i]] = next++;
  for (auto& l : label) l = remap[l];
  return label;
}

struct RebalanceOptions {
  std::size_t levels = 3;
  std::size_t branching = 8;
};

// Protected configurations are kept whatever the targets say.
inline bool is_protected(const HsiConfig& c) { return c.count("desis") || c == HsiConfig{"enmap"}; }

struct RebalanceResult {
  std::set<std::string> kept;
  // Leaf path (one cluster index per level) of every clustered location.
  std::map<std::string, std::vector<std::size_t>> leaf;
  std::map<std::string, std::size_t> population, selected;  // by configuration name
};

// Per downsampled configuration: cluster the embeddings into a `levels`-deep
// k-means tree, order each leaf's members by distance to the leaf mean, then
// take one member from each leaf in turn (leaves in path order) until the
// target is reached. Configurations without a target are kept entirely.
inline RebalanceResult rebalance(const std::vector<LocationEntry>& entries, const std::map<std::string, std::size_t>& targets,
                                 std::uint64_t seed, const RebalanceOptions& opt = {}) {
  require(opt.levels >= 1 && opt.branching >= 2, "rebalance: need at least one level and branching >= 2");
  RebalanceResult out;
  std::map<std::string, std::vector<const LocationEntry*>> by_config;
  for (const auto& e : entries) {
    require(e.embedding.size() == kEmbeddingDim, e.location_id + ": embedding width " + std::to_string(e.embedding.size()));
    by_config[config_name(e.hsi_config)].push_back(&e);
  }
  for (const auto& [name, target] : targets) {
    const std::size_t pop = by_config.count(name) ? by_config.at(name).size() : 0;
    require(target <= pop, "rebalance: target " + std::to_string(target) + " for " + name + " exceeds its population " + std::to_string(pop));
    require(!is_protected(parse_config(name)) || target == pop, "rebalance: configuration " + name + " is protected and cannot be downsampled");
  }
  for (auto& [name, members] : by_config) {
    std::sort(members.begin(), members.end(), [](const LocationEntry* a, const LocationEntry* b) { return a->location_id < b->location_id; });
    out.population[name] = members.size();
    auto t = targets.find(name);
    if (t == targets.end() || t->second == members.size()) {
      for (const auto* e : members) out.kept.insert(e->location_id);
      out.selected[name] = members.size();
      continue;
    }
    // Recursive splitting; each group carries its path.
    CounterRng rng = CounterRng::derive(seed, Purpose::Corpus, {0x7265626cull, detail::fnv1a(name)});
    std::vector<std::pair<std::vector<std::size_t>, std::vector<const LocationEntry*>>> groups{{{}, members}};
    for (std::size_t level = 0; level < opt.levels; ++level) {
      std::vector<std::pair<std::vector<std::size_t>, std::vector<const LocationEntry*>>> next;
      for (auto& [path, g] : groups) {
        std::vector<const std::vector<double>*> pts;
        for (const auto* e : g) pts.push_back(&e->embedding);
        const auto lab = kmeans(pts, opt.branching, rng);
        const std::size_t k = lab.empty() ? 0 : *std::max_element(lab.begin(), lab.end()) + 1;
        std::vector<std::vector<const LocationEntry*>> split(k);
        for (std::size_t i = 0; i < g.size(); ++i) split[lab[i]].push_back(g[i]);
        for (std::size_t j = 0; j < k; ++j) {
          auto p = path;
          p.push_back(j);
          next.emplace_back(std::move(p), std::move(split[j]));
        }
      }
      groups = std::move(next);
    }
    for (auto& [path, g] : groups) {
      std::vector<double> mean(kEmbeddingDim, 0.0);
      for (const auto* e : g)
        for (std::size_t i = 0; i < kEmbeddingDim; ++i) mean[i] += e->embedding[i] / static_cast<double>(g.size());
      std::stable_sort(g.begin(), g.end(), [&](const LocationEntry* a, const LocationEntry* b) {
        return detail::sq_dist(a->embedding, mean) < detail::sq_dist(b->embedding, mean);
      });
      for (const auto* e : g) out.leaf[e->location_id] = path;
    }
    std::size_t taken = 0;
    for (std::size_t round = 0; taken < t->second; ++round)
      for (auto& [path, g] : groups)
        if (round < g.size() && taken < t->second) {
          out.kept.insert(g[round]->location_id);
          ++taken;
        }
    out.selected[name] = taken;
  }
  return out;
}

// ---- pairing and temporal filtering ------------------------------------------------

struct PairingPolicy {
  std::int64_t optical_window = 183;  // days, inclusive
  std::int64_t sar_window = 1461;     // days, inclusive
  double optical_cloud_max = 0.05;    // keep strictly below
  std::size_t max_timestamps = 4;
  std::int64_t dedup_days = 10;       // same-sensor records this close or closer are duplicates
};

inline bool pairable(const AcqRecord& anchor, const AcqRecord& c, const PairingPolicy& p) {
  const std::int64_t dt = c.timestamp > anchor.timestamp ? c.timestamp - anchor.timestamp : anchor.timestamp - c.timestamp;
  switch (sensor_class(c.sensor_id)) {
    case SensorClass::Optical: return dt <= p.optical_window && c.cloud_frac < p.optical_cloud_max;
    case SensorClass::SAR: return dt <= p.sar_window;
    case SensorClass::HSI: return false;
  }
  return false;
}

struct PairResult {
  std::map<std::string, AcqRecord> paired;  // sensor -> chosen record
  bool complete = false;                    // every required sensor paired
};

// Per sensor the eligible candidate closest in time to the anchor, ties to the
// earlier acquisition.
inline PairResult pair_sensors(const AcqRecord& anchor, const std::vector<AcqRecord>& candidates, const PairingPolicy& p,
                               const std::vector<std::string>& required = paired_sensors()) {
  PairResult out;
  for (const auto& c : candidates) {
    require(c.location_id == anchor.location_id, "pair_sensors: candidate from " + c.location_id + " for anchor at " + anchor.location_id);
    if (!pairable(anchor, c, p)) continue;
    auto it = out.paired.find(c.sensor_id);
    if (it == out.paired.end()) {
      out.paired.emplace(c.sensor_id, c);
      continue;
    }
    const auto d = [&](const AcqRecord& r) { return std::abs(r.timestamp - anchor.timestamp); };
    if (d(c) < d(it->second) || (d(c) == d(it->second) && c.timestamp < it->second.timestamp)) it->second = c;
  }
  out.complete = std::all_of(required.begin(), required.end(), [&](const std::string& s) { return out.paired.count(s) != 0; });
  return out;
}

// Records of one sensor at one location: drop anything within dedup_days of
// an already kept record (earliest first), then keep at most max_timestamps
// by farthest-point selection on the day axis starting from the earliest.
// Output sorted by timestamp.
inline std::vector<AcqRecord> temporal_filter(std::vector<AcqRecord> rs, const PairingPolicy& p) {
  std::stable_sort(rs.begin(), rs.end(), [](const AcqRecord& a, const AcqRecord& b) { return a.timestamp < b.timestamp; });
  std::vector<AcqRecord> dedup;
  for (const auto& r : rs) {
    require(dedup.empty() || (r.location_id == dedup.back().location_id && r.sensor_id == dedup.back().sensor_id),
            "temporal_filter: records from more than one sensor/location");
    if (dedup.empty() || r.timestamp - dedup.back().timestamp > p.dedup_days) dedup.push_back(r);
  }
  if (dedup.size() <= p.max_timestamps) return dedup;
  std::vector<bool> chosen(dedup.size(), false);
  std::vector<std::int64_t> gap(dedup.size(), std::numeric_limits<std::int64_t>::max());
  std::size_t pick = 0;
  for (std::size_t n = 0; n < p.max_timestamps; ++n) {
    chosen[pick] = true;
    for (std::size_t i = 0; i < dedup.size(); ++i) gap[i] = std::min(gap[i], std::abs(dedup[i].timestamp - dedup[pick].timestamp));
    std::int64_t best = -1;
    for (std::size_t i = 0; i < dedup.size(); ++i)
      if (!chosen[i] && gap[i] > best) {
        best = gap[i];
        pick = i;
      }
  }
  std::vector<AcqRecord> out;
  for (std::size_t i = 0; i < dedup.size(); ++i)
    if (chosen[i]) out.push_back(dedup[i]);
  return out;
}

// One pass over a location (records by sensor): thin each HSI series, pair
// every anchor, keep complete anchors with their partners, thin each sensor.
inline std::map<std::string, std::vector<AcqRecord>> pair_location(const std::map<std::string, std::vector<AcqRecord>>& sensors,
                                                                   const PairingPolicy& p) {
  std::vector<AcqRecord> candidates;
  for (const auto& [sensor, rs] : sensors)
    if (sensor_class(sensor) != SensorClass::HSI) candidates.insert(candidates.end(), rs.begin(), rs.end());
  std::map<std::string, std::vector<AcqRecord>> chosen;
  for (const auto& [sensor, rs] : sensors) {
    if (sensor_class(sensor) != SensorClass::HSI) continue;
    for (const auto& anchor : temporal_filter(rs, p)) {
      const PairResult pr = pair_sensors(anchor, candidates, p);
      if (!pr.complete) continue;
      chosen[sensor].push_back(anchor);
      for (const auto& [s, r] : pr.paired) chosen[s].push_back(r);
    }
  }
  for (auto& [_, rs] : chosen) {
    std::sort(rs.begin(), rs.end());
    rs.erase(std::unique(rs.begin(), rs.end()), rs.end());
    rs = temporal_filter(rs, p);
  }
  return chosen;
}

// ---- full pipeline -------------------------------------------------------------------

struct CorpusConfig {
  QcPolicy qc;
  PairingPolicy pairing;
  RebalanceOptions rebalance;
  // Keep fractions per downsampled configuration (EMIT-only 2.9M -> 500K,
  // EMIT+EnMAP 1.1M -> 750K).
  std::map<std::string, double> keep_fraction{{"emit", 500.0 / 2900.0}, {"enmap+emit", 750.0 / 1100.0}};
  std::uint64_t seed = 0;
};

struct CorpusOutput {
  std::vector<AcqRecord> kept;  // final records, sorted
  std::vector<std::pair<AcqRecord, QcRule>> rejected_qc;
  std::set<std::string> rebalanced;  // locations kept by rebalancing
  std::set<std::string> protected_locations;
  std::vector<std::pair<std::string, std::string>> summary;  // ordered key/value report
};

// QC -> per-location HSI configuration from the surviving HSI records ->
// rebalance -> temporal filter on HSI anchors -> pairing per anchor ->
// temporal filter on paired records. A location survives pairing if at least
// one anchor pairs every required sensor; only complete anchors and their
// pairs are kept.
inline CorpusOutput run_pipeline(const std::vector<AcqRecord>& records, const std::vector<LocationEntry>& locations, const CorpusConfig& cfg) {
  CorpusOutput out;
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) check_record(r);
  const QcResult qc = qc_filter(records, cfg.qc);
  out.rejected_qc = qc.rejected;

  std::map<std::string, std::map<std::string, std::vector<AcqRecord>>> by_loc;  // location -> sensor -> records
  for (const auto& r : qc.kept) by_loc[r.location_id][r.sensor_id].push_back(r);
  std::vector<LocationEntry> entries;
  for (const auto& l : locations) {
    auto it = by_loc.find(l.location_id);
    if (it == by_loc.end()) continue;
    LocationEntry e = l;
    e.hsi_config.clear();
    for (const auto& [sensor, _] : it->second)
      if (sensor_class(sensor) == SensorClass::HSI) e.hsi_config.insert(sensor);
    if (e.hsi_config.empty()) continue;
    if (is_protected(e.hsi_config)) out.protected_locations.insert(e.location_id);
    entries.push_back(std::move(e));
  }
  std::map<std::string, std::size_t> pop;
  for (const auto& e : entries) ++pop[config_name(e.hsi_config)];
  std::map<std::string, std::size_t> targets;
  for (const auto& [name, frac] : cfg.keep_fraction)
    if (pop.count(name)) targets[name] = static_cast<std::size_t>(std::llround(frac * static_cast<double>(pop.at(name))));
  const RebalanceResult rb = rebalance(entries, targets, cfg.seed, cfg.rebalance);
  out.rebalanced = rb.kept;

  std::size_t paired_locations = 0, unpaired_locations = 0;
  for (const auto& id : rb.kept) {
    std::map<std::string, std::vector<AcqRecord>> current = by_loc.at(id);
    // Thinning the paired records can leave an anchor without a partner, so
    // repeat until nothing changes; every pass only removes records.
    for (;;) {
      const auto chosen = pair_location(current, cfg.pairing);
      if (chosen == current) break;
      current = chosen;
    }
    if (current.empty()) {
      ++unpaired_locations;
      continue;
    }
    ++paired_locations;
    for (auto& [_, rs] : current) out.kept.insert(out.kept.end(), rs.begin(), rs.end());
  }
  std::sort(out.kept.begin(), out.kept.end());

  auto& s = out.summary;
  auto put = [&](const std::string& k, std::size_t v) { s.emplace_back(k, std::to_string(v)); };
  put("records.in", records.size());
  put("qc.kept", qc.kept.size());
  for (QcRule r : {QcRule::GeoRmse, QcRule::InvalidFrac, QcRule::HsiCloud, QcRule::OpticalCloud}) {
    std::size_t n = 0;
    for (const auto& [_, rr] : qc.rejected) n += rr == r;
    put(std::string("qc.rejected.") + rule_name(r), n);
  }
  put("locations.in", locations.size());
  put("locations.with_hsi", entries.size());
  for (const auto& [name, n] : rb.population) put("rebalance.population." + name, n);
  for (const auto& [name, n] : rb.selected) put("rebalance.selected." + name, n);
  put("rebalance.kept", rb.kept.size());
  put("pairing.locations_paired", paired_locations);
  put("pairing.locations_dropped", unpaired_locations);
  std::map<std::string, std::size_t> per_sensor;
  for (const auto& r : out.kept) ++per_sensor[r.sensor_id];
  for (const auto& [sensor, n] : per_sensor) put("records.out." + sensor, n);
  put("records.out", out.kept.size());
  return out;
}

inline std::string format_summary(const std::vector<std::pair<std::string, std::string>>& s) {
  std::string out;
  for (const auto& [k, v] : s) out += k + " = " + v + "\n";
  return out;
}

}  // namespace msfm::corpus
