#pragma once

#include <cstdlib>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "msfm/corpus/pipeline.hpp"

namespace msfm::corpus {

// Re-checks a pipeline output against the raw archive with its own loops; it
// shares only the policy structs and record types with the pipeline. Returns
// one line per violation, empty when the output is clean.
inline std::vector<std::string> validate_corpus(const std::vector<AcqRecord>& raw, const std::vector<AcqRecord>& out,
                                                const std::set<std::string>& rebalanced, const QcPolicy& qc, const PairingPolicy& pp) {
  std::vector<std::string> v;
  const std::set<AcqRecord> raw_set(raw.begin(), raw.end());
  std::map<std::string, std::map<std::string, std::vector<const AcqRecord*>>> loc;
  for (const auto& r : out) {
    const std::string tag = format_record(r);
    if (!raw_set.count(r)) v.push_back("not in archive: " + tag);
    if (r.geo_rmse > qc.max_geo_rmse) v.push_back("geo rmse: " + tag);
    if (r.invalid_frac > qc.max_invalid) v.push_back("invalid fraction: " + tag);
    const bool hsi = r.sensor_id == "enmap" || r.sensor_id == "desis" || r.sensor_id == "emit";
    const bool sar = r.sensor_id == "s1";
    if (hsi && r.cloud_frac >= qc.hsi_cloud_max) v.push_back("hsi cloud: " + tag);
    if (!hsi && !sar && r.cloud_frac >= pp.optical_cloud_max) v.push_back("optical pairing cloud: " + tag);
    if (!rebalanced.count(r.location_id)) v.push_back("location not selected by rebalancing: " + tag);
    loc[r.location_id][r.sensor_id].push_back(&r);
  }
  for (const auto& [id, sensors] : loc) {
    std::vector<const AcqRecord*> anchors;
    for (const char* h : {"enmap", "desis", "emit"})
      if (sensors.count(h)) anchors.insert(anchors.end(), sensors.at(h).begin(), sensors.at(h).end());
    if (anchors.empty()) v.push_back(id + ": no hyperspectral record");
    for (const char* s : {"s2", "oli", "lst", "s1"})
      if (!sensors.count(s)) v.push_back(id + ": missing paired sensor " + s);
    for (const auto& [sensor, rs] : sensors) {
      if (rs.size() > pp.max_timestamps) v.push_back(id + "/" + sensor + ": " + std::to_string(rs.size()) + " timestamps");
      for (std::size_t i = 0; i < rs.size(); ++i)
        for (std::size_t j = i + 1; j < rs.size(); ++j)
          if (std::llabs(rs[i]->timestamp - rs[j]->timestamp) <= pp.dedup_days)
            v.push_back(id + "/" + sensor + ": duplicates at days " + std::to_string(rs[i]->timestamp) + " and " + std::to_string(rs[j]->timestamp));
      if (sensor == "enmap" || sensor == "desis" || sensor == "emit") continue;
      const long long window = sensor == "s1" ? pp.sar_window : pp.optical_window;
      for (const auto* r : rs) {
        bool near = false;
        for (const auto* a : anchors) near = near || std::llabs(r->timestamp - a->timestamp) <= window;
        if (!near) v.push_back(id + "/" + sensor + ": day " + std::to_string(r->timestamp) + " outside the pairing window of every anchor");
      }
    }
  }
  // Protected configurations, re-derived from the HSI records that pass QC.
  std::map<std::string, std::set<std::string>> cfg;
  for (const auto& r : raw) {
    const bool hsi = r.sensor_id == "enmap" || r.sensor_id == "desis" || r.sensor_id == "emit";
    if (hsi && r.geo_rmse <= qc.max_geo_rmse && r.invalid_frac <= qc.max_invalid && r.cloud_frac < qc.hsi_cloud_max) cfg[r.location_id].insert(r.sensor_id);
  }
  for (const auto& [id, c] : cfg) {
    const bool prot = c.count("desis") || (c.size() == 1 && c.count("enmap"));
    if (prot && !rebalanced.count(id)) v.push_back(id + ": protected configuration dropped by rebalancing");
  }
  return v;
}

}  // namespace msfm::corpus
