#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msfm/numerics/error.hpp"
#include "msfm/numerics/rng.hpp"

// Acquisition metadata for the corpus-construction simulator.
namespace msfm::corpus {

enum class SensorClass { HSI, Optical, SAR };

// HSI: enmap, desis, emit. Optical: s2, oli and the Landsat lst product. SAR: s1.
inline SensorClass sensor_class(const std::string& id) {
  if (id == "enmap" || id == "desis" || id == "emit") return SensorClass::HSI;
  if (id == "s2" || id == "oli" || id == "lst") return SensorClass::Optical;
  if (id == "s1") return SensorClass::SAR;
  throw ContractViolation("corpus: unknown sensor '" + id + "'");
}

inline const std::vector<std::string>& hsi_sensors() {
  static const std::vector<std::string> v{"enmap", "desis", "emit"};
  return v;
}

// Sensors every retained location must pair with.
inline const std::vector<std::string>& paired_sensors() {
  static const std::vector<std::string> v{"s2", "oli", "lst", "s1"};
  return v;
}

struct AcqRecord {
  std::string location_id;
  std::string sensor_id;
  std::int64_t timestamp = 0;  // day index
  double cloud_frac = 0.0;
  double geo_rmse = 0.0;  // metres
  double invalid_frac = 0.0;

  bool operator==(const AcqRecord&) const = default;
  auto operator<=>(const AcqRecord&) const = default;
};

inline void check_record(const AcqRecord& r) {
  require(!r.location_id.empty() && !r.sensor_id.empty(), "record without location or sensor");
  sensor_class(r.sensor_id);
  require(r.cloud_frac >= 0.0 && r.cloud_frac <= 1.0, r.location_id + "/" + r.sensor_id + ": cloud fraction outside [0, 1]");
  require(r.invalid_frac >= 0.0 && r.invalid_frac <= 1.0, r.location_id + "/" + r.sensor_id + ": invalid fraction outside [0, 1]");
  require(r.geo_rmse >= 0.0, r.location_id + "/" + r.sensor_id + ": negative geolocation RMSE");
}

// HSI co-location configuration, canonical sensor order joined by '+'.
using HsiConfig = std::set<std::string>;

inline std::string config_name(const HsiConfig& c) {
  std::string out;
  for (const auto& id : hsi_sensors())
    if (c.count(id)) out += (out.empty() ? "" : "+") + id;
  return out.empty() ? "none" : out;
}

inline HsiConfig parse_config(const std::string& s) {
  HsiConfig c;
  if (s == "none") return c;
  std::stringstream ss(s);
  std::string id;
  while (std::getline(ss, id, '+')) {
    if (sensor_class(id) != SensorClass::HSI) throw DataError("configuration '" + s + "' names a non-hyperspectral sensor");
    c.insert(id);
  }
  return c;
}

inline constexpr std::size_t kEmbeddingDim = 64;

struct LocationEntry {
  std::string location_id;
  HsiConfig hsi_config;
  std::vector<double> embedding;  // kEmbeddingDim
};

// ---- text I/O ------------------------------------------------------------------
//
// One record per line of space-separated key=value fields:
//   location=loc000001 sensor=emit t=412 cloud=0.031 rmse=18.5 invalid=0.002
// Doubles are written with 17 significant digits so files round-trip exactly.
// Lines starting with '#' are comments.

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::map<std::string, std::string> fields(const std::string& line, const std::string& where) {
  std::map<std::string, std::string> f;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) throw DataError(where + ": malformed field '" + tok + "'");
    if (!f.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second) throw DataError(where + ": duplicate field '" + tok.substr(0, eq) + "'");
  }
  return f;
}

inline const std::string& field(const std::map<std::string, std::string>& f, const std::string& key, const std::string& where) {
  auto it = f.find(key);
  if (it == f.end()) throw DataError(where + ": missing field '" + key + "'");
  return it->second;
}

inline double to_double(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw DataError(where + ": not a number '" + s + "'");
  return v;
}

inline std::int64_t to_int(const std::string& s, const std::string& where) {
  std::size_t pos = 0;
  std::int64_t v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || s.empty()) throw DataError(where + ": not an integer '" + s + "'");
  return v;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    f(line, path.string() + ":" + std::to_string(n));
  }
}

}  // namespace detail

inline std::string format_record(const AcqRecord& r) {
  return "location=" + r.location_id + " sensor=" + r.sensor_id + " t=" + std::to_string(r.timestamp) + " cloud=" + detail::num(r.cloud_frac) +
         " rmse=" + detail::num(r.geo_rmse) + " invalid=" + detail::num(r.invalid_frac);
}

inline AcqRecord parse_record(const std::string& line, const std::string& where = "record") {
  const auto f = detail::fields(line, where);
  AcqRecord r;
  r.location_id = detail::field(f, "location", where);
  r.sensor_id = detail::field(f, "sensor", where);
  r.timestamp = detail::to_int(detail::field(f, "t", where), where);
  r.cloud_frac = detail::to_double(detail::field(f, "cloud", where), where);
  r.geo_rmse = detail::to_double(detail::field(f, "rmse", where), where);
  r.invalid_frac = detail::to_double(detail::field(f, "invalid", where), where);
  try {
    check_record(r);
  } catch (const ContractViolation& e) {
    throw DataError(where + ": " + e.what());
  }
  return r;
}

inline void write_records(const std::filesystem::path& path, const std::vector<AcqRecord>& rs, const std::string& extra_header = "") {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!extra_header.empty()) out << "# " << extra_header << "\n";
  for (const auto& r : rs) out << format_record(r) << "\n";
}

inline std::vector<AcqRecord> read_records(const std::filesystem::path& path) {
  std::vector<AcqRecord> out;
  detail::for_each_line(path, [&](const std::string& line, const std::string& where) { out.push_back(parse_record(line, where)); });
  return out;
}

// location=<id> hsi=<config> embedding=v0,v1,...,v63
inline void write_locations(const std::filesystem::path& path, const std::vector<LocationEntry>& es) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& e : es) {
    out << "location=" << e.location_id << " hsi=" << config_name(e.hsi_config) << " embedding=";
    for (std::size_t i = 0; i < e.embedding.size(); ++i) out << (i ? "," : "") << detail::num(e.embedding[i]);
    out << "\n";
  }
}

inline std::vector<LocationEntry> read_locations(const std::filesystem::path& path) {
  std::vector<LocationEntry> out;
  detail::for_each_line(path, [&](const std::string& line, const std::string& where) {
    const auto f = detail::fields(line, where);
    LocationEntry e;
    e.location_id = detail::field(f, "location", where);
    try {
      e.hsi_config = parse_config(detail::field(f, "hsi", where));
    } catch (const ContractViolation& err) {
      throw DataError(where + ": " + err.what());
    }
    std::stringstream ss(detail::field(f, "embedding", where));
    std::string v;
    while (std::getline(ss, v, ',')) e.embedding.push_back(detail::to_double(v, where));
    if (e.embedding.size() != kEmbeddingDim)
      throw DataError(where + ": embedding has " + std::to_string(e.embedding.size()) + " values, expected " + std::to_string(kEmbeddingDim));
    out.push_back(std::move(e));
  });
  return out;
}

// ---- synthetic archive ------------------------------------------------------------

struct ArchiveOptions {
  std::size_t min_records = 10000;
  std::size_t archetypes = 16;
  double embedding_noise = 0.15;
  // Relative frequency of each HSI configuration among raw locations, skewed
  // toward EMIT-only and EMIT+EnMAP like the mission archives.
  std::vector<std::pair<std::string, double>> config_mix{
      {"emit", 0.50}, {"enmap+emit", 0.19}, {"enmap", 0.20}, {"desis", 0.04}, {"enmap+desis", 0.03}, {"desis+emit", 0.02}, {"enmap+desis+emit", 0.02}};
  std::int64_t span_days = 1461;
};

struct Archive {
  std::vector<LocationEntry> locations;
  std::vector<AcqRecord> records;
};

// Locations are generated until the record count reaches min_records. Every
// location gets an embedding mixing one or two of the shared archetypes, a
// few acquisitions per HSI sensor of its configuration (some of them near
// duplicates) and a time series for each paired sensor. Quality fields are
// drawn so that every QC and pairing rule rejects a share of the records, and
// some locations lack a paired sensor entirely.
inline Archive generate_archive(std::uint64_t seed, const ArchiveOptions& opt = {}) {
  CounterRng rng = CounterRng::derive(seed, Purpose::Corpus, {0x61726368ull});
  std::vector<std::vector<double>> arche(opt.archetypes, std::vector<double>(kEmbeddingDim));
  for (auto& a : arche)
    for (auto& v : a) v = rng.normal();
  double mix_total = 0.0;
  for (const auto& [_, w] : opt.config_mix) mix_total += w;
  require(mix_total > 0.0, "archive: empty configuration mix");

  Archive ar;
  for (std::uint64_t loc = 0; ar.records.size() < opt.min_records; ++loc) {
    CounterRng r = rng.fork(loc);
    char name[32];
    std::snprintf(name, sizeof name, "loc%06llu", static_cast<unsigned long long>(loc));
    LocationEntry e;
    e.location_id = name;
    double u = r.uniform() * mix_total;
    std::string cfg = opt.config_mix.back().first;
    for (const auto& [c, w] : opt.config_mix) {
      if (u < w) {
        cfg = c;
        break;
      }
      u -= w;
    }
    e.hsi_config = parse_config(cfg);
    const std::size_t a0 = r.below(opt.archetypes), a1 = r.below(opt.archetypes);
    const double mix = r.bernoulli(0.5) ? 1.0 : r.uniform(0.5, 1.0);
    e.embedding.resize(kEmbeddingDim);
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) e.embedding[i] = mix * arche[a0][i] + (1.0 - mix) * arche[a1][i] + opt.embedding_noise * r.normal();

    auto add = [&](const std::string& sensor, std::int64_t t, double cloud_scale) {
      AcqRecord a;
      a.location_id = e.location_id;
      a.sensor_id = sensor;
      a.timestamp = t;
      a.cloud_frac = std::min(1.0, cloud_scale * std::pow(r.uniform(), 3.0));
      a.geo_rmse = std::abs(r.normal(0.0, 25.0));
      a.invalid_frac = std::min(1.0, -0.004 * std::log(1.0 - r.uniform()));
      ar.records.push_back(a);
    };
    const std::int64_t anchor = static_cast<std::int64_t>(r.below(static_cast<std::uint64_t>(opt.span_days)));
    for (const auto& id : e.hsi_config) {
      const std::size_t n = 1 + r.below(4);
      std::int64_t t = anchor + static_cast<std::int64_t>(r.below(60));
      for (std::size_t k = 0; k < n; ++k) {
        add(id, t, 0.3);
        if (r.bernoulli(0.2)) add(id, t + static_cast<std::int64_t>(r.below(11)), 0.3);  // near duplicate
        t += 5 + static_cast<std::int64_t>(r.below(200));
      }
    }
    for (const auto& id : paired_sensors()) {
      if (r.bernoulli(0.05)) continue;  // no coverage at all
      const bool sar = sensor_class(id) == SensorClass::SAR;
      const std::size_t n = sar ? 1 + r.below(3) : 2 + r.below(7);
      const std::int64_t reach = sar ? 1600 : 300;
      for (std::size_t k = 0; k < n; ++k) add(id, anchor + static_cast<std::int64_t>(r.below(2 * reach + 1)) - reach, sar ? 0.0 : 0.25);
    }
    ar.locations.push_back(std::move(e));
  }
  return ar;
}

}  // namespace msfm::corpus
