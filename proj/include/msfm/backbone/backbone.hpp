#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "msfm/backbone/hiera.hpp"
#include "msfm/synth/sensors.hpp"
#include "msfm/tokenizers/tokenizers.hpp"

namespace msfm::bb {

struct BackboneConfig {
  std::size_t dim = 192;          // D, stage-1 width
  std::size_t fusion_dim = 768;   // D_f
  std::array<std::size_t, 3> depths{2, 6, 10};
  std::size_t heads = 2;          // stage-1 heads
  std::array<std::size_t, 3> windows{8, 8, 0};  // per-stage window side, 0 = global
  std::size_t fusion_heads = 2;
  std::size_t mlp_ratio = 4;
  tok::SpectralConfig spectral;

  std::size_t width(std::size_t stage) const { return dim << stage; }
  std::size_t stage_heads(std::size_t stage) const { return heads << stage; }
  std::size_t branch_dim() const { return width(1); }  // D_l
  std::size_t trunk_dim() const { return width(2); }

  static BackboneConfig paper() { return {}; }

  static BackboneConfig desk() {
    BackboneConfig c;
    c.dim = 32;
    c.fusion_dim = 128;
    c.depths = {1, 2, 2};
    c.heads = 1;
    c.windows = {4, 2, 0};
    c.fusion_heads = 2;
    c.spectral = {32, 16, 1, 2, 32, 2, 4};
    return c;
  }
};

// Suite, configuration and derived spectral groupings: everything needed to
// build parameters and run a forward pass.
struct Model {
  synth::Suite suite;
  BackboneConfig cfg;
  std::size_t grid = 0;
  std::vector<tok::SpectralGrouping> groupings;  // per suite entry; empty for non-HSI

  Model(synth::Suite s, BackboneConfig c) : suite(std::move(s)), cfg(c) {
    synth::validate_suite(suite);
    grid = suite.front().grid();
    require(cfg.spectral.token_dim == cfg.dim, "backbone: spectral token width must equal D");
    for (std::size_t st = 0; st < 3; ++st)
      require(cfg.depths[st] >= 1, "backbone: every stage needs at least one block");
    const std::size_t g1 = grid, g2 = grid / 2, g3 = grid / 4;
    require(grid % 4 == 0, "backbone: grid must be divisible by 4");
    const std::array<std::size_t, 3> sides{g1, g2, g3};
    for (std::size_t st = 0; st < 3; ++st) {
      const std::size_t w = hiera::window_side(cfg.windows[st], sides[st]);
      require(sides[st] % w == 0, "backbone: stage " + std::to_string(st + 1) + " window " + std::to_string(w) +
                                      " does not tile grid " + std::to_string(sides[st]));
    }
    for (const auto& s : suite)
      groupings.push_back(s.kind == synth::SensorKind::HSI ? tok::partition_bands(s.inventory(), s.group_count)
                                                           : tok::SpectralGrouping{});
  }

  static Model paper() { return Model(synth::make_sensor_suite(synth::Scale::Paper), BackboneConfig::paper()); }
  static Model desk(std::size_t grid = 8) { return Model(synth::make_sensor_suite(synth::Scale::Desk, grid), BackboneConfig::desk()); }

  std::size_t index(const std::string& id) const { return synth::sensor_index(suite, id); }
  std::array<std::size_t, 3> stage_grids() const { return {grid, grid / 2, grid / 4}; }
};

inline std::string tok_name(const std::string& id) { return "tok." + id; }
inline std::string branch_name(const std::string& id) { return "branch." + id; }

inline void add_encoder(ParamStore& ps, const Model& m, CounterRng& rng) {
  const auto& c = m.cfg;
  for (std::size_t i = 0; i < m.suite.size(); ++i) {
    const auto& s = m.suite[i];
    if (s.kind == synth::SensorKind::HSI)
      tok::add_spectral_tokenizer(ps, tok_name(s.id), s, c.spectral, rng);
    else
      tok::add_patch_embed(ps, tok_name(s.id), s, c.dim, rng);
  }
  ps.add("pos", nn::trunc_normal({m.grid * m.grid, c.dim}, rng));
  for (const auto& s : m.suite) {
    const std::string b = branch_name(s.id);
    for (std::size_t i = 0; i < c.depths[0]; ++i) nn::add_transformer_block(ps, b + ".s1." + std::to_string(i), c.width(0), c.mlp_ratio, rng);
    hiera::add_pool_block(ps, b + ".s2.0", c.width(0), c.width(1), c.mlp_ratio, rng);
    for (std::size_t i = 1; i < c.depths[1]; ++i) nn::add_transformer_block(ps, b + ".s2." + std::to_string(i), c.width(1), c.mlp_ratio, rng);
  }
  for (const auto& s : m.suite) nn::add_linear(ps, "fuse.in." + s.id, c.branch_dim(), c.fusion_dim, rng);
  ps.add("fuse.role", nn::trunc_normal({m.suite.size(), c.fusion_dim}, rng));
  tok::add_pqa_head(ps, "fuse", c.fusion_dim, c.branch_dim(), c.fusion_heads, rng);
  hiera::add_pool_block(ps, "trunk.0", c.width(1), c.width(2), c.mlp_ratio, rng);
  for (std::size_t i = 1; i < c.depths[2]; ++i) nn::add_transformer_block(ps, "trunk." + std::to_string(i), c.width(2), c.mlp_ratio, rng);
  nn::add_layer_norm(ps, "trunk.norm", c.width(2));
}

inline ParamStore init_encoder(const Model& m, std::uint64_t seed) {
  ParamStore ps;
  CounterRng rng = CounterRng::derive(seed, Purpose::Init, {0x656e63ull});
  add_encoder(ps, m, rng);
  return ps;
}

inline tok::TokenGrid tokenize(const Binding& p, const Model& m, const std::string& id, const Var& raster) {
  const std::size_t i = m.index(id);
  const auto& s = m.suite[i];
  if (s.kind == synth::SensorKind::HSI) return tok::spectral_tokenize(p, tok_name(id), raster, s, m.groupings[i], m.cfg.spectral);
  return tok::patch_embed(p, tok_name(id), raster, s);
}

struct BranchOutput {
  tok::TokenGrid stage1;  // grid x grid x D, after the stage-1 blocks
  tok::TokenGrid out;     // H_s: grid/2 x grid/2 x D_l
};

// H_s = LHB_s(T_s + P_p)
inline BranchOutput local_branch_forward(const Binding& p, const Model& m, const std::string& id, const tok::TokenGrid& t) {
  const auto& c = m.cfg;
  m.index(id);
  require(t.height == m.grid && t.width == m.grid && t.dim() == c.dim,
          "local branch " + id + ": expected " + std::to_string(m.grid) + "x" + std::to_string(m.grid) + "x" + std::to_string(c.dim) +
              " tokens, got " + std::to_string(t.height) + "x" + std::to_string(t.width) + "x" + std::to_string(t.dim()));
  const std::string b = branch_name(id);
  const auto g = m.stage_grids();
  Var x = ops::reshape(ops::add(t.data, p("pos")), {m.grid, m.grid, c.dim});
  x = hiera::windowed_blocks(p, b + ".s1.", 0, c.depths[0], x, hiera::window_side(c.windows[0], g[0]), c.stage_heads(0));
  BranchOutput out;
  out.stage1 = tok::TokenGrid::from_hwc(x);
  x = hiera::pool_block(p, b + ".s2.0", x, c.windows[1], c.stage_heads(1));
  x = hiera::windowed_blocks(p, b + ".s2.", 1, c.depths[1] - 1, x, hiera::window_side(c.windows[1], g[1]), c.stage_heads(1));
  out.out = tok::TokenGrid::from_hwc(x);
  return out;
}

// Per position, projected-query attention over the available sensors' branch
// tokens, each projected by its own map and tagged with its sensor embedding.
// Sensors are visited in suite order whatever order they arrive in.
inline tok::TokenGrid fuse_sensors(const Binding& p, const Model& m, const std::vector<std::pair<std::string, tok::TokenGrid>>& branches) {
  require(!branches.empty(), "fuse_sensors: empty sensor set");
  std::vector<const tok::TokenGrid*> by_index(m.suite.size(), nullptr);
  for (const auto& [id, g] : branches) {
    const std::size_t i = m.index(id);
    require(!by_index[i], "fuse_sensors: sensor " + id + " given twice");
    by_index[i] = &g;
  }
  const tok::TokenGrid& ref = branches.front().second;
  const Var table = p("fuse.role");
  std::vector<Var> tokens;
  for (std::size_t i = 0; i < m.suite.size(); ++i) {
    const tok::TokenGrid* g = by_index[i];
    if (!g) continue;
    require(g->height == ref.height && g->width == ref.width && g->dim() == m.cfg.branch_dim(),
            "fuse_sensors: grid of " + m.suite[i].id + " does not match");
    const Var u = ops::add(nn::linear(p, "fuse.in." + m.suite[i].id, g->data), ops::reshape(ops::slice(table, 0, i, i + 1), {m.cfg.fusion_dim}));
    tokens.push_back(ops::reshape(u, {ref.tokens(), 1, m.cfg.fusion_dim}));
  }
  return {ref.height, ref.width, tok::pqa_attend(p, "fuse", ops::concat(tokens, 1), m.cfg.fusion_heads)};
}

struct TrunkOutput {
  tok::TokenGrid z;
  Var pooled;  // (trunk width)
};

inline TrunkOutput shared_trunk_forward(const Binding& p, const Model& m, const tok::TokenGrid& f) {
  const auto& c = m.cfg;
  const auto g = m.stage_grids();
  require(f.height == g[1] && f.width == g[1] && f.dim() == c.branch_dim(),
          "shared trunk: expected " + std::to_string(g[1]) + "x" + std::to_string(g[1]) + "x" + std::to_string(c.branch_dim()) +
              " input, got " + std::to_string(f.height) + "x" + std::to_string(f.width) + "x" + std::to_string(f.dim()));
  Var x = hiera::pool_block(p, "trunk.0", f.hwc(), c.windows[2], c.stage_heads(2));
  x = hiera::windowed_blocks(p, "trunk.", 1, c.depths[2] - 1, x, hiera::window_side(c.windows[2], g[2]), c.stage_heads(2));
  TrunkOutput out;
  out.z = tok::TokenGrid::from_hwc(nn::layer_norm(p, "trunk.norm", x));
  out.pooled = ops::mean_axis(out.z.data, 0);
  return out;
}

struct Encoding {
  Var pooled;
  std::vector<tok::TokenGrid> pyramid;  // stage-1 (sensor mean), fused F, Z
};

// {x_s} -> tokenize -> local -> fuse -> shared
inline Encoding encode(const Binding& p, const Model& m, const std::map<std::string, Var>& rasters) {
  require(!rasters.empty(), "encode: no sensors given");
  std::vector<std::pair<std::string, tok::TokenGrid>> branches;
  std::vector<Var> early;
  for (const auto& s : m.suite) {
    auto it = rasters.find(s.id);
    if (it == rasters.end()) continue;
    BranchOutput b = local_branch_forward(p, m, s.id, tokenize(p, m, s.id, it->second));
    early.push_back(b.stage1.data);
    branches.emplace_back(s.id, std::move(b.out));
  }
  require(branches.size() == rasters.size(), "encode: unknown sensor among inputs");
  Var e = early.front();
  for (std::size_t i = 1; i < early.size(); ++i) e = ops::add(e, early[i]);
  if (early.size() > 1) e = ops::scale(e, 1.0 / static_cast<double>(early.size()));
  const tok::TokenGrid fused = fuse_sensors(p, m, branches);
  TrunkOutput t = shared_trunk_forward(p, m, fused);
  return {t.pooled, {{m.grid, m.grid, e}, fused, t.z}};
}

struct ParamReport {
  std::vector<std::pair<std::string, std::size_t>> rows;
  std::size_t total = 0;
};

inline ParamReport describe(const ParamStore& ps, const Model& m) {
  ParamReport r;
  for (const auto& s : m.suite) r.rows.emplace_back(tok_name(s.id), ps.scalar_count(tok_name(s.id) + "."));
  r.rows.emplace_back("pos", ps.scalar_count("pos"));
  for (const auto& s : m.suite) r.rows.emplace_back(branch_name(s.id), ps.scalar_count(branch_name(s.id) + "."));
  r.rows.emplace_back("fuse", ps.scalar_count("fuse."));
  r.rows.emplace_back("trunk", ps.scalar_count("trunk."));
  for (const auto& [_, n] : r.rows) r.total += n;
  require(r.total == ps.scalar_count(), "describe: parameter groups do not cover the store");
  return r;
}

}  // namespace msfm::bb
