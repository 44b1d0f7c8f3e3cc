#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "msfm/backbone/backbone.hpp"
#include "msfm/numerics/gradcheck.hpp"
#include "msfm/synth/scene.hpp"

using namespace msfm;
using namespace msfm::bb;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed, 11);
  Tensor t(std::move(s));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

// Moves every parameter off its initial value so that unit LayerNorm gains,
// zero biases and identity output maps do not hide mistakes.
void perturb(ParamStore& ps, double scale) {
  for (const auto& n : ps.names()) {
    CounterRng r(synth::id_hash(n), 1);
    for (auto& v : ps.get(n).storage()) v += scale * r.normal();
  }
}

std::map<std::string, Var> render_all(const Model& m, std::uint64_t seed, const std::vector<std::string>& ids) {
  const auto scene = synth::generate_scene(seed, m.suite);
  std::map<std::string, Var> out;
  for (const auto& id : ids) out[id] = Var::constant(synth::render_sensor(scene, synth::find_sensor(m.suite, id), seed + 1));
  return out;
}

tok::TokenGrid random_grid(std::size_t side, std::size_t dim, std::uint64_t seed) {
  return {side, side, Var::constant(random_tensor({side * side, dim}, seed))};
}

// Straight-line reference interpreter: tokens are rows of a (side*side, C)
// matrix, windows are found by integer division, nothing is permuted.
namespace ref {

using Rows = std::vector<std::vector<double>>;

Rows rows_of(const Tensor& t) {
  const std::size_t n = t.dim(0), c = t.numel() / n;
  Rows r(n, std::vector<double>(c));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) r[i][j] = t[i * c + j];
  return r;
}

std::vector<double> ln(const ParamStore& ps, const std::string& name, const std::vector<double>& x) {
  const std::size_t d = x.size();
  double mu = 0.0, var = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(d);
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(d);
  std::vector<double> y(d);
  for (std::size_t j = 0; j < d; ++j) y[j] = (x[j] - mu) / std::sqrt(var + 1e-6) * ps.get(name + ".g")[j] + ps.get(name + ".b")[j];
  return y;
}

std::vector<double> affine(const Tensor& w, const Tensor* b, const std::vector<double>& x) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o) {
    double s = b ? (*b)[o] : 0.0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * w.at(i, o);
    y[o] = s;
  }
  return y;
}

std::vector<double> linear(const ParamStore& ps, const std::string& name, const std::vector<double>& x) {
  const bool bias = ps.contains(name + ".b");
  return affine(ps.get(name + ".w"), bias ? &ps.get(name + ".b") : nullptr, x);
}

std::vector<double> mlp(const ParamStore& ps, const std::string& name, const std::vector<double>& x) {
  auto h = linear(ps, name + ".fc1", x);
  for (auto& v : h) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return linear(ps, name + ".fc2", h);
}

struct Qkv {
  std::vector<double> q, k, v;
};

Qkv qkv(const ParamStore& ps, const std::string& name, const std::vector<double>& x) {
  const auto t = affine(ps.get(name + ".w"), nullptr, x);
  const std::size_t d = t.size() / 3;
  Qkv r{{t.begin(), t.begin() + d}, {t.begin() + d, t.begin() + 2 * d}, {t.begin() + 2 * d, t.end()}};
  for (std::size_t j = 0; j < d; ++j) {
    r.q[j] += ps.get(name + ".bq")[j];
    r.v[j] += ps.get(name + ".bv")[j];
  }
  return r;
}

// Multi-head attention of one query over a key/value set.
std::vector<double> attend(const std::vector<double>& q, const Rows& k, const Rows& v, std::size_t heads) {
  const std::size_t d = q.size(), dh = d / heads;
  std::vector<double> out(d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<double> s(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) {
      double dot = 0.0;
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[c] * k[j][c];
      s[j] = dot / std::sqrt(static_cast<double>(dh));
    }
    const double mx = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) out[c] += s[j] / z * v[j][c];
  }
  return out;
}

std::size_t window_id(std::size_t i, std::size_t side, std::size_t w) { return (i / side / w) * (side / w) + (i % side) / w; }

Rows block(const ParamStore& ps, const std::string& name, const Rows& x, std::size_t side, std::size_t w, std::size_t heads) {
  const std::size_t n = x.size();
  std::vector<Qkv> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = qkv(ps, name + ".qkv", ln(ps, name + ".ln1", x[i]));
  Rows out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rows k, v;
    for (std::size_t j = 0; j < n; ++j)
      if (window_id(j, side, w) == window_id(i, side, w)) {
        k.push_back(t[j].k);
        v.push_back(t[j].v);
      }
    auto a = linear(ps, name + ".proj", attend(t[i].q, k, v, heads));
    std::vector<double> h(x[i]);
    for (std::size_t c = 0; c < h.size(); ++c) h[c] += a[c];
    auto f = mlp(ps, name + ".mlp", ln(ps, name + ".ln2", h));
    for (std::size_t c = 0; c < h.size(); ++c) h[c] += f[c];
    out[i] = h;
  }
  return out;
}

Rows pool_block(const ParamStore& ps, const std::string& name, const Rows& x, std::size_t side, std::size_t w_out, std::size_t heads) {
  const std::size_t so = side / 2, wo = w_out == 0 ? so : w_out, wi = 2 * wo;
  std::vector<Qkv> t(x.size());
  Rows res(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto xn = ln(ps, name + ".ln1", x[i]);
    t[i] = qkv(ps, name + ".qkv", xn);
    res[i] = linear(ps, name + ".res", xn);
  }
  Rows out(so * so);
  for (std::size_t oy = 0; oy < so; ++oy) {
    for (std::size_t ox = 0; ox < so; ++ox) {
      std::vector<double> q, r;
      for (std::size_t dy = 0; dy < 2; ++dy) {
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const std::size_t i = (2 * oy + dy) * side + 2 * ox + dx;
          if (q.empty()) {
            q = t[i].q;
            r = res[i];
          }
          for (std::size_t c = 0; c < q.size(); ++c) {
            q[c] = std::max(q[c], t[i].q[c]);
            r[c] = std::max(r[c], res[i][c]);
          }
        }
      }
      Rows k, v;
      for (std::size_t j = 0; j < x.size(); ++j)
        if (window_id(j, side, wi) == window_id(2 * oy * side + 2 * ox, side, wi)) {
          k.push_back(t[j].k);
          v.push_back(t[j].v);
        }
      auto a = linear(ps, name + ".proj", attend(q, k, v, heads));
      for (std::size_t c = 0; c < r.size(); ++c) r[c] += a[c];
      auto f = mlp(ps, name + ".mlp", ln(ps, name + ".ln2", r));
      for (std::size_t c = 0; c < r.size(); ++c) r[c] += f[c];
      out[oy * so + ox] = r;
    }
  }
  return out;
}

Rows branch(const ParamStore& ps, const Model& m, const std::string& id, const Tensor& tokens) {
  const auto& c = m.cfg;
  Rows x = rows_of(tokens);
  const Rows pos = rows_of(ps.get("pos"));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += pos[i][j];
  const std::string b = "branch." + id;
  const std::size_t g = m.grid;
  for (std::size_t i = 0; i < c.depths[0]; ++i) x = block(ps, b + ".s1." + std::to_string(i), x, g, c.windows[0] ? c.windows[0] : g, c.stage_heads(0));
  x = pool_block(ps, b + ".s2.0", x, g, c.windows[1], c.stage_heads(1));
  for (std::size_t i = 1; i < c.depths[1]; ++i)
    x = block(ps, b + ".s2." + std::to_string(i), x, g / 2, c.windows[1] ? c.windows[1] : g / 2, c.stage_heads(1));
  return x;
}

}  // namespace ref

double max_diff(const Var& v, const ref::Rows& r) {
  const auto got = ref::rows_of(v.value());
  double m = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[i].size(); ++j) m = std::max(m, std::abs(got[i][j] - r[i][j]));
  return m;
}

}  // namespace

TEST(BackboneConfig, PaperParameterCountNearPublishedTotal) {
  const Model m = Model::paper();
  const ParamStore ps = init_encoder(m, 1);
  const auto rep = describe(ps, m);
  EXPECT_EQ(rep.total, ps.scalar_count());
  EXPECT_NEAR(static_cast<double>(rep.total), 156e6, 0.05 * 156e6);
  // Local branches and the trunk carry most of the weight.
  std::size_t heavy = 0;
  for (const auto& [name, n] : rep.rows)
    if (name.rfind("branch.", 0) == 0 || name == "trunk") heavy += n;
  EXPECT_GT(heavy, rep.total * 9 / 10);
}

TEST(BackboneConfig, WidthsAndHeadsDoublePerStage) {
  for (const auto& c : {BackboneConfig::paper(), BackboneConfig::desk()}) {
    for (std::size_t s = 0; s + 1 < 3; ++s) {
      EXPECT_EQ(c.width(s + 1), 2 * c.width(s));
      EXPECT_EQ(c.stage_heads(s + 1), 2 * c.stage_heads(s));
    }
  }
  const auto p = BackboneConfig::paper();
  EXPECT_EQ(p.width(0), 192u);
  EXPECT_EQ(p.branch_dim(), 384u);
  EXPECT_EQ(p.trunk_dim(), 768u);
  EXPECT_EQ(p.stage_heads(2), 8u);
  EXPECT_EQ(Model::paper().stage_grids(), (std::array<std::size_t, 3>{64, 32, 16}));
}

TEST(BackboneConfig, RejectsWindowThatDoesNotTile) {
  BackboneConfig c = BackboneConfig::desk();
  c.windows[0] = 3;
  EXPECT_THROW(Model(synth::make_sensor_suite(synth::Scale::Desk), c), ContractViolation);
}

TEST(LocalBranch, DeskShapes) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 2);
  const Binding p(ps, false);
  const auto out = local_branch_forward(p, m, "s2", random_grid(8, 32, 3));
  EXPECT_EQ(out.stage1.height, 8u);
  EXPECT_EQ(out.stage1.dim(), 32u);
  EXPECT_EQ(out.out.height, 4u);
  EXPECT_EQ(out.out.width, 4u);
  EXPECT_EQ(out.out.dim(), 64u);
}

TEST(LocalBranch, RejectsUnknownSensorAndWrongGrid) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 2);
  const Binding p(ps, false);
  EXPECT_THROW(local_branch_forward(p, m, "modis", random_grid(8, 32, 3)), ContractViolation);
  EXPECT_THROW(local_branch_forward(p, m, "s2", random_grid(4, 32, 3)), ContractViolation);
}

TEST(LocalBranch, MatchesReferenceInterpreter) {
  const Model m = Model::desk();
  ParamStore ps = init_encoder(m, 4);
  perturb(ps, 0.2);
  const auto t = random_grid(8, 32, 5);
  const auto out = local_branch_forward(Binding(ps, false), m, "oli", t);
  EXPECT_LT(max_diff(out.out.data, ref::branch(ps, m, "oli", t.data.value())), 1e-10);
}

TEST(LocalBranch, ZeroInputWithZeroBiasesPropagatesPositionTable) {
  const Model m = Model::desk();
  ParamStore ps = init_encoder(m, 6);
  const auto t = tok::TokenGrid{8, 8, Var::constant(Tensor(Shape{64, 32}))};
  const auto out = local_branch_forward(Binding(ps, false), m, "lst", t);
  EXPECT_LT(max_diff(out.out.data, ref::branch(ps, m, "lst", t.data.value())), 1e-12);
  // The output is driven by the position table alone: it is not constant.
  const auto& v = out.out.data.value();
  EXPECT_GT(std::abs(v[0] - v[64]), 1e-8);
}

TEST(LocalBranch, WindowedAttentionStaysInsideItsWindow) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 7);
  const Binding p(ps, false);
  const std::size_t g = 8, w = 4, d = 32;
  const Var x = Var::param(random_tensor({g, g, d}, 8));
  const Var y = hiera::windowed_blocks(p, "branch.s2.s1.", 0, 1, x, w, 1);
  for (std::size_t probe : {0u, 13u, 36u, 63u}) {
    const Var loss = ops::sum(ops::slice(ops::reshape(y, {g * g, d}), 0, probe, probe + 1));
    const Gradients gr = backward(loss);
    const Tensor& gx = *gr.find(x);
    for (std::size_t i = 0; i < g * g; ++i) {
      double mag = 0.0;
      for (std::size_t c = 0; c < d; ++c) mag += std::abs(gx[i * d + c]);
      const bool same = (i / g / w == probe / g / w) && ((i % g) / w == (probe % g) / w);
      if (same)
        EXPECT_GT(mag, 0.0) << "token " << i << " probe " << probe;
      else
        EXPECT_EQ(mag, 0.0) << "token " << i << " probe " << probe;
    }
  }
}

TEST(LocalBranch, QueryPoolingSeesOnlyItsKeyWindow) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 7);
  const Binding p(ps, false);
  const std::size_t g = 8, d = 32, wo = 2, wi = 4;
  const Var x = Var::param(random_tensor({g, g, d}, 9));
  const Var y = hiera::pool_block(p, "branch.s2.s2.0", x, wo, 2);
  ASSERT_EQ(y.shape(), (Shape{4, 4, 64}));
  const std::size_t probe = 5;  // output (1, 1)
  const Gradients gr = backward(ops::sum(ops::slice(ops::reshape(y, {16, 64}), 0, probe, probe + 1)));
  const Tensor& gx = *gr.find(x);
  for (std::size_t i = 0; i < g * g; ++i) {
    double mag = 0.0;
    for (std::size_t c = 0; c < d; ++c) mag += std::abs(gx[i * d + c]);
    const bool inside = (i / g) / wi == 0 && (i % g) / wi == 0;
    EXPECT_EQ(mag > 0.0, inside) << "token " << i;
  }
}

TEST(Fusion, SingleSensorIsProjectedAttentionOfOneToken) {
  const Model m = Model::desk();
  ParamStore ps = init_encoder(m, 10);
  perturb(ps, 0.1);
  const auto h = random_grid(4, 64, 11);
  const auto f = fuse_sensors(Binding(ps, false), m, {{"desis", h}});
  const std::size_t i = m.index("desis");
  const Tensor& role = ps.get("fuse.role");
  for (std::size_t pos : {0u, 7u, 15u}) {
    std::vector<double> x(64);
    for (std::size_t c = 0; c < 64; ++c) x[c] = h.data.value()[pos * 64 + c];
    auto u = ref::linear(ps, "fuse.in.desis", x);
    for (std::size_t c = 0; c < u.size(); ++c) u[c] += role.at(i, c);
    const auto y = ref::linear(ps, "fuse.out", u);
    for (std::size_t c = 0; c < 64; ++c) EXPECT_NEAR(f.data.value()[pos * 64 + c], y[c], 1e-12);
  }
}

TEST(Fusion, BitIdenticalOverAllOrderingsUpToFiveSensors) {
  const Model m = Model::desk();
  ParamStore ps = init_encoder(m, 12);
  perturb(ps, 0.1);
  const Binding p(ps, false);
  const std::vector<std::string> ids{"enmap", "s2", "s1", "emit", "lst"};
  for (std::size_t n = 1; n <= 5; ++n) {
    std::vector<std::pair<std::string, tok::TokenGrid>> in;
    for (std::size_t i = 0; i < n; ++i) in.emplace_back(ids[i], random_grid(4, 64, 20 + i));
    const Tensor ref = fuse_sensors(p, m, in).data.value();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::size_t orders = 0;
    do {
      std::vector<std::pair<std::string, tok::TokenGrid>> shuffled;
      for (auto k : perm) shuffled.push_back(in[k]);
      EXPECT_EQ(fuse_sensors(p, m, shuffled).data.value(), ref);
      ++orders;
    } while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_EQ(orders, static_cast<std::size_t>(std::tgamma(static_cast<double>(n) + 1.0) + 0.5));
  }
}

TEST(Fusion, EquivariantUnderSensorRenaming) {
  const Model m = Model::desk();
  ParamStore ps = init_encoder(m, 13);
  perturb(ps, 0.1);
  const auto ha = random_grid(4, 64, 30), hb = random_grid(4, 64, 31), hc = random_grid(4, 64, 32);
  const Tensor before = fuse_sensors(Binding(ps, false), m, {{"enmap", ha}, {"s1", hb}, {"oli", hc}}).data.value();
  // Swap everything that identifies enmap and s1, then swap their inputs too.
  for (const auto* suffix : {".w", ".b"}) std::swap(ps.get(std::string("fuse.in.enmap") + suffix), ps.get(std::string("fuse.in.s1") + suffix));
  Tensor& role = ps.get("fuse.role");
  const std::size_t a = m.index("enmap"), b = m.index("s1");
  for (std::size_t c = 0; c < role.dim(1); ++c) std::swap(role.at(a, c), role.at(b, c));
  const Tensor after = fuse_sensors(Binding(ps, false), m, {{"enmap", hb}, {"s1", ha}, {"oli", hc}}).data.value();
  EXPECT_LT(max_abs_diff(before, after), 1e-12);
}

TEST(Fusion, RejectsEmptyDuplicateAndMismatchedInputs) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 14);
  const Binding p(ps, false);
  EXPECT_THROW(fuse_sensors(p, m, {}), ContractViolation);
  EXPECT_THROW(fuse_sensors(p, m, {{"s2", random_grid(4, 64, 1)}, {"s2", random_grid(4, 64, 2)}}), ContractViolation);
  EXPECT_THROW(fuse_sensors(p, m, {{"s2", random_grid(4, 64, 1)}, {"s1", random_grid(2, 64, 2)}}), ContractViolation);
}

TEST(Trunk, DeskShapesAndPooledIsMeanOfFinalTokens) {
  const Model m = Model::desk();
  ParamStore ps = init_encoder(m, 15);
  perturb(ps, 0.1);
  const auto out = shared_trunk_forward(Binding(ps, false), m, random_grid(4, 64, 16));
  EXPECT_EQ(out.z.height, 2u);
  EXPECT_EQ(out.z.dim(), 128u);
  ASSERT_EQ(out.pooled.shape(), Shape{128});
  const Tensor& z = out.z.data.value();
  for (std::size_t c = 0; c < 128; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i) s += z[i * 128 + c];
    EXPECT_NEAR(out.pooled.value()[c], s / 4.0, 1e-12);
  }
}

TEST(Trunk, ConstantInputPoolsToAnyFinalToken) {
  const Model m = Model::desk();
  ParamStore ps = init_encoder(m, 17);
  perturb(ps, 0.1);
  Tensor f(Shape{16, 64});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 64; ++c) f[i * 64 + c] = std::sin(0.3 * static_cast<double>(c));
  const auto out = shared_trunk_forward(Binding(ps, false), m, {4, 4, Var::constant(f)});
  const Tensor& z = out.z.data.value();
  for (std::size_t c = 0; c < 128; ++c) EXPECT_NEAR(out.pooled.value()[c], z[3 * 128 + c], 1e-12);
}

TEST(Trunk, RejectsWrongResolution) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 18);
  EXPECT_THROW(shared_trunk_forward(Binding(ps, false), m, random_grid(8, 64, 1)), ContractViolation);
}

TEST(Encode, DeskPyramidAndPooledWidths) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 19);
  const auto e = encode(Binding(ps, false), m, render_all(m, 20, {"enmap", "s2", "s1", "lst"}));
  EXPECT_EQ(e.pooled.numel(), 128u);
  ASSERT_EQ(e.pyramid.size(), 3u);
  const std::size_t sides[] = {8, 4, 2}, dims[] = {32, 64, 128};
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(e.pyramid[s].height, sides[s]);
    EXPECT_EQ(e.pyramid[s].width, sides[s]);
    EXPECT_EQ(e.pyramid[s].dim(), dims[s]);
  }
}

TEST(Encode, StageOnePyramidIsMeanOfBranchMaps) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 21);
  const Binding p(ps, false);
  const auto in = render_all(m, 22, {"emit", "oli"});
  const auto e = encode(p, m, in);
  const auto a = local_branch_forward(p, m, "emit", tokenize(p, m, "emit", in.at("emit")));
  const auto b = local_branch_forward(p, m, "oli", tokenize(p, m, "oli", in.at("oli")));
  const Tensor& got = e.pyramid[0].data.value();
  for (std::size_t i = 0; i < got.numel(); ++i)
    EXPECT_NEAR(got[i], 0.5 * (a.stage1.data.value()[i] + b.stage1.data.value()[i]), 1e-12);
}

TEST(Encode, SingleSensorRunsTheSamePipeline) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 23);
  const Binding p(ps, false);
  const auto in = render_all(m, 24, {"s2"});
  const auto e = encode(p, m, in);
  const auto b = local_branch_forward(p, m, "s2", tokenize(p, m, "s2", in.at("s2")));
  const auto f = fuse_sensors(p, m, {{"s2", b.out}});
  const auto t = shared_trunk_forward(p, m, f);
  EXPECT_EQ(e.pooled.value(), t.pooled.value());
  EXPECT_EQ(e.pyramid[0].data.value(), b.stage1.data.value());
}

TEST(Encode, RejectsUnknownSensor) {
  const Model m = Model::desk();
  const ParamStore ps = init_encoder(m, 25);
  std::map<std::string, Var> in = render_all(m, 26, {"s2"});
  in["modis"] = in["s2"];
  EXPECT_THROW(encode(Binding(ps, false), m, in), ContractViolation);
}

TEST(Encode, GradientsMatchFiniteDifferences) {
  const Model m = Model::desk(4);
  ParamStore ps = init_encoder(m, 27);
  perturb(ps, 0.05);
  const auto in = render_all(m, 28, {"desis", "s1"});
  GradCheckOptions opt;
  opt.coords_per_tensor = 3;
  opt.seed = 29;
  opt.eps = 1e-4;
  const auto rep = grad_check(ps, [&](const Binding& p) { return ops::sum(encode(p, m, in).pooled); }, opt);
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "] " << rep.worst_analytic << " vs "
                                     << rep.worst_numeric;
  EXPECT_GT(rep.coords_checked, 200u);
}
