#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "msfm/downstream/probe.hpp"
#include "msfm/numerics/gradcheck.hpp"

using namespace msfm;
using namespace msfm::ds;

namespace {

Tensor normal_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t(std::move(s));
  for (auto& v : t.storage()) v = nd(gen);
  return t;
}

// Raster whose every pixel holds f(band centre) scaled per pixel.
Tensor spectral_raster(const std::vector<double>& centers, std::size_t h, std::size_t w, const std::function<double(double, std::size_t)>& f) {
  Tensor t(Shape{centers.size(), h, w});
  for (std::size_t c = 0; c < centers.size(); ++c)
    for (std::size_t p = 0; p < h * w; ++p) t[c * h * w + p] = f(centers[c], p);
  return t;
}

synth::SensorSpec spec_with(std::string id, std::vector<double> centers, double gsd) {
  synth::SensorSpec s;
  s.id = std::move(id);
  s.kind = synth::SensorKind::HSI;
  s.band_centers = std::move(centers);
  s.channels = s.band_centers.size();
  s.gsd = gsd;
  return s;
}

std::vector<double> even(double lo, double hi, std::size_t n) {
  std::vector<double> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1));
  return c;
}

}  // namespace

// ---- remap ---------------------------------------------------------------------------

TEST(Remap, ConstantSpectrumStaysConstant) {
  const auto src = even(400, 2400, 40), dst = even(450, 2300, 13);
  const Tensor x = spectral_raster(src, 3, 4, [](double, std::size_t p) { return 0.2 + 0.01 * static_cast<double>(p); });
  for (auto mode : {RemapMode::Interpolate, RemapMode::Average}) {
    const Tensor y = remap_spectra(x, src, dst, mode);
    ASSERT_EQ(y.shape(), (Shape{13, 3, 4}));
    for (std::size_t c = 0; c < 13; ++c)
      for (std::size_t p = 0; p < 12; ++p) EXPECT_NEAR(y[c * 12 + p], 0.2 + 0.01 * static_cast<double>(p), 1e-15) << remap_name(mode);
  }
}

TEST(Remap, InterpolationIsExactOnAffineSpectra) {
  const auto src = even(380, 2500, 57);
  const auto dst = hyperion_like(90).band_centers;
  std::vector<double> inside;
  for (double c : dst)
    if (c >= 380 && c <= 2500) inside.push_back(c);
  const Tensor x = spectral_raster(src, 2, 2, [](double nm, std::size_t p) { return 0.3 - 1e-4 * nm + 0.05 * static_cast<double>(p); });
  const Tensor y = remap_spectra(x, src, inside, RemapMode::Interpolate);
  for (std::size_t c = 0; c < inside.size(); ++c)
    for (std::size_t p = 0; p < 4; ++p) EXPECT_NEAR(y[c * 4 + p], 0.3 - 1e-4 * inside[c] + 0.05 * static_cast<double>(p), 1e-12);
}

TEST(Remap, InterpolationClampsOutsideTheSourceRange) {
  const std::vector<double> src{500, 600, 700};
  const Tensor x = spectral_raster(src, 1, 1, [](double nm, std::size_t) { return nm / 1000.0; });
  const Tensor y = remap_spectra(x, src, {400, 550, 800}, RemapMode::Interpolate);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.55);
  EXPECT_DOUBLE_EQ(y[2], 0.7);
}

// Hyperion-like to the paper EnMAP inventory over 10^3 random spectra, against
// a per-pixel piecewise-linear evaluation written from scratch.
TEST(Remap, HyperionToEnmapMatchesPiecewiseLinearOracle) {
  const auto src = hyperion_like().band_centers;
  const auto suite = synth::make_sensor_suite(synth::Scale::Paper);
  const auto dst = synth::find_sensor(suite, "enmap").band_centers;
  const Tensor x = normal_tensor({src.size(), 10, 100}, 3);
  const Tensor y = remap_spectra(x, src, dst, RemapMode::Interpolate);
  const std::size_t P = 1000;
  double worst = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double expect;
      if (dst[j] <= src.front()) {
        expect = x[p];
      } else if (dst[j] >= src.back()) {
        expect = x[(src.size() - 1) * P + p];
      } else {
        std::size_t k = 0;
        while (!(src[k] <= dst[j] && dst[j] <= src[k + 1])) ++k;
        const double t = (dst[j] - src[k]) / (src[k + 1] - src[k]);
        expect = x[k * P + p] + t * (x[(k + 1) * P + p] - x[k * P + p]);
      }
      worst = std::max(worst, std::abs(y[j * P + p] - expect));
    }
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Remap, IdempotentOnItsOwnInventory) {
  const auto src = even(400, 1000, 30);
  const Tensor x = normal_tensor({30, 3, 3}, 9);
  for (auto mode : {RemapMode::Interpolate, RemapMode::Identity}) EXPECT_EQ(remap_spectra(x, src, src, mode), x);
}

TEST(Remap, AveragingUsesMidpointIntervals) {
  const std::vector<double> src{400, 500, 600, 700};
  const Tensor x = spectral_raster(src, 1, 1, [](double nm, std::size_t) { return nm; });
  const Tensor y = remap_spectra(x, src, {450, 650}, RemapMode::Average);
  EXPECT_DOUBLE_EQ(y[0], 450.0);  // [350, 550): 400, 500
  EXPECT_DOUBLE_EQ(y[1], 650.0);  // [550, 750): 600, 700
  // No source band inside [450, 550) or [550, 650): nearest band copied.
  const std::vector<double> sparse{400, 900};
  const Tensor z = remap_spectra(spectral_raster(sparse, 1, 1, [](double nm, std::size_t) { return nm; }), sparse, {500, 600, 800},
                                 RemapMode::Average);
  EXPECT_DOUBLE_EQ(z[0], 400.0);
  EXPECT_DOUBLE_EQ(z[1], 400.0);
  EXPECT_DOUBLE_EQ(z[2], 900.0);
}

TEST(Remap, Errors) {
  EXPECT_THROW(remap_spectra(Tensor(Shape{1, 2, 2}), {500}, {500, 600}, RemapMode::Interpolate), ContractViolation);
  EXPECT_THROW(remap_spectra(Tensor(Shape{2, 2, 2}), {600, 500}, {550}, RemapMode::Average), ContractViolation);
  EXPECT_THROW(remap_spectra(Tensor(Shape{2, 2, 2}), {500, 600}, {500, 650}, RemapMode::Identity), ContractViolation);
  EXPECT_THROW(remap_spectra(Tensor(Shape{3, 2, 2}), {500, 600}, {550}, RemapMode::Average), ContractViolation);
}

// ---- branch selection ----------------------------------------------------------------

namespace {

// Score written out from the definition, for the enumeration oracle.
double oracle_score(double a0, double a1, double ga, double b0, double b1, double gb) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = std::max(a1, b1) - std::min(a0, b0);
  return inter / uni - 0.1 * std::abs(std::log(ga) - std::log(gb));
}

std::vector<synth::SensorSpec> optical_branches(const synth::Suite& suite) {
  std::vector<synth::SensorSpec> out;
  for (const auto& s : suite)
    if (s.optical()) out.push_back(s);
  return out;
}

}  // namespace

TEST(SelectBranch, IdenticalSourcePicksItself) {
  const auto branches = optical_branches(synth::make_sensor_suite(synth::Scale::Paper));
  for (const auto& b : branches) EXPECT_EQ(select_branch(b, branches), b.id);
}

TEST(SelectBranch, HyperionRoutesToEnmap) {
  const auto suite = synth::make_sensor_suite(synth::Scale::Paper);
  const std::vector<synth::SensorSpec> two{synth::find_sensor(suite, "enmap"), synth::find_sensor(suite, "desis")};
  EXPECT_EQ(select_branch(hyperion_like(), two), "enmap");
  EXPECT_EQ(select_branch(hyperion_like(), optical_branches(suite)), "enmap");
}

TEST(SelectBranch, VnirSourceRoutesToDesisLikeTheScoreTable) {
  const auto suite = synth::make_sensor_suite(synth::Scale::Paper);
  const auto vnir = spec_with("vnir", even(400, 1000, 60), 30.0);
  const auto branches = optical_branches(suite);
  std::string best;
  double best_score = -1e9;
  for (const auto& b : branches) {
    const double s = oracle_score(400, 1000, 30, b.band_centers.front(), b.band_centers.back(), b.gsd);
    EXPECT_NEAR(branch_score(vnir, b), s, 1e-12) << b.id;
    if (s > best_score) {
      best_score = s;
      best = b.id;
    }
  }
  EXPECT_EQ(best, "desis");
  EXPECT_EQ(select_branch(vnir, branches), best);
  EXPECT_EQ(select_branch(vnir, {synth::find_sensor(suite, "enmap"), synth::find_sensor(suite, "desis")}), "desis");
}

TEST(SelectBranch, ScaleConsistent) {
  auto branches = optical_branches(synth::make_sensor_suite(synth::Scale::Paper));
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> lo(350, 1500), span(50, 1500), gsd(3, 120);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = lo(gen);
    auto src = spec_with("x", even(a, a + span(gen), 20), gsd(gen));
    const std::string base = select_branch(src, branches);
    for (double k : {0.1, 7.0}) {
      auto scaled = branches;
      for (auto& b : scaled) b.gsd *= k;
      auto s2 = src;
      s2.gsd *= k;
      EXPECT_EQ(select_branch(s2, scaled), base);
    }
  }
}

TEST(SelectBranch, TiesGoToMoreBands) {
  const auto a = spec_with("a", even(400, 1000, 10), 30), b = spec_with("b", even(400, 1000, 50), 30);
  const auto src = spec_with("s", even(400, 1000, 5), 30);
  EXPECT_EQ(select_branch(src, {a, b}), "b");
  EXPECT_EQ(select_branch(src, {b, a}), "b");
  EXPECT_THROW(select_branch(src, {}), ContractViolation);
}

// ---- route plans and multi-branch features -----------------------------------------

TEST(RoutePlan, ModesAndInvariants) {
  const auto m = bb::Model::desk();
  const RoutePlan single = plan_route(hyperion_like(), m, RouteMode::Single);
  EXPECT_EQ(single.branches, std::vector<std::string>{"enmap"});
  EXPECT_EQ(single.remap, std::vector<RemapMode>{RemapMode::Interpolate});
  const RoutePlan multi = plan_route(synth::find_sensor(m.suite, "s2"), m, RouteMode::Multi);
  EXPECT_EQ(multi.branches, (std::vector<std::string>{"enmap", "desis", "emit", "s2", "oli"}));
  EXPECT_EQ(multi.remap[3], RemapMode::Identity);
  EXPECT_EQ(multi.remap[4], RemapMode::Average);
  EXPECT_THROW(check_plan(RoutePlan{RouteMode::Single, {"enmap", "desis"}, {RemapMode::Interpolate, RemapMode::Interpolate}}, m),
               ContractViolation);
  EXPECT_THROW(check_plan(RoutePlan{RouteMode::Multi, {"enmap"}, {RemapMode::Interpolate}}, m), ContractViolation);
  EXPECT_THROW(check_plan(RoutePlan{RouteMode::Multi, {"enmap", "s1"}, {RemapMode::Interpolate, RemapMode::Identity}}, m),
               ContractViolation);
}

namespace {

struct DeskRouting : ::testing::Test {
  bb::Model m = bb::Model::desk();
  ParamStore enc = bb::init_encoder(m, 4);
  synth::SensorSpec src = [] {
    auto s = hyperion_like(40);
    s.crop_px = 16;
    return s;
  }();
  Tensor x = [] {
    Tensor t = normal_tensor({40, 16, 16}, 5, 0.1);
    for (auto& v : t.storage()) v += 0.4;
    return t;
  }();
};

}  // namespace

TEST_F(DeskRouting, ConcatenationMatchesIndependentRuns) {
  const RoutePlan plan{RouteMode::Multi, {"enmap", "desis"}, {RemapMode::Interpolate, RemapMode::Interpolate}};
  const Binding p(enc, false);
  const FeaturePyramid f = multi_branch_features(p, m, x, src, plan);
  ASSERT_EQ(f.maps.size(), 3u);
  for (std::size_t b = 0; b < 2; ++b) {
    const auto& branch = synth::find_sensor(m.suite, plan.branches[b]);
    const FeaturePyramid solo = encode_features(Binding(enc, false), m, {{branch.id, Var::constant(route_raster(x, src, branch, plan.remap[b]))}});
    for (std::size_t st = 0; st < 3; ++st) {
      const std::size_t w = solo.maps[st].dim(2);
      ASSERT_EQ(f.maps[st].dim(2), 2 * w);
      const Tensor half = ops::slice(f.maps[st], 2, b * w, (b + 1) * w).value();
      EXPECT_EQ(half, solo.maps[st].value()) << "branch " << b << " stage " << st;
    }
  }
}

TEST_F(DeskRouting, SameBranchTwiceGivesIdenticalHalves) {
  const RoutePlan plan{RouteMode::Multi, {"emit", "emit"}, {RemapMode::Interpolate, RemapMode::Interpolate}};
  const FeaturePyramid f = multi_branch_features(Binding(enc, false), m, x, src, plan);
  for (const auto& v : f.maps) {
    const std::size_t w = v.dim(2) / 2;
    EXPECT_EQ(ops::slice(v, 2, 0, w).value(), ops::slice(v, 2, w, 2 * w).value());
  }
}

TEST_F(DeskRouting, BranchOrderPermutesChannelBlocks) {
  const RoutePlan ab{RouteMode::Multi, {"enmap", "emit"}, {RemapMode::Interpolate, RemapMode::Interpolate}};
  const RoutePlan ba{RouteMode::Multi, {"emit", "enmap"}, {RemapMode::Interpolate, RemapMode::Interpolate}};
  const auto f = multi_branch_features(Binding(enc, false), m, x, src, ab);
  const auto g = multi_branch_features(Binding(enc, false), m, x, src, ba);
  for (std::size_t st = 0; st < 3; ++st) {
    const std::size_t w = f.maps[st].dim(2) / 2;
    EXPECT_EQ(ops::slice(f.maps[st], 2, 0, w).value(), ops::slice(g.maps[st], 2, w, 2 * w).value());
    EXPECT_EQ(ops::slice(f.maps[st], 2, w, 2 * w).value(), ops::slice(g.maps[st], 2, 0, w).value());
  }
}

TEST_F(DeskRouting, MsiSourceAveragesIntoMsiBranch) {
  const auto& s2 = synth::find_sensor(m.suite, "s2");
  const auto& oli = synth::find_sensor(m.suite, "oli");
  const Tensor r = route_raster(normal_tensor({10, 48, 48}, 1), s2, oli, RemapMode::Average);
  EXPECT_EQ(r.shape(), (Shape{7, oli.crop_px, oli.crop_px}));
}

TEST_F(DeskRouting, SarCompanionJoinsTheRoutedBranch) {
  const auto& s1 = synth::find_sensor(m.suite, "s1");
  const Tensor sar = normal_tensor({s1.channels, s1.crop_px, s1.crop_px}, 7, 0.1);
  const RoutePlan plan = plan_route(src, m, RouteMode::Single);
  const auto& branch = synth::find_sensor(m.suite, plan.branches[0]);
  const FeaturePyramid f = routed_features(Binding(enc, false), m, x, src, plan, {{"s1", sar}});
  const FeaturePyramid ref = encode_features(Binding(enc, false), m,
                                             {{branch.id, Var::constant(route_raster(x, src, branch, plan.remap[0]))}, {"s1", Var::constant(sar)}});
  for (std::size_t st = 0; st < 3; ++st) EXPECT_EQ(f.maps[st].value(), ref.maps[st].value());
  const FeaturePyramid alone = routed_features(Binding(enc, false), m, x, src, plan);
  EXPECT_NE(alone.maps[2].value(), f.maps[2].value());

  EXPECT_THROW(routed_features(Binding(enc, false), m, x, src, plan, {{"s2", normal_tensor({10, 48, 48}, 1)}}), ContractViolation);
  EXPECT_THROW(routed_features(Binding(enc, false), m, x, src, plan, {{"s1", normal_tensor({s1.channels, 3, 3}, 1)}}), ContractViolation);
  const RoutePlan multi = plan_route(src, m, RouteMode::Multi);
  EXPECT_THROW(routed_features(Binding(enc, false), m, x, src, multi, {{"s1", sar}}), ContractViolation);
}

// Paper widths with the depth cut to one block per stage: widths do not depend
// on depth, and a 32 grid keeps the forward cheap.
TEST(MultiBranch, PaperWidthsDouble) {
  auto cfg = bb::BackboneConfig::paper();
  cfg.depths = {1, 1, 1};
  cfg.spectral.layers = 1;
  const bb::Model m(synth::make_sensor_suite(synth::Scale::Paper, 32), cfg);
  const ParamStore enc = bb::init_encoder(m, 1);
  auto src = hyperion_like();
  src.crop_px = 64;
  const Tensor x = spectral_raster(src.band_centers, 64, 64, [](double nm, std::size_t p) { return 0.3 + 1e-4 * nm + 1e-5 * static_cast<double>(p); });
  const RoutePlan plan{RouteMode::Multi, {"enmap", "emit"}, {RemapMode::Interpolate, RemapMode::Interpolate}};
  const auto f = multi_branch_features(Binding(enc, false), m, x, src, plan);
  EXPECT_EQ(f.widths(), (std::vector<std::size_t>{384, 768, 1536}));
}

// ---- segmentation head ----------------------------------------------------------------

namespace {

FeaturePyramid random_pyramid(const std::vector<std::array<std::size_t, 3>>& shapes, std::uint64_t seed) {
  FeaturePyramid f;
  for (std::size_t i = 0; i < shapes.size(); ++i) f.maps.push_back(Var::constant(normal_tensor({shapes[i][0], shapes[i][1], shapes[i][2]}, seed + i)));
  return f;
}

}  // namespace

TEST(SegHead, PaperPyramidGivesFinestResolutionLogits) {
  const FeaturePyramid f = random_pyramid({{64, 64, 192}, {32, 32, 384}, {16, 16, 768}}, 1);
  SegHeadConfig c;
  c.classes = 10;
  const ParamStore head = init_seg_head(f.widths(), c, 0);
  const Var logits = seg_head_forward(Binding(head, false), c, f);
  EXPECT_EQ(logits.shape(), (Shape{64, 64, 10}));
  EXPECT_EQ(head.get("head.proj.2.w").shape(), (Shape{768, 128}));
  EXPECT_EQ(head.get("head.refine.w").shape(), (Shape{9 * 384, 128}));
}

TEST(SegHead, SingleStageIsProjectConvClassify) {
  const FeaturePyramid f = random_pyramid({{8, 8, 16}, {4, 4, 32}, {2, 2, 64}}, 2);
  SegHeadConfig c;
  c.stages = {1};
  c.width = 6;
  c.classes = 3;
  const ParamStore head = init_seg_head(f.widths(), c, 3);
  const Var got = seg_head_forward(Binding(head, false), c, f);
  ASSERT_EQ(got.shape(), (Shape{4, 4, 3}));
  // Direct loops: projection, zero-padded 3x3 convolution, GELU, classifier.
  const Tensor& x = f.maps[1].value();
  const Tensor &pw = head.get("head.proj.1.w"), &pb = head.get("head.proj.1.b");
  const Tensor &rw = head.get("head.refine.w"), &rb = head.get("head.refine.b");
  const Tensor &cw = head.get("head.cls.w"), &cb = head.get("head.cls.b");
  std::vector<double> y(4 * 4 * 6, 0.0);
  for (std::size_t p = 0; p < 16; ++p)
    for (std::size_t o = 0; o < 6; ++o) {
      double s = pb[o];
      for (std::size_t i = 0; i < 32; ++i) s += x[p * 32 + i] * pw[i * 6 + o];
      y[p * 6 + o] = s;
    }
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t q = 0; q < 4; ++q) {
      std::vector<double> h(6);
      for (std::size_t o = 0; o < 6; ++o) {
        double s = rb[o];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = static_cast<int>(r) + dy, xx = static_cast<int>(q) + dx;
            if (yy < 0 || xx < 0 || yy >= 4 || xx >= 4) continue;
            const std::size_t tap = static_cast<std::size_t>((dy + 1) * 3 + (dx + 1));
            for (std::size_t i = 0; i < 6; ++i) s += y[(static_cast<std::size_t>(yy) * 4 + static_cast<std::size_t>(xx)) * 6 + i] * rw[(tap * 6 + i) * 6 + o];
          }
        h[o] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
      }
      for (std::size_t k = 0; k < 3; ++k) {
        double s = cb[k];
        for (std::size_t o = 0; o < 6; ++o) s += h[o] * cw[o * 3 + k];
        EXPECT_NEAR(got.value()[(r * 4 + q) * 3 + k], s, 1e-12);
      }
    }
}

TEST(SegHead, GradientMatchesFiniteDifferences) {
  const FeaturePyramid f = random_pyramid({{8, 8, 32}, {4, 4, 64}, {2, 2, 128}}, 4);
  SegHeadConfig c;
  c.classes = 4;
  c.width = 16;
  ParamStore head = init_seg_head(f.widths(), c, 5);
  Tensor label(Shape{16, 16});
  std::mt19937 gen(1);
  for (auto& v : label.storage()) v = static_cast<double>(gen() % 4);
  const auto rep = grad_check(head, [&](const Binding& p) { return seg_loss(seg_head_forward(p, c, f), label); },
                              GradCheckOptions{1e-6, 8, 0, ""});
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "]";
  EXPECT_GT(rep.coords_checked, 40u);
}

TEST(SegHead, Errors) {
  const FeaturePyramid f = random_pyramid({{4, 4, 8}, {2, 2, 8}}, 1);
  SegHeadConfig c;
  c.stages = {0, 1};
  c.classes = 1;
  EXPECT_THROW(init_seg_head(f.widths(), c, 0), ContractViolation);
  c.classes = 2;
  c.stages = {};
  EXPECT_THROW(init_seg_head(f.widths(), c, 0), ContractViolation);
  c.stages = {0, 2};
  EXPECT_THROW(init_seg_head(f.widths(), c, 0), ContractViolation);
}

// ---- mIoU --------------------------------------------------------------------------------

TEST(Miou, PerfectAndDisjoint) {
  const std::vector<int> a{0, 1, 1, 2}, zeros(4, 0), ones(4, 1);
  EXPECT_DOUBLE_EQ(miou(a, a, 3).miou, 1.0);
  EXPECT_DOUBLE_EQ(miou(zeros, ones, 2).miou, 0.0);
  EXPECT_THROW(miou(a, zeros, 1), ContractViolation);
  EXPECT_THROW(miou({0, 1}, {0}, 2), ContractViolation);
}

TEST(Miou, AbsentClassesAreExcluded) {
  const auto r = miou({0, 0, 1, 1}, {0, 0, 1, 0}, 4);
  EXPECT_TRUE(std::isnan(r.iou[2]) && std::isnan(r.iou[3]));
  EXPECT_DOUBLE_EQ(r.iou[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.iou[1], 0.5);
  EXPECT_DOUBLE_EQ(r.miou, (2.0 / 3.0 + 0.5) / 2.0);
  EXPECT_DOUBLE_EQ(r.pixel_accuracy, 0.75);
}

TEST(Miou, MatchesSetArithmetic) {
  std::mt19937 gen(11);
  std::vector<int> pred(256), truth(256);
  for (auto& v : pred) v = static_cast<int>(gen() % 3);
  for (auto& v : truth) v = static_cast<int>(gen() % 3);
  const auto r = miou(pred, truth, 3);
  double sum = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::set<std::size_t> P, T, I, U;
    for (std::size_t i = 0; i < 256; ++i) {
      if (pred[i] == c) P.insert(i);
      if (truth[i] == c) T.insert(i);
    }
    std::set_intersection(P.begin(), P.end(), T.begin(), T.end(), std::inserter(I, I.begin()));
    std::set_union(P.begin(), P.end(), T.begin(), T.end(), std::inserter(U, U.begin()));
    const double iou = static_cast<double>(I.size()) / static_cast<double>(U.size());
    EXPECT_DOUBLE_EQ(r.iou[static_cast<std::size_t>(c)], iou);
    sum += iou;
  }
  EXPECT_DOUBLE_EQ(r.miou, sum / 3.0);
}

// Independent uniform prediction on balanced binary truth: per class the
// intersection has probability 1/4 and the union 3/4, so IoU -> 1/3.
TEST(Miou, RandomBinaryPredictorNearOneThird) {
  std::mt19937 gen(12);
  const std::size_t n = 40000;
  std::vector<int> pred(n), truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<int>(i % 2);
    pred[i] = static_cast<int>(gen() % 2);
  }
  // IoU = I/(I+F) with I ~ n/4 and F ~ n/2; its sd is about 0.0027 here.
  EXPECT_NEAR(miou(pred, truth, 2).miou, 1.0 / 3.0, 0.012);
}

// ---- probe --------------------------------------------------------------------------------

namespace {

std::vector<synth::MultiSample> labelled(const bb::Model& m, std::size_t n, std::size_t classes) {
  synth::SampleOptions o;
  o.label_classes = classes;
  std::vector<synth::MultiSample> d;
  for (std::size_t i = 0; i < n; ++i) d.push_back(synth::generate_sample(21, i, m.suite, o));
  return d;
}

}  // namespace

TEST(Probe, OracleHeadLabelsGiveUnitMiou) {
  const auto m = bb::Model::desk();
  const ParamStore enc = bb::init_encoder(m, 1);
  auto samples = extract_features(enc, m, labelled(m, 3, 3));
  SegHeadConfig c;
  c.classes = 3;
  const ParamStore head = init_seg_head(samples[0].features.widths(), c, 9);
  for (auto& s : samples) {
    const auto pred = predict(seg_head_forward(Binding(head, false), c, s.features), s.label.dim(0), s.label.dim(1));
    for (std::size_t i = 0; i < pred.size(); ++i) s.label[i] = pred[i];
  }
  const auto r = evaluate_probe(head, c, samples);
  EXPECT_DOUBLE_EQ(r.miou, 1.0);
  EXPECT_DOUBLE_EQ(r.pixel_accuracy, 1.0);
}

TEST(Probe, EncoderStaysFrozenAndTrainingIsDeterministic) {
  const auto m = bb::Model::desk();
  const ParamStore enc = bb::init_encoder(m, 2);
  const ParamStore before = enc.clone();
  const auto samples = extract_features(enc, m, labelled(m, 4, 3));
  ProbeConfig c = ProbeConfig::desk();
  c.head.classes = 3;
  c.epochs = 6;
  const auto a = train_probe(samples, c), b = train_probe(samples, c);
  for (const auto& name : enc.names()) EXPECT_EQ(enc.get(name), before.get(name)) << name;
  for (const auto& name : a.head.names()) EXPECT_EQ(a.head.get(name), b.head.get(name)) << name;
  ASSERT_EQ(a.history.size(), 6u);
  EXPECT_LT(a.history.back().loss, a.history.front().loss);
  EXPECT_DOUBLE_EQ(a.history.front().lr, 1e-3);
}

TEST(Probe, Errors) {
  EXPECT_THROW(train_probe({}, ProbeConfig{}), ContractViolation);
  const auto m = bb::Model::desk();
  auto d = labelled(m, 1, 2);
  d[0].label.reset();
  EXPECT_THROW(extract_features(bb::init_encoder(m, 0), m, d), ContractViolation);
}

TEST(Probe, ReportTable) {
  const auto t = format_report(miou({0, 1, 1}, {0, 1, 0}, 3));
  EXPECT_NE(t.find("absent"), std::string::npos);
  EXPECT_NE(t.find("pixel_accuracy 0.666667"), std::string::npos);
}
