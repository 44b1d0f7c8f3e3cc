#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>
#include <unordered_map>

#include "msfm/numerics/gradcheck.hpp"
#include "msfm/numerics/ops.hpp"
#include "msfm/numerics/params.hpp"
#include "msfm/numerics/rng.hpp"
#include "msfm/numerics/serialize.hpp"

using namespace msfm;
namespace O = msfm::ops;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  CounterRng rng(seed, 17);
  Tensor t(std::move(s));
  for (auto& v : t.storage()) v = scale * rng.normal();
  return t;
}

// Max relative FD error of `f` over all coordinates of the named inputs.
double fd_error(ParamStore& ps, const std::function<Var(const Binding&)>& f, double eps = 1e-5) {
  GradCheckOptions opt;
  opt.eps = eps;
  return grad_check(ps, f, opt).max_rel_error;
}

// A random projection makes every primitive's output feed a scalar loss with
// non-trivial upstream gradients.
Var project(const Var& y, std::uint64_t seed) { return O::sum(O::mul(y, Var::constant(random_tensor(y.shape(), seed)))); }

}  // namespace

TEST(Tensor, RejectsLengthMismatch) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), ContractViolation);
  EXPECT_THROW(Tensor(Shape{2, 0}), ContractViolation);
}

TEST(Gemm, MatchesNaiveTripleLoopForAllTransposes) {
  for (auto [M, N, K] : {std::tuple<std::size_t, std::size_t, std::size_t>{3, 5, 7}, {37, 41, 300}, {130, 17, 9}, {64, 64, 64}}) {
    for (int ta = 0; ta < 2; ++ta) {
      for (int tb = 0; tb < 2; ++tb) {
        Tensor A = random_tensor({M * K}, 1 + M), B = random_tensor({K * N}, 2 + N);
        Tensor C({M * N}, 0.5), ref({M * N}, 0.5);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < N; ++j)
            for (std::size_t k = 0; k < K; ++k)
              ref[i * N + j] += (ta ? A[k * M + i] : A[i * K + k]) * (tb ? B[j * K + k] : B[k * N + j]);
        kernels::gemm(ta, tb, M, N, K, A.ptr(), B.ptr(), C.ptr(), true);
        EXPECT_LT(max_abs_diff(C, ref), 1e-11) << M << "x" << N << "x" << K << " ta=" << ta << " tb=" << tb;
      }
    }
  }
}

TEST(ForwardOps, MatmulShapeRule) {
  Var a = Var::constant(Tensor({2, 3}, 1.0));
  Var b = Var::constant(Tensor({3, 4}, 1.0));
  EXPECT_EQ(O::matmul(a, b).shape(), (Shape{2, 4}));
  EXPECT_THROW(O::matmul(b, b), ContractViolation);
}

TEST(ForwardOps, SoftmaxOfEqualLogitsIsUniform) {
  Var y = O::softmax_last(Var::constant(Tensor({2}, 0.0)));
  EXPECT_DOUBLE_EQ(y.value()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.value()[1], 0.5);
}

TEST(ForwardOps, StridedConvolutionMatchesDirectOracle) {
  Tensor x({8, 8, 1}, 1.0);
  Tensor w({9, 1}, 1.0);
  Var y = O::conv2d_hwc(Var::constant(x), Var::constant(w), Var(), 3, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{4, 4, 1}));
  // Direct oracle: sum of in-bounds taps.
  for (long oy = 0; oy < 4; ++oy) {
    for (long ox = 0; ox < 4; ++ox) {
      double expect = 0.0;
      for (long ky = 0; ky < 3; ++ky) {
        for (long kx = 0; kx < 3; ++kx) {
          const long iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
          if (iy >= 0 && ix >= 0 && iy < 8 && ix < 8) expect += 1.0;
        }
      }
      EXPECT_DOUBLE_EQ(y.value().at(oy, ox, 0), expect);
      if (oy > 0 && ox > 0) {
        EXPECT_DOUBLE_EQ(y.value().at(oy, ox, 0), 9.0);
      }
    }
  }
}

TEST(ForwardOps, NonFiniteOutputRaisesNumericFault) {
  Var big = Var::constant(Tensor({1}, 1e200));
  try {
    O::mul(big, big);
    FAIL() << "expected NumericFault";
  } catch (const NumericFault& e) {
    EXPECT_EQ(e.op(), "mul");
    EXPECT_GT(e.node_id(), 0u);
  }
}

TEST(ForwardOps, ShapeMismatchIsContractViolation) {
  Var a = Var::constant(Tensor({2, 3}));
  Var b = Var::constant(Tensor({2}));
  EXPECT_THROW(O::add(a, b), ContractViolation);
  EXPECT_THROW(O::concat({a, Var::constant(Tensor({3, 2}))}, 0), ContractViolation);
  EXPECT_THROW(O::max_pool2x2(Var::constant(Tensor({3, 4, 1}))), ContractViolation);
}

TEST(ForwardOps, LayerNormHasZeroMeanUnitVariancePerRow) {
  Var x = Var::constant(random_tensor({16, 24}, 5, 3.0));
  Var y = O::layer_norm(x, Var(), Var(), 0.0);
  for (std::size_t r = 0; r < 16; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t j = 0; j < 24; ++j) m += y.value().at(r, j);
    m /= 24;
    for (std::size_t j = 0; j < 24; ++j) v += std::pow(y.value().at(r, j) - m, 2);
    v /= 24;
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-10);
  }
}

TEST(ForwardOps, BitIdenticalAcrossRuns) {
  auto run = [] {
    Var x = Var::constant(random_tensor({6, 8, 8, 5}, 9));
    Var w = Var::constant(random_tensor({5, 7}, 10));
    return O::softmax_last(O::gelu(O::linear(O::max_pool2x2(x), w))).value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, SumGivesOnes) {
  Var x = Var::param(random_tensor({3, 4}, 1));
  auto g = backward(O::sum(x));
  for (double v : g.of(x).data()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, SquaredNormGivesTwiceInput) {
  Var x = Var::param(Tensor({2}, std::vector<double>{3.0, 4.0}));
  auto g = backward(O::sq_norm(x));
  EXPECT_DOUBLE_EQ(g.of(x)[0], 6.0);
  EXPECT_DOUBLE_EQ(g.of(x)[1], 8.0);
}

TEST(Backward, NonScalarRootIsRejected) {
  Var x = Var::param(Tensor({2}, 1.0));
  EXPECT_THROW(backward(O::scale(x, 2.0)), ContractViolation);
}

TEST(Backward, ConstantsReceiveNoGradient) {
  Var x = Var::param(Tensor({2}, 1.0));
  Var c = Var::constant(Tensor({2}, 3.0));
  auto g = backward(O::sum(O::mul(x, c)));
  EXPECT_TRUE(g.has(x));
  EXPECT_FALSE(g.has(c));
  EXPECT_EQ(g.of(x).shape(), x.shape());
}

TEST(Backward, GraphIsTopologicalAndVisitsEachNodeOnce) {
  Var x = Var::param(random_tensor({4}, 2));
  Var y = O::add(O::square(x), O::scale(x, 3.0));
  Var z = O::sum(O::mul(y, y));
  auto order = topo_order(z);
  std::unordered_map<const Node*, std::size_t> pos;
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_TRUE(pos.emplace(order[i], i).second);
  for (const Node* n : order) {
    for (const auto& in : n->inputs) {
      if (in->requires_grad) {
        EXPECT_LT(pos.at(in.get()), pos.at(n));
      }
    }
  }
  EXPECT_EQ(order.back(), z.node().get());
}

TEST(Backward, FourLayerMlpMatchesCentralDifferences) {
  ParamStore ps;
  const std::size_t widths[] = {5, 7, 6, 4, 1};
  for (int l = 0; l < 4; ++l) {
    ps.add("w" + std::to_string(l), random_tensor({widths[l], widths[l + 1]}, 100 + l, 0.5));
    ps.add("b" + std::to_string(l), random_tensor({widths[l + 1]}, 200 + l, 0.1));
  }
  const Tensor input = random_tensor({3, 5}, 7);
  auto f = [&](const Binding& p) {
    Var h = Var::constant(input);
    for (int l = 0; l < 4; ++l) {
      h = O::linear(h, p("w" + std::to_string(l)), p("b" + std::to_string(l)));
      if (l < 3) h = O::gelu(h);
    }
    return O::sum(O::square(h));
  };
  EXPECT_LT(fd_error(ps, f), 1e-6);
}

// Every primitive's adjoint against central differences on random inputs.
TEST(Backward, EveryPrimitiveMatchesCentralDifferences) {
  struct Case {
    const char* name;
    std::vector<Shape> shapes;
    std::function<Var(const std::vector<Var>&)> op;
  };
  const std::vector<Case> cases = {
      {"add_broadcast", {{3, 4}, {4}}, [](auto& v) { return O::add(v[0], v[1]); }},
      {"sub_broadcast", {{4}, {2, 4}}, [](auto& v) { return O::sub(v[0], v[1]); }},
      {"mul_broadcast", {{2, 3, 4}, {3, 4}}, [](auto& v) { return O::mul(v[0], v[1]); }},
      {"scale", {{5}}, [](auto& v) { return O::scale(v[0], -1.7); }},
      {"square", {{5}}, [](auto& v) { return O::square(v[0]); }},
      {"mean", {{2, 5}}, [](auto& v) { return O::mean(v[0]); }},
      {"sq_norm", {{6}}, [](auto& v) { return O::sq_norm(v[0]); }},
      {"linear", {{2, 3, 4}, {4, 5}, {5}}, [](auto& v) { return O::linear(v[0], v[1], v[2]); }},
      {"bmm", {{2, 3, 4}, {2, 4, 5}}, [](auto& v) { return O::bmm(v[0], v[1]); }},
      {"bmm_trans", {{2, 3, 4}, {2, 5, 4}}, [](auto& v) { return O::bmm(v[0], v[1], true); }},
      {"softmax", {{3, 5}}, [](auto& v) { return O::softmax_last(v[0]); }},
      {"layer_norm", {{3, 6}, {6}, {6}}, [](auto& v) { return O::layer_norm(v[0], v[1], v[2]); }},
      {"gelu", {{7}}, [](auto& v) { return O::gelu(v[0]); }},
      {"conv2d", {{7, 6, 3}, {27, 4}, {4}}, [](auto& v) { return O::conv2d_hwc(v[0], v[1], v[2], 3, 2, 1); }},
      {"conv2d_k7", {{12, 12, 2}, {98, 3}, {3}}, [](auto& v) { return O::conv2d_hwc(v[0], v[1], v[2], 7, 6, 3); }},
      {"pad_edge", {{3, 4, 2}}, [](auto& v) { return O::pad_edge_hwc(v[0], 2); }},
      {"max_pool", {{2, 4, 6, 3}}, [](auto& v) { return O::max_pool2x2(v[0]); }},
      {"mean_axis", {{3, 4, 5}}, [](auto& v) { return O::mean_axis(v[0], 1); }},
      {"sum_last", {{3, 4}}, [](auto& v) { return O::sum_last(v[0]); }},
      {"concat", {{2, 3, 4}, {2, 1, 4}}, [](auto& v) { return O::concat({v[0], v[1]}, 1); }},
      {"slice", {{3, 6, 2}}, [](auto& v) { return O::slice(v[0], 1, 2, 5); }},
      {"reshape", {{3, 4}}, [](auto& v) { return O::reshape(v[0], {2, 6}); }},
      {"permute", {{2, 3, 4, 5}}, [](auto& v) { return O::permute(v[0], {2, 0, 3, 1}); }},
      {"resize_up", {{3, 4, 2}}, [](auto& v) { return O::resize_bilinear_hwc(v[0], 7, 9); }},
      {"resize_down", {{8, 6, 2}}, [](auto& v) { return O::resize_bilinear_hwc(v[0], 3, 4); }},
  };
  std::uint64_t seed = 1000;
  for (const auto& c : cases) {
    ParamStore ps;
    for (std::size_t i = 0; i < c.shapes.size(); ++i) ps.add("in" + std::to_string(i), random_tensor(c.shapes[i], ++seed));
    const std::uint64_t proj_seed = ++seed;
    auto f = [&](const Binding& p) {
      std::vector<Var> in;
      for (std::size_t i = 0; i < c.shapes.size(); ++i) in.push_back(p("in" + std::to_string(i)));
      return project(c.op(in), proj_seed);
    };
    EXPECT_LT(fd_error(ps, f), 1e-6) << c.name;
  }
}

TEST(Forward, EdgePadReplicatesBorder) {
  Tensor t({2, 2, 1});
  t[0] = 1, t[1] = 2, t[2] = 3, t[3] = 4;
  const Tensor y = O::pad_edge_hwc(Var::constant(t), 1).value();
  ASSERT_EQ(y.shape(), (Shape{4, 4, 1}));
  const double want[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) EXPECT_EQ(y[i], want[i]);
}

TEST(Backward, CrossEntropyMatchesCentralDifferences) {
  ParamStore ps;
  ps.add("logits", random_tensor({5, 3}, 44));
  const std::vector<int> labels{0, 2, 1, 1, 0};
  EXPECT_LT(fd_error(ps, [&](const Binding& p) { return O::cross_entropy(p("logits"), labels); }), 1e-6);
}

TEST(GradCheck, SquareAtOne) {
  ParamStore ps;
  ps.add("x", Tensor({1}, 1.0));
  GradCheckOptions opt;
  opt.eps = 1e-5;
  auto rep = grad_check(ps, [](const Binding& p) { return O::square(p("x")); }, opt);
  EXPECT_LT(rep.max_rel_error, 1e-8);
  EXPECT_EQ(rep.coords_checked, 1u);
}

TEST(GradCheck, DetectsWrongAdjoint) {
  ParamStore ps;
  ps.add("x", random_tensor({4}, 3));
  auto broken_cube = [](const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.storage()) v = v * v * v;
    auto keep = x.node()->value;
    return make_op("broken_cube", std::move(out), {x}, [keep](const Tensor& g, std::span<Tensor* const> gin) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += 2.0 * (*keep)[i] * (*keep)[i] * g[i];  // should be 3x^2
    });
  };
  auto rep = grad_check(ps, [&](const Binding& p) { return O::sum(broken_cube(p("x"))); });
  EXPECT_GT(rep.max_rel_error, 1e-2);
}

TEST(GradCheck, TinyGradientOnLargeLossIsJudgedAgainstResolution) {
  ParamStore ps;
  ps.add("big", Tensor({1}, 1e3));
  ps.add("tiny", Tensor({1}, 1.0));
  auto f = [](const Binding& p) { return O::add(O::sum(O::square(p("big"))), O::sum(O::scale(O::square(p("tiny")), 1e-9))); };
  GradCheckOptions opt;
  opt.eps = 1e-5;
  const auto raw = grad_check(ps, f, opt);
  EXPECT_GT(raw.max_rel_error, 1e-4);
  EXPECT_EQ(raw.worst_param, "tiny");
  EXPECT_EQ(raw.floored, 0u);

  opt.abs_floor = fd_resolution(raw.loss, opt.eps) / 1e-4;
  const auto floored = grad_check(ps, f, opt);
  EXPECT_LT(floored.max_rel_error, 1e-4);
  EXPECT_EQ(floored.floored, 1u);
}

TEST(GradCheck, ResolutionFloorStillCatchesWrongAdjoint) {
  ParamStore ps;
  ps.add("x", random_tensor({4}, 3));
  auto broken_cube = [](const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.storage()) v = v * v * v;
    auto keep = x.node()->value;
    return make_op("broken_cube", std::move(out), {x}, [keep](const Tensor& g, std::span<Tensor* const> gin) {
      for (std::size_t i = 0; i < g.numel(); ++i) (*gin[0])[i] += 2.0 * (*keep)[i] * (*keep)[i] * g[i];
    });
  };
  auto f = [&](const Binding& p) { return O::sum(broken_cube(p("x"))); };
  GradCheckOptions opt;
  opt.eps = 1e-5;
  opt.abs_floor = fd_resolution(grad_check(ps, f, opt).loss, opt.eps) / 1e-4;
  const auto rep = grad_check(ps, f, opt);
  EXPECT_GT(rep.max_rel_error, 1e-2);
  EXPECT_EQ(rep.floored, 0u);
}

TEST(GradCheck, RejectsNonDeterministicFunction) {
  ParamStore ps;
  ps.add("x", Tensor({1}, 1.0));
  int calls = 0;
  auto f = [&](const Binding& p) { return O::scale(O::square(p("x")), 1.0 + 1e-3 * ++calls); };
  EXPECT_THROW(grad_check(ps, f), ContractViolation);
}

TEST(Rng, CounterStreamsAreReproducibleAndIndependent) {
  auto a = CounterRng::derive(42, Purpose::Init, {1});
  auto b = CounterRng::derive(42, Purpose::Init, {1});
  auto c = CounterRng::derive(42, Purpose::Augment, {1});
  int same = 0;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    same += x == c.next_u64();
  }
  EXPECT_EQ(same, 0);
  // Replay from a saved counter.
  CounterRng d(a.key(), a.stream(), 50);
  auto e = CounterRng::derive(42, Purpose::Init, {1});
  for (int i = 0; i < 50; ++i) e.next_u64();
  EXPECT_EQ(d.next_u64(), e.next_u64());
}

TEST(Rng, NormalMomentsAreStandard) {
  auto r = CounterRng::derive(7, Purpose::Sampling);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Serialize, RoundTripIsBitExact) {
  io::NamedTensors ts{{"alpha", random_tensor({3, 4}, 1)}, {"scalar", Tensor::scalar(-0.0)}, {"", random_tensor({2, 1, 3}, 2)}};
  auto back = io::decode(io::encode(ts));
  ASSERT_EQ(back.size(), ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    EXPECT_EQ(back[i].first, ts[i].first);
    EXPECT_EQ(back[i].second.shape(), ts[i].second.shape());
    EXPECT_EQ(std::memcmp(back[i].second.ptr(), ts[i].second.ptr(), ts[i].second.numel() * 8), 0);
  }
}

TEST(Serialize, DetectsCorruptionTruncationAndVersion) {
  auto bytes = io::encode({{"w", random_tensor({8}, 3)}});
  auto flipped = bytes;
  flipped[30] ^= 0x10;
  EXPECT_THROW(io::decode(flipped, "loc-7"), DataError);
  try {
    io::decode(flipped, "loc-7");
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("loc-7"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
  }
  auto truncated = std::vector<unsigned char>(bytes.begin(), bytes.begin() + 20);
  EXPECT_THROW(io::decode(truncated), DataError);
  auto versioned = bytes;
  versioned[8] = 9;
  EXPECT_THROW(io::decode(versioned), VersionMismatch);
}
