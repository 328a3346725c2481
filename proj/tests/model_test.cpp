#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "mvccl/errors.hpp"
#include "mvccl/gradcheck.hpp"
#include "mvccl/model.hpp"

using namespace mvccl;

namespace {

using TensorD = Tensor<double>;
using Rows = std::vector<std::vector<double>>;

TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return TensorD::from_data(std::move(shape), std::move(v));
}

void assign(TensorD t, const std::vector<double>& values) {
  auto data = t.mutable_data();
  ASSERT_EQ(data.size(), values.size());
  std::copy(values.begin(), values.end(), data.begin());
}

void fill(TensorD t, double value) {
  for (auto& x : t.mutable_data()) x = value;
}

std::vector<double> values(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

Rows to_rows(const TensorD& t) {
  Rows rows(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    for (std::size_t j = 0; j < t.dim(1); ++j) rows[i][j] = t.data()[i * t.dim(1) + j];
  }
  return rows;
}

// Independent oracles over plain vectors.
Rows naive_dense(const Rows& x, const TensorD& w, const TensorD& b) {
  const std::size_t in = w.dim(0);
  const std::size_t out = w.dim(1);
  Rows y(x.size(), std::vector<double>(out));
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t j = 0; j < out; ++j) {
      double s = b.data()[j];
      for (std::size_t i = 0; i < in; ++i) s += x[r][i] * w.data()[i * out + j];
      y[r][j] = s;
    }
  }
  return y;
}

Rows naive_mlp(const Rows& x, const Mlp2<double>& m) {
  Rows h = naive_dense(x, m.hidden.weight, m.hidden.bias);
  for (auto& row : h) {
    for (auto& v : row) v = std::max(v, 0.0);
  }
  return naive_dense(h, m.output.weight, m.output.bias);
}

Rows naive_mha(const Rows& q, const Rows& k, const Rows& v, const AttentionWeights<double>& w, std::size_t heads,
               double divisor) {
  const TensorD zero_q = TensorD::zeros({w.w_q.dim(1)});
  const Rows qp = naive_dense(q, w.w_q, zero_q);
  const Rows kp = naive_dense(k, w.w_k, zero_q);
  const Rows vp = naive_dense(v, w.w_v, zero_q);
  const std::size_t width = w.w_q.dim(1) / heads;
  Rows out(q.size(), std::vector<double>(w.w_q.dim(1), 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> logits(k.size());
      for (std::size_t j = 0; j < k.size(); ++j) {
        double s = 0.0;
        for (std::size_t c = h * width; c < (h + 1) * width; ++c) s += qp[i][c] * kp[j][c];
        logits[j] = s / divisor;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < k.size(); ++j) {
        for (std::size_t c = h * width; c < (h + 1) * width; ++c) out[i][c] += logits[j] / z * vp[j][c];
      }
    }
  }
  return out;
}

std::vector<double> column_mean(const Rows& x) {
  std::vector<double> m(x.front().size(), 0.0);
  for (const auto& row : x) {
    for (std::size_t j = 0; j < row.size(); ++j) m[j] += row[j] / static_cast<double>(x.size());
  }
  return m;
}

double naive_cosine(const std::vector<double>& a, const std::vector<double>& b, double eps) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na) * std::sqrt(nb), eps);
}

void expect_near_all(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

ModelConfig small_config(ModuleFlags flags, std::size_t d = 4, std::size_t d_prime = 4, std::size_t heads = 2) {
  ModelConfig c;
  c.input_height = 16;
  c.input_width = 8;
  c.backbone_stages = 2;
  c.backbone_base_width = 3;
  c.backbone_max_width = 4;
  c.feature_width = d;
  c.attention_width = d_prime;
  c.heads = heads;
  c.classifier_hidden = 5;
  c.enabled = flags;
  return c;
}

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(0.0F, 1.0F);
  Image img(h, w);
  for (auto& p : img.pixels) p = dist(rng);
  return img;
}

ViewPair random_pair(const ModelConfig& c, std::mt19937_64& rng, int label) {
  ViewPair p;
  p.main = random_image(c.input_height, c.input_width, rng);
  p.aux = random_image(c.input_height, c.input_width, rng);
  p.label = label;
  return p;
}

}  // namespace

TEST(Backbone, DefaultGeometry) {
  MvcclModel<float> model(ModelConfig{}, 1);
  const auto u = model.backbone_forward(Tensor<float>::zeros({1, 96, 48}));
  EXPECT_EQ(u.shape(), (Shape{6, 3, 64}));
}

TEST(Backbone, ZeroInputWithZeroBiasesGivesZero) {
  MvcclModel<double> model(ModelConfig{}, 2);
  const auto u = model.backbone_forward(TensorD::zeros({1, 96, 48}));
  for (double v : u.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, InputMismatchIsDimensionError) {
  MvcclModel<float> model(ModelConfig{}, 1);
  EXPECT_THROW(model.backbone_forward(Tensor<float>::zeros({1, 48, 96})), DimensionError);
}

TEST(Model, SameSeedIsBitIdentical) {
  std::mt19937_64 rng(5);
  const ModelConfig config;
  const auto pair = random_pair(config, rng, 1);
  MvcclModel<float> a(config, 42);
  MvcclModel<float> b(config, 42);
  const auto oa = a.forward(pair);
  const auto ob = b.forward(pair);
  EXPECT_EQ(oa.y_hat.item(), ob.y_hat.item());
  const auto za = oa.classifier_input.data();
  const auto zb = ob.classifier_input.data();
  EXPECT_TRUE(std::equal(za.begin(), za.end(), zb.begin(), zb.end()));
}

TEST(Gcm, ZeroFinalLayerReducesToSkip) {
  std::mt19937_64 rng(3);
  MvcclModel<double> model(small_config({true, false, false, true}), 7);
  fill(model.params().map_aux_to_main->output.weight, 0.0);
  const auto u_m = random_tensor({4, 2, 4}, rng);
  const auto u_a = random_tensor({4, 2, 4}, rng);
  const auto out = model.gcm_forward(u_m, u_a);
  EXPECT_EQ(values(out.z_g), values(out.g_m));
}

TEST(Gcm, TiedMappingsOnEqualInputsAreSymmetric) {
  std::mt19937_64 rng(4);
  MvcclModel<double> model(small_config({true, false, false, true}), 8);
  auto& p = model.params();
  assign(p.map_main_to_aux->hidden.weight, values(p.map_aux_to_main->hidden.weight));
  assign(p.map_main_to_aux->hidden.bias, values(p.map_aux_to_main->hidden.bias));
  assign(p.map_main_to_aux->output.weight, values(p.map_aux_to_main->output.weight));
  assign(p.map_main_to_aux->output.bias, values(p.map_aux_to_main->output.bias));
  const auto u = random_tensor({4, 2, 4}, rng);
  const auto out = model.gcm_forward(u, u);
  EXPECT_EQ(values(out.g_tilde_m), values(out.g_tilde_a));
}

TEST(Gcm, MatchesPoolingAndMlpOracle) {
  std::mt19937_64 rng(5);
  MvcclModel<double> model(small_config({true, false, false, true}), 9);
  for (auto& [name, t] : model.parameters()) {
    if (name.rfind("gcm.", 0) == 0) assign(t, values(random_tensor(t.shape(), rng)));
  }
  const auto u_m = random_tensor({4, 2, 4}, rng);
  const auto u_a = random_tensor({4, 2, 4}, rng);
  auto pool_max = [](const TensorD& u) {
    Rows tokens = to_rows(reshape(u, {8, 4}));
    std::vector<double> g(4, -INFINITY);
    for (const auto& row : tokens) {
      for (std::size_t c = 0; c < 4; ++c) g[c] = std::max(g[c], row[c]);
    }
    return g;
  };
  const auto g_m = pool_max(u_m);
  const auto g_a = pool_max(u_a);
  const auto gt_m = naive_mlp({g_a}, *model.params().map_aux_to_main)[0];
  const auto gt_a = naive_mlp({g_m}, *model.params().map_main_to_aux)[0];
  const auto out = model.gcm_forward(u_m, u_a);
  expect_near_all(values(out.g_m), g_m, 0.0);
  expect_near_all(values(out.g_tilde_m), gt_m, 1e-12);
  expect_near_all(values(out.g_tilde_a), gt_a, 1e-12);
  std::vector<double> z(4);
  for (std::size_t i = 0; i < 4; ++i) z[i] = g_m[i] + gt_m[i];
  expect_near_all(values(out.z_g), z, 1e-12);
}

TEST(Gcm, MismatchedMapsAreDimensionError) {
  MvcclModel<double> model(small_config({true, false, false, true}), 9);
  EXPECT_THROW(model.gcm_forward(TensorD::zeros({4, 2, 4}), TensorD::zeros({2, 4, 4})), DimensionError);
}

TEST(Cosine, TrivialCases) {
  const auto x = TensorD::from_data({3}, {1.0, -2.0, 0.5});
  EXPECT_NEAR(cosine(x, x, 1e-8).item(), 1.0, 1e-15);
  const auto a = TensorD::from_data({2}, {1.0, 0.0});
  const auto b = TensorD::from_data({2}, {0.0, 3.0});
  EXPECT_EQ(cosine(a, b, 1e-8).item(), 0.0);
  EXPECT_EQ(cosine(TensorD::zeros({2}), a, 1e-8).item(), 0.0);
}

TEST(Cosine, GradientAtZeroVectorIsFinite) {
  const auto x = TensorD::zeros({2}, true);
  const auto a = TensorD::from_data({2}, {1.0, 0.0});
  backward(cosine(x, a, 1e-8));
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(ConsistencyLoss, BoundCases) {
  std::mt19937_64 rng(6);
  const auto g_m = random_tensor({4}, rng);
  const auto g_a = random_tensor({4}, rng);
  EXPECT_NEAR(consistency_loss(g_m, g_a, g_m, g_a, 1e-8).item(), -1.0, 1e-15);
  EXPECT_NEAR(consistency_loss(g_m, g_a, scale(g_m, -1.0), scale(g_a, -1.0), 1e-8).item(), 1.0, 1e-15);
}

TEST(ConsistencyLoss, MatchesCosineOracle) {
  std::mt19937_64 rng(7);
  const auto g_m = random_tensor({4}, rng);
  const auto g_a = random_tensor({4}, rng);
  const auto gt_m = random_tensor({4}, rng);
  const auto gt_a = random_tensor({4}, rng);
  const double want = -0.5 * (naive_cosine(values(gt_m), values(g_m), 1e-8) +
                              naive_cosine(values(gt_a), values(g_a), 1e-8));
  EXPECT_NEAR(consistency_loss(g_m, g_a, gt_m, gt_a, 1e-8).item(), want, 1e-14);
}

TEST(ConsistencyLoss, StaysInUnitIntervalOnRandomInputs) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 500; ++trial) {
    const double s = trial % 2 == 0 ? 1.0 : 1e-5;
    const double v = consistency_loss(random_tensor({4}, rng, -s, s), random_tensor({4}, rng, -s, s),
                                      random_tensor({4}, rng, -s, s), random_tensor({4}, rng, -s, s), 1e-8)
                         .item();
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

namespace {

AttentionWeights<double> random_attention(std::size_t d, std::size_t d_prime, std::mt19937_64& rng) {
  return {random_tensor({d, d_prime}, rng), random_tensor({d, d_prime}, rng), random_tensor({d, d_prime}, rng)};
}

}  // namespace

TEST(Mha, SingleTokenPassesValueRow) {
  std::mt19937_64 rng(9);
  const auto w = random_attention(3, 4, rng);
  const auto q = random_tensor({1, 3}, rng);
  const auto kv = random_tensor({1, 3}, rng);
  std::vector<TensorD> maps;
  const auto out = mha(q, kv, kv, w, 2, std::sqrt(3.0), &maps);
  for (const auto& m : maps) EXPECT_EQ(m.item(), 1.0);
  const auto want = naive_dense(to_rows(kv), w.w_v, TensorD::zeros({4}))[0];
  expect_near_all(values(out), want, 1e-14);
}

TEST(Mha, ZeroQueryWeightsGiveUniformAttention) {
  std::mt19937_64 rng(10);
  auto w = random_attention(3, 4, rng);
  w.w_q = TensorD::zeros({3, 4});
  const auto q = random_tensor({2, 3}, rng);
  const auto kv = random_tensor({5, 3}, rng);
  std::vector<TensorD> maps;
  const auto out = mha(q, kv, kv, w, 1, 2.0, &maps);
  for (double a : maps[0].data()) EXPECT_NEAR(a, 0.2, 1e-15);
  const auto mean_v = column_mean(naive_dense(to_rows(kv), w.w_v, TensorD::zeros({4})));
  const auto rows = to_rows(out);
  for (const auto& row : rows) expect_near_all(row, mean_v, 1e-14);
}

TEST(Mha, TwoByTwoHandOracle) {
  AttentionWeights<double> w{TensorD::from_data({2, 2}, {1.0, 0.5, -0.5, 2.0}),
                             TensorD::from_data({2, 2}, {0.3, -1.0, 1.5, 0.2}),
                             TensorD::from_data({2, 2}, {2.0, 0.0, 1.0, -1.0})};
  const auto q = TensorD::from_data({2, 2}, {1.0, 2.0, -1.0, 0.5});
  const auto k = TensorD::from_data({2, 2}, {0.5, 0.5, 2.0, -1.0});
  const auto v = TensorD::from_data({2, 2}, {1.0, 1.0, 0.0, 3.0});
  // QW_q = [[0,4.5],[-1.25,0.5]]; KW_k = [[0.9,-0.4],[-0.9,-2.2]]; VW_v = [[3,-1],[3,-3]]
  // logits/√2: row0 [-1.8, -9.9]/√2, row1 [-1.325, 0.025]/√2
  const double r2 = std::sqrt(2.0);
  auto row = [&](double l0, double l1) {
    const double a0 = 1.0 / (1.0 + std::exp((l1 - l0) / r2));
    return std::vector<double>{3.0, -a0 - 3.0 * (1.0 - a0)};
  };
  const auto want0 = row(-1.8, -9.9);
  const auto want1 = row(-1.325, 0.025);
  const auto out = mha(q, k, v, w, 1, r2);
  expect_near_all(values(out), {want0[0], want0[1], want1[0], want1[1]}, 1e-14);
}

TEST(Mha, MatchesLoopOracleWithHeads) {
  std::mt19937_64 rng(11);
  const auto w = random_attention(6, 8, rng);
  const auto q = random_tensor({3, 6}, rng);
  const auto k = random_tensor({5, 6}, rng);
  const auto v = random_tensor({5, 6}, rng);
  const auto out = mha(q, k, v, w, 4, std::sqrt(6.0));
  const auto want = naive_mha(to_rows(q), to_rows(k), to_rows(v), w, 4, std::sqrt(6.0));
  const auto got = to_rows(out);
  for (std::size_t i = 0; i < got.size(); ++i) expect_near_all(got[i], want[i], 1e-13);
}

TEST(Mha, AttentionRowsSumToOne) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const auto w = random_attention(4, 4, rng);
    std::vector<TensorD> maps;
    mha(random_tensor({6, 4}, rng, -3, 3), random_tensor({7, 4}, rng, -3, 3), random_tensor({7, 4}, rng), w, 2, 2.0,
        &maps);
    for (const auto& m : maps) {
      for (const auto& row : to_rows(m)) {
        double s = 0.0;
        for (double a : row) s += a;
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Mha, KeyPermutationLeavesOutputUnchanged) {
  std::mt19937_64 rng(13);
  const auto w = random_attention(4, 4, rng);
  const auto q = random_tensor({3, 4}, rng);
  const auto kv = random_tensor({6, 4}, rng);
  Rows rows = to_rows(kv);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  const auto permuted = TensorD::from_data({6, 4}, flat);
  expect_near_all(values(mha(q, kv, kv, w, 2, 2.0)), values(mha(q, permuted, permuted, w, 2, 2.0)), 1e-6);
}

TEST(Mha, HeadsMustDivideWidth) {
  std::mt19937_64 rng(14);
  const auto w = random_attention(4, 6, rng);
  const auto x = random_tensor({2, 4}, rng);
  EXPECT_THROW(mha(x, x, x, w, 4, 2.0), ConfigError);
  EXPECT_THROW(mha(x, x, random_tensor({3, 4}, rng), w, 2, 2.0), DimensionError);
}

TEST(Lcm, SingleTokenGrid) {
  std::mt19937_64 rng(15);
  MvcclModel<double> model(small_config({true, false, true, false}), 16);
  const auto u_m = random_tensor({1, 1, 4}, rng);
  const auto u_a = random_tensor({1, 1, 4}, rng);
  const auto out = model.lcm_forward(u_m, u_a);
  const auto& block = *model.params().lcm_main;
  const auto v_row = naive_dense(to_rows(reshape(u_a, {1, 4})), block.attention.w_v, TensorD::zeros({4}));
  expect_near_all(values(out.z_m), naive_mlp(v_row, block.mlp)[0], 1e-14);
}

TEST(Lcm, IdenticalTokensGiveIdenticalRows) {
  std::mt19937_64 rng(17);
  MvcclModel<double> model(small_config({true, false, true, false}), 18);
  const auto token = values(random_tensor({4}, rng));
  std::vector<double> flat;
  for (int i = 0; i < 8; ++i) flat.insert(flat.end(), token.begin(), token.end());
  const auto u_m = TensorD::from_data({4, 2, 4}, flat);
  const auto out = model.lcm_forward(u_m, random_tensor({4, 2, 4}, rng));
  const auto rows = to_rows(out.u_tilde_m);
  for (const auto& row : rows) expect_near_all(row, rows.front(), 1e-14);
  expect_near_all(values(out.z_m), rows.front(), 1e-14);
}

TEST(Lcm, TwoByOneGridMatchesHandPipeline) {
  std::mt19937_64 rng(19);
  ModelConfig c = small_config({true, false, true, false}, 2, 2, 1);
  MvcclModel<double> model(c, 20);
  const auto u_m = random_tensor({2, 1, 2}, rng);
  const auto u_a = random_tensor({2, 1, 2}, rng);
  const auto out = model.lcm_forward(u_m, u_a);
  const Rows tm = to_rows(reshape(u_m, {2, 2}));
  const Rows ta = to_rows(reshape(u_a, {2, 2}));
  const auto& p = model.params();
  const double div = std::sqrt(2.0);
  const auto want_m = column_mean(naive_mlp(naive_mha(tm, ta, ta, p.lcm_main->attention, 1, div), p.lcm_main->mlp));
  const auto want_a = column_mean(naive_mlp(naive_mha(ta, tm, tm, p.lcm_aux->attention, 1, div), p.lcm_aux->mlp));
  expect_near_all(values(out.z_m), want_m, 1e-14);
  expect_near_all(values(out.z_a), want_a, 1e-14);
}

TEST(Sa, SingleTokenEqualViewsAreSymmetric) {
  std::mt19937_64 rng(21);
  MvcclModel<double> model(small_config({true, true, false, false}), 22);
  const auto u = random_tensor({1, 1, 4}, rng);
  const auto out = model.sa_forward(u, u);
  EXPECT_EQ(values(out.z_m), values(out.z_a));
}

TEST(Sa, ZeroQueryWeightsAttendUniformlyAcrossBothViews) {
  std::mt19937_64 rng(23);
  MvcclModel<double> model(small_config({true, true, false, false}), 24);
  fill(model.params().sa->attention.w_q, 0.0);
  const auto out = model.sa_forward(random_tensor({4, 2, 4}, rng), random_tensor({4, 2, 4}, rng));
  ASSERT_EQ(out.attention.size(), 2U);
  for (const auto& m : out.attention) {
    EXPECT_EQ(m.shape(), (Shape{16, 16}));
    for (double a : m.data()) EXPECT_NEAR(a, 1.0 / 16.0, 1e-15);
  }
}

TEST(Sa, OneByOneGridsMatchHandOracle) {
  std::mt19937_64 rng(25);
  MvcclModel<double> model(small_config({true, true, false, false}, 2, 2, 1), 26);
  const auto u_m = random_tensor({1, 1, 2}, rng);
  const auto u_a = random_tensor({1, 1, 2}, rng);
  const Rows s{values(u_m), values(u_a)};
  const auto& block = *model.params().sa;
  const Rows mixed = naive_mlp(naive_mha(s, s, s, block.attention, 1, std::sqrt(2.0)), block.mlp);
  const auto out = model.sa_forward(u_m, u_a);
  expect_near_all(values(out.z_m), mixed[0], 1e-14);
  expect_near_all(values(out.z_a), mixed[1], 1e-14);
}

TEST(Fusion, ZeroFinalLayerGivesHalf) {
  std::mt19937_64 rng(27);
  MvcclModel<double> model(small_config({true, false, true, true}), 28);
  fill(model.params().classifier.output.weight, 0.0);
  const auto y = model.fusion_classify({random_tensor({4}, rng), random_tensor({4}, rng), random_tensor({4}, rng)});
  EXPECT_EQ(y.item(), 0.5);
}

TEST(Fusion, OutputStrictlyInsideUnitInterval) {
  std::mt19937_64 rng(29);
  MvcclModel<double> model(small_config({true, false, true, true}), 30);
  for (int trial = 0; trial < 10000; ++trial) {
    const double y = model.fusion_classify({random_tensor({4}, rng, -5, 5), random_tensor({4}, rng, -5, 5),
                                            random_tensor({4}, rng, -5, 5)})
                         .item();
    ASSERT_GT(y, 0.0);
    ASSERT_LT(y, 1.0);
  }
}

TEST(Fusion, MatchesMlpOracle) {
  std::mt19937_64 rng(31);
  MvcclModel<double> model(small_config({true, false, true, true}), 32);
  const auto zg = random_tensor({4}, rng);
  const auto zm = random_tensor({4}, rng);
  const auto za = random_tensor({4}, rng);
  std::vector<double> joint = values(zg);
  for (const auto* t : {&zm, &za}) joint.insert(joint.end(), t->data().begin(), t->data().end());
  const double logit = naive_mlp({joint}, model.params().classifier)[0][0];
  EXPECT_NEAR(model.fusion_classify({zg, zm, za}).item(), 1.0 / (1.0 + std::exp(-logit)), 1e-15);
}

TEST(Fusion, EmptyFeatureSetIsConfigError) {
  MvcclModel<double> model(small_config({true, false, true, true}), 32);
  EXPECT_THROW(model.fusion_classify({}), ConfigError);
}

TEST(Bce, TrivialValues) {
  EXPECT_NEAR(bce_loss(1, TensorD::scalar(1.0 - 1e-7)).item(), 0.0, 1e-6);
  EXPECT_NEAR(bce_loss(0, TensorD::scalar(0.5)).item(), 0.693147, 1e-6);
  EXPECT_NEAR(bce_loss(1, TensorD::scalar(0.25)).item(), 1.386294, 1e-6);
}

TEST(Bce, ClampKeepsSaturatedPredictionsFinite) {
  EXPECT_NEAR(bce_loss(1, TensorD::scalar(0.0)).item(), -std::log(1e-7), 1e-9);
  EXPECT_NEAR(bce_loss(0, TensorD::scalar(1.0)).item(), -std::log(1e-7), 1e-6);
}

TEST(TotalLoss, ZeroLambdaIsMeanBce) {
  std::mt19937_64 rng(33);
  ModelConfig c = small_config({true, false, true, true});
  c.lambda_sim = 0.0;
  MvcclModel<double> model(c, 34);
  std::vector<ViewPair> batch{random_pair(c, rng, 1), random_pair(c, rng, 0), random_pair(c, rng, 1)};
  const auto terms = total_loss(model, std::span<const ViewPair>(batch));
  double bce = 0.0;
  for (const auto& p : batch) bce += bce_loss(p.label, model.forward(p).y_hat).item();
  EXPECT_EQ(terms.total.item(), bce / 3.0);
}

TEST(TotalLoss, PerfectPredictionAndConsistencyApproachesMinusOne) {
  std::mt19937_64 rng(35);
  ModelConfig c = small_config({true, false, false, true});
  MvcclModel<double> model(c, 36);
  auto& p = model.params();
  // Positive projection bias makes every pooled feature positive; identity
  // mappings then reproduce g exactly through the relu.
  fill(p.projection.bias, 50.0);
  for (auto* mlp : {&*p.map_aux_to_main, &*p.map_main_to_aux}) {
    assign(mlp->hidden.weight, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
    assign(mlp->output.weight, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  }
  fill(p.classifier.output.weight, 0.0);
  fill(p.classifier.output.bias, 40.0);
  ViewPair pair = random_pair(c, rng, 1);
  pair.aux = pair.main;
  const std::vector<ViewPair> batch{pair};
  EXPECT_NEAR(total_loss(model, std::span<const ViewPair>(batch)).total.item(), -1.0, 1e-6);
}

TEST(TotalLoss, BatchIsMeanOfPerExampleLosses) {
  std::mt19937_64 rng(37);
  ModelConfig c = small_config({true, false, true, true});
  c.lambda_sim = 0.7;
  MvcclModel<double> model(c, 38);
  std::vector<ViewPair> batch{random_pair(c, rng, 1), random_pair(c, rng, 0)};
  double sum = 0.0;
  for (const auto& p : batch) {
    sum += total_loss(model, std::span<const ViewPair>(&p, 1)).total.item();
  }
  EXPECT_NEAR(total_loss(model, std::span<const ViewPair>(batch)).total.item(), sum / 2.0, 1e-14);
}

TEST(TotalLoss, BoundedBelowByMinusLambda) {
  std::mt19937_64 rng(39);
  ModelConfig c = small_config({true, false, true, true});
  c.lambda_sim = 2.5;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MvcclModel<double> model(c, seed);
    const std::vector<ViewPair> batch{random_pair(c, rng, static_cast<int>(seed % 2))};
    EXPECT_GE(total_loss(model, std::span<const ViewPair>(batch)).total.item(), -c.lambda_sim);
  }
}

TEST(Params, EnumerationIsUniqueAndBackboneIsShared) {
  MvcclModel<double> model(small_config({true, false, true, true}), 40);
  const auto params = model.parameters();
  std::set<std::string> names;
  std::set<const void*> nodes;
  std::size_t backbone = 0;
  for (const auto& [name, t] : params) {
    EXPECT_TRUE(names.insert(name).second) << name;
    EXPECT_TRUE(nodes.insert(&t.node()).second) << name;
    if (name.rfind("backbone.", 0) == 0) ++backbone;
  }
  EXPECT_EQ(backbone, 2 * (model.config().backbone_stages + 1));
}

TEST(Params, BackboneStaysSharedAfterAStep) {
  std::mt19937_64 rng(41);
  ModelConfig c = small_config({true, false, true, true});
  MvcclModel<double> model(c, 42);
  const std::vector<ViewPair> batch{random_pair(c, rng, 1)};
  backward(total_loss(model, std::span<const ViewPair>(batch)).total);
  for (auto& [name, t] : model.parameters()) {
    if (!t.has_grad()) continue;
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= 0.1 * t.grad()[i];
  }
  const auto x = image_tensor<double>(batch[0].main);
  const auto out = model.forward(x, x);
  EXPECT_EQ(values(out.g_m), values(out.g_a));
}

TEST(Params, StageZeroGradientCollectsBothViews) {
  std::mt19937_64 rng(43);
  ModelConfig c = small_config({true, false, false, false});
  MvcclModel<double> model(c, 44);
  const auto x_m = image_tensor<double>(random_image(16, 8, rng));
  const auto x_a = image_tensor<double>(random_image(16, 8, rng));
  auto kernel = model.params().stages[0].kernel;
  auto grad_of = [&](const TensorD& loss) {
    kernel.zero_grad();
    backward(loss);
    return std::vector<double>(kernel.grad().begin(), kernel.grad().end());
  };
  const auto u_m = model.backbone_forward(x_m);
  const auto u_a = model.backbone_forward(x_a);
  const auto g_both = grad_of(add(sum(u_m), sum(u_a)));
  const auto g_m = grad_of(sum(model.backbone_forward(x_m)));
  const auto g_a = grad_of(sum(model.backbone_forward(x_a)));
  for (std::size_t i = 0; i < g_both.size(); ++i) EXPECT_NEAR(g_both[i], g_m[i] + g_a[i], 1e-12);
}

TEST(Config, ClassifierInputWidthPerVariant) {
  ModelConfig c;
  const std::size_t d = c.feature_width;
  const std::size_t dp = c.attention_width;
  const std::vector<std::pair<std::string, std::size_t>> expected{
      {"fusion", 2 * d},      {"fusion+sa", 2 * d + 2 * dp},  {"fusion+lcm", 2 * d + 2 * dp},
      {"fusion+gcm", d},      {"fusion+sa+gcm", d + 2 * dp},  {"fusion+lcm+gcm", d + 2 * dp},
  };
  ASSERT_EQ(ablation_variant_names().size(), expected.size());
  for (const auto& [name, width] : expected) {
    c.enabled = variant_flags(name);
    EXPECT_EQ(c.classifier_input_width(), width) << name;
    EXPECT_EQ(variant_name(c.enabled), name);
    MvcclModel<float> model(c, 1);
    EXPECT_EQ(model.params().classifier.hidden.weight.dim(0), width) << name;
  }
  EXPECT_EQ(variant_name(variant_flags("full")), "fusion+lcm+gcm");
}

TEST(Config, ValidationRejectsBadGeometry) {
  ModelConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.input_height = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.enabled = {true, true, true, false};
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.enabled = {false, false, false, false};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(variant_flags("fusion+xyz"), ConfigError);
}

TEST(Config, KeyValueRoundTrip) {
  ModelConfig c = small_config({true, true, false, true}, 6, 4, 2);
  c.attention_scale = AttentionScale::sqrt_head_width;
  c.lambda_sim = 0.1;
  ModelConfig back;
  for (const auto& [k, v] : to_key_values(c)) ASSERT_TRUE(apply_key_value(back, k, v)) << k;
  EXPECT_TRUE(back == c);
  EXPECT_FALSE(apply_key_value(back, "model.nonsense", "1"));
  EXPECT_THROW(apply_key_value(back, "model.D", "abc"), ConfigError);
}

TEST(Config, AttentionDivisorChoices) {
  ModelConfig c;
  EXPECT_EQ(MvcclModel<float>(c, 1).attention_divisor(), 8.0);
  c.attention_scale = AttentionScale::sqrt_head_width;
  EXPECT_EQ(MvcclModel<float>(c, 1).attention_divisor(), std::sqrt(8.0));
}

class FullModelGradient : public ::testing::TestWithParam<std::string> {};

TEST_P(FullModelGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(45);
  ModelConfig c = small_config(variant_flags(GetParam()));
  MvcclModel<double> model(c, 46);
  // Zero biases can leave a mapping's output exactly at the origin, where the
  // cosine is discontinuous; move to a generic point first.
  for (auto& [name, t] : model.parameters()) {
    if (name.ends_with("bias")) assign(t, values(random_tensor(t.shape(), rng, -0.3, 0.3)));
  }
  const std::vector<ViewPair> batch{random_pair(c, rng, 1), random_pair(c, rng, 0)};
  const auto params = model.parameters();
  const auto report = finite_diff_check<double>(
      [&] { return total_loss(model, std::span<const ViewPair>(batch)).total; },
      std::span<const NamedTensor<double>>(params), 1e-5, 1e-4);
  for (const auto& e : report.entries) {
    EXPECT_TRUE(e.passed) << e.name << " rel=" << e.max_rel_error << " abs=" << e.max_abs_error;
    EXPECT_GT(e.checked, 0U) << e.name << " skipped=" << e.skipped_kinks;
  }
}

INSTANTIATE_TEST_SUITE_P(Variants, FullModelGradient, ::testing::ValuesIn(ablation_variant_names()),
                         [](const auto& info) {
                           std::string s = info.param;
                           std::replace(s.begin(), s.end(), '+', '_');
                           return s;
                         });
