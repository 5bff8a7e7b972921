//
// Copyright 2026 The attrec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#include <gtest/gtest.h>

#include <fstream>

#include "attrec/errors.hpp"
#include "attrec/tensornet.hpp"
#include "support.hpp"

using namespace attrec;
using namespace attrec::nn;
using testkit::ScratchDir;

namespace {

TowerSpec small_spec(Activation a = Activation::relu) {
  TowerSpec s;
  s.vocab_size = 6;
  s.embed_dim = 5;
  s.hidden_dims = {7, 4};
  s.out_dim = 8;
  s.activation = a;
  return s;
}

}  // namespace

TEST(Tower, ParameterLayoutAndNames) {
  Tower t(small_spec(), "user");
  const auto& p = t.params();
  ASSERT_EQ(p.size(), 7u);
  EXPECT_EQ(p[0].name, "user.embedding");
  EXPECT_EQ(p[0].shape, (std::vector<size_t>{6, 5}));
  EXPECT_EQ(p[1].name, "user.hidden0.weight");
  EXPECT_EQ(p[1].shape, (std::vector<size_t>{5, 7}));
  EXPECT_EQ(p[2].name, "user.hidden0.bias");
  EXPECT_EQ(p[5].name, "user.output.weight");
  EXPECT_EQ(p[6].shape, (std::vector<size_t>{8}));
}

TEST(Tower, OutputsAreUnitNorm) {
  Tower t(small_spec(), "item");
  Rng rng(3);
  t.initialize(rng);
  for (const auto& p : t.params()) {
    if (p.name.find("bias") != std::string::npos) EXPECT_EQ(p.values.cwiseAbs().maxCoeff(), 0.0f);
  }
  EXPECT_LE(t.params()[0].values.cwiseAbs().maxCoeff(), 0.05f);
  Tower::Cache cache;
  const std::vector<int32_t> ids{0, 3, 5, 3};
  const auto& out = t.forward(ids, cache);
  ASSERT_EQ(out.rows(), 4);
  for (Eigen::Index r = 0; r < out.rows(); ++r) EXPECT_NEAR(out.row(r).norm(), 1.0, 1e-5);
  EXPECT_TRUE(out.row(1).isApprox(out.row(3)));
  EXPECT_TRUE(t.forward(3).isApprox(out.row(1).transpose()));
}

TEST(Tower, RejectsBadIds) {
  Tower t(small_spec(), "u");
  Rng rng(1);
  t.initialize(rng);
  Tower::Cache cache;
  const std::vector<int32_t> bad{6};
  EXPECT_THROW(t.forward(bad, cache), std::out_of_range);
  EXPECT_THROW(t.forward(-1), std::out_of_range);
}

// Loss = sum(c .* out) for fixed random c; gradient through embedding,
// hidden layers and the normalization.
class TowerGradient : public ::testing::TestWithParam<Activation> {};

TEST_P(TowerGradient, MatchesCentralDifferences) {
  BasicTower<double> t(small_spec(GetParam()), "t");
  Rng rng(17);
  t.initialize(rng);
  // non-zero biases so the check covers them too
  for (auto& p : t.params()) {
    if (p.name.find("bias") != std::string::npos) {
      for (Eigen::Index k = 0; k < p.values.size(); ++k) p.values.data()[k] = rng.uniform_real(-0.1, 0.1);
    }
  }
  const std::vector<int32_t> ids{1, 4, 4, 0};
  Mat<double> c(4, 8);
  for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = rng.uniform_real(-1.0, 1.0);
  auto loss = [&] {
    BasicTower<double>::Cache cache;
    return t.forward(ids, cache).cwiseProduct(c).sum();
  };
  BasicTower<double>::Cache cache;
  t.forward(ids, cache);
  if (GetParam() == Activation::relu) {
    // keep away from the kinks, where central differences are meaningless
    for (const auto& pre : cache.pre) ASSERT_GT(pre.cwiseAbs().minCoeff(), 1e-3);
  }
  t.zero_grad();
  t.backward(cache, c);
  std::vector<BasicParamTensor<double>*> params;
  for (auto& p : t.params()) params.push_back(&p);
  EXPECT_LT(testkit::check_gradients(params, loss), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Activations, TowerGradient, ::testing::Values(Activation::relu, Activation::tanh));

TEST(Tower, BackwardRejectsShapeMismatch) {
  Tower t(small_spec(), "u");
  Rng rng(1);
  t.initialize(rng);
  Tower::Cache cache;
  const std::vector<int32_t> ids{0, 1};
  t.forward(ids, cache);
  EXPECT_THROW(t.backward(cache, Mat<float>::Zero(3, 8)), std::invalid_argument);
}

TEST(Adam, FirstStepsMatchTheUpdateRule) {
  BasicParamTensor<double> p("w", {3});
  p.values << 1.0, -2.0, 0.5;
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};
  BasicAdam<double> adam(cfg);
  std::vector<BasicParamTensor<double>*> ps{&p};
  const double g1[3] = {0.5, -1.0, 0.0};
  const double g2[3] = {0.25, 2.0, 1.0};
  double m[3] = {0, 0, 0}, v[3] = {0, 0, 0}, w[3] = {1.0, -2.0, 0.5};
  for (int step = 1; step <= 2; ++step) {
    const double* g = step == 1 ? g1 : g2;
    for (int k = 0; k < 3; ++k) {
      p.grad(0, k) = g[k];
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.999 * v[k] + 0.001 * g[k] * g[k];
      const double mh = m[k] / (1.0 - std::pow(0.9, step));
      const double vh = v[k] / (1.0 - std::pow(0.999, step));
      w[k] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    adam.step(ps);
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(p.values(0, k), w[k], 1e-12);
      EXPECT_EQ(p.grad(0, k), 0.0);
    }
  }
  EXPECT_EQ(adam.step_count(), 2);
}

TEST(Adam, NonFiniteGradientNamesTheTensor) {
  ParamTensor p("tower.hidden1.weight", {2, 2});
  p.grad(1, 0) = std::numeric_limits<float>::quiet_NaN();
  Adam adam;
  std::vector<ParamTensor*> ps{&p};
  try {
    adam.step(ps);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("tower.hidden1.weight"), std::string::npos);
  }
}

TEST(ParamFile, RoundTripIsExact) {
  ScratchDir dir("params");
  ParamTensor a("a", {2, 3}), b("b", {4});
  Rng rng(5);
  for (auto* p : {&a, &b}) {
    for (Eigen::Index k = 0; k < p->values.size(); ++k) p->values.data()[k] = static_cast<float>(rng.uniform_real(-3, 3));
  }
  std::vector<const ParamTensor*> ts{&a, &b};
  write_param_file(dir / "x.params", {{"kind", "test"}, {"note", "two words"}}, ts);
  auto f = read_param_file(dir / "x.params");
  EXPECT_EQ(f.meta.at("kind"), "test");
  EXPECT_EQ(f.meta.at("note"), "two words");
  ASSERT_EQ(f.tensors.size(), 2u);
  EXPECT_EQ(f.tensors[0].name, "a");
  EXPECT_EQ(f.tensors[0].shape, a.shape);
  EXPECT_EQ(f.tensors[0].values, a.values);
  EXPECT_EQ(f.tensors[1].values, b.values);

  std::vector<ParamTensor> dst{ParamTensor("b", {4}), ParamTensor("a", {2, 3})};
  assign_params(dst, f.tensors);
  EXPECT_EQ(dst[0].values, b.values);
  EXPECT_EQ(dst[1].values, a.values);

  const auto h = content_hash(dir / "x.params");
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h, content_hash(dir / "x.params"));
  b.values(0, 0) += 1.0f;
  write_param_file(dir / "y.params", {{"kind", "test"}, {"note", "two words"}}, ts);
  EXPECT_NE(h, content_hash(dir / "y.params"));
}

TEST(ParamFile, RejectsForeignOrTruncatedFiles) {
  ScratchDir dir("params-bad");
  std::ofstream(dir / "junk") << "hello\n";
  EXPECT_THROW(read_param_file(dir / "junk"), DataError);
  EXPECT_THROW(read_param_file(dir / "missing"), DataError);

  ParamTensor a("a", {8, 8});
  std::vector<const ParamTensor*> ts{&a};
  write_param_file(dir / "ok.params", {}, ts);
  const auto size = std::filesystem::file_size(dir / "ok.params");
  std::filesystem::resize_file(dir / "ok.params", size - 10);
  EXPECT_THROW(read_param_file(dir / "ok.params"), DataError);

  std::vector<ParamTensor> dst{ParamTensor("a", {4})};
  write_param_file(dir / "ok.params", {}, ts);
  EXPECT_THROW(assign_params(dst, read_param_file(dir / "ok.params").tensors), DataError);
}
