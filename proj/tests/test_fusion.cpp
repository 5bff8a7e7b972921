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
#include "attrec/fusion.hpp"
#include "support.hpp"

using namespace attrec;
using testkit::ScratchDir;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.dim = c.embed_dim = 8;
  c.hidden_dims = {8, 8};
  c.batch_size = 32;
  c.learning_rate = 0.01;
  c.max_epochs = 10;
  c.seed = 3;
  return c;
}

std::shared_ptr<const RepresentationModel> fresh_model(size_t users, size_t items, LossKind loss, SourceKind src,
                                                       uint64_t seed) {
  auto m = std::make_shared<RepresentationModel>(users, items, small_config(), loss, src);
  m->initialize(seed);
  return m;
}

std::vector<Channel> four_channels(size_t users, size_t items) {
  return {{fresh_model(users, items, LossKind::distance, SourceKind::global, 1), "", ""},
          {fresh_model(users, items, LossKind::product, SourceKind::global, 2), "", ""},
          {fresh_model(users, items, LossKind::distance, SourceKind::local, 3), "", ""},
          {fresh_model(users, items, LossKind::product, SourceKind::local, 4), "", ""}};
}

// relu(x W + b) written out longhand.
std::vector<double> transform_by_hand(const AttentionCore& core, size_t r, const auto& x) {
  const auto& w = core.weight(r).values;
  const auto& b = core.bias(r).values;
  std::vector<double> out(core.dim());
  for (size_t j = 0; j < core.dim(); ++j) {
    double z = b.data()[j];
    for (size_t k = 0; k < core.dim(); ++k) {
      z += static_cast<double>(x[static_cast<Eigen::Index>(k)]) * w(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j));
    }
    out[j] = std::max(z, 0.0);
  }
  return out;
}

AttentionModel with_random_core(std::vector<Channel> channels, LossKind loss, uint64_t seed) {
  AttentionModel m(std::move(channels), loss);
  Rng rng(seed);
  m.core().initialize(rng);
  for (size_t r = 0; r < m.channel_count(); ++r) {
    auto& b = m.core().bias(r).values;
    for (Eigen::Index k = 0; k < b.size(); ++k) b.data()[k] = static_cast<float>(rng.uniform_real(0.0, 0.3));
  }
  m.refresh();
  return m;
}

}  // namespace

TEST(AttentionCore, ShapesAndNames) {
  AttentionCore core(3, 4, LossKind::distance);
  EXPECT_EQ(core.channels(), 3u);
  EXPECT_EQ(core.weight(2).name, "attention.2.weight");
  EXPECT_EQ(core.weight(0).values.rows(), 4);
  EXPECT_EQ(core.weight(0).values.cols(), 4);
  EXPECT_EQ(core.bias(1).size(), 4u);
  EXPECT_THROW(AttentionCore(1, 4, LossKind::distance), ConfigError);
}

TEST(AttentionCore, SoftmaxIsStableForLargeCompatibilities) {
  AttentionCore core(2, 1, LossKind::product);
  const std::vector<nn::Vec<float>> u{nn::Vec<float>::Constant(1, 1000.0f), nn::Vec<float>::Constant(1, 999.0f)};
  const std::vector<nn::Vec<float>> i{nn::Vec<float>::Constant(1, 1.0f), nn::Vec<float>::Constant(1, 1.0f)};
  const auto w = core.weights_from_transformed(u, i);
  ASSERT_TRUE(w.allFinite());
  EXPECT_NEAR(w[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-6);
  EXPECT_NEAR(w[1], 1.0 / (1.0 + std::exp(1.0)), 1e-6);
}

class CoreGradient : public ::testing::TestWithParam<LossKind> {};

TEST_P(CoreGradient, MatchesCentralDifferences) {
  const size_t R = 3, d = 5;
  const Eigen::Index B = 4;
  BasicAttentionCore<double> core(R, d, GetParam());
  Rng rng(21);
  core.initialize(rng);
  for (size_t r = 0; r < R; ++r) {
    for (Eigen::Index k = 0; k < d; ++k) core.bias(r).values.data()[k] = rng.uniform_real(0.2, 0.5);
  }
  std::vector<nn::Mat<double>> u(R), p(R), n(R);
  for (size_t r = 0; r < R; ++r) {
    for (auto* m : {&u[r], &p[r], &n[r]}) {
      m->resize(B, d);
      for (Eigen::Index k = 0; k < m->size(); ++k) m->data()[k] = rng.uniform_real(-1.0, 1.0);
    }
  }
  const double margin = 10.0;  // keeps the hinge active for every row
  for (auto& t : core.params()) t.zero_grad();
  core.batch_loss(u, p, n, margin, true);
  std::vector<nn::BasicParamTensor<double>*> ptrs;
  for (auto& t : core.params()) ptrs.push_back(&t);
  const double err = testkit::check_gradients(ptrs, [&] { return core.batch_loss(u, p, n, margin, false); }, 1e-5);
  EXPECT_LT(err, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Losses, CoreGradient, ::testing::Values(LossKind::product, LossKind::distance));

TEST(AttentionModel, WeightsAndScoresMatchAHandComputation) {
  const auto model = with_random_core(four_channels(6, 9), LossKind::distance, 5);
  EXPECT_EQ(model.name(), "GDGPLDLP-AD");
  for (UserIndex u = 0; u < 6; ++u) {
    for (ItemIndex i = 0; i < 9; ++i) {
      std::vector<double> s(4);
      for (size_t r = 0; r < 4; ++r) {
        const auto& ch = *model.channels()[r].model;
        const auto fu = transform_by_hand(model.core(), r, ch.embed_user(u));
        const auto fi = transform_by_hand(model.core(), r, ch.embed_item(i));
        for (size_t k = 0; k < fu.size(); ++k) s[r] += fu[k] * fi[k];
      }
      double z = 0.0;
      for (double v : s) z += std::exp(v);
      const auto w = model.attention_weights(u, i);
      double wsum = 0.0;
      std::vector<double> ub(8, 0.0), ib(8, 0.0);
      for (size_t r = 0; r < 4; ++r) {
        const double expect = std::exp(s[r]) / z;
        EXPECT_NEAR(w[static_cast<Eigen::Index>(r)], expect, 1e-5);
        wsum += w[static_cast<Eigen::Index>(r)];
        const auto& ch = *model.channels()[r].model;
        const auto eu = ch.embed_user(u);
        const auto ei = ch.embed_item(i);
        for (size_t k = 0; k < 8; ++k) {
          ub[k] += expect * eu[static_cast<Eigen::Index>(k)];
          ib[k] += expect * ei[static_cast<Eigen::Index>(k)];
        }
      }
      EXPECT_NEAR(wsum, 1.0, 1e-6);
      double dist = 0.0;
      for (size_t k = 0; k < 8; ++k) dist += (ub[k] - ib[k]) * (ub[k] - ib[k]);
      EXPECT_NEAR(model.score(u, i), -std::sqrt(dist), 1e-5);

      const auto t = model.blend(u, i, (i + 1) % 9);
      EXPECT_TRUE(t.weights.isApprox(w));
      for (size_t k = 0; k < 8; ++k) EXPECT_NEAR(t.user_blend[static_cast<Eigen::Index>(k)], ub[k], 1e-5);
    }
  }
}

TEST(AttentionModel, RejectsMismatchedChannels) {
  auto chans = four_channels(6, 9);
  EXPECT_THROW(AttentionModel({chans[0]}, LossKind::distance), ConfigError);
  chans[1].model = fresh_model(6, 10, LossKind::product, SourceKind::global, 2);
  EXPECT_THROW(AttentionModel(chans, LossKind::distance), ConfigError);
}

TEST(TrainAttention, LearnsWithoutTouchingTheChannels) {
  auto m = testkit::block_matrix(40, 30, 3, 0.5, 0.05, 9);
  auto cfg = small_config();
  cfg.max_epochs = 20;
  const auto gd = std::make_shared<RepresentationModel>(train_global(m, LossKind::distance, cfg));
  const auto gp = std::make_shared<RepresentationModel>(train_global(m, LossKind::product, cfg));
  const auto gd_items = gd->embed_all_items();
  const auto gp_users = gp->embed_all_users();
  TrainReport rep;
  const auto att = train_attention(m, {{gd, "", ""}, {gp, "", ""}}, {}, LossKind::distance, cfg, "GAD", &rep);
  EXPECT_EQ(att.name(), "GAD");
  EXPECT_EQ(gd->embed_all_items(), gd_items);
  EXPECT_EQ(gp->embed_all_users(), gp_users);
  EXPECT_EQ(att.item_table(0), gd_items);
  ASSERT_FALSE(rep.val_loss.empty());
  EXPECT_LE(rep.best_val_loss, *std::min_element(rep.val_loss.begin(), rep.val_loss.end()) + 1e-12);
  EXPECT_LT(rep.train_loss.back(), rep.train_loss.front());

  const auto again = train_attention(m, {{gd, "", ""}, {gp, "", ""}}, {}, LossKind::distance, cfg, "GAD");
  EXPECT_EQ(again.core().weight(1).values, att.core().weight(1).values);
}

TEST(AttentionModel, FileRoundTripChecksChannelHashes) {
  ScratchDir dir("attention");
  std::filesystem::create_directories(dir / "models");
  auto chans = four_channels(5, 7);
  const auto cfg = small_config();
  for (size_t r = 0; r < chans.size(); ++r) {
    chans[r].path = (dir / ("models/" + chans[r].model->tag() + ".params")).string();
    save_model(chans[r].path, *chans[r].model, cfg);
  }
  const auto model = with_random_core(chans, LossKind::product, 6);
  model.save(dir / "models/AP.params");
  const auto back = AttentionModel::load(dir / "models/AP.params");
  EXPECT_EQ(back.name(), model.name());
  EXPECT_EQ(back.loss_kind(), LossKind::product);
  for (UserIndex u = 0; u < 5; ++u) {
    for (ItemIndex i = 0; i < 7; ++i) EXPECT_EQ(back.score(u, i), model.score(u, i));
  }

  // a retrained channel invalidates the attention model
  auto other = fresh_model(5, 7, LossKind::distance, SourceKind::local, 99);
  save_model(chans[2].path, *other, cfg);
  EXPECT_THROW(AttentionModel::load(dir / "models/AP.params"), DataError);
}
