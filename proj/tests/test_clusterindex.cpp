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
#include <set>

#include "attrec/clusterindex.hpp"
#include "attrec/errors.hpp"
#include "support.hpp"

using namespace attrec;
using testkit::ScratchDir;

namespace {

// Gaussian-ish blobs around `centers`, `per` points each, spread `r`.
PointMatrix blobs(const std::vector<std::vector<float>>& centers, size_t per, double r, uint64_t seed) {
  Rng rng(seed);
  const auto d = static_cast<Eigen::Index>(centers[0].size());
  PointMatrix p(static_cast<Eigen::Index>(centers.size() * per), d);
  Eigen::Index row = 0;
  for (const auto& c : centers) {
    for (size_t k = 0; k < per; ++k, ++row) {
      for (Eigen::Index j = 0; j < d; ++j) p(row, j) = c[static_cast<size_t>(j)] + static_cast<float>(rng.uniform_real(-r, r));
    }
  }
  return p;
}

double sq(const auto& a, const auto& b) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += d * d;
  }
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.dim = c.embed_dim = 8;
  c.hidden_dims = {8, 8};
  c.batch_size = 32;
  c.learning_rate = 0.01;
  c.max_epochs = 15;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(KMeans, RecoversSeparatedBlobs) {
  const auto pts = blobs({{0, 0}, {10, 0}, {0, 10}, {10, 10}}, 25, 1.0, 1);
  const auto res = kmeans(pts, 4, 7);
  // each blob maps to exactly one cluster and no two blobs share one
  std::set<int32_t> seen;
  for (size_t b = 0; b < 4; ++b) {
    const int32_t c = res.assignments[b * 25];
    for (size_t k = 0; k < 25; ++k) EXPECT_EQ(res.assignments[b * 25 + k], c);
    EXPECT_TRUE(seen.insert(c).second);
  }
}

TEST(KMeans, ObjectiveNeverIncreasesAndAssignmentsAreNearest) {
  Rng rng(2);
  PointMatrix pts(300, 5);
  for (Eigen::Index k = 0; k < pts.size(); ++k) pts.data()[k] = static_cast<float>(rng.uniform_real(-1, 1));
  const auto res = kmeans(pts, 12, 9, {.max_iterations = 100, .tolerance = 0.0});
  ASSERT_GE(res.objective.size(), 2u);
  for (size_t k = 1; k < res.objective.size(); ++k) EXPECT_LE(res.objective[k], res.objective[k - 1] * (1 + 1e-12));
  double total = 0.0;
  for (Eigen::Index p = 0; p < pts.rows(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < res.centroids.rows(); ++j) best = std::min(best, sq(pts.row(p), res.centroids.row(j)));
    const double mine = sq(pts.row(p), res.centroids.row(res.assignments[static_cast<size_t>(p)]));
    EXPECT_NEAR(mine, best, 1e-12);
    total += mine;
  }
  EXPECT_NEAR(total, res.objective.back(), 1e-9 * total);
}

TEST(KMeans, DeterministicAndChecksArguments) {
  const auto pts = blobs({{0, 0, 0}, {3, 3, 3}}, 40, 2.0, 5);
  const auto a = kmeans(pts, 5, 11), b = kmeans(pts, 5, 11);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.assignments, b.assignments);
  EXPECT_THROW(kmeans(pts, 0, 1), std::invalid_argument);
  EXPECT_THROW(kmeans(pts, 81, 1), std::invalid_argument);
}

TEST(KMeans, DuplicatePointsStillFillEveryCluster) {
  PointMatrix pts = PointMatrix::Zero(10, 2);
  pts(9, 0) = 1.0f;  // two distinct locations, four clusters
  const auto res = kmeans(pts, 4, 3);
  std::vector<size_t> counts(4, 0);
  for (auto a : res.assignments) ++counts[static_cast<size_t>(a)];
  for (auto c : counts) EXPECT_GT(c, 0u);
}

TEST(Index, PartitionsItemsAndRanksClustersByDistance) {
  auto m = testkit::block_matrix(30, 50, 3, 0.5, 0.05, 2);
  RepresentationModel model(m.user_count(), m.item_count(), small_config(), LossKind::distance, SourceKind::global);
  model.initialize(4);
  const auto idx = build_index(model, 6, 13);
  EXPECT_EQ(idx.cluster_count(), 6u);
  EXPECT_EQ(idx.space_tag(), "GD");
  std::vector<int> hits(m.item_count(), 0);
  for (size_t j = 0; j < 6; ++j) {
    for (auto i : idx.list(j)) {
      ++hits[static_cast<size_t>(i)];
      EXPECT_EQ(idx.cluster_of(i), static_cast<int32_t>(j));
    }
  }
  for (int h : hits) EXPECT_EQ(h, 1);

  // every item sits in its nearest stored centroid
  const auto items = model.embed_all_items();
  for (Eigen::Index i = 0; i < items.rows(); ++i) {
    const double own = sq(items.row(i), idx.centroids().row(idx.cluster_of(static_cast<ItemIndex>(i))));
    for (Eigen::Index j = 0; j < 6; ++j) EXPECT_LE(own, sq(items.row(i), idx.centroids().row(j)) + 1e-12);
  }

  // top-K against a sort by (distance, id)
  const auto users = model.embed_all_users();
  for (Eigen::Index u = 0; u < users.rows(); ++u) {
    std::vector<std::pair<double, int32_t>> order;
    for (int32_t j = 0; j < 6; ++j) order.push_back({sq(users.row(u), idx.centroids().row(j)), j});
    std::sort(order.begin(), order.end());
    const auto row = users.row(u);
    const auto top = idx.top_k_clusters(std::span<const float>(row.data(), 8), 3);
    ASSERT_EQ(top.size(), 3u);
    for (size_t k = 0; k < 3; ++k) EXPECT_EQ(top[k], order[k].second);

    const auto cand = idx.candidates(top);
    std::vector<ItemIndex> expect;
    for (auto c : top) expect.insert(expect.end(), idx.list(static_cast<size_t>(c)).begin(), idx.list(static_cast<size_t>(c)).end());
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(cand, expect);
  }
  const float q[8] = {};
  EXPECT_THROW(idx.top_k_clusters(q, 7), std::invalid_argument);
  EXPECT_THROW(idx.top_k_clusters(q, 0), std::invalid_argument);
}

TEST(Index, FileRoundTripAndCorruption) {
  ScratchDir dir("index");
  nn::Mat<float> c(2, 3);
  c << 1, 2, 3, -1, -2, -3.5f;
  const ClusterIndex idx(c, {{0, 3}, {2, 1, 4}}, "AP", 77);
  idx.save(dir / "i.bin");
  const auto back = ClusterIndex::load(dir / "i.bin");
  EXPECT_EQ(back.centroids(), c);
  EXPECT_EQ(back.lists(), idx.lists());
  EXPECT_EQ(back.space_tag(), "AP");
  EXPECT_EQ(back.seed(), 77u);

  const auto size = std::filesystem::file_size(dir / "i.bin");
  std::filesystem::resize_file(dir / "i.bin", size - 3);
  EXPECT_THROW(ClusterIndex::load(dir / "i.bin"), DataError);
  std::ofstream(dir / "x.bin") << "hello\n";
  EXPECT_THROW(ClusterIndex::load(dir / "x.bin"), DataError);
  EXPECT_THROW(ClusterIndex(c, {{0, 1}, {1}}, "", 0), DataError);  // item 1 twice
}

// Exhaustive mining against a brute-force enumeration done here in double.
TEST(Mining, ExhaustiveMatchesBruteForce) {
  auto m = testkit::block_matrix(25, 40, 4, 0.4, 0.05, 6);
  RepresentationModel model(m.user_count(), m.item_count(), small_config(), LossKind::distance, SourceKind::global);
  model.initialize(8);
  const auto idx = build_index(model, 8, 2);
  const size_t J = 3;
  const auto sets = mine_local_triplets(model, idx, m, {.candidate_clusters = J, .negatives_per_positive = 0}, 1);

  const auto U = model.embed_all_users();
  const auto I = model.embed_all_items();
  std::set<Triplet> intra, inter;
  size_t skipped = 0;
  for (Eigen::Index u = 0; u < U.rows(); ++u) {
    std::vector<std::pair<double, int32_t>> order;
    for (int32_t j = 0; j < 8; ++j) order.push_back({sq(U.row(u), idx.centroids().row(j)), j});
    std::sort(order.begin(), order.end());
    std::map<int32_t, double> cdist;
    for (size_t k = 0; k < J; ++k) cdist[order[k].second] = order[k].first;
    std::vector<ItemIndex> pos, neg;
    for (ItemIndex i = 0; i < static_cast<ItemIndex>(m.item_count()); ++i) {
      if (!cdist.count(idx.cluster_of(i))) continue;
      (m.contains(static_cast<UserIndex>(u), i) ? pos : neg).push_back(i);
    }
    if (pos.empty()) {
      ++skipped;
      continue;
    }
    for (auto p : pos) {
      for (auto n : neg) {
        const Triplet t{static_cast<UserIndex>(u), p, n};
        const int32_t cp = idx.cluster_of(p), cn = idx.cluster_of(n);
        if (cp == cn && sq(U.row(u), I.row(p)) > sq(U.row(u), I.row(n))) intra.insert(t);
        if (cp != cn && cdist[cp] > cdist[cn]) inter.insert(t);
      }
    }
  }
  EXPECT_EQ(std::set<Triplet>(sets.intra.begin(), sets.intra.end()), intra);
  EXPECT_EQ(std::set<Triplet>(sets.inter.begin(), sets.inter.end()), inter);
  EXPECT_EQ(sets.intra.size(), intra.size());  // no duplicates when enumerating
  EXPECT_EQ(sets.skipped_users, skipped);
  EXPECT_GT(intra.size(), 0u);
  EXPECT_GT(inter.size(), 0u);
}

TEST(Mining, SampledTripletsSatisfyTheirPredicate) {
  auto m = testkit::block_matrix(25, 40, 4, 0.4, 0.05, 6);
  RepresentationModel model(m.user_count(), m.item_count(), small_config(), LossKind::product, SourceKind::global);
  model.initialize(8);
  const auto idx = build_index(model, 8, 2);
  const auto sets = mine_local_triplets(model, idx, m, {}, 5);
  const auto again = mine_local_triplets(model, idx, m, {}, 5);
  EXPECT_EQ(sets.intra, again.intra);
  EXPECT_EQ(sets.inter, again.inter);
  const auto U = model.embed_all_users();
  const auto I = model.embed_all_items();
  for (const auto& t : sets.intra) {
    EXPECT_TRUE(m.contains(t.user, t.pos_item));
    EXPECT_FALSE(m.contains(t.user, t.neg_item));
    EXPECT_EQ(idx.cluster_of(t.pos_item), idx.cluster_of(t.neg_item));
    EXPECT_GT(sq(U.row(t.user), I.row(t.pos_item)), sq(U.row(t.user), I.row(t.neg_item)));
  }
  for (const auto& t : sets.inter) {
    EXPECT_FALSE(m.contains(t.user, t.neg_item));
    EXPECT_GT(sq(U.row(t.user), idx.centroids().row(idx.cluster_of(t.pos_item))),
              sq(U.row(t.user), idx.centroids().row(idx.cluster_of(t.neg_item))));
  }
  EXPECT_THROW(mine_local_triplets(model, idx, m, {.candidate_clusters = 9}, 5), ConfigError);
}

TEST(Mining, TripletFileRoundTrip) {
  ScratchDir dir("mined");
  LocalTripletSets s;
  s.intra = {{0, 1, 2}, {3, 4, 5}};
  s.inter = {{6, 7, 8}};
  write_local_triplets(dir / "t.tsv", s);
  const auto back = read_local_triplets(dir / "t.tsv");
  EXPECT_EQ(back.intra, s.intra);
  EXPECT_EQ(back.inter, s.inter);
}

TEST(LocalTraining, FitsTheMinedSets) {
  auto m = testkit::block_matrix(40, 40, 4, 0.4, 0.05, 6);
  auto cfg = small_config();
  const auto global = train_global(m, LossKind::distance, cfg);
  const auto idx = build_index(global, 6, 2);
  const auto sets = mine_local_triplets(global, idx, m, {.candidate_clusters = 3}, 1);
  ASSERT_GT(sets.size(), 0u);
  cfg.max_epochs = 40;
  const auto local = train_local(m, sets, LossKind::distance, cfg);
  EXPECT_EQ(local.tag(), "LD");
  std::vector<Triplet> all(sets.intra);
  all.insert(all.end(), sets.inter.begin(), sets.inter.end());
  // intra triplets are misordered in the global space by construction
  EXPECT_GT(triplet_accuracy(local, all), triplet_accuracy(global, all));
  EXPECT_THROW(train_local(m, LocalTripletSets{}, LossKind::distance, cfg), DataError);
}
