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

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attrec/corpus.hpp"
#include "attrec/tensornet.hpp"
#include "attrec/towers.hpp"

namespace attrec {

using PointMatrix = nn::Mat<float>;

struct KMeansResult {
  nn::Mat<double> centroids;          // M x d
  std::vector<int32_t> assignments;   // per point, nearest centroid at exit
  std::vector<double> objective;      // sum of squared distances, one entry per assignment step
  size_t iterations = 0;
  size_t reseeded = 0;                // empty-cluster repairs
};

struct KMeansOptions {
  size_t max_iterations = 50;
  double tolerance = 1e-4;  // relative centroid movement |dC|_F / |C|_F
};

// k-means++ seeding followed by Lloyd iterations. An empty cluster is
// re-seeded at the point farthest from its assigned centroid.
KMeansResult kmeans(const PointMatrix& points, size_t clusters, uint64_t seed, const KMeansOptions& opt = {});

// Item clusters in one representation space with their inverted lists.
class ClusterIndex {
 public:
  ClusterIndex() = default;
  ClusterIndex(nn::Mat<float> centroids, std::vector<std::vector<ItemIndex>> lists, std::string space_tag,
               uint64_t seed);

  size_t cluster_count() const { return lists_.size(); }
  size_t dim() const { return static_cast<size_t>(centroids_.cols()); }
  size_t item_count() const { return cluster_of_.size(); }
  const nn::Mat<float>& centroids() const { return centroids_; }
  const std::vector<ItemIndex>& list(size_t cluster) const { return lists_.at(cluster); }
  const std::vector<std::vector<ItemIndex>>& lists() const { return lists_; }
  int32_t cluster_of(ItemIndex item) const { return cluster_of_.at(static_cast<size_t>(item)); }
  const std::string& space_tag() const { return space_tag_; }
  uint64_t seed() const { return seed_; }

  // K clusters by ascending Euclidean distance to `query`, ties to the lower id.
  std::vector<int32_t> top_k_clusters(std::span<const float> query, size_t k) const;

  // Union of the inverted lists of `clusters`, sorted by item index.
  std::vector<ItemIndex> candidates(std::span<const int32_t> clusters) const;

  // Manifest header, float32 centroid blob, then every inverted list as
  // a little-endian uint32 length followed by int32 item indices.
  void save(const std::filesystem::path& path) const;
  static ClusterIndex load(const std::filesystem::path& path);

 private:
  nn::Mat<float> centroids_;
  std::vector<std::vector<ItemIndex>> lists_;
  std::vector<int32_t> cluster_of_;
  std::string space_tag_;
  uint64_t seed_ = 0;
};

// Embeds every item with the model's item tower and clusters them.
ClusterIndex build_index(const RepresentationModel& model, size_t clusters, uint64_t seed,
                         const std::string& space_tag = {});

struct LocalTripletSets {
  std::vector<Triplet> intra;  // same candidate cluster, |u-i+| > |u-i-|
  std::vector<Triplet> inter;  // different candidate clusters, |u-mu_j| > |u-mu_k|
  size_t skipped_users = 0;    // users without a positive in their candidate clusters
  size_t rejected = 0;         // candidate triplets failing their predicate

  size_t size() const { return intra.size() + inter.size(); }
};

struct MiningOptions {
  size_t candidate_clusters = 5;    // J
  size_t negatives_per_positive = 5;  // 0 = every legal negative
};

// For each user, restricts items to the J clusters nearest its global
// vector, pairs each positive there with negatives from the same candidate
// items and keeps the pairs that pass the intra or inter predicate, both
// evaluated in the frozen global space.
LocalTripletSets mine_local_triplets(const RepresentationModel& global_model, const ClusterIndex& index,
                                     const InteractionMatrix& train, const MiningOptions& opt, uint64_t seed);

// Fresh two-tower model on a 1:1 mix of intra and inter triplets; each epoch
// draws |train positives| triplets, half from each set (with replacement).
RepresentationModel train_local(const InteractionMatrix& train, const LocalTripletSets& sets, LossKind loss,
                                const TrainConfig& cfg, TrainReport* report = nullptr);

void write_local_triplets(const std::filesystem::path& path, const LocalTripletSets& sets);
LocalTripletSets read_local_triplets(const std::filesystem::path& path);

}  // namespace attrec
