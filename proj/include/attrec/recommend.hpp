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

#include <atomic>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "attrec/clusterindex.hpp"
#include "attrec/corpus.hpp"
#include "attrec/scoring.hpp"

namespace attrec {

enum class ScorerKind { dot, euclidean };

ScorerKind scorer_for(LossKind loss);

struct RecommendConfig {
  size_t K = 2;
  size_t N = 15;
  ScorerKind scorer = ScorerKind::euclidean;
  bool exclude_train_positives = true;
};

struct ScoredItem {
  ItemIndex item = 0;
  double score = 0.0;

  friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

struct RecommendationList {
  UserIndex user = 0;
  std::vector<ScoredItem> items;  // descending score, ties to the lower item id
  size_t candidate_count = 0;
};

// Scores exactly `candidates` and sorts them; keeps the first `limit` when
// limit > 0. Duplicated candidates are kept.
std::vector<ScoredItem> rank_items(const PairScorer& scorer, UserIndex u, std::span<const ItemIndex> candidates,
                                   size_t limit = 0);

inline std::vector<ScoredItem> rank_fixed_candidates(const PairScorer& scorer, UserIndex u,
                                                     std::span<const ItemIndex> candidates) {
  return rank_items(scorer, u, candidates, 0);
}

// Coarse-to-fine retrieval: K nearest item clusters for the user's vector
// in the indexing space, then attentive (or single-space) re-ranking of the
// union of their inverted lists.
class Recommender {
 public:
  Recommender(const ClusterIndex& index, const RepresentationModel& index_model, const PairScorer& scorer,
              const InteractionMatrix* train = nullptr);

  // Candidate set for user u at cluster depth K, sorted by item index.
  std::vector<ItemIndex> candidates(UserIndex u, size_t K, bool exclude_train_positives) const;

  RecommendationList recommend(UserIndex u, const RecommendConfig& cfg) const;

  // Exhaustive reference: every item (minus train positives when asked), same scorer.
  RecommendationList recommend_exhaustive(UserIndex u, size_t N, bool exclude_train_positives) const;

  const ClusterIndex& index() const { return index_; }
  const PairScorer& scorer() const { return scorer_; }
  const nn::Mat<float>& query_users() const { return query_users_; }

  // Number of (user, item) pairs scored since construction.
  size_t scored_pairs() const { return scored_.load(); }

 private:
  const ClusterIndex& index_;
  nn::Mat<float> query_users_;
  const PairScorer& scorer_;
  const InteractionMatrix* train_;
  mutable std::atomic<size_t> scored_{0};
};

// "user<TAB>rank<TAB>item<TAB>score" lines with raw ids from `vocab`, ranks from 1.
void write_recommendations(std::ostream& out, std::span<const RecommendationList> lists,
                           const InteractionMatrix& vocab);

}  // namespace attrec
