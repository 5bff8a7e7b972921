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

#include "attrec/recommend.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "attrec/errors.hpp"
#include "attrec/log.hpp"

namespace attrec {

ScorerKind scorer_for(LossKind loss) { return loss == LossKind::product ? ScorerKind::dot : ScorerKind::euclidean; }

std::vector<ScoredItem> rank_items(const PairScorer& scorer, UserIndex u, std::span<const ItemIndex> candidates,
                                   size_t limit) {
  std::vector<ScoredItem> out(candidates.size());
  for (size_t k = 0; k < candidates.size(); ++k) {
    out[k] = {candidates[k], scorer.score(u, candidates[k])};
    // a NaN would break the strict weak ordering below
    if (!std::isfinite(out[k].score)) {
      throw NumericError(scorer.name() + ": non-finite score for user " + std::to_string(u) + ", item " +
                         std::to_string(candidates[k]));
    }
  }
  auto better = [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  };
  if (limit > 0 && limit < out.size()) {
    std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(limit), out.end(), better);
    out.resize(limit);
  } else {
    std::sort(out.begin(), out.end(), better);
  }
  return out;
}

Recommender::Recommender(const ClusterIndex& index, const RepresentationModel& index_model, const PairScorer& scorer,
                         const InteractionMatrix* train)
    : index_(index), query_users_(index_model.embed_all_users()), scorer_(scorer), train_(train) {
  if (index_model.dim() != index.dim()) throw ConfigError("recommender: index and query model dimensions differ");
  if (index.item_count() != scorer.item_count()) throw ConfigError("recommender: index and scorer item counts differ");
}

std::vector<ItemIndex> Recommender::candidates(UserIndex u, size_t K, bool exclude_train_positives) const {
  if (K < 1 || K > index_.cluster_count()) {
    throw ConfigError("K=" + std::to_string(K) + " outside [1, " + std::to_string(index_.cluster_count()) + "]");
  }
  const auto q = query_users_.row(u);
  const auto clusters = index_.top_k_clusters(std::span<const float>(q.data(), static_cast<size_t>(q.size())), K);
  auto items = index_.candidates(clusters);
  if (exclude_train_positives && train_) {
    std::erase_if(items, [&](ItemIndex i) { return train_->contains(u, i); });
  }
  return items;
}

RecommendationList Recommender::recommend(UserIndex u, const RecommendConfig& cfg) const {
  if (cfg.N < 1) throw ConfigError("N must be >= 1");
  if (cfg.scorer != scorer_for(scorer_.loss_kind())) {
    throw ConfigError("scorer kind does not match the model's loss kind");
  }
  RecommendationList list;
  list.user = u;
  const auto cand = candidates(u, cfg.K, cfg.exclude_train_positives);
  list.candidate_count = cand.size();
  if (cand.empty()) {
    log::warn("user ", u, ": empty candidate set at K=", cfg.K);
    return list;
  }
  list.items = rank_items(scorer_, u, cand, cfg.N);
  scored_ += cand.size();
  return list;
}

RecommendationList Recommender::recommend_exhaustive(UserIndex u, size_t N, bool exclude_train_positives) const {
  std::vector<ItemIndex> all;
  all.reserve(scorer_.item_count());
  for (size_t i = 0; i < scorer_.item_count(); ++i) {
    const auto item = static_cast<ItemIndex>(i);
    if (exclude_train_positives && train_ && train_->contains(u, item)) continue;
    all.push_back(item);
  }
  RecommendationList list;
  list.user = u;
  list.candidate_count = all.size();
  list.items = rank_items(scorer_, u, all, N);
  return list;
}

void write_recommendations(std::ostream& out, std::span<const RecommendationList> lists,
                           const InteractionMatrix& vocab) {
  out << std::setprecision(9);
  for (const auto& l : lists) {
    for (size_t r = 0; r < l.items.size(); ++r) {
      out << vocab.user_ids().at(static_cast<size_t>(l.user)) << '\t' << (r + 1) << '\t'
          << vocab.item_ids().at(static_cast<size_t>(l.items[r].item)) << '\t' << l.items[r].score << '\n';
    }
  }
}

}  // namespace attrec
