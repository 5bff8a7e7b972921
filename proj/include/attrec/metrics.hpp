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
#include <span>
#include <string>
#include <vector>

#include "attrec/corpus.hpp"
#include "attrec/recommend.hpp"

namespace attrec::metrics {

// `ranked` is Q_u in rank order (rank 1 first); `truth` is G_u, any order.
size_t hits(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth);
double recall(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth);
double precision(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth);
double hit_rate(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth);
// Sum of 1/rank over hits.
double arhr(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth);
// Sum of 1/log2(rank + 1) over hits; no ideal-DCG normalization.
double ndcg_hits(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth);

struct MetricValues {
  double recall = 0.0;
  double precision = 0.0;
  double hit_rate = 0.0;
  double arhr = 0.0;
  double ndcg = 0.0;
};

MetricValues evaluate_list(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth);

struct EvalRow {
  std::string representation;
  size_t N = 0;
  size_t K = 0;
  size_t M = 0;
  size_t d = 0;
  MetricValues mean;
  size_t users = 0;    // users averaged over
  size_t skipped = 0;  // users with empty ground truth
};

// One row per N; lists are computed once at max(N) and truncated.
std::vector<EvalRow> evaluate_topn(const std::vector<std::vector<ItemIndex>>& test, const Recommender& rec,
                                   std::span<const size_t> Ns, size_t K, const std::string& representation);

struct LooResult {
  double hit_rate = 0.0;
  double ndcg = 0.0;
  size_t users = 0;
  size_t topk = 10;
  size_t negatives = 99;
};

// Ranks every held-out item among `negatives` items the user never
// interacted with in `full` (train + test), scored with `scorer`.
LooResult evaluate_loo(const InteractionMatrix& full, const std::vector<std::vector<ItemIndex>>& test,
                       const PairScorer& scorer, size_t negatives, size_t topk, uint64_t seed);

struct CoveragePoint {
  size_t K = 0;
  double recall = 0.0;
  double mean_candidates = 0.0;
};

// Recall of the top-N list restricted to the K nearest clusters, per K.
std::vector<CoveragePoint> coverage_recall(const std::vector<std::vector<ItemIndex>>& test, const Recommender& rec,
                                           std::span<const size_t> Ks, size_t N = 20);

}  // namespace attrec::metrics
