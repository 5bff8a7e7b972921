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

#include "attrec/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "attrec/errors.hpp"
#include "attrec/log.hpp"
#include "attrec/parallel.hpp"

namespace attrec::metrics {

namespace {

bool in_truth(std::span<const ItemIndex> truth, ItemIndex i) {
  return std::find(truth.begin(), truth.end(), i) != truth.end();
}

}  // namespace

size_t hits(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth) {
  size_t h = 0;
  for (auto i : ranked) h += in_truth(truth, i) ? 1 : 0;
  return h;
}

double recall(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth) {
  if (truth.empty()) return 0.0;
  return static_cast<double>(hits(ranked, truth)) / static_cast<double>(truth.size());
}

double precision(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth) {
  if (ranked.empty()) {
    log::warn("precision of an empty recommendation list taken as 0");
    return 0.0;
  }
  return static_cast<double>(hits(ranked, truth)) / static_cast<double>(ranked.size());
}

double hit_rate(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth) {
  return hits(ranked, truth) >= 1 ? 1.0 : 0.0;
}

double arhr(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth) {
  double s = 0.0;
  for (size_t k = 0; k < ranked.size(); ++k) {
    if (in_truth(truth, ranked[k])) s += 1.0 / static_cast<double>(k + 1);
  }
  return s;
}

double ndcg_hits(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth) {
  double s = 0.0;
  for (size_t k = 0; k < ranked.size(); ++k) {
    if (in_truth(truth, ranked[k])) s += 1.0 / std::log2(static_cast<double>(k + 2));
  }
  return s;
}

MetricValues evaluate_list(std::span<const ItemIndex> ranked, std::span<const ItemIndex> truth) {
  return {recall(ranked, truth), precision(ranked, truth), hit_rate(ranked, truth), arhr(ranked, truth),
          ndcg_hits(ranked, truth)};
}

std::vector<EvalRow> evaluate_topn(const std::vector<std::vector<ItemIndex>>& test, const Recommender& rec,
                                   std::span<const size_t> Ns, size_t K, const std::string& representation) {
  if (Ns.empty()) return {};
  const size_t max_n = *std::max_element(Ns.begin(), Ns.end());
  std::vector<EvalRow> rows(Ns.size());
  for (size_t k = 0; k < Ns.size(); ++k) {
    rows[k].representation = representation;
    rows[k].N = Ns[k];
    rows[k].K = K;
    rows[k].M = rec.index().cluster_count();
    rows[k].d = rec.index().dim();
  }
  RecommendConfig cfg;
  cfg.K = K;
  cfg.N = max_n;
  cfg.scorer = scorer_for(rec.scorer().loss_kind());
  std::vector<std::vector<ItemIndex>> ranked(test.size());
  parallel_for(test.size(), [&](size_t u) {
    if (test[u].empty()) return;
    const auto list = rec.recommend(static_cast<UserIndex>(u), cfg);
    for (const auto& s : list.items) ranked[u].push_back(s.item);
  });
  // ordered reduction keeps the sums independent of the thread count
  for (size_t u = 0; u < test.size(); ++u) {
    if (test[u].empty()) {
      for (auto& r : rows) ++r.skipped;
      continue;
    }
    for (size_t k = 0; k < Ns.size(); ++k) {
      const auto prefix = std::span<const ItemIndex>(ranked[u]).first(std::min(Ns[k], ranked[u].size()));
      const auto v = evaluate_list(prefix, test[u]);
      auto& m = rows[k].mean;
      m.recall += v.recall;
      m.precision += v.precision;
      m.hit_rate += v.hit_rate;
      m.arhr += v.arhr;
      m.ndcg += v.ndcg;
      ++rows[k].users;
    }
  }
  for (auto& r : rows) {
    if (r.users == 0) continue;
    const double n = static_cast<double>(r.users);
    r.mean.recall /= n;
    r.mean.precision /= n;
    r.mean.hit_rate /= n;
    r.mean.arhr /= n;
    r.mean.ndcg /= n;
  }
  if (!rows.empty() && rows[0].skipped > 0) {
    log::info(representation, ": skipped ", rows[0].skipped, " users with empty ground truth");
  }
  return rows;
}

LooResult evaluate_loo(const InteractionMatrix& full, const std::vector<std::vector<ItemIndex>>& test,
                       const PairScorer& scorer, size_t negatives, size_t topk, uint64_t seed) {
  LooResult res;
  res.topk = topk;
  res.negatives = negatives;
  for (const auto& t : test) {
    if (t.size() > 1) throw DataError("leave-one-out evaluation expects one held-out item per user");
  }
  std::vector<double> hr(test.size(), 0.0), ndcg(test.size(), 0.0);
  parallel_for(test.size(), [&](size_t uu) {
    if (test[uu].empty()) return;
    const auto u = static_cast<UserIndex>(uu);
    const ItemIndex target = test[uu][0];
    auto cand = sample_loo_negatives(full, u, negatives, derive_seed(seed, uu));
    cand.push_back(target);
    const auto ranked = rank_fixed_candidates(scorer, u, cand);
    std::vector<ItemIndex> top;
    for (size_t k = 0; k < std::min(topk, ranked.size()); ++k) top.push_back(ranked[k].item);
    const ItemIndex truth[1] = {target};
    hr[uu] = hit_rate(top, truth);
    ndcg[uu] = ndcg_hits(top, truth);
  });
  for (size_t uu = 0; uu < test.size(); ++uu) {
    if (test[uu].empty()) continue;
    res.hit_rate += hr[uu];
    res.ndcg += ndcg[uu];
    ++res.users;
  }
  if (res.users > 0) {
    res.hit_rate /= static_cast<double>(res.users);
    res.ndcg /= static_cast<double>(res.users);
  }
  return res;
}

std::vector<CoveragePoint> coverage_recall(const std::vector<std::vector<ItemIndex>>& test, const Recommender& rec,
                                           std::span<const size_t> Ks, size_t N) {
  std::vector<CoveragePoint> out;
  RecommendConfig cfg;
  cfg.N = N;
  cfg.scorer = scorer_for(rec.scorer().loss_kind());
  std::vector<double> rec_u(test.size()), cand_u(test.size());
  for (auto K : Ks) {
    cfg.K = K;
    parallel_for(test.size(), [&](size_t u) {
      if (test[u].empty()) return;
      const auto list = rec.recommend(static_cast<UserIndex>(u), cfg);
      std::vector<ItemIndex> ranked;
      for (const auto& s : list.items) ranked.push_back(s.item);
      rec_u[u] = recall(ranked, test[u]);
      cand_u[u] = static_cast<double>(list.candidate_count);
    });
    CoveragePoint pt;
    pt.K = K;
    size_t users = 0;
    for (size_t u = 0; u < test.size(); ++u) {
      if (test[u].empty()) continue;
      pt.recall += rec_u[u];
      pt.mean_candidates += cand_u[u];
      ++users;
    }
    if (users > 0) {
      pt.recall /= static_cast<double>(users);
      pt.mean_candidates /= static_cast<double>(users);
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace attrec::metrics
