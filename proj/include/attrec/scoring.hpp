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

#include <memory>
#include <span>

#include "attrec/corpus.hpp"
#include "attrec/tensornet.hpp"
#include "attrec/towers.hpp"

namespace attrec {

// Preference score of (user, item) pairs; larger is better. Dot products for
// the product loss, negated Euclidean distances for the distance loss.
class PairScorer {
 public:
  virtual ~PairScorer() = default;
  virtual LossKind loss_kind() const = 0;
  virtual size_t user_count() const = 0;
  virtual size_t item_count() const = 0;
  virtual double score(UserIndex u, ItemIndex i) const = 0;
  virtual std::string name() const = 0;

  void score(UserIndex u, std::span<const ItemIndex> items, std::span<double> out) const {
    for (size_t k = 0; k < items.size(); ++k) out[k] = score(u, items[k]);
  }
};

// Scores in a single representation space using precomputed frozen tables.
class RepresentationScorer : public PairScorer {
 public:
  explicit RepresentationScorer(const RepresentationModel& model);

  LossKind loss_kind() const override { return loss_; }
  size_t user_count() const override { return static_cast<size_t>(users_.rows()); }
  size_t item_count() const override { return static_cast<size_t>(items_.rows()); }
  double score(UserIndex u, ItemIndex i) const override;
  std::string name() const override { return tag_; }

  const nn::Mat<float>& users() const { return users_; }
  const nn::Mat<float>& items() const { return items_; }

 private:
  nn::Mat<float> users_;
  nn::Mat<float> items_;
  LossKind loss_;
  std::string tag_;
};

template <typename A, typename B>
double pair_score(LossKind loss, const A& u, const B& i) {
  double s = 0.0;
  if (loss == LossKind::product) {
    for (Eigen::Index k = 0; k < u.size(); ++k) s += static_cast<double>(u[k]) * static_cast<double>(i[k]);
    return s;
  }
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    const double d = static_cast<double>(u[k]) - static_cast<double>(i[k]);
    s += d * d;
  }
  return -std::sqrt(s);
}

}  // namespace attrec
