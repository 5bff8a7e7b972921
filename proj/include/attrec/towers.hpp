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

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "attrec/corpus.hpp"
#include "attrec/tensornet.hpp"

namespace attrec {

enum class LossKind { product, distance };
enum class SourceKind { global, local };

std::string to_string(LossKind k);
std::string to_string(SourceKind k);
LossKind parse_loss_kind(const std::string& text);
SourceKind parse_source_kind(const std::string& text);

struct TrainConfig {
  size_t batch_size = 512;
  size_t max_epochs = 200;
  double margin = 0.5;
  double learning_rate = 0.00017;
  size_t patience = 10;
  double l2_reg = 1e-6;  // product loss only
  double validation_fraction = 0.05;
  int hard_draws = 5;  // negative redraws while the snapshot distance loss is zero
  size_t dim = 64;
  size_t embed_dim = 64;
  std::vector<size_t> hidden_dims{64, 64};
  nn::Activation activation = nn::Activation::relu;
  uint64_t seed = 1;

  void validate() const;
  std::map<std::string, std::string> describe() const;
};

template <typename S>
inline S softplus(S x) {
  return x > S(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// -ln sigmoid(<u,ip> - <u,in>), written as softplus(-(<u,ip> - <u,in>)).
template <typename V>
auto product_loss(const V& u, const V& ip, const V& in) {
  return softplus(-(u.dot(ip) - u.dot(in)));
}

// max(0, |u-ip|^2 - |u-in|^2 + margin)
template <typename V>
auto distance_loss(const V& u, const V& ip, const V& in, double margin) {
  using S = std::decay_t<decltype(u.dot(ip))>;
  const S v = (u - ip).squaredNorm() - (u - in).squaredNorm() + static_cast<S>(margin);
  return v > S(0) ? v : S(0);
}

// Loss plus its gradient with respect to the three inputs (overwritten).
template <typename V, typename G>
auto product_loss_grad(const V& u, const V& ip, const V& in, G&& gu, G&& gp, G&& gn) {
  using S = std::decay_t<decltype(u.dot(ip))>;
  const S x = u.dot(ip) - u.dot(in);
  // d softplus(-x)/dx = -sigmoid(-x)
  const S coef = -S(1) / (S(1) + std::exp(x));
  gu = coef * (ip - in);
  gp = coef * u;
  gn = -coef * u;
  return softplus(-x);
}

template <typename V, typename G>
auto distance_loss_grad(const V& u, const V& ip, const V& in, double margin, G&& gu, G&& gp, G&& gn) {
  using S = std::decay_t<decltype(u.dot(ip))>;
  const S v = (u - ip).squaredNorm() - (u - in).squaredNorm() + static_cast<S>(margin);
  if (v <= S(0)) {
    gu.setZero();
    gp.setZero();
    gn.setZero();
    return S(0);
  }
  gu = S(2) * (in - ip);
  gp = S(-2) * (u - ip);
  gn = S(2) * (u - in);
  return v;
}

// Two towers, no shared tensors, common output dimension d.
template <typename S>
class BasicRepresentationModel {
 public:
  BasicRepresentationModel() = default;
  BasicRepresentationModel(size_t user_count, size_t item_count, const TrainConfig& cfg, LossKind loss,
                           SourceKind source);

  void initialize(uint64_t seed);

  LossKind loss_kind() const { return loss_; }
  SourceKind source_kind() const { return source_; }
  size_t dim() const { return user_tower_.spec().out_dim; }
  size_t user_count() const { return user_tower_.spec().vocab_size; }
  size_t item_count() const { return item_tower_.spec().vocab_size; }
  // "GD", "GP", "LD" or "LP".
  std::string tag() const;

  nn::BasicTower<S>& user_tower() { return user_tower_; }
  nn::BasicTower<S>& item_tower() { return item_tower_; }
  const nn::BasicTower<S>& user_tower() const { return user_tower_; }
  const nn::BasicTower<S>& item_tower() const { return item_tower_; }

  std::vector<nn::BasicParamTensor<S>*> params();
  std::vector<const nn::BasicParamTensor<S>*> params() const;

  nn::Vec<S> embed_user(UserIndex u) const { return user_tower_.forward(u); }
  nn::Vec<S> embed_item(ItemIndex i) const { return item_tower_.forward(i); }
  nn::Mat<S> embed_all_users() const;
  nn::Mat<S> embed_all_items() const;

 private:
  nn::BasicTower<S> user_tower_;
  nn::BasicTower<S> item_tower_;
  LossKind loss_ = LossKind::distance;
  SourceKind source_ = SourceKind::global;
};

using RepresentationModel = BasicRepresentationModel<float>;

// Mean triplet loss over the batch; when `accumulate` is set, adds the
// gradient of that mean to the model's parameter gradients. The product
// loss adds l2_reg * (|u|^2 + |i+|^2 + |i-|^2) on the outputs.
template <typename S>
double triplet_batch_loss(BasicRepresentationModel<S>& model, std::span<const Triplet> batch, double margin,
                          double l2_reg, bool accumulate);

double mean_triplet_loss(const RepresentationModel& model, std::span<const Triplet> triplets, double margin);

// Fraction of triplets whose positive is preferred (higher dot or smaller distance).
double triplet_accuracy(const RepresentationModel& model, std::span<const Triplet> triplets);

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, mean over batches
  std::vector<double> val_loss;    // per epoch
  size_t best_epoch = 0;           // 0 = initial parameters
  double best_val_loss = 0.0;
  size_t epochs_run = 0;
  size_t dropped_easy = 0;         // triplets left out of gradient steps (zero snapshot loss)
};

// Produces the triplets of one epoch given the current model.
using EpochSource = std::function<std::vector<Triplet>(size_t epoch, const RepresentationModel& model)>;

// Shared mini-batch Adam loop with early stopping on `validation`; returns
// the checkpoint with the lowest validation loss.
RepresentationModel train_representation(size_t user_count, size_t item_count, LossKind loss, SourceKind source,
                                         const TrainConfig& cfg, const EpochSource& source_fn,
                                         std::span<const Triplet> validation, TrainReport* report = nullptr);

// Global model: one fresh uniformly sampled negative per training positive
// per epoch; for the distance loss a negative is redrawn (up to
// cfg.hard_draws) until the triplet has positive loss under the
// epoch-start snapshot.
RepresentationModel train_global(const InteractionMatrix& train, LossKind loss, const TrainConfig& cfg,
                                 TrainReport* report = nullptr);

// Container metadata: loss_kind, source_kind, dim plus the training config.
void save_model(const std::filesystem::path& path, const RepresentationModel& model, const TrainConfig& cfg);
RepresentationModel load_model(const std::filesystem::path& path, TrainConfig* cfg = nullptr);

extern template class BasicRepresentationModel<float>;
extern template class BasicRepresentationModel<double>;

}  // namespace attrec
