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

// Representation-level attention: every channel r owns a transformation
// f_r(x) = relu(x W_r + b_r); the compatibilities <f_r(g_r(u)), f_r(g_r(i))>
// are softmax-normalized over channels and the frozen channel vectors of the
// user, positive and negative item are blended with those same weights.

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "attrec/clusterindex.hpp"
#include "attrec/scoring.hpp"
#include "attrec/tensornet.hpp"
#include "attrec/towers.hpp"

namespace attrec {

// Trainable part of the attention network, independent of where the channel
// vectors come from.
template <typename S>
class BasicAttentionCore {
 public:
  BasicAttentionCore() = default;
  BasicAttentionCore(size_t channels, size_t dim, LossKind loss);

  // Glorot-uniform weights, zero biases.
  void initialize(Rng& rng);

  size_t channels() const { return params_.size() / 2; }
  size_t dim() const { return dim_; }
  LossKind loss_kind() const { return loss_; }

  nn::BasicParamTensor<S>& weight(size_t r) { return params_[2 * r]; }
  nn::BasicParamTensor<S>& bias(size_t r) { return params_[2 * r + 1]; }
  const nn::BasicParamTensor<S>& weight(size_t r) const { return params_[2 * r]; }
  const nn::BasicParamTensor<S>& bias(size_t r) const { return params_[2 * r + 1]; }
  std::vector<nn::BasicParamTensor<S>>& params() { return params_; }
  const std::vector<nn::BasicParamTensor<S>>& params() const { return params_; }

  // f_r applied to one row vector.
  nn::Vec<S> transform(size_t r, std::span<const S> vec) const;

  // Softmax of the channel compatibilities, max-subtracted.
  nn::Vec<S> weights_from_transformed(std::span<const nn::Vec<S>> user_t, std::span<const nn::Vec<S>> item_t) const;

  // Mean loss of the blended triplets. user[r], pos[r], neg[r] are B x d
  // channel representations; gradients of the mean go to the f_r tensors.
  double batch_loss(std::span<const nn::Mat<S>> user, std::span<const nn::Mat<S>> pos,
                    std::span<const nn::Mat<S>> neg, double margin, bool accumulate);

 private:
  size_t dim_ = 0;
  LossKind loss_ = LossKind::distance;
  std::vector<nn::BasicParamTensor<S>> params_;
};

using AttentionCore = BasicAttentionCore<float>;

struct AttentiveTriple {
  nn::Vec<float> user_blend;
  nn::Vec<float> pos_blend;
  nn::Vec<float> neg_blend;
  nn::Vec<float> weights;
};

// Reference to a frozen channel model and where it lives on disk.
struct Channel {
  std::shared_ptr<const RepresentationModel> model;
  std::string path;  // empty for in-memory models
  std::string hash;
};

class AttentionModel : public PairScorer {
 public:
  AttentionModel() = default;
  // Channel vectors are tabulated once here; the channel models stay frozen.
  AttentionModel(std::vector<Channel> channels, LossKind loss, std::string name = {});

  size_t channel_count() const { return channels_.size(); }
  size_t dim() const { return core_.dim(); }
  const std::vector<Channel>& channels() const { return channels_; }
  AttentionCore& core() { return core_; }
  const AttentionCore& core() const { return core_; }

  // Recomputes the transformed user/item tables after the f_r parameters change.
  void refresh();

  nn::Vec<float> channel_transform(size_t r, std::span<const float> vec) const;
  nn::Vec<float> attention_weights(UserIndex u, ItemIndex i) const;
  AttentiveTriple blend(UserIndex u, ItemIndex pos, ItemIndex neg) const;

  LossKind loss_kind() const override { return core_.loss_kind(); }
  size_t user_count() const override { return static_cast<size_t>(user_tables_.at(0).rows()); }
  size_t item_count() const override { return static_cast<size_t>(item_tables_.at(0).rows()); }
  // Candidate item in the positive slot; score of the blended pair.
  double score(UserIndex u, ItemIndex i) const override;
  std::string name() const override { return name_; }

  const nn::Mat<float>& user_table(size_t r) const { return user_tables_.at(r); }
  const nn::Mat<float>& item_table(size_t r) const { return item_tables_.at(r); }

  // Channel references are stored as paths relative to the attention file
  // together with their content hash.
  void save(const std::filesystem::path& path) const;
  static AttentionModel load(const std::filesystem::path& path);

 private:
  std::vector<Channel> channels_;
  AttentionCore core_;
  std::string name_;
  std::vector<nn::Mat<float>> user_tables_, item_tables_;
  std::vector<nn::Mat<float>> user_transformed_, item_transformed_;
};

struct AttentionSources {
  bool global = true;  // T, resampled every epoch
  const LocalTripletSets* local = nullptr;  // T-dagger and T-double-dagger
};

// Optimizes only the f_r tensors on the blended triplet loss; each epoch
// shuffles the pool T + intra + inter and takes |train positives| triplets.
AttentionModel train_attention(const InteractionMatrix& train, std::vector<Channel> channels,
                               const AttentionSources& sources, LossKind loss, const TrainConfig& cfg,
                               const std::string& name = {}, TrainReport* report = nullptr);

extern template class BasicAttentionCore<float>;
extern template class BasicAttentionCore<double>;

}  // namespace attrec
