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

#include "attrec/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "attrec/errors.hpp"
#include "attrec/log.hpp"

namespace attrec {

template <typename S>
BasicAttentionCore<S>::BasicAttentionCore(size_t channels, size_t dim, LossKind loss) : dim_(dim), loss_(loss) {
  if (channels < 2) throw ConfigError("attention needs at least two channels, got " + std::to_string(channels));
  if (dim == 0) throw ConfigError("attention dimension must be positive");
  for (size_t r = 0; r < channels; ++r) {
    params_.emplace_back("attention." + std::to_string(r) + ".weight", std::vector<size_t>{dim, dim});
    params_.emplace_back("attention." + std::to_string(r) + ".bias", std::vector<size_t>{dim});
  }
}

template <typename S>
void BasicAttentionCore<S>::initialize(Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(2 * dim_));
  for (size_t r = 0; r < channels(); ++r) {
    auto& w = weight(r).values;
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<S>(rng.uniform_real(-bound, bound));
    bias(r).values.setZero();
  }
}

template <typename S>
nn::Vec<S> BasicAttentionCore<S>::transform(size_t r, std::span<const S> vec) const {
  if (r >= channels()) throw std::out_of_range("attention channel " + std::to_string(r) + " out of range");
  if (vec.size() != dim_) {
    throw std::invalid_argument("attention transform: got " + std::to_string(vec.size()) + " values, expected " +
                                std::to_string(dim_));
  }
  const auto& w = weight(r).values;
  const auto& b = bias(r).values;
  nn::Vec<S> out(static_cast<Eigen::Index>(dim_));
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    S z = b(0, j);
    for (Eigen::Index k = 0; k < out.size(); ++k) z += vec[static_cast<size_t>(k)] * w(k, j);
    out[j] = z > S(0) ? z : S(0);
  }
  return out;
}

template <typename S>
nn::Vec<S> BasicAttentionCore<S>::weights_from_transformed(std::span<const nn::Vec<S>> user_t,
                                                           std::span<const nn::Vec<S>> item_t) const {
  const auto R = static_cast<Eigen::Index>(channels());
  nn::Vec<S> w(R);
  for (Eigen::Index r = 0; r < R; ++r) w[r] = user_t[static_cast<size_t>(r)].dot(item_t[static_cast<size_t>(r)]);
  const S top = w.maxCoeff();
  w = (w.array() - top).exp();
  w /= w.sum();
  return w;
}

template <typename S>
double BasicAttentionCore<S>::batch_loss(std::span<const nn::Mat<S>> user, std::span<const nn::Mat<S>> pos,
                                         std::span<const nn::Mat<S>> neg, double margin, bool accumulate) {
  const size_t R = channels();
  if (user.size() != R || pos.size() != R || neg.size() != R) {
    throw std::invalid_argument("attention batch: expected one matrix per channel");
  }
  const auto B = user[0].rows();
  if (B == 0) return 0.0;
  const auto d = static_cast<Eigen::Index>(dim_);
  std::vector<nn::Mat<S>> za(R), zc(R), a(R), c(R);
  nn::Mat<S> scores(B, static_cast<Eigen::Index>(R));
  for (size_t r = 0; r < R; ++r) {
    if (user[r].cols() != d || pos[r].cols() != d || neg[r].cols() != d || pos[r].rows() != B || neg[r].rows() != B) {
      throw std::invalid_argument("attention batch: channel " + std::to_string(r) + " has mismatched shape");
    }
    za[r].noalias() = user[r] * weight(r).values;
    za[r].rowwise() += bias(r).values.row(0);
    zc[r].noalias() = pos[r] * weight(r).values;
    zc[r].rowwise() += bias(r).values.row(0);
    a[r] = za[r].cwiseMax(S(0));
    c[r] = zc[r].cwiseMax(S(0));
    scores.col(static_cast<Eigen::Index>(r)) = a[r].cwiseProduct(c[r]).rowwise().sum();
  }
  nn::Mat<S> alpha(B, static_cast<Eigen::Index>(R));
  for (Eigen::Index b = 0; b < B; ++b) {
    const S top = scores.row(b).maxCoeff();
    alpha.row(b) = (scores.row(b).array() - top).exp();
    alpha.row(b) /= alpha.row(b).sum();
  }
  nn::Mat<S> ub = nn::Mat<S>::Zero(B, d), pb = nn::Mat<S>::Zero(B, d), nb = nn::Mat<S>::Zero(B, d);
  for (size_t r = 0; r < R; ++r) {
    const auto col = alpha.col(static_cast<Eigen::Index>(r)).array();
    ub.array() += user[r].array().colwise() * col;
    pb.array() += pos[r].array().colwise() * col;
    nb.array() += neg[r].array().colwise() * col;
  }
  nn::Mat<S> gu(B, d), gp(B, d), gn(B, d);
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    total += loss_ == LossKind::product
                 ? static_cast<double>(product_loss_grad(ub.row(b), pb.row(b), nb.row(b), gu.row(b), gp.row(b),
                                                         gn.row(b)))
                 : static_cast<double>(distance_loss_grad(ub.row(b), pb.row(b), nb.row(b), margin, gu.row(b),
                                                          gp.row(b), gn.row(b)));
  }
  if (accumulate) {
    const S scale = S(1) / static_cast<S>(B);
    // dL/dalpha_r, then through the softmax.
    nn::Mat<S> h(B, static_cast<Eigen::Index>(R));
    for (size_t r = 0; r < R; ++r) {
      h.col(static_cast<Eigen::Index>(r)) = (gu.cwiseProduct(user[r]) + gp.cwiseProduct(pos[r]) +
                                             gn.cwiseProduct(neg[r])).rowwise().sum() * scale;
    }
    const nn::Vec<S> hbar = alpha.cwiseProduct(h).rowwise().sum();
    const nn::Mat<S> ds = alpha.cwiseProduct(h.colwise() - hbar);
    for (size_t r = 0; r < R; ++r) {
      const auto col = ds.col(static_cast<Eigen::Index>(r)).array();
      nn::Mat<S> dza = (c[r].array().colwise() * col).matrix().cwiseProduct(
          za[r].unaryExpr([](S v) { return v > S(0) ? S(1) : S(0); }));
      nn::Mat<S> dzc = (a[r].array().colwise() * col).matrix().cwiseProduct(
          zc[r].unaryExpr([](S v) { return v > S(0) ? S(1) : S(0); }));
      weight(r).grad.noalias() += user[r].transpose() * dza;
      weight(r).grad.noalias() += pos[r].transpose() * dzc;
      bias(r).grad.row(0) += dza.colwise().sum() + dzc.colwise().sum();
    }
  }
  return total / static_cast<double>(B);
}

AttentionModel::AttentionModel(std::vector<Channel> channels, LossKind loss, std::string name)
    : channels_(std::move(channels)), name_(std::move(name)) {
  if (channels_.size() < 2) throw ConfigError("attention needs at least two channels");
  const size_t d = channels_[0].model->dim();
  for (const auto& ch : channels_) {
    if (!ch.model) throw ConfigError("attention channel without a model");
    if (ch.model->dim() != d) throw ConfigError("attention channels disagree on dimension");
    if (ch.model->user_count() != channels_[0].model->user_count() ||
        ch.model->item_count() != channels_[0].model->item_count()) {
      throw ConfigError("attention channels disagree on vocabulary sizes");
    }
    user_tables_.push_back(ch.model->embed_all_users());
    item_tables_.push_back(ch.model->embed_all_items());
  }
  core_ = AttentionCore(channels_.size(), d, loss);
  if (name_.empty()) {
    for (const auto& ch : channels_) name_ += ch.model->tag();
    name_ += loss == LossKind::distance ? "-AD" : "-AP";
  }
  refresh();
}

void AttentionModel::refresh() {
  user_transformed_.assign(channels_.size(), {});
  item_transformed_.assign(channels_.size(), {});
  for (size_t r = 0; r < channels_.size(); ++r) {
    auto apply = [&](const nn::Mat<float>& table, nn::Mat<float>& out) {
      out.resize(table.rows(), table.cols());
      for (Eigen::Index k = 0; k < table.rows(); ++k) {
        out.row(k) = core_.transform(r, std::span<const float>(table.row(k).data(), dim())).transpose();
      }
    };
    apply(user_tables_[r], user_transformed_[r]);
    apply(item_tables_[r], item_transformed_[r]);
  }
}

nn::Vec<float> AttentionModel::channel_transform(size_t r, std::span<const float> vec) const {
  return core_.transform(r, vec);
}

nn::Vec<float> AttentionModel::attention_weights(UserIndex u, ItemIndex i) const {
  const size_t R = channels_.size();
  nn::Vec<double> w(static_cast<Eigen::Index>(R));
  for (size_t r = 0; r < R; ++r) {
    const auto ur = user_transformed_[r].row(u);
    const auto ir = item_transformed_[r].row(i);
    double s = 0.0;
    for (Eigen::Index k = 0; k < ur.size(); ++k) s += static_cast<double>(ur[k]) * static_cast<double>(ir[k]);
    w[static_cast<Eigen::Index>(r)] = s;
  }
  const double top = w.maxCoeff();
  w = (w.array() - top).exp();
  w /= w.sum();
  return w.cast<float>();
}

AttentiveTriple AttentionModel::blend(UserIndex u, ItemIndex pos, ItemIndex neg) const {
  AttentiveTriple t;
  t.weights = attention_weights(u, pos);
  const auto d = static_cast<Eigen::Index>(dim());
  t.user_blend = nn::Vec<float>::Zero(d);
  t.pos_blend = nn::Vec<float>::Zero(d);
  t.neg_blend = nn::Vec<float>::Zero(d);
  for (size_t r = 0; r < channels_.size(); ++r) {
    const float a = t.weights[static_cast<Eigen::Index>(r)];
    t.user_blend += a * user_tables_[r].row(u).transpose();
    t.pos_blend += a * item_tables_[r].row(pos).transpose();
    t.neg_blend += a * item_tables_[r].row(neg).transpose();
  }
  return t;
}

double AttentionModel::score(UserIndex u, ItemIndex i) const {
  const auto w = attention_weights(u, i);
  const auto d = static_cast<Eigen::Index>(dim());
  nn::Vec<float> ub = nn::Vec<float>::Zero(d), ib = nn::Vec<float>::Zero(d);
  for (size_t r = 0; r < channels_.size(); ++r) {
    const float a = w[static_cast<Eigen::Index>(r)];
    ub += a * user_tables_[r].row(u).transpose();
    ib += a * item_tables_[r].row(i).transpose();
  }
  return pair_score(loss_kind(), ub, ib);
}

void AttentionModel::save(const std::filesystem::path& path) const {
  std::map<std::string, std::string> meta;
  meta["kind"] = "attention";
  meta["name"] = name_;
  meta["loss_kind"] = to_string(loss_kind());
  meta["dim"] = std::to_string(dim());
  meta["channels"] = std::to_string(channels_.size());
  const auto base = path.parent_path();
  for (size_t r = 0; r < channels_.size(); ++r) {
    const auto& ch = channels_[r];
    if (ch.path.empty()) throw DataError("attention channel " + std::to_string(r) + " has no file to reference");
    const auto rel = std::filesystem::relative(std::filesystem::absolute(ch.path), std::filesystem::absolute(base));
    meta["channel." + std::to_string(r) + ".path"] = rel.generic_string();
    meta["channel." + std::to_string(r) + ".hash"] = ch.hash.empty() ? nn::content_hash(ch.path) : ch.hash;
    meta["channel." + std::to_string(r) + ".tag"] = ch.model->tag();
  }
  std::vector<const nn::ParamTensor*> tensors;
  for (const auto& p : core_.params()) tensors.push_back(&p);
  nn::write_param_file(path, meta, std::span(tensors));
}

AttentionModel AttentionModel::load(const std::filesystem::path& path) {
  auto pf = nn::read_param_file(path);
  auto get = [&](const std::string& key) {
    auto it = pf.meta.find(key);
    if (it == pf.meta.end()) throw DataError(path.string() + ": missing metadata '" + key + "'");
    return it->second;
  };
  if (get("kind") != "attention") throw DataError(path.string() + ": not an attention model");
  const size_t R = std::stoul(get("channels"));
  std::vector<Channel> channels;
  for (size_t r = 0; r < R; ++r) {
    const auto rel = get("channel." + std::to_string(r) + ".path");
    const auto expected = get("channel." + std::to_string(r) + ".hash");
    const auto file = path.parent_path() / rel;
    const auto actual = nn::content_hash(file);
    if (actual != expected) {
      throw DataError(path.string() + ": channel " + rel + " changed (hash " + actual + ", expected " + expected + ")");
    }
    channels.push_back({std::make_shared<const RepresentationModel>(load_model(file)), file.string(), actual});
  }
  AttentionModel model(std::move(channels), parse_loss_kind(get("loss_kind")), get("name"));
  nn::assign_params(model.core_.params(), pf.tensors);
  model.refresh();
  return model;
}

namespace {

void gather(const AttentionModel& model, std::span<const Triplet> batch, std::vector<nn::Mat<float>>& u,
            std::vector<nn::Mat<float>>& p, std::vector<nn::Mat<float>>& n) {
  const size_t R = model.channel_count();
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto d = static_cast<Eigen::Index>(model.dim());
  u.resize(R);
  p.resize(R);
  n.resize(R);
  for (size_t r = 0; r < R; ++r) {
    u[r].resize(B, d);
    p[r].resize(B, d);
    n[r].resize(B, d);
    const auto& ut = model.user_table(r);
    const auto& it = model.item_table(r);
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto& t = batch[static_cast<size_t>(b)];
      u[r].row(b) = ut.row(t.user);
      p[r].row(b) = it.row(t.pos_item);
      n[r].row(b) = it.row(t.neg_item);
    }
  }
}

double mean_attention_loss(AttentionModel& model, std::span<const Triplet> triplets, double margin) {
  if (triplets.empty()) return 0.0;
  std::vector<nn::Mat<float>> u, p, n;
  double total = 0.0;
  constexpr size_t kChunk = 4096;
  for (size_t start = 0; start < triplets.size(); start += kChunk) {
    const auto chunk = triplets.subspan(start, std::min(kChunk, triplets.size() - start));
    gather(model, chunk, u, p, n);
    total += model.core().batch_loss(u, p, n, margin, false) * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(triplets.size());
}

}  // namespace

AttentionModel train_attention(const InteractionMatrix& train, std::vector<Channel> channels,
                               const AttentionSources& sources, LossKind loss, const TrainConfig& cfg,
                               const std::string& name, TrainReport* report) {
  cfg.validate();
  for (const auto& ch : channels) {
    if (!ch.model) throw ConfigError("attention channel without a model");
    if (ch.model->user_count() != train.user_count() || ch.model->item_count() != train.item_count()) {
      throw ConfigError("attention channel " + ch.model->tag() + " was trained on different vocabularies");
    }
  }
  AttentionModel model(std::move(channels), loss, name);
  Rng init_rng(derive_seed(cfg.seed, "init/attention"));
  model.core().initialize(init_rng);

  auto positives = train.positives();
  Rng split_rng(derive_seed(cfg.seed, "validation"));
  split_rng.shuffle(std::span(positives));
  const auto frac = cfg.validation_fraction;
  const auto n_val = static_cast<size_t>(frac * static_cast<double>(positives.size()));
  std::vector<std::pair<UserIndex, ItemIndex>> val_pos(positives.begin(),
                                                       positives.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::pair<UserIndex, ItemIndex>> fit_pos(positives.begin() + static_cast<std::ptrdiff_t>(n_val),
                                                       positives.end());
  std::sort(val_pos.begin(), val_pos.end());
  std::sort(fit_pos.begin(), fit_pos.end());
  std::vector<Triplet> validation;
  if (sources.global) validation = sample_triplets_for(train, val_pos, 1, split_rng);
  std::vector<Triplet> local_fit;
  if (sources.local) {
    for (const auto* set : {&sources.local->intra, &sources.local->inter}) {
      std::vector<Triplet> all = *set;
      split_rng.shuffle(std::span(all));
      const auto k = static_cast<size_t>(frac * static_cast<double>(all.size()));
      validation.insert(validation.end(), all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
      local_fit.insert(local_fit.end(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
    }
  }
  if (!sources.global && local_fit.empty()) throw DataError("train_attention: no triplet sources");

  nn::Adam adam(nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<nn::ParamTensor*> params;
  for (auto& p : model.core().params()) params.push_back(&p);
  auto snapshot = [&] {
    std::vector<nn::Mat<float>> v;
    for (const auto* p : params) v.push_back(p->values);
    return v;
  };
  auto best = snapshot();
  double best_val = validation.empty() ? std::numeric_limits<double>::infinity()
                                       : mean_attention_loss(model, validation, cfg.margin);
  TrainReport rep;
  size_t since_best = 0;
  const size_t per_epoch = std::max<size_t>(train.positive_count(), 1);
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  std::vector<nn::Mat<float>> u, p, n;
  for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<Triplet> pool;
    if (sources.global) {
      Rng rng(derive_seed(cfg.seed, epoch));
      pool = sample_triplets_for(train, fit_pos, 1, rng);
    }
    pool.insert(pool.end(), local_fit.begin(), local_fit.end());
    shuffle_rng.shuffle(std::span(pool));
    if (pool.size() > per_epoch) pool.resize(per_epoch);
    double sum = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < pool.size(); start += cfg.batch_size) {
      const auto batch = std::span<const Triplet>(pool).subspan(start, std::min(cfg.batch_size, pool.size() - start));
      gather(model, batch, u, p, n);
      const double l = model.core().batch_loss(u, p, n, cfg.margin, true);
      if (!std::isfinite(l)) {
        throw NumericError(model.name() + ": non-finite attention loss at epoch " + std::to_string(epoch));
      }
      adam.step(std::span(params));
      sum += l;
      ++batches;
    }
    rep.train_loss.push_back(sum / static_cast<double>(std::max<size_t>(batches, 1)));
    rep.epochs_run = epoch;
    if (validation.empty()) {
      best = snapshot();
      rep.best_epoch = epoch;
      rep.val_loss.push_back(0.0);
      continue;
    }
    const double val = mean_attention_loss(model, validation, cfg.margin);
    if (!std::isfinite(val)) throw NumericError(model.name() + ": non-finite validation loss");
    rep.val_loss.push_back(val);
    log::debug(model.name(), " epoch ", epoch, " train ", rep.train_loss.back(), " val ", val);
    if (val < best_val) {
      best_val = val;
      best = snapshot();
      rep.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (size_t k = 0; k < params.size(); ++k) params[k]->values = best[k];
  model.refresh();
  rep.best_val_loss = best_val;
  log::info(model.name(), ": ", rep.epochs_run, " epochs, best epoch ", rep.best_epoch, ", val loss ", best_val);
  if (report) *report = std::move(rep);
  return model;
}

template class BasicAttentionCore<float>;
template class BasicAttentionCore<double>;

}  // namespace attrec
