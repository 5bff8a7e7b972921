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

#include "attrec/towers.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "attrec/errors.hpp"
#include "attrec/log.hpp"

namespace attrec {

std::string to_string(LossKind k) { return k == LossKind::product ? "product" : "distance"; }
std::string to_string(SourceKind k) { return k == SourceKind::global ? "global" : "local"; }

LossKind parse_loss_kind(const std::string& text) {
  if (text == "product") return LossKind::product;
  if (text == "distance") return LossKind::distance;
  throw ConfigError("unknown loss kind '" + text + "'");
}

SourceKind parse_source_kind(const std::string& text) {
  if (text == "global") return SourceKind::global;
  if (text == "local") return SourceKind::local;
  throw ConfigError("unknown source kind '" + text + "'");
}

namespace {

std::string join_sizes(const std::vector<size_t>& v) {
  std::string out;
  for (size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + std::to_string(v[k]);
  return out;
}

std::vector<size_t> parse_sizes(const std::string& s) {
  std::vector<size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoul(tok));
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(margin > 0.0)) throw ConfigError("margin must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (dim == 0 || embed_dim == 0) throw ConfigError("dimensions must be positive");
  if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
    throw ConfigError("validation_fraction must be in [0, 1)");
  }
  if (hard_draws < 1) throw ConfigError("hard_draws must be >= 1");
}

std::map<std::string, std::string> TrainConfig::describe() const {
  return {
      {"batch_size", std::to_string(batch_size)},
      {"max_epochs", std::to_string(max_epochs)},
      {"margin", format_double(margin)},
      {"learning_rate", format_double(learning_rate)},
      {"patience", std::to_string(patience)},
      {"l2_reg", format_double(l2_reg)},
      {"validation_fraction", format_double(validation_fraction)},
      {"hard_draws", std::to_string(hard_draws)},
      {"dim", std::to_string(dim)},
      {"embed_dim", std::to_string(embed_dim)},
      {"hidden_dims", join_sizes(hidden_dims)},
      {"activation", activation == nn::Activation::relu ? "relu" : "tanh"},
      {"seed", std::to_string(seed)},
  };
}

template <typename S>
BasicRepresentationModel<S>::BasicRepresentationModel(size_t user_count, size_t item_count, const TrainConfig& cfg,
                                                      LossKind loss, SourceKind source)
    : loss_(loss), source_(source) {
  nn::TowerSpec spec;
  spec.embed_dim = cfg.embed_dim;
  spec.hidden_dims = cfg.hidden_dims;
  spec.out_dim = cfg.dim;
  spec.activation = cfg.activation;
  spec.vocab_size = user_count;
  user_tower_ = nn::BasicTower<S>(spec, "user");
  spec.vocab_size = item_count;
  item_tower_ = nn::BasicTower<S>(spec, "item");
}

template <typename S>
void BasicRepresentationModel<S>::initialize(uint64_t seed) {
  Rng ur(derive_seed(seed, "init/user"));
  Rng ir(derive_seed(seed, "init/item"));
  user_tower_.initialize(ur);
  item_tower_.initialize(ir);
}

template <typename S>
std::string BasicRepresentationModel<S>::tag() const {
  std::string t;
  t += source_ == SourceKind::global ? 'G' : 'L';
  t += loss_ == LossKind::distance ? 'D' : 'P';
  return t;
}

template <typename S>
std::vector<nn::BasicParamTensor<S>*> BasicRepresentationModel<S>::params() {
  std::vector<nn::BasicParamTensor<S>*> out;
  for (auto& p : user_tower_.params()) out.push_back(&p);
  for (auto& p : item_tower_.params()) out.push_back(&p);
  return out;
}

template <typename S>
std::vector<const nn::BasicParamTensor<S>*> BasicRepresentationModel<S>::params() const {
  std::vector<const nn::BasicParamTensor<S>*> out;
  for (const auto& p : user_tower_.params()) out.push_back(&p);
  for (const auto& p : item_tower_.params()) out.push_back(&p);
  return out;
}

namespace {

template <typename S>
nn::Mat<S> embed_all(const nn::BasicTower<S>& tower) {
  const size_t n = tower.spec().vocab_size;
  nn::Mat<S> out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(tower.spec().out_dim));
  typename nn::BasicTower<S>::Cache cache;
  constexpr size_t kChunk = 1024;
  std::vector<int32_t> ids;
  for (size_t start = 0; start < n; start += kChunk) {
    const size_t end = std::min(n, start + kChunk);
    ids.resize(end - start);
    for (size_t k = start; k < end; ++k) ids[k - start] = static_cast<int32_t>(k);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        tower.forward(ids, cache);
  }
  return out;
}

}  // namespace

template <typename S>
nn::Mat<S> BasicRepresentationModel<S>::embed_all_users() const {
  return embed_all(user_tower_);
}

template <typename S>
nn::Mat<S> BasicRepresentationModel<S>::embed_all_items() const {
  return embed_all(item_tower_);
}

template <typename S>
double triplet_batch_loss(BasicRepresentationModel<S>& model, std::span<const Triplet> batch, double margin,
                          double l2_reg, bool accumulate) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) return 0.0;
  std::vector<int32_t> uids(batch.size());
  std::vector<int32_t> iids(2 * batch.size());
  for (size_t b = 0; b < batch.size(); ++b) {
    uids[b] = batch[b].user;
    iids[b] = batch[b].pos_item;
    iids[batch.size() + b] = batch[b].neg_item;
  }
  typename nn::BasicTower<S>::Cache uc, ic;
  const nn::Mat<S>& U = model.user_tower().forward(uids, uc);
  const nn::Mat<S>& I = model.item_tower().forward(iids, ic);
  nn::Mat<S> gU(n, U.cols());
  nn::Mat<S> gI(2 * n, I.cols());
  const bool product = model.loss_kind() == LossKind::product;
  const S reg = static_cast<S>(product ? l2_reg : 0.0);
  double total = 0.0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto u = U.row(b);
    const auto ip = I.row(b);
    const auto in = I.row(n + b);
    double l = product ? static_cast<double>(product_loss_grad(u, ip, in, gU.row(b), gI.row(b), gI.row(n + b)))
                       : static_cast<double>(distance_loss_grad(u, ip, in, margin, gU.row(b), gI.row(b),
                                                                gI.row(n + b)));
    if (reg != S(0)) {
      l += static_cast<double>(reg * (u.squaredNorm() + ip.squaredNorm() + in.squaredNorm()));
      gU.row(b) += S(2) * reg * u;
      gI.row(b) += S(2) * reg * ip;
      gI.row(n + b) += S(2) * reg * in;
    }
    total += l;
  }
  if (accumulate) {
    const S scale = S(1) / static_cast<S>(n);
    gU *= scale;
    gI *= scale;
    model.user_tower().backward(uc, gU);
    model.item_tower().backward(ic, gI);
  }
  return total / static_cast<double>(n);
}

template double triplet_batch_loss<float>(BasicRepresentationModel<float>&, std::span<const Triplet>, double,
                                          double, bool);
template double triplet_batch_loss<double>(BasicRepresentationModel<double>&, std::span<const Triplet>, double,
                                           double, bool);

double mean_triplet_loss(const RepresentationModel& model, std::span<const Triplet> triplets, double margin) {
  if (triplets.empty()) return 0.0;
  const auto users = model.embed_all_users();
  const auto items = model.embed_all_items();
  double total = 0.0;
  for (const auto& t : triplets) {
    const auto u = users.row(t.user);
    const auto ip = items.row(t.pos_item);
    const auto in = items.row(t.neg_item);
    total += model.loss_kind() == LossKind::product ? static_cast<double>(product_loss(u, ip, in))
                                                    : static_cast<double>(distance_loss(u, ip, in, margin));
  }
  return total / static_cast<double>(triplets.size());
}

double triplet_accuracy(const RepresentationModel& model, std::span<const Triplet> triplets) {
  if (triplets.empty()) return 0.0;
  const auto users = model.embed_all_users();
  const auto items = model.embed_all_items();
  size_t good = 0;
  for (const auto& t : triplets) {
    const auto u = users.row(t.user);
    const auto ip = items.row(t.pos_item);
    const auto in = items.row(t.neg_item);
    const bool ok = model.loss_kind() == LossKind::product ? u.dot(ip) > u.dot(in)
                                                           : (u - ip).squaredNorm() < (u - in).squaredNorm();
    good += ok ? 1 : 0;
  }
  return static_cast<double>(good) / static_cast<double>(triplets.size());
}

RepresentationModel train_representation(size_t user_count, size_t item_count, LossKind loss, SourceKind source,
                                         const TrainConfig& cfg, const EpochSource& source_fn,
                                         std::span<const Triplet> validation, TrainReport* report) {
  cfg.validate();
  RepresentationModel model(user_count, item_count, cfg, loss, source);
  model.initialize(cfg.seed);
  nn::Adam adam(nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  const auto params = model.params();

  TrainReport rep;
  auto snapshot = [&] {
    std::vector<nn::Mat<float>> v;
    for (const auto* p : params) v.push_back(p->values);
    return v;
  };
  std::vector<nn::Mat<float>> best = snapshot();
  double best_val = validation.empty() ? std::numeric_limits<double>::infinity()
                                       : mean_triplet_loss(model, validation, cfg.margin);
  size_t since_best = 0;
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));

  for (size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto triplets = source_fn(epoch, model);
    if (triplets.empty()) throw DataError(model.tag() + ": epoch " + std::to_string(epoch) + " has no triplets");
    shuffle_rng.shuffle(std::span(triplets));
    double sum = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < triplets.size(); start += cfg.batch_size) {
      const size_t len = std::min(cfg.batch_size, triplets.size() - start);
      const double l =
          triplet_batch_loss(model, std::span<const Triplet>(triplets).subspan(start, len), cfg.margin, cfg.l2_reg,
                             true);
      if (!std::isfinite(l)) {
        throw NumericError(model.tag() + ": non-finite training loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches) + " (lr=" + std::to_string(cfg.learning_rate) + ")");
      }
      adam.step(std::span(params));
      sum += l;
      ++batches;
    }
    rep.train_loss.push_back(sum / static_cast<double>(batches));
    rep.epochs_run = epoch;
    if (validation.empty()) {
      best = snapshot();
      rep.best_epoch = epoch;
      rep.val_loss.push_back(0.0);
      continue;
    }
    const double val = mean_triplet_loss(model, validation, cfg.margin);
    if (!std::isfinite(val)) {
      throw NumericError(model.tag() + ": non-finite validation loss at epoch " + std::to_string(epoch));
    }
    rep.val_loss.push_back(val);
    log::debug(model.tag(), " epoch ", epoch, " train ", rep.train_loss.back(), " val ", val);
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
  rep.best_val_loss = best_val;
  log::info(model.tag(), " (", to_string(source), "): ", rep.epochs_run, " epochs, best epoch ", rep.best_epoch,
            ", val loss ", best_val);
  if (report) *report = std::move(rep);
  return model;
}

namespace {

// Accepts a triplet when its distance loss under frozen tables is positive.
class SnapshotHardness : public HardnessFilter {
 public:
  SnapshotHardness(const nn::Mat<float>& users, const nn::Mat<float>& items, double margin, int draws)
      : users_(users), items_(items), margin_(margin) {
    max_draws = draws;
  }
  bool accept(const Triplet& t) const override {
    return distance_loss(users_.row(t.user), items_.row(t.pos_item), items_.row(t.neg_item), margin_) > 0.0f;
  }

 private:
  const nn::Mat<float>& users_;
  const nn::Mat<float>& items_;
  double margin_;
};

}  // namespace

RepresentationModel train_global(const InteractionMatrix& train, LossKind loss, const TrainConfig& cfg,
                                 TrainReport* report) {
  if (train.positive_count() == 0) throw DataError("train_global: empty interaction matrix");
  auto positives = train.positives();
  Rng split_rng(derive_seed(cfg.seed, "validation"));
  split_rng.shuffle(std::span(positives));
  const auto n_val = static_cast<size_t>(cfg.validation_fraction * static_cast<double>(positives.size()));
  std::vector<std::pair<UserIndex, ItemIndex>> val_pos(positives.begin(),
                                                       positives.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::pair<UserIndex, ItemIndex>> fit_pos(positives.begin() + static_cast<std::ptrdiff_t>(n_val),
                                                       positives.end());
  std::sort(val_pos.begin(), val_pos.end());
  std::sort(fit_pos.begin(), fit_pos.end());
  const auto validation = sample_triplets_for(train, val_pos, 1, split_rng);

  size_t dropped = 0;
  EpochSource source = [&](size_t epoch, const RepresentationModel& model) {
    Rng rng(derive_seed(cfg.seed, epoch));
    if (loss == LossKind::product) return sample_triplets_for(train, fit_pos, 1, rng);
    const auto users = model.embed_all_users();
    const auto items = model.embed_all_items();
    SnapshotHardness filter(users, items, cfg.margin, cfg.hard_draws);
    TripletSampleStats stats;
    auto triplets = sample_triplets_for(train, fit_pos, 1, rng, &filter, &stats);
    if (stats.unfiltered > 0) {
      // Zero-loss triplets contribute no gradient; keep them out of the steps.
      std::erase_if(triplets, [&](const Triplet& t) { return !filter.accept(t); });
      dropped += stats.unfiltered;
    }
    if (triplets.empty()) {
      // Every triplet is already satisfied; fall back to the unfiltered draw.
      Rng again(derive_seed(cfg.seed, epoch));
      return sample_triplets_for(train, fit_pos, 1, again);
    }
    return triplets;
  };
  TrainReport rep;
  auto model = train_representation(train.user_count(), train.item_count(), loss, SourceKind::global, cfg, source,
                                    validation, &rep);
  rep.dropped_easy = dropped;
  if (report) *report = std::move(rep);
  return model;
}

void save_model(const std::filesystem::path& path, const RepresentationModel& model, const TrainConfig& cfg) {
  auto meta = cfg.describe();
  meta["kind"] = "representation";
  meta["loss_kind"] = to_string(model.loss_kind());
  meta["source_kind"] = to_string(model.source_kind());
  meta["tag"] = model.tag();
  meta["dim"] = std::to_string(model.dim());
  meta["user_count"] = std::to_string(model.user_count());
  meta["item_count"] = std::to_string(model.item_count());
  const auto params = model.params();
  nn::write_param_file(path, meta, std::span(params));
}

RepresentationModel load_model(const std::filesystem::path& path, TrainConfig* cfg_out) {
  auto pf = nn::read_param_file(path);
  auto get = [&](const std::string& key) {
    auto it = pf.meta.find(key);
    if (it == pf.meta.end()) throw DataError(path.string() + ": missing metadata '" + key + "'");
    return it->second;
  };
  if (get("kind") != "representation") throw DataError(path.string() + ": not a representation model");
  TrainConfig cfg;
  cfg.batch_size = std::stoul(get("batch_size"));
  cfg.max_epochs = std::stoul(get("max_epochs"));
  cfg.margin = std::stod(get("margin"));
  cfg.learning_rate = std::stod(get("learning_rate"));
  cfg.patience = std::stoul(get("patience"));
  cfg.l2_reg = std::stod(get("l2_reg"));
  cfg.validation_fraction = std::stod(get("validation_fraction"));
  cfg.hard_draws = std::stoi(get("hard_draws"));
  cfg.dim = std::stoul(get("dim"));
  cfg.embed_dim = std::stoul(get("embed_dim"));
  cfg.hidden_dims = parse_sizes(get("hidden_dims"));
  cfg.activation = get("activation") == "tanh" ? nn::Activation::tanh : nn::Activation::relu;
  cfg.seed = std::stoull(get("seed"));
  RepresentationModel model(std::stoul(get("user_count")), std::stoul(get("item_count")), cfg,
                            parse_loss_kind(get("loss_kind")), parse_source_kind(get("source_kind")));
  std::vector<nn::ParamTensor> flat;
  for (const auto* p : model.params()) flat.push_back(*p);
  nn::assign_params(flat, pf.tensors);
  auto dst = model.params();
  for (size_t k = 0; k < dst.size(); ++k) dst[k]->values = flat[k].values;
  if (cfg_out) *cfg_out = cfg;
  return model;
}

template class BasicRepresentationModel<float>;
template class BasicRepresentationModel<double>;

}  // namespace attrec
