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

#include "attrec/clusterindex.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "attrec/errors.hpp"
#include "attrec/log.hpp"

namespace attrec {

namespace {

template <typename A, typename B>
double squared_distance(const A& a, const B& b) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double diff = static_cast<double>(a[k]) - static_cast<double>(b[k]);
    s += diff * diff;
  }
  return s;
}

// Nearest centroid for every point, ties to the lower centroid index.
template <typename C>
void assign_points(const nn::Mat<double>& points, const C& centroids, std::vector<int32_t>& assign,
                   std::vector<double>& dist) {
  const auto n = points.rows();
  assign.resize(static_cast<size_t>(n));
  dist.resize(static_cast<size_t>(n));
  for (Eigen::Index p = 0; p < n; ++p) {
    double best = std::numeric_limits<double>::infinity();
    int32_t arg = 0;
    for (Eigen::Index j = 0; j < centroids.rows(); ++j) {
      const double d = squared_distance(points.row(p), centroids.row(j));
      if (d < best) {
        best = d;
        arg = static_cast<int32_t>(j);
      }
    }
    assign[static_cast<size_t>(p)] = arg;
    dist[static_cast<size_t>(p)] = best;
  }
}

// Moves the farthest points of multi-member clusters into empty clusters.
size_t repair_empty(const nn::Mat<double>& points, nn::Mat<double>& centroids, std::vector<int32_t>& assign,
                    std::vector<double>& dist) {
  std::vector<size_t> counts(static_cast<size_t>(centroids.rows()), 0);
  for (auto a : assign) ++counts[static_cast<size_t>(a)];
  size_t repaired = 0;
  for (size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] != 0) continue;
    size_t far = assign.size();
    for (size_t p = 0; p < assign.size(); ++p) {
      if (counts[static_cast<size_t>(assign[p])] < 2) continue;
      if (far == assign.size() || dist[p] > dist[far]) far = p;
    }
    if (far == assign.size()) break;  // cannot happen while N >= M
    --counts[static_cast<size_t>(assign[far])];
    assign[far] = static_cast<int32_t>(j);
    dist[far] = 0.0;
    counts[j] = 1;
    centroids.row(static_cast<Eigen::Index>(j)) = points.row(static_cast<Eigen::Index>(far));
    ++repaired;
  }
  return repaired;
}

}  // namespace

KMeansResult kmeans(const PointMatrix& points_f, size_t clusters, uint64_t seed, const KMeansOptions& opt) {
  const auto n = static_cast<size_t>(points_f.rows());
  if (clusters == 0) throw std::invalid_argument("kmeans: cluster count must be >= 1");
  if (clusters > n) {
    throw std::invalid_argument("kmeans: " + std::to_string(clusters) + " clusters requested for " +
                                std::to_string(n) + " points");
  }
  const nn::Mat<double> points = points_f.cast<double>();
  const auto d = points.cols();
  const auto m = static_cast<Eigen::Index>(clusters);
  Rng rng(seed);

  // k-means++ seeding.
  KMeansResult res;
  res.centroids.resize(m, d);
  std::vector<char> chosen(n, 0);
  size_t first = rng.uniform_index(n);
  chosen[first] = 1;
  res.centroids.row(0) = points.row(static_cast<Eigen::Index>(first));
  std::vector<double> d2(n);
  for (size_t p = 0; p < n; ++p) d2[p] = squared_distance(points.row(static_cast<Eigen::Index>(p)), res.centroids.row(0));
  for (Eigen::Index j = 1; j < m; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    size_t pick = n;
    if (total > 0.0) {
      double r = rng.uniform_real() * total;
      for (size_t p = 0; p < n; ++p) {
        if (d2[p] <= 0.0) continue;
        pick = p;
        r -= d2[p];
        if (r < 0.0) break;
      }
    } else {
      // Remaining points coincide with chosen centroids; take any unchosen one.
      size_t k = rng.uniform_index(n - static_cast<size_t>(j));
      for (size_t p = 0; p < n; ++p) {
        if (chosen[p]) continue;
        if (k-- == 0) {
          pick = p;
          break;
        }
      }
    }
    chosen[pick] = 1;
    res.centroids.row(j) = points.row(static_cast<Eigen::Index>(pick));
    for (size_t p = 0; p < n; ++p) {
      d2[p] = std::min(d2[p], squared_distance(points.row(static_cast<Eigen::Index>(p)), res.centroids.row(j)));
    }
  }

  std::vector<double> dist;
  for (size_t it = 0; it < opt.max_iterations; ++it) {
    assign_points(points, res.centroids, res.assignments, dist);
    res.reseeded += repair_empty(points, res.centroids, res.assignments, dist);
    res.objective.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));

    nn::Mat<double> updated = nn::Mat<double>::Zero(m, d);
    std::vector<size_t> counts(clusters, 0);
    for (size_t p = 0; p < n; ++p) {
      updated.row(res.assignments[p]) += points.row(static_cast<Eigen::Index>(p));
      ++counts[static_cast<size_t>(res.assignments[p])];
    }
    for (Eigen::Index j = 0; j < m; ++j) updated.row(j) /= static_cast<double>(counts[static_cast<size_t>(j)]);
    const double scale = std::max(res.centroids.norm(), std::numeric_limits<double>::min());
    const double moved = (updated - res.centroids).norm() / scale;
    res.centroids = std::move(updated);
    res.iterations = it + 1;
    if (moved < opt.tolerance) break;
  }
  assign_points(points, res.centroids, res.assignments, dist);
  res.reseeded += repair_empty(points, res.centroids, res.assignments, dist);
  res.objective.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));
  for (size_t k = 1; k < res.objective.size(); ++k) {
    if (res.objective[k] > res.objective[k - 1] * (1.0 + 1e-12)) {
      log::warn("kmeans objective increased at step ", k, ": ", res.objective[k - 1], " -> ", res.objective[k]);
    }
  }
  return res;
}

ClusterIndex::ClusterIndex(nn::Mat<float> centroids, std::vector<std::vector<ItemIndex>> lists, std::string space_tag,
                           uint64_t seed)
    : centroids_(std::move(centroids)), lists_(std::move(lists)), space_tag_(std::move(space_tag)), seed_(seed) {
  if (static_cast<size_t>(centroids_.rows()) != lists_.size()) {
    throw DataError("cluster index: " + std::to_string(centroids_.rows()) + " centroids but " +
                    std::to_string(lists_.size()) + " inverted lists");
  }
  size_t items = 0;
  for (const auto& l : lists_) items += l.size();
  cluster_of_.assign(items, -1);
  for (size_t j = 0; j < lists_.size(); ++j) {
    for (auto i : lists_[j]) {
      if (i < 0 || static_cast<size_t>(i) >= items || cluster_of_[static_cast<size_t>(i)] != -1) {
        throw DataError("cluster index: inverted lists do not partition the items");
      }
      cluster_of_[static_cast<size_t>(i)] = static_cast<int32_t>(j);
    }
  }
}

std::vector<int32_t> ClusterIndex::top_k_clusters(std::span<const float> query, size_t k) const {
  if (k < 1 || k > cluster_count()) {
    throw std::invalid_argument("top_k_clusters: K=" + std::to_string(k) + " outside [1, " +
                                std::to_string(cluster_count()) + "]");
  }
  if (query.size() != dim()) throw std::invalid_argument("top_k_clusters: query dimension mismatch");
  std::vector<std::pair<double, int32_t>> order(cluster_count());
  for (size_t j = 0; j < cluster_count(); ++j) {
    double s = 0.0;
    for (size_t c = 0; c < dim(); ++c) {
      const double diff = static_cast<double>(query[c]) -
                          static_cast<double>(centroids_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
      s += diff * diff;
    }
    order[j] = {s, static_cast<int32_t>(j)};
  }
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::vector<int32_t> out(k);
  for (size_t j = 0; j < k; ++j) out[j] = order[j].second;
  return out;
}

std::vector<ItemIndex> ClusterIndex::candidates(std::span<const int32_t> clusters) const {
  std::vector<ItemIndex> out;
  for (auto c : clusters) {
    const auto& l = lists_.at(static_cast<size_t>(c));
    out.insert(out.end(), l.begin(), l.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void ClusterIndex::save(const std::filesystem::path& path) const {
  static_assert(std::endian::native == std::endian::little, "index writer assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "attrec-index v1\n"
      << "clusters " << cluster_count() << "\n"
      << "dim " << dim() << "\n"
      << "items " << item_count() << "\n"
      << "space_tag " << (space_tag_.empty() ? "-" : space_tag_) << "\n"
      << "seed " << seed_ << "\n"
      << "data\n";
  out.write(reinterpret_cast<const char*>(centroids_.data()),
            static_cast<std::streamsize>(centroids_.size() * sizeof(float)));
  for (const auto& l : lists_) {
    const auto len = static_cast<uint32_t>(l.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(reinterpret_cast<const char*>(l.data()), static_cast<std::streamsize>(l.size() * sizeof(ItemIndex)));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

ClusterIndex ClusterIndex::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "attrec-index v1") throw DataError(path.string() + ": not an index file");
  size_t clusters = 0, d = 0, items = 0;
  std::string tag = "-";
  uint64_t seed = 0;
  while (std::getline(in, line) && line != "data") {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "clusters") ls >> clusters;
    else if (key == "dim") ls >> d;
    else if (key == "items") ls >> items;
    else if (key == "space_tag") ls >> tag;
    else if (key == "seed") ls >> seed;
    else throw DataError(path.string() + ": unexpected header line '" + line + "'");
  }
  if (clusters == 0 || d == 0) throw DataError(path.string() + ": incomplete header");
  nn::Mat<float> centroids(static_cast<Eigen::Index>(clusters), static_cast<Eigen::Index>(d));
  in.read(reinterpret_cast<char*>(centroids.data()), static_cast<std::streamsize>(centroids.size() * sizeof(float)));
  std::vector<std::vector<ItemIndex>> lists(clusters);
  for (auto& l : lists) {
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > items) throw DataError(path.string() + ": truncated inverted lists");
    l.resize(len);
    in.read(reinterpret_cast<char*>(l.data()), static_cast<std::streamsize>(len * sizeof(ItemIndex)));
  }
  if (!in) throw DataError(path.string() + ": truncated inverted lists");
  return ClusterIndex(std::move(centroids), std::move(lists), tag == "-" ? std::string{} : tag, seed);
}

ClusterIndex build_index(const RepresentationModel& model, size_t clusters, uint64_t seed,
                         const std::string& space_tag) {
  const auto items = model.embed_all_items();
  auto km = kmeans(items, clusters, seed);
  nn::Mat<float> centroids = km.centroids.cast<float>();
  // Lists follow the stored (float) centroids so the nearest-centroid
  // invariant holds for the persisted index.
  std::vector<int32_t> assign;
  std::vector<double> dist;
  assign_points(items.cast<double>(), centroids, assign, dist);
  std::vector<std::vector<ItemIndex>> lists(clusters);
  for (size_t i = 0; i < assign.size(); ++i) lists[static_cast<size_t>(assign[i])].push_back(static_cast<ItemIndex>(i));
  for (size_t j = 0; j < lists.size(); ++j) {
    if (lists[j].empty()) log::warn("cluster ", j, " is empty after float rounding of centroids");
  }
  log::info("index: ", clusters, " clusters over ", items.rows(), " items, ", km.iterations, " Lloyd iterations");
  return ClusterIndex(std::move(centroids), std::move(lists), space_tag.empty() ? model.tag() : space_tag, seed);
}

LocalTripletSets mine_local_triplets(const RepresentationModel& global_model, const ClusterIndex& index,
                                     const InteractionMatrix& train, const MiningOptions& opt, uint64_t seed) {
  const size_t J = opt.candidate_clusters;
  if (J < 1 || J > index.cluster_count()) {
    throw ConfigError("mining: J=" + std::to_string(J) + " outside [1, " + std::to_string(index.cluster_count()) + "]");
  }
  if (index.dim() != global_model.dim() || index.item_count() != train.item_count()) {
    throw ConfigError("mining: index was not built in this model's item space");
  }
  const auto users = global_model.embed_all_users();
  const auto items = global_model.embed_all_items();
  const auto& mu = index.centroids();
  Rng rng(seed);
  LocalTripletSets sets;
  std::vector<ItemIndex> positives, pool;
  for (size_t uu = 0; uu < train.user_count(); ++uu) {
    const auto u = static_cast<UserIndex>(uu);
    if (train.degree(u) == 0) continue;
    const auto urow = users.row(u);
    const auto cl = index.top_k_clusters(std::span<const float>(urow.data(), static_cast<size_t>(urow.size())), J);
    const auto cand = index.candidates(cl);
    positives.clear();
    pool.clear();
    for (auto i : cand) (train.contains(u, i) ? positives : pool).push_back(i);
    if (positives.empty()) {
      ++sets.skipped_users;
      continue;
    }
    if (pool.empty()) continue;
    std::vector<double> cluster_dist(index.cluster_count(), 0.0);
    for (auto c : cl) cluster_dist[static_cast<size_t>(c)] = squared_distance(urow, mu.row(c));

    auto route = [&](ItemIndex p, ItemIndex n) {
      const int32_t cp = index.cluster_of(p);
      const int32_t cn = index.cluster_of(n);
      if (cp == cn) {
        if (squared_distance(urow, items.row(p)) > squared_distance(urow, items.row(n))) {
          sets.intra.push_back({u, p, n});
          return;
        }
      } else if (cluster_dist[static_cast<size_t>(cp)] > cluster_dist[static_cast<size_t>(cn)]) {
        sets.inter.push_back({u, p, n});
        return;
      }
      ++sets.rejected;
    };
    for (auto p : positives) {
      if (opt.negatives_per_positive == 0) {
        for (auto n : pool) route(p, n);
      } else {
        for (size_t k = 0; k < opt.negatives_per_positive; ++k) route(p, pool[rng.uniform_index(pool.size())]);
      }
    }
  }
  if (sets.skipped_users > 0) {
    log::info("mining: ", sets.skipped_users, " users had no positive in their ", J, " candidate clusters");
  }
  log::info("mining: ", sets.intra.size(), " intra, ", sets.inter.size(), " inter, ", sets.rejected, " rejected");
  return sets;
}

RepresentationModel train_local(const InteractionMatrix& train, const LocalTripletSets& sets, LossKind loss,
                                const TrainConfig& cfg, TrainReport* report) {
  if (sets.size() == 0) throw DataError("train_local: no local triplets");
  Rng split_rng(derive_seed(cfg.seed, "validation"));
  auto hold_out = [&](const std::vector<Triplet>& all, std::vector<Triplet>& fit, std::vector<Triplet>& val) {
    fit = all;
    split_rng.shuffle(std::span(fit));
    const auto n_val = static_cast<size_t>(cfg.validation_fraction * static_cast<double>(fit.size()));
    val.insert(val.end(), fit.begin(), fit.begin() + static_cast<std::ptrdiff_t>(n_val));
    fit.erase(fit.begin(), fit.begin() + static_cast<std::ptrdiff_t>(n_val));
  };
  std::vector<Triplet> intra, inter, validation;
  hold_out(sets.intra, intra, validation);
  hold_out(sets.inter, inter, validation);
  if (intra.empty() && inter.empty()) throw DataError("train_local: no local triplets left after validation split");

  const size_t per_epoch = std::max<size_t>(train.positive_count(), 1);
  EpochSource source = [&](size_t epoch, const RepresentationModel&) {
    Rng rng(derive_seed(cfg.seed, epoch));
    std::vector<Triplet> out;
    out.reserve(per_epoch);
    for (size_t k = 0; k < per_epoch; ++k) {
      const bool want_intra = (k % 2 == 0);
      const auto& from = (want_intra && !intra.empty()) || inter.empty() ? intra : inter;
      out.push_back(from[rng.uniform_index(from.size())]);
    }
    return out;
  };
  return train_representation(train.user_count(), train.item_count(), loss, SourceKind::local, cfg, source,
                              validation, report);
}

void write_local_triplets(const std::filesystem::path& path, const LocalTripletSets& sets) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# skipped_users " << sets.skipped_users << " rejected " << sets.rejected << '\n';
  for (const auto& t : sets.intra) out << "intra\t" << t.user << '\t' << t.pos_item << '\t' << t.neg_item << '\n';
  for (const auto& t : sets.inter) out << "inter\t" << t.user << '\t' << t.pos_item << '\t' << t.neg_item << '\n';
}

LocalTripletSets read_local_triplets(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  LocalTripletSets sets;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "#") {
      std::string key;
      while (ls >> key) {
        if (key == "skipped_users") ls >> sets.skipped_users;
        else if (key == "rejected") ls >> sets.rejected;
      }
      continue;
    }
    Triplet t;
    if (!(ls >> t.user >> t.pos_item >> t.neg_item) || (kind != "intra" && kind != "inter")) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " malformed");
    }
    (kind == "intra" ? sets.intra : sets.inter).push_back(t);
  }
  return sets;
}

}  // namespace attrec
