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
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "attrec/rng.hpp"

namespace attrec {

using UserIndex = int32_t;
using ItemIndex = int32_t;

struct Triplet {
  UserIndex user = 0;
  ItemIndex pos_item = 0;
  ItemIndex neg_item = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

// One positive of a user. `order` is the 0-based line of the latest
// occurrence in the source file; `timestamp` is its timestamp when present.
struct Positive {
  ItemIndex item = 0;
  int64_t timestamp = 0;
  int64_t order = 0;
};

// Sparse binary user-item matrix: a_ui = 1 iff (u, i) is stored.
// Rows are kept sorted by item index; duplicates are collapsed.
class InteractionMatrix {
 public:
  InteractionMatrix() = default;
  InteractionMatrix(std::vector<std::string> user_ids, std::vector<std::string> item_ids);

  size_t user_count() const { return user_ids_.size(); }
  size_t item_count() const { return item_ids_.size(); }
  size_t positive_count() const { return positive_count_; }
  double density() const;
  bool has_timestamps() const { return has_timestamps_; }
  void set_has_timestamps(bool v) { has_timestamps_ = v; }

  // Adds (u, i); a repeat keeps one entry with the latest timestamp/order.
  void add(UserIndex u, ItemIndex i, int64_t timestamp = 0, int64_t order = 0);

  bool contains(UserIndex u, ItemIndex i) const;
  std::span<const Positive> row(UserIndex u) const { return rows_.at(static_cast<size_t>(u)); }
  std::vector<ItemIndex> items_of(UserIndex u) const;
  size_t degree(UserIndex u) const { return rows_.at(static_cast<size_t>(u)).size(); }
  std::vector<std::pair<UserIndex, ItemIndex>> positives() const;

  const std::vector<std::string>& user_ids() const { return user_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }
  std::optional<UserIndex> find_user(const std::string& raw) const;
  std::optional<ItemIndex> find_item(const std::string& raw) const;

  // Same vocabularies, no positives.
  InteractionMatrix empty_like() const;

 private:
  std::vector<std::string> user_ids_;
  std::vector<std::string> item_ids_;
  std::unordered_map<std::string, UserIndex> user_vocab_;
  std::unordered_map<std::string, ItemIndex> item_vocab_;
  std::vector<std::vector<Positive>> rows_;
  size_t positive_count_ = 0;
  bool has_timestamps_ = false;
};

enum class Column { user, item, rating, timestamp, ignore };

struct DelimiterSpec {
  char delimiter = '\t';
  std::vector<Column> columns{Column::user, Column::item, Column::rating, Column::timestamp};

  // "user,item,rating,timestamp"; unknown names map to `ignore`.
  static std::vector<Column> parse_columns(const std::string& text);
  // "tab", "comma", "space", "::" is not supported; single characters pass through.
  static char parse_delimiter(const std::string& text);
};

InteractionMatrix load_interactions(const std::filesystem::path& path, const DelimiterSpec& format = {});
InteractionMatrix parse_interactions(std::istream& in, const DelimiterSpec& format = {});

// Drops users with fewer than `threshold` positives in one pass, then drops
// items left without interactions and re-densifies both vocabularies.
InteractionMatrix filter_min_interactions(const InteractionMatrix& m, size_t threshold);

// Keeps a uniformly drawn `fraction` of users (at least one) and the items
// they touch; vocabularies keep their original relative order.
InteractionMatrix subsample_users(const InteractionMatrix& m, double fraction, uint64_t seed);

enum class SplitProtocol { random_half, per_user_holdout, leave_one_out };

struct SplitSpec {
  SplitProtocol protocol = SplitProtocol::random_half;
  size_t n_test = 3;
  uint64_t seed = 1;
  size_t min_interactions = 0;
};

struct Split {
  InteractionMatrix train;
  // Indexed by user; empty for users without held-out items.
  std::vector<std::vector<ItemIndex>> test;
  // Users that could not satisfy the protocol; all their positives stay in train.
  std::vector<UserIndex> excluded;

  size_t test_count() const;
};

Split split(const InteractionMatrix& m, const SplitSpec& spec);

// Text manifest: one "user_index<TAB>item_index<TAB>fold" line per positive.
void write_split_manifest(const std::filesystem::path& path, const Split& s);
Split read_split_manifest(const std::filesystem::path& path, const InteractionMatrix& vocab);

// Returns true when (u, pos, neg) should be used as-is; otherwise another
// negative is drawn, up to `max_draws` in total, and the last draw is kept.
struct HardnessFilter {
  virtual ~HardnessFilter() = default;
  virtual bool accept(const Triplet& t) const = 0;
  int max_draws = 5;
};

struct TripletSampleStats {
  size_t skipped_users = 0;
  size_t unfiltered = 0;  // triplets whose final draw still failed the filter
};

// One pass over the positives of `train`, `per_positive` uniformly drawn
// non-positive negatives for each.
std::vector<Triplet> sample_global_triplets(const InteractionMatrix& train, size_t per_positive, uint64_t seed,
                                            const HardnessFilter* filter = nullptr,
                                            TripletSampleStats* stats = nullptr);

// Same sampling over an explicit list of positive pairs; negatives are drawn
// against all positives of `m`.
std::vector<Triplet> sample_triplets_for(const InteractionMatrix& m,
                                         std::span<const std::pair<UserIndex, ItemIndex>> positives,
                                         size_t per_positive, Rng& rng, const HardnessFilter* filter = nullptr,
                                         TripletSampleStats* stats = nullptr);

// `count` distinct items the user never interacted with in `m`.
std::vector<ItemIndex> sample_loo_negatives(const InteractionMatrix& m, UserIndex user, size_t count, uint64_t seed);

// Draws one negative for `user`, or nullopt if the user has no non-positive item.
std::optional<ItemIndex> draw_negative(const InteractionMatrix& m, UserIndex user, Rng& rng);

std::string to_string(SplitProtocol p);
SplitProtocol parse_protocol(const std::string& text);

}  // namespace attrec
