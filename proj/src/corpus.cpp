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

#include "attrec/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "attrec/errors.hpp"
#include "attrec/log.hpp"

namespace attrec {

InteractionMatrix::InteractionMatrix(std::vector<std::string> user_ids, std::vector<std::string> item_ids)
    : user_ids_(std::move(user_ids)), item_ids_(std::move(item_ids)), rows_(user_ids_.size()) {
  for (size_t u = 0; u < user_ids_.size(); ++u) user_vocab_.emplace(user_ids_[u], static_cast<UserIndex>(u));
  for (size_t i = 0; i < item_ids_.size(); ++i) item_vocab_.emplace(item_ids_[i], static_cast<ItemIndex>(i));
}

double InteractionMatrix::density() const {
  if (user_count() == 0 || item_count() == 0) return 0.0;
  return static_cast<double>(positive_count_) / (static_cast<double>(user_count()) * static_cast<double>(item_count()));
}

void InteractionMatrix::add(UserIndex u, ItemIndex i, int64_t timestamp, int64_t order) {
  if (u < 0 || static_cast<size_t>(u) >= user_count() || i < 0 || static_cast<size_t>(i) >= item_count()) {
    throw DataError("interaction (" + std::to_string(u) + ", " + std::to_string(i) + ") out of range");
  }
  auto& row = rows_[static_cast<size_t>(u)];
  auto it = std::lower_bound(row.begin(), row.end(), i, [](const Positive& p, ItemIndex v) { return p.item < v; });
  if (it != row.end() && it->item == i) {
    if (std::pair(timestamp, order) > std::pair(it->timestamp, it->order)) {
      it->timestamp = timestamp;
      it->order = order;
    }
    return;
  }
  row.insert(it, Positive{i, timestamp, order});
  ++positive_count_;
}

bool InteractionMatrix::contains(UserIndex u, ItemIndex i) const {
  const auto& row = rows_.at(static_cast<size_t>(u));
  auto it = std::lower_bound(row.begin(), row.end(), i, [](const Positive& p, ItemIndex v) { return p.item < v; });
  return it != row.end() && it->item == i;
}

std::vector<ItemIndex> InteractionMatrix::items_of(UserIndex u) const {
  std::vector<ItemIndex> out;
  out.reserve(degree(u));
  for (const auto& p : row(u)) out.push_back(p.item);
  return out;
}

std::vector<std::pair<UserIndex, ItemIndex>> InteractionMatrix::positives() const {
  std::vector<std::pair<UserIndex, ItemIndex>> out;
  out.reserve(positive_count_);
  for (size_t u = 0; u < rows_.size(); ++u) {
    for (const auto& p : rows_[u]) out.emplace_back(static_cast<UserIndex>(u), p.item);
  }
  return out;
}

std::optional<UserIndex> InteractionMatrix::find_user(const std::string& raw) const {
  auto it = user_vocab_.find(raw);
  if (it == user_vocab_.end()) return std::nullopt;
  return it->second;
}

std::optional<ItemIndex> InteractionMatrix::find_item(const std::string& raw) const {
  auto it = item_vocab_.find(raw);
  if (it == item_vocab_.end()) return std::nullopt;
  return it->second;
}

InteractionMatrix InteractionMatrix::empty_like() const {
  InteractionMatrix out(user_ids_, item_ids_);
  out.has_timestamps_ = has_timestamps_;
  return out;
}

std::vector<Column> DelimiterSpec::parse_columns(const std::string& text) {
  std::vector<Column> cols;
  std::stringstream ss(text);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name == "user") cols.push_back(Column::user);
    else if (name == "item") cols.push_back(Column::item);
    else if (name == "rating") cols.push_back(Column::rating);
    else if (name == "timestamp") cols.push_back(Column::timestamp);
    else cols.push_back(Column::ignore);
  }
  if (std::count(cols.begin(), cols.end(), Column::user) != 1 ||
      std::count(cols.begin(), cols.end(), Column::item) != 1) {
    throw ConfigError("column spec '" + text + "' must name exactly one user and one item column");
  }
  return cols;
}

char DelimiterSpec::parse_delimiter(const std::string& text) {
  if (text == "tab" || text == "\\t") return '\t';
  if (text == "comma") return ',';
  if (text == "space") return ' ';
  if (text == "semicolon") return ';';
  if (text.size() == 1) return text[0];
  throw ConfigError("unsupported delimiter '" + text + "'");
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find(delim, start);
    auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (!(delim == ' ' && field.empty())) out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

InteractionMatrix parse_interactions(std::istream& in, const DelimiterSpec& format) {
  const auto& cols = format.columns;
  const auto col_of = [&](Column c) -> std::optional<size_t> {
    auto it = std::find(cols.begin(), cols.end(), c);
    if (it == cols.end()) return std::nullopt;
    return static_cast<size_t>(it - cols.begin());
  };
  const auto user_col = col_of(Column::user);
  const auto item_col = col_of(Column::item);
  const auto ts_col = col_of(Column::timestamp);
  if (!user_col || !item_col) throw ConfigError("column spec lacks user or item");
  const size_t required = std::max(*user_col, *item_col) + 1;

  struct Row {
    std::string user, item;
    int64_t ts;
  };
  std::vector<Row> rows;
  std::string line;
  size_t line_no = 0;
  bool all_have_ts = ts_col.has_value();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line, format.delimiter);
    if (fields.size() < required || fields[*user_col].empty() || fields[*item_col].empty()) {
      throw DataError("line " + std::to_string(line_no) + ": expected at least " + std::to_string(required) +
                      " fields, got '" + line + "'");
    }
    int64_t ts = 0;
    if (ts_col && *ts_col < fields.size()) {
      const auto f = fields[*ts_col];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), ts);
      if (ec != std::errc() || ptr != f.data() + f.size()) {
        throw DataError("line " + std::to_string(line_no) + ": bad timestamp '" + std::string(f) + "'");
      }
    } else {
      all_have_ts = false;
    }
    rows.push_back({std::string(fields[*user_col]), std::string(fields[*item_col]), ts});
  }
  if (rows.empty()) throw DataError("no interactions in input");

  // Vocabularies in first-appearance order.
  std::vector<std::string> users, items;
  std::unordered_map<std::string, UserIndex> uv;
  std::unordered_map<std::string, ItemIndex> iv;
  for (const auto& r : rows) {
    if (uv.emplace(r.user, static_cast<UserIndex>(users.size())).second) users.push_back(r.user);
    if (iv.emplace(r.item, static_cast<ItemIndex>(items.size())).second) items.push_back(r.item);
  }
  InteractionMatrix m(std::move(users), std::move(items));
  m.set_has_timestamps(all_have_ts);
  for (size_t k = 0; k < rows.size(); ++k) {
    m.add(uv.at(rows[k].user), iv.at(rows[k].item), rows[k].ts, static_cast<int64_t>(k));
  }
  return m;
}

InteractionMatrix load_interactions(const std::filesystem::path& path, const DelimiterSpec& format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file " + path.string());
  try {
    return parse_interactions(in, format);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

namespace {

// Keeps `kept_users` (in the given order) and the items they touch.
InteractionMatrix restrict_users(const InteractionMatrix& m, const std::vector<UserIndex>& kept_users) {
  std::vector<char> item_used(m.item_count(), 0);
  for (auto u : kept_users) {
    for (const auto& p : m.row(u)) item_used[static_cast<size_t>(p.item)] = 1;
  }
  std::vector<ItemIndex> item_map(m.item_count(), -1);
  std::vector<std::string> item_ids;
  for (size_t i = 0; i < m.item_count(); ++i) {
    if (item_used[i]) {
      item_map[i] = static_cast<ItemIndex>(item_ids.size());
      item_ids.push_back(m.item_ids()[i]);
    }
  }
  std::vector<std::string> user_ids;
  for (auto u : kept_users) user_ids.push_back(m.user_ids()[static_cast<size_t>(u)]);
  InteractionMatrix out(std::move(user_ids), std::move(item_ids));
  out.set_has_timestamps(m.has_timestamps());
  for (size_t nu = 0; nu < kept_users.size(); ++nu) {
    for (const auto& p : m.row(kept_users[nu])) {
      out.add(static_cast<UserIndex>(nu), item_map[static_cast<size_t>(p.item)], p.timestamp, p.order);
    }
  }
  return out;
}

}  // namespace

InteractionMatrix filter_min_interactions(const InteractionMatrix& m, size_t threshold) {
  if (threshold == 0) return m;
  std::vector<UserIndex> kept_users;
  for (size_t u = 0; u < m.user_count(); ++u) {
    if (m.degree(static_cast<UserIndex>(u)) >= threshold) kept_users.push_back(static_cast<UserIndex>(u));
  }
  if (kept_users.empty()) {
    throw DataError("min-interaction filter (" + std::to_string(threshold) + ") removed every user");
  }
  auto out = restrict_users(m, kept_users);
  log::info("filter >= ", threshold, ": dropped ", m.user_count() - out.user_count(), " users and ",
            m.item_count() - out.item_count(), " items left without interactions (single pass)");
  return out;
}

InteractionMatrix subsample_users(const InteractionMatrix& m, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("user subsample fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  if (fraction == 1.0) return m;
  std::vector<UserIndex> users(m.user_count());
  for (size_t u = 0; u < users.size(); ++u) users[u] = static_cast<UserIndex>(u);
  Rng rng(seed);
  rng.shuffle(std::span(users));
  const auto keep = std::max<size_t>(1, static_cast<size_t>(std::llround(fraction * static_cast<double>(users.size()))));
  users.resize(keep);
  std::sort(users.begin(), users.end());
  auto out = restrict_users(m, users);
  log::info("user subsample ", fraction, ": kept ", out.user_count(), " users, ", out.item_count(), " items, ",
            out.positive_count(), " positives");
  return out;
}

size_t Split::test_count() const {
  size_t n = 0;
  for (const auto& t : test) n += t.size();
  return n;
}

Split split(const InteractionMatrix& m, const SplitSpec& spec) {
  Split out;
  out.train = m.empty_like();
  out.test.assign(m.user_count(), {});
  for (size_t uu = 0; uu < m.user_count(); ++uu) {
    const auto u = static_cast<UserIndex>(uu);
    const auto row = m.row(u);
    std::vector<size_t> held;  // positions in row
    switch (spec.protocol) {
      case SplitProtocol::random_half: {
        if (row.size() < 2) break;
        std::vector<size_t> idx(row.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(spec.seed, uu));
        rng.shuffle(std::span(idx));
        held.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(row.size() / 2));
        break;
      }
      case SplitProtocol::per_user_holdout: {
        if (row.size() <= spec.n_test) break;
        std::vector<size_t> idx(row.size());
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(derive_seed(spec.seed, uu));
        rng.shuffle(std::span(idx));
        held.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(spec.n_test));
        break;
      }
      case SplitProtocol::leave_one_out: {
        if (row.size() < 2) break;
        size_t best = 0;
        for (size_t k = 1; k < row.size(); ++k) {
          const auto key = m.has_timestamps() ? std::pair(row[k].timestamp, row[k].order)
                                              : std::pair(int64_t{0}, row[k].order);
          const auto cur = m.has_timestamps() ? std::pair(row[best].timestamp, row[best].order)
                                              : std::pair(int64_t{0}, row[best].order);
          if (key > cur) best = k;
        }
        held.push_back(best);
        break;
      }
    }
    if (held.empty()) {
      out.excluded.push_back(u);
    }
    std::vector<char> is_test(row.size(), 0);
    for (auto k : held) is_test[k] = 1;
    for (size_t k = 0; k < row.size(); ++k) {
      if (is_test[k]) {
        out.test[uu].push_back(row[k].item);
      } else {
        out.train.add(u, row[k].item, row[k].timestamp, row[k].order);
      }
    }
    std::sort(out.test[uu].begin(), out.test[uu].end());
  }
  if (!out.excluded.empty()) {
    log::warn("split ", to_string(spec.protocol), ": ", out.excluded.size(),
              " users had too few interactions and contribute no test items");
  }
  return out;
}

void write_split_manifest(const std::filesystem::path& path, const Split& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  for (size_t u = 0; u < s.train.user_count(); ++u) {
    const auto uu = static_cast<UserIndex>(u);
    std::vector<std::pair<ItemIndex, char>> rows;
    for (const auto& p : s.train.row(uu)) rows.emplace_back(p.item, 0);
    for (auto i : s.test[u]) rows.emplace_back(i, 1);
    std::sort(rows.begin(), rows.end());
    for (const auto& [i, fold] : rows) out << u << '\t' << i << '\t' << (fold ? "test" : "train") << '\n';
  }
}

Split read_split_manifest(const std::filesystem::path& path, const InteractionMatrix& vocab) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  Split s;
  s.train = vocab.empty_like();
  s.test.assign(vocab.user_count(), {});
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    long u = -1, i = -1;
    std::string fold;
    if (!(ls >> u >> i >> fold) || u < 0 || i < 0 || static_cast<size_t>(u) >= vocab.user_count() ||
        static_cast<size_t>(i) >= vocab.item_count() || (fold != "train" && fold != "test")) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " malformed");
    }
    if (fold == "train") {
      const auto uu = static_cast<UserIndex>(u);
      const auto ii = static_cast<ItemIndex>(i);
      s.train.add(uu, ii, 0, static_cast<int64_t>(line_no));
    } else {
      s.test[static_cast<size_t>(u)].push_back(static_cast<ItemIndex>(i));
    }
  }
  for (size_t u = 0; u < s.test.size(); ++u) {
    if (s.test[u].empty()) s.excluded.push_back(static_cast<UserIndex>(u));
  }
  return s;
}

std::optional<ItemIndex> draw_negative(const InteractionMatrix& m, UserIndex user, Rng& rng) {
  const size_t n_items = m.item_count();
  const size_t deg = m.degree(user);
  if (deg >= n_items) return std::nullopt;
  if (2 * deg <= n_items) {
    while (true) {
      const auto i = static_cast<ItemIndex>(rng.uniform_index(n_items));
      if (!m.contains(user, i)) return i;
    }
  }
  // Dense row: index into the complement directly.
  uint64_t k = rng.uniform_index(n_items - deg);
  ItemIndex candidate = 0;
  for (const auto& p : m.row(user)) {
    const auto gap = static_cast<uint64_t>(p.item - candidate);
    if (k < gap) return candidate + static_cast<ItemIndex>(k);
    k -= gap;
    candidate = p.item + 1;
  }
  return candidate + static_cast<ItemIndex>(k);
}

std::vector<Triplet> sample_triplets_for(const InteractionMatrix& m,
                                         std::span<const std::pair<UserIndex, ItemIndex>> positives,
                                         size_t per_positive, Rng& rng, const HardnessFilter* filter,
                                         TripletSampleStats* stats) {
  if (per_positive < 1) throw ConfigError("per_positive must be >= 1");
  std::vector<Triplet> out;
  out.reserve(positives.size() * per_positive);
  TripletSampleStats local;
  UserIndex last_skipped = -1;
  for (const auto& [u, pos] : positives) {
    if (m.degree(u) >= m.item_count()) {
      if (u != last_skipped) ++local.skipped_users;
      last_skipped = u;
      continue;
    }
    for (size_t k = 0; k < per_positive; ++k) {
      Triplet t{u, pos, *draw_negative(m, u, rng)};
      if (filter) {
        bool ok = filter->accept(t);
        for (int draw = 1; !ok && draw < filter->max_draws; ++draw) {
          t.neg_item = *draw_negative(m, u, rng);
          ok = filter->accept(t);
        }
        if (!ok) ++local.unfiltered;
      }
      out.push_back(t);
    }
  }
  if (local.skipped_users > 0) {
    log::warn("triplet sampling skipped ", local.skipped_users, " users who interacted with every item");
  }
  if (stats) *stats = local;
  return out;
}

std::vector<Triplet> sample_global_triplets(const InteractionMatrix& train, size_t per_positive, uint64_t seed,
                                            const HardnessFilter* filter, TripletSampleStats* stats) {
  Rng rng(seed);
  const auto positives = train.positives();
  return sample_triplets_for(train, positives, per_positive, rng, filter, stats);
}

std::vector<ItemIndex> sample_loo_negatives(const InteractionMatrix& m, UserIndex user, size_t count, uint64_t seed) {
  if (count == 0) return {};
  std::vector<ItemIndex> pool;
  pool.reserve(m.item_count() - m.degree(user));
  ItemIndex next = 0;
  for (const auto& p : m.row(user)) {
    for (; next < p.item; ++next) pool.push_back(next);
    next = p.item + 1;
  }
  for (; static_cast<size_t>(next) < m.item_count(); ++next) pool.push_back(next);
  if (pool.size() < count) {
    throw DataError("user " + std::to_string(user) + " has only " + std::to_string(pool.size()) +
                    " unobserved items, " + std::to_string(count) + " requested");
  }
  Rng rng(seed);
  for (size_t k = 0; k < count; ++k) {
    const size_t j = k + rng.uniform_index(pool.size() - k);
    std::swap(pool[k], pool[j]);
  }
  pool.resize(count);
  return pool;
}

std::string to_string(SplitProtocol p) {
  switch (p) {
    case SplitProtocol::random_half: return "random-half";
    case SplitProtocol::per_user_holdout: return "per-user-holdout";
    case SplitProtocol::leave_one_out: return "leave-one-out";
  }
  return "?";
}

SplitProtocol parse_protocol(const std::string& text) {
  if (text == "random-half") return SplitProtocol::random_half;
  if (text == "per-user-holdout") return SplitProtocol::per_user_holdout;
  if (text == "leave-one-out") return SplitProtocol::leave_one_out;
  throw ConfigError("unknown split protocol '" + text + "'");
}

}  // namespace attrec
