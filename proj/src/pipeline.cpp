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

#include "attrec/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "attrec/clusterindex.hpp"
#include "attrec/errors.hpp"
#include "attrec/fusion.hpp"
#include "attrec/log.hpp"
#include "attrec/metrics.hpp"
#include "attrec/parallel.hpp"
#include "attrec/recommend.hpp"
#include "attrec/rng.hpp"

namespace attrec::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kManifestName = "run.json";
constexpr const char* kManifestFormat = "attrec-run v1";

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (size_t k = 0; k < v.size(); ++k) os << (k ? "," : "") << v[k];
  return os.str();
}

size_t to_size(const std::string& key, const std::string& v) {
  size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<size_t>(x);
}

double to_real(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(x)) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return x;
}

std::vector<size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<size_t> out;
  for (const auto& s : split_list(v)) out.push_back(to_size(key, s));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string real_str(double x) {
  std::ostringstream os;
  os.precision(17);
  os << x;
  return os.str();
}

const std::vector<std::string> kRepresentations{"GD", "GP", "LD", "LP"};
const std::vector<std::string> kAttention{"GAD", "GAP", "LAD", "LAP", "AD", "AP"};

struct KeyDef {
  KeyInfo info;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {{"data", "interaction file (user, item[, rating, timestamp] per line)"},
       [](RunConfig& c, const std::string& v) { c.data = v; },
       [](const RunConfig& c) { return c.data.generic_string(); }},
      {{"columns", "column order, e.g. user,item,rating,timestamp"},
       [](RunConfig& c, const std::string& v) {
         DelimiterSpec::parse_columns(v);
         c.columns = v;
       },
       [](const RunConfig& c) { return c.columns; }},
      {{"delimiter", "tab, comma, space, semicolon or a single character"},
       [](RunConfig& c, const std::string& v) {
         DelimiterSpec::parse_delimiter(v);
         c.delimiter = v;
       },
       [](const RunConfig& c) { return c.delimiter; }},
      {{"min_interactions", "drop users with fewer positives (0 = keep all)"},
       [](RunConfig& c, const std::string& v) { c.min_interactions = to_size("min_interactions", v); },
       [](const RunConfig& c) { return std::to_string(c.min_interactions); }},
      {{"user_fraction", "uniform user subsample in (0, 1]"},
       [](RunConfig& c, const std::string& v) { c.user_fraction = to_real("user_fraction", v); },
       [](const RunConfig& c) { return real_str(c.user_fraction); }},
      {{"split", "random-half, per-user-holdout or leave-one-out"},
       [](RunConfig& c, const std::string& v) { c.protocol = parse_protocol(v); },
       [](const RunConfig& c) { return to_string(c.protocol); }},
      {{"n_test", "held-out items per user for per-user-holdout"},
       [](RunConfig& c, const std::string& v) { c.n_test = to_size("n_test", v); },
       [](const RunConfig& c) { return std::to_string(c.n_test); }},
      {{"dim", "representation dimension d (32, 64 or 128)"},
       [](RunConfig& c, const std::string& v) { c.train.dim = to_size("dim", v); },
       [](const RunConfig& c) { return std::to_string(c.train.dim); }},
      {{"embed_dim", "embedding width of both towers"},
       [](RunConfig& c, const std::string& v) { c.train.embed_dim = to_size("embed_dim", v); },
       [](const RunConfig& c) { return std::to_string(c.train.embed_dim); }},
      {{"hidden", "hidden layer widths, comma separated"},
       [](RunConfig& c, const std::string& v) { c.train.hidden_dims = to_sizes("hidden", v); },
       [](const RunConfig& c) { return join(c.train.hidden_dims); }},
      {{"activation", "relu or tanh"},
       [](RunConfig& c, const std::string& v) {
         if (v == "relu") c.train.activation = nn::Activation::relu;
         else if (v == "tanh") c.train.activation = nn::Activation::tanh;
         else throw ConfigError("activation: expected relu or tanh, got '" + v + "'");
       },
       [](const RunConfig& c) { return std::string(c.train.activation == nn::Activation::relu ? "relu" : "tanh"); }},
      {{"batch_size", "triplets per gradient step"},
       [](RunConfig& c, const std::string& v) { c.train.batch_size = to_size("batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {{"max_epochs", "epoch cap"},
       [](RunConfig& c, const std::string& v) { c.train.max_epochs = to_size("max_epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.train.max_epochs); }},
      {{"margin", "distance-loss margin"},
       [](RunConfig& c, const std::string& v) { c.train.margin = to_real("margin", v); },
       [](const RunConfig& c) { return real_str(c.train.margin); }},
      {{"learning_rate", "Adam step size"},
       [](RunConfig& c, const std::string& v) { c.train.learning_rate = to_real("learning_rate", v); },
       [](const RunConfig& c) { return real_str(c.train.learning_rate); }},
      {{"patience", "early-stopping patience in epochs"},
       [](RunConfig& c, const std::string& v) { c.train.patience = to_size("patience", v); },
       [](const RunConfig& c) { return std::to_string(c.train.patience); }},
      {{"l2_reg", "L2 weight on product-loss outputs"},
       [](RunConfig& c, const std::string& v) { c.train.l2_reg = to_real("l2_reg", v); },
       [](const RunConfig& c) { return real_str(c.train.l2_reg); }},
      {{"validation_fraction", "held-out share of triplets for early stopping"},
       [](RunConfig& c, const std::string& v) { c.train.validation_fraction = to_real("validation_fraction", v); },
       [](const RunConfig& c) { return real_str(c.train.validation_fraction); }},
      {{"hard_draws", "negative draws per positive while the triplet is easy"},
       [](RunConfig& c, const std::string& v) { c.train.hard_draws = static_cast<int>(to_size("hard_draws", v)); },
       [](const RunConfig& c) { return std::to_string(c.train.hard_draws); }},
      {{"clusters", "item clusters M"},
       [](RunConfig& c, const std::string& v) { c.clusters = to_size("clusters", v); },
       [](const RunConfig& c) { return std::to_string(c.clusters); }},
      {{"candidates", "candidate clusters K searched per user"},
       [](RunConfig& c, const std::string& v) { c.candidates = to_size("candidates", v); },
       [](const RunConfig& c) { return std::to_string(c.candidates); }},
      {{"mining_clusters", "candidate clusters J used to mine local triplets"},
       [](RunConfig& c, const std::string& v) { c.mining_clusters = to_size("mining_clusters", v); },
       [](const RunConfig& c) { return std::to_string(c.mining_clusters); }},
      {{"mining_negatives", "negatives tried per positive while mining (0 = all)"},
       [](RunConfig& c, const std::string& v) { c.mining_negatives = to_size("mining_negatives", v); },
       [](const RunConfig& c) { return std::to_string(c.mining_negatives); }},
      {{"topn", "list lengths N evaluated"},
       [](RunConfig& c, const std::string& v) { c.topn = to_sizes("topn", v); },
       [](const RunConfig& c) { return join(c.topn); }},
      {{"coverage_k", "cluster depths K for the coverage curve"},
       [](RunConfig& c, const std::string& v) { c.coverage_k = to_sizes("coverage_k", v); },
       [](const RunConfig& c) { return join(c.coverage_k); }},
      {{"coverage_n", "list length for the coverage curve"},
       [](RunConfig& c, const std::string& v) { c.coverage_n = to_size("coverage_n", v); },
       [](const RunConfig& c) { return std::to_string(c.coverage_n); }},
      {{"recommend_n", "list length written by the recommend verb"},
       [](RunConfig& c, const std::string& v) { c.recommend_n = to_size("recommend_n", v); },
       [](const RunConfig& c) { return std::to_string(c.recommend_n); }},
      {{"recommend_with", "scorer used by the recommend verb (default: first attention config)"},
       [](RunConfig& c, const std::string& v) { c.recommend_with = v; },
       [](const RunConfig& c) { return c.recommend_with; }},
      {{"loo_negatives", "sampled negatives per user in leave-one-out evaluation"},
       [](RunConfig& c, const std::string& v) { c.loo_negatives = to_size("loo_negatives", v); },
       [](const RunConfig& c) { return std::to_string(c.loo_negatives); }},
      {{"loo_topk", "cut-off for leave-one-out HR and NDCG"},
       [](RunConfig& c, const std::string& v) { c.loo_topk = to_size("loo_topk", v); },
       [](const RunConfig& c) { return std::to_string(c.loo_topk); }},
      {{"representations", "subset of GD,GP,LD,LP"},
       [](RunConfig& c, const std::string& v) { c.representations = split_list(v); },
       [](const RunConfig& c) { return join(c.representations); }},
      {{"attention", "subset of GAD,GAP,LAD,LAP,AD,AP (may be empty)"},
       [](RunConfig& c, const std::string& v) { c.attention = split_list(v); },
       [](const RunConfig& c) { return join(c.attention); }},
      {{"output", "run directory for artifacts and tables"},
       [](RunConfig& c, const std::string& v) { c.output = v; },
       [](const RunConfig& c) { return c.output.generic_string(); }},
      {{"seed", "global seed; every stage derives its own"},
       [](RunConfig& c, const std::string& v) { c.seed = to_size("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

const KeyDef& key_def(const std::string& key) {
  for (const auto& k : key_table()) {
    if (k.info.key == key) return k;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = [] {
    std::vector<KeyInfo> out;
    for (const auto& k : key_table()) out.push_back(k.info);
    return out;
  }();
  return keys;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  key_def(key).set(cfg, value);
}

std::string RunConfig::value_of(const std::string& key) const { return key_def(key).get(*this); }

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_table()) out.emplace_back(k.info.key, k.get(*this));
  return out;
}

std::vector<std::string> channels_of(const std::string& name) {
  if (name == "AD" || name == "AP") return {"GD", "GP", "LD", "LP"};
  if (name == "GAD" || name == "GAP") return {"GD", "GP"};
  if (name == "LAD" || name == "LAP") return {"LD", "LP"};
  throw ConfigError("unknown attention configuration '" + name + "'");
}

LossKind loss_of(const std::string& name) {
  if (!name.empty() && name.back() == 'D') return LossKind::distance;
  if (!name.empty() && name.back() == 'P') return LossKind::product;
  throw ConfigError("cannot tell the loss of '" + name + "'");
}

void RunConfig::validate() const {
  if (data.empty()) throw ConfigError("data: no interaction file given");
  if (train.dim != 32 && train.dim != 64 && train.dim != 128) {
    throw ConfigError("dim must be 32, 64 or 128, got " + std::to_string(train.dim));
  }
  train.validate();
  if (!(user_fraction > 0.0 && user_fraction <= 1.0)) throw ConfigError("user_fraction must be in (0, 1]");
  if (protocol == SplitProtocol::per_user_holdout && n_test == 0) throw ConfigError("n_test must be positive");
  if (clusters == 0) throw ConfigError("clusters must be positive");
  if (candidates == 0 || candidates > clusters) throw ConfigError("candidates must be in [1, clusters]");
  if (mining_clusters == 0 || mining_clusters > clusters) throw ConfigError("mining_clusters must be in [1, clusters]");
  for (auto n : topn) {
    if (n == 0) throw ConfigError("topn entries must be positive");
  }
  for (auto k : coverage_k) {
    if (k == 0 || k > clusters) throw ConfigError("coverage_k entries must be in [1, clusters]");
  }
  if (coverage_n == 0 || recommend_n == 0 || loo_topk == 0) throw ConfigError("list lengths must be positive");
  if (representations.empty()) throw ConfigError("representations: nothing to train");
  std::set<std::string> seen;
  for (const auto& r : representations) {
    if (!contains(kRepresentations, r)) throw ConfigError("unknown representation '" + r + "'");
    if (!seen.insert(r).second) throw ConfigError("representation '" + r + "' listed twice");
  }
  const bool wants_local = contains(representations, "LD") || contains(representations, "LP");
  if (wants_local && !contains(representations, "GD")) {
    throw ConfigError("local representations are mined in the GD space; add GD to representations");
  }
  for (const auto& a : attention) {
    if (!contains(kAttention, a)) throw ConfigError("unknown attention configuration '" + a + "'");
    if (!seen.insert(a).second) throw ConfigError("attention configuration '" + a + "' listed twice");
    for (const auto& ch : channels_of(a)) {
      if (!contains(representations, ch)) {
        throw ConfigError("attention " + a + " needs representation " + ch + ", which is not trained");
      }
    }
  }
  if (!recommend_with.empty() && !contains(representations, recommend_with) && !contains(attention, recommend_with)) {
    throw ConfigError("recommend_with '" + recommend_with + "' is neither a representation nor an attention config");
  }
}

RunConfig parse_config(std::istream& in, const std::string& origin, const fs::path& base) {
  RunConfig cfg;
  std::string line;
  size_t line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": key '" + key + "' set twice");
    }
    try {
      set_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!base.empty()) {
    if (!cfg.data.empty() && cfg.data.is_relative()) cfg.data = base / cfg.data;
    if (cfg.output.is_relative()) cfg.output = base / cfg.output;
  }
  return cfg;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse_config(in, path.string(), path.parent_path());
}

// ---------------------------------------------------------------------------

struct Pipeline::Loaded {
  InteractionMatrix full;  // after filtering and subsampling
  std::string dataset_hash;
  std::optional<Split> split;
};

Pipeline::Pipeline(RunConfig cfg, bool force) : cfg_(std::move(cfg)), force_(force) {
  cfg_.validate();
  cfg_.train.seed = cfg_.seed;
  load_manifest();
}

uint64_t Pipeline::stage_seed(const std::string& name) const { return derive_seed(cfg_.seed, name); }

fs::path Pipeline::path_of(const std::string& artifact) const {
  if (artifact == "split") return cfg_.output / "split.tsv";
  if (artifact == "index") return cfg_.output / "index.bin";
  if (artifact == "triplets") return cfg_.output / "triplets.tsv";
  if (artifact.rfind("model/", 0) == 0) return cfg_.output / "models" / (artifact.substr(6) + ".params");
  if (artifact == "ablation" || artifact == "coverage" || artifact == "loo") {
    return cfg_.output / (artifact + ".tsv");
  }
  throw std::invalid_argument("unknown artifact " + artifact);
}

void Pipeline::load_manifest() {
  const auto path = cfg_.output / kManifestName;
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": unreadable run manifest (" + e.what() + ")");
  }
  if (j.value("format", "") != kManifestFormat) throw DataError(path.string() + ": not an attrec run manifest");
  for (const auto& [name, a] : j["artifacts"].items()) {
    Record r;
    r.path = a.value("path", "");
    r.hash = a.value("hash", "");
    r.fingerprint = a.value("fingerprint", "");
    r.seconds = a.value("seconds", 0.0);
    r.seed = a.value("seed", uint64_t{0});
    artifacts_[name] = r;
  }
}

void Pipeline::save_manifest() const {
  json j;
  j["format"] = kManifestFormat;
  json c;
  for (const auto& [k, v] : cfg_.entries()) c[k] = v;
  j["config"] = c;
  j["seed"] = cfg_.seed;
  json arts = json::object();
  for (const auto& [name, r] : artifacts_) {
    arts[name] = {{"path", r.path}, {"hash", r.hash}, {"fingerprint", r.fingerprint},
                  {"seconds", r.seconds}, {"seed", r.seed}};
  }
  j["artifacts"] = arts;
  fs::create_directories(cfg_.output);
  const auto path = cfg_.output / kManifestName;
  const auto tmp = cfg_.output / (std::string(kManifestName) + ".tmp");
  {
    std::ofstream out(tmp);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string Pipeline::fingerprint(const std::string& artifact, const std::vector<std::string>& keys,
                                  const std::vector<std::string>& deps) const {
  std::string text = artifact + "\n";
  for (const auto& k : keys) text += k + "=" + cfg_.value_of(k) + "\n";
  for (const auto& d : deps) {
    auto it = artifacts_.find(d);
    text += d + "@" + (it == artifacts_.end() ? std::string("?") : it->second.hash) + "\n";
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

std::string Pipeline::require(const std::string& artifact, const std::string& stage) const {
  const auto path = path_of(artifact);
  auto it = artifacts_.find(artifact);
  if (it == artifacts_.end() || !fs::exists(path)) {
    throw DataError("missing " + artifact + " (" + path.string() + "); run the '" + stage + "' stage first");
  }
  if (nn::content_hash(path) != it->second.hash) {
    throw DataError(path.string() + " changed since the '" + stage + "' stage wrote it; re-run that stage");
  }
  return it->second.hash;
}

template <typename Make>
void Pipeline::produce(const std::string& artifact, const std::string& fp, Make make) {
  const auto path = path_of(artifact);
  auto it = artifacts_.find(artifact);
  if (!force_ && it != artifacts_.end() && it->second.fingerprint == fp && fs::exists(path) &&
      nn::content_hash(path) == it->second.hash) {
    log::info(artifact, ": up to date");
    skipped_.push_back(artifact);
    return;
  }
  fs::create_directories(path.parent_path());
  const auto t0 = std::chrono::steady_clock::now();
  const uint64_t seed = make(path);
  const auto t1 = std::chrono::steady_clock::now();
  Record r;
  r.path = fs::relative(path, cfg_.output).generic_string();
  r.hash = nn::content_hash(path);
  r.fingerprint = fp;
  r.seconds = std::chrono::duration<double>(t1 - t0).count();
  r.seed = seed;
  artifacts_[artifact] = r;
  save_manifest();
}

Pipeline::Loaded& Pipeline::data() {
  if (loaded_) return *loaded_;
  auto l = std::make_shared<Loaded>();
  DelimiterSpec format;
  format.columns = DelimiterSpec::parse_columns(cfg_.columns);
  format.delimiter = DelimiterSpec::parse_delimiter(cfg_.delimiter);
  if (!fs::exists(cfg_.data)) throw DataError("data file " + cfg_.data.string() + " does not exist");
  l->dataset_hash = nn::content_hash(cfg_.data);
  auto m = load_interactions(cfg_.data, format);
  m = filter_min_interactions(m, cfg_.min_interactions);
  if (cfg_.user_fraction < 1.0) m = subsample_users(m, cfg_.user_fraction, stage_seed("subsample"));
  l->full = std::move(m);
  log::info("dataset: ", l->full.user_count(), " users, ", l->full.item_count(), " items, ",
            l->full.positive_count(), " positives, density ", l->full.density());
  loaded_ = l;
  return *loaded_;
}

namespace {
const std::vector<std::string> kDataKeys{"data", "columns", "delimiter", "min_interactions", "user_fraction",
                                         "split", "n_test", "seed"};
const std::vector<std::string> kTrainKeys{"dim", "embed_dim", "hidden", "activation", "batch_size", "max_epochs",
                                          "margin", "learning_rate", "patience", "l2_reg", "validation_fraction",
                                          "hard_draws", "seed"};
}  // namespace

const InteractionMatrix& Pipeline::dataset() { return data().full; }

const Split& Pipeline::split_data() {
  auto& d = data();
  if (!d.split) {
    require("split", "ingest");
    d.split = read_split_manifest(path_of("split"), d.full);
  }
  return *d.split;
}

void Pipeline::ingest() {
  auto& d = data();
  artifacts_["dataset"] = Record{fs::absolute(cfg_.data).generic_string(), d.dataset_hash, "", 0.0, 0};
  produce("split", fingerprint("split", kDataKeys, {"dataset"}), [&](const fs::path& path) {
    SplitSpec spec;
    spec.protocol = cfg_.protocol;
    spec.n_test = cfg_.n_test;
    spec.seed = stage_seed("split");
    auto s = split(d.full, spec);
    log::info("split ", to_string(spec.protocol), ": ", s.train.positive_count(), " train, ", s.test_count(),
              " test positives, ", s.excluded.size(), " users excluded");
    write_split_manifest(path, s);
    return spec.seed;
  });
}

void Pipeline::train_representation(const std::string& tag) {
  const bool local = tag[0] == 'L';
  std::vector<std::string> deps{"split"};
  if (local) {
    deps.push_back("index");
    deps.push_back("triplets");
  }
  for (const auto& dep : deps) require(dep, dep == "split" ? "ingest" : dep == "index" ? "index" : "train");
  const auto artifact = "model/" + tag;
  produce(artifact, fingerprint(artifact, kTrainKeys, deps), [&](const fs::path& path) {
    const auto& s = split_data();
    TrainConfig tc = cfg_.train;
    tc.seed = stage_seed("train/" + tag);
    const auto loss = loss_of(tag);
    RepresentationModel model;
    if (local) {
      const auto sets = read_local_triplets(path_of("triplets"));
      model = train_local(s.train, sets, loss, tc);
    } else {
      model = train_global(s.train, loss, tc);
    }
    save_model(path, model, tc);
    return tc.seed;
  });
}

void Pipeline::build_index() {
  require("model/GD", "train");
  produce("index", fingerprint("index", {"clusters", "seed"}, {"model/GD"}), [&](const fs::path& path) {
    const auto model = load_model(path_of("model/GD"));
    const auto seed = stage_seed("index");
    const auto idx = attrec::build_index(model, cfg_.clusters, seed, "GD@" + artifacts_.at("model/GD").hash);
    idx.save(path);
    return seed;
  });
}

void Pipeline::mine() {
  require("split", "ingest");
  require("model/GD", "train");
  require("index", "index");
  produce("triplets",
          fingerprint("triplets", {"mining_clusters", "mining_negatives", "seed"}, {"split", "model/GD", "index"}),
          [&](const fs::path& path) {
            const auto model = load_model(path_of("model/GD"));
            const auto idx = ClusterIndex::load(path_of("index"));
            MiningOptions opt;
            opt.candidate_clusters = cfg_.mining_clusters;
            opt.negatives_per_positive = cfg_.mining_negatives;
            const auto seed = stage_seed("mine");
            const auto sets = mine_local_triplets(model, idx, split_data().train, opt, seed);
            write_local_triplets(path, sets);
            return seed;
          });
}

void Pipeline::train_attention_config(const std::string& name) {
  require("split", "ingest");
  const auto chans = channels_of(name);
  std::vector<std::string> deps{"split"};
  for (const auto& c : chans) {
    require("model/" + c, "train");
    deps.push_back("model/" + c);
  }
  // local triplet sets join the pool whenever this run mined them
  const bool with_local = artifacts_.count("triplets") && fs::exists(path_of("triplets"));
  if (with_local) {
    require("triplets", "train");
    deps.push_back("triplets");
  }
  const auto artifact = "model/" + name;
  produce(artifact, fingerprint(artifact, kTrainKeys, deps), [&](const fs::path& path) {
    std::vector<Channel> channels;
    for (const auto& c : chans) {
      const auto p = path_of("model/" + c);
      channels.push_back({std::make_shared<RepresentationModel>(load_model(p)), p.string(),
                          artifacts_.at("model/" + c).hash});
    }
    std::optional<LocalTripletSets> sets;
    if (with_local) sets = read_local_triplets(path_of("triplets"));
    AttentionSources sources;
    sources.global = true;
    sources.local = sets ? &*sets : nullptr;
    TrainConfig tc = cfg_.train;
    tc.seed = stage_seed("attend/" + name);
    const auto model = attrec::train_attention(split_data().train, std::move(channels), sources, loss_of(name), tc,
                                               name);
    model.save(path);
    return tc.seed;
  });
}

void Pipeline::train() {
  require("split", "ingest");
  split_data();
  for (const auto& tag : {"GD", "GP"}) {
    if (contains(cfg_.representations, tag)) train_representation(tag);
  }
  if (contains(cfg_.representations, "GD")) build_index();
  if (contains(cfg_.representations, "LD") || contains(cfg_.representations, "LP")) {
    mine();
    for (const auto& tag : {"LD", "LP"}) {
      if (contains(cfg_.representations, tag)) train_representation(tag);
    }
  }
  for (const auto& a : cfg_.attention) train_attention_config(a);
}

void Pipeline::index() {
  require("split", "ingest");
  build_index();
}

void Pipeline::attend() {
  require("split", "ingest");
  split_data();
  for (const auto& a : cfg_.attention) train_attention_config(a);
}

namespace {

struct ScorerSet {
  std::vector<std::unique_ptr<RepresentationModel>> models;
  std::vector<std::unique_ptr<PairScorer>> scorers;
};

}  // namespace

std::filesystem::path Pipeline::recommend(const std::vector<std::string>& users, const std::string& scorer_name,
                                          const std::optional<fs::path>& out) {
  require("split", "ingest");
  require("index", "index");
  auto name = !scorer_name.empty()         ? scorer_name
              : !cfg_.recommend_with.empty() ? cfg_.recommend_with
              : !cfg_.attention.empty()      ? cfg_.attention.front()
                                             : cfg_.representations.front();
  if (!contains(cfg_.representations, name) && !contains(cfg_.attention, name)) {
    throw ConfigError("recommend: '" + name + "' is not part of this run");
  }
  require("model/" + name, "train");
  auto& d = data();
  split_data();
  const auto idx = ClusterIndex::load(path_of("index"));
  const auto gd = load_model(path_of("model/GD"));
  std::unique_ptr<PairScorer> scorer;
  std::unique_ptr<RepresentationModel> rep;
  if (contains(cfg_.attention, name)) {
    scorer = std::make_unique<AttentionModel>(AttentionModel::load(path_of("model/" + name)));
  } else {
    rep = std::make_unique<RepresentationModel>(load_model(path_of("model/" + name)));
    scorer = std::make_unique<RepresentationScorer>(*rep);
  }
  Recommender rec(idx, gd, *scorer, &d.split->train);
  std::vector<UserIndex> ids;
  if (users.empty()) {
    for (size_t u = 0; u < d.full.user_count(); ++u) ids.push_back(static_cast<UserIndex>(u));
  } else {
    for (const auto& raw : users) {
      const auto u = d.full.find_user(raw);
      if (!u) throw DataError("recommend: unknown user '" + raw + "'");
      ids.push_back(*u);
    }
  }
  RecommendConfig rc;
  rc.K = cfg_.candidates;
  rc.N = cfg_.recommend_n;
  rc.scorer = scorer_for(scorer->loss_kind());
  std::vector<RecommendationList> lists(ids.size());
  parallel_for(ids.size(), [&](size_t k) { lists[k] = rec.recommend(ids[k], rc); });
  const auto path = out.value_or(cfg_.output / ("recommendations_" + name + ".tsv"));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  write_recommendations(os, lists, d.full);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  log::info("recommend: ", lists.size(), " users with ", name, " -> ", path.string());
  return path;
}

void Pipeline::evaluate() {
  require("split", "ingest");
  auto& d = data();
  split_data();
  std::vector<std::string> names = cfg_.representations;
  names.insert(names.end(), cfg_.attention.begin(), cfg_.attention.end());
  std::vector<std::string> deps{"split"};
  for (const auto& n : names) {
    require("model/" + n, "train");
    deps.push_back("model/" + n);
  }

  // scorers are loaded lazily and shared by all tables
  std::map<std::string, std::unique_ptr<RepresentationModel>> reps;
  std::map<std::string, std::unique_ptr<PairScorer>> scorers;
  auto scorer = [&](const std::string& n) -> const PairScorer& {
    auto it = scorers.find(n);
    if (it != scorers.end()) return *it->second;
    if (contains(cfg_.attention, n)) {
      scorers[n] = std::make_unique<AttentionModel>(AttentionModel::load(path_of("model/" + n)));
    } else {
      reps[n] = std::make_unique<RepresentationModel>(load_model(path_of("model/" + n)));
      scorers[n] = std::make_unique<RepresentationScorer>(*reps[n]);
    }
    return *scorers[n];
  };

  if (cfg_.protocol == SplitProtocol::leave_one_out) {
    produce("loo", fingerprint("loo", {"loo_negatives", "loo_topk", "seed"}, deps), [&](const fs::path& path) {
      const auto seed = stage_seed("loo");
      std::ofstream os(path);
      os << "representation\td\tnegatives\ttopk\thit_rate\tndcg\tusers\n";
      for (const auto& n : names) {
        const auto r = metrics::evaluate_loo(d.full, d.split->test, scorer(n), cfg_.loo_negatives, cfg_.loo_topk,
                                             seed);
        os << n << '\t' << cfg_.train.dim << '\t' << r.negatives << '\t' << r.topk << '\t' << fmt(r.hit_rate)
           << '\t' << fmt(r.ndcg) << '\t' << r.users << '\n';
        log::info("loo ", n, ": HR@", r.topk, " ", fmt(r.hit_rate), ", NDCG@", r.topk, " ", fmt(r.ndcg));
      }
      if (!os) throw std::runtime_error("cannot write " + path.string());
      return seed;
    });
    return;
  }

  require("index", "index");
  deps.push_back("index");
  std::unique_ptr<ClusterIndex> idx;
  std::unique_ptr<RepresentationModel> gd;
  auto load_index = [&] {
    if (idx) return;
    idx = std::make_unique<ClusterIndex>(ClusterIndex::load(path_of("index")));
    gd = std::make_unique<RepresentationModel>(load_model(path_of("model/GD")));
  };

  produce("ablation", fingerprint("ablation", {"candidates", "topn"}, deps), [&](const fs::path& path) {
    load_index();
    std::ofstream os(path);
    os << "representation\tN\tK\tM\td\trecall\tprecision\thit_rate\tarhr\tndcg\tusers\tskipped\n";
    for (const auto& n : names) {
      Recommender rec(*idx, *gd, scorer(n), &d.split->train);
      for (const auto& r : metrics::evaluate_topn(d.split->test, rec, cfg_.topn, cfg_.candidates, n)) {
        os << r.representation << '\t' << r.N << '\t' << r.K << '\t' << r.M << '\t' << r.d << '\t'
           << fmt(r.mean.recall) << '\t' << fmt(r.mean.precision) << '\t' << fmt(r.mean.hit_rate) << '\t'
           << fmt(r.mean.arhr) << '\t' << fmt(r.mean.ndcg) << '\t' << r.users << '\t' << r.skipped << '\n';
        if (r.N == 15 || cfg_.topn.size() == 1) {
          log::info(n, " N=", r.N, ": recall ", fmt(r.mean.recall), ", precision ", fmt(r.mean.precision));
        }
      }
    }
    if (!os) throw std::runtime_error("cannot write " + path.string());
    return uint64_t{0};
  });

  produce("coverage", fingerprint("coverage", {"coverage_k", "coverage_n"}, deps), [&](const fs::path& path) {
    load_index();
    std::ofstream os(path);
    os << "representation\tK\tN\trecall\tmean_candidates\n";
    for (const auto& n : names) {
      Recommender rec(*idx, *gd, scorer(n), &d.split->train);
      for (const auto& p : metrics::coverage_recall(d.split->test, rec, cfg_.coverage_k, cfg_.coverage_n)) {
        os << n << '\t' << p.K << '\t' << cfg_.coverage_n << '\t' << fmt(p.recall) << '\t'
           << fmt(p.mean_candidates) << '\n';
      }
    }
    if (!os) throw std::runtime_error("cannot write " + path.string());
    return uint64_t{0};
  });
}

std::string Pipeline::report() {
  std::ostringstream md;
  md << "# attrec run report\n\n";
  md << "Output directory: `" << cfg_.output.generic_string() << "`, seed " << cfg_.seed << "\n\n";
  md << "## Artifacts\n\n| artifact | file | hash | seconds |\n|---|---|---|---|\n";
  for (const auto& [name, r] : artifacts_) {
    if (name == "dataset") continue;
    md << "| " << name << " | " << r.path << " | `" << r.hash << "` | " << fmt(r.seconds) << " |\n";
  }
  auto table = [&](const std::string& artifact, const std::string& title) {
    const auto path = path_of(artifact);
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::string line;
    bool header = true;
    md << "\n## " << title << "\n\n";
    while (std::getline(in, line)) {
      std::string row = "|";
      std::stringstream ss(line);
      std::string cell;
      size_t cols = 0;
      while (std::getline(ss, cell, '\t')) {
        row += " " + cell + " |";
        ++cols;
      }
      md << row << "\n";
      if (header) {
        md << "|";
        for (size_t k = 0; k < cols; ++k) md << "---|";
        md << "\n";
        header = false;
      }
    }
  };
  table("ablation", "Top-N accuracy");
  table("coverage", "Candidate-cluster coverage");
  table("loo", "Leave-one-out");
  const auto text = md.str();
  fs::create_directories(cfg_.output);
  std::ofstream(cfg_.output / "report.md") << text;
  return text;
}

}  // namespace attrec::pipeline
