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
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "attrec/corpus.hpp"
#include "attrec/towers.hpp"

namespace attrec::pipeline {

// Everything a run needs. Parsed from a flat "key = value" file; every key
// can also be overridden on the command line.
struct RunConfig {
  std::filesystem::path data;
  std::string columns = "user,item,rating,timestamp";
  std::string delimiter = "tab";
  size_t min_interactions = 0;
  double user_fraction = 1.0;  // uniform user subsample before splitting
  SplitProtocol protocol = SplitProtocol::random_half;
  size_t n_test = 3;

  size_t clusters = 20;          // M
  size_t candidates = 2;         // K at retrieval time
  size_t mining_clusters = 5;    // J
  size_t mining_negatives = 5;   // per positive; 0 = every legal negative
  std::vector<size_t> topn{5, 10, 15, 20, 25, 30};
  std::vector<size_t> coverage_k{1, 2, 3, 4, 5};
  size_t coverage_n = 20;
  size_t recommend_n = 15;
  std::string recommend_with;  // empty: first attention config, else first representation
  size_t loo_negatives = 99;
  size_t loo_topk = 10;

  std::vector<std::string> representations{"GD", "GP", "LD", "LP"};
  std::vector<std::string> attention{"AD", "AP"};
  TrainConfig train;  // train.seed is ignored; seeds derive from `seed`

  std::filesystem::path output = "run";
  uint64_t seed = 1;

  // Throws ConfigError on out-of-range values or attention configurations
  // whose channels are not in `representations`.
  void validate() const;
  // Canonical (key, value) listing in documentation order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string value_of(const std::string& key) const;
};

struct KeyInfo {
  std::string key;
  std::string help;
};
const std::vector<KeyInfo>& config_keys();

// Applies one key; unknown keys and malformed values throw ConfigError.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);
// '#' starts a comment; blank lines are ignored; relative data/output paths
// resolve against `base`.
RunConfig parse_config(std::istream& in, const std::string& origin = "<config>",
                       const std::filesystem::path& base = {});
RunConfig load_config(const std::filesystem::path& path);

// Channels of an attention configuration, in blend order.
std::vector<std::string> channels_of(const std::string& attention_name);
LossKind loss_of(const std::string& name);  // trailing D or P

class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg, bool force = false);

  void ingest();
  // Global models, then (when locals are requested) index + mining + local
  // models, then every attention configuration.
  void train();
  void index();
  void attend();
  // Batch recommendations for `users` (raw ids; empty = every user).
  std::filesystem::path recommend(const std::vector<std::string>& users, const std::string& scorer_name = {},
                                  const std::optional<std::filesystem::path>& out = std::nullopt);
  void evaluate();
  // Markdown summary of the manifest and metric tables; also written to
  // report.md in the output directory.
  std::string report();

  // The filtered (and subsampled) interactions and the ingested split; the
  // split needs a prior ingest.
  const InteractionMatrix& dataset();
  const Split& split_data();

  const RunConfig& config() const { return cfg_; }
  std::filesystem::path path_of(const std::string& artifact) const;
  uint64_t stage_seed(const std::string& name) const;
  // Stages skipped because their inputs were unchanged, in call order.
  const std::vector<std::string>& skipped() const { return skipped_; }

 private:
  struct Loaded;
  Loaded& data();
  void train_representation(const std::string& tag);
  void build_index();
  void mine();
  void train_attention_config(const std::string& name);

  // Produces `artifact` via `make` unless the manifest records the same
  // fingerprint and the file still hashes to the recorded value.
  template <typename Make>
  void produce(const std::string& artifact, const std::string& fingerprint, Make make);
  std::string require(const std::string& artifact, const std::string& stage) const;
  std::string fingerprint(const std::string& artifact, const std::vector<std::string>& keys,
                          const std::vector<std::string>& deps) const;
  void load_manifest();
  void save_manifest() const;

  RunConfig cfg_;
  bool force_;
  std::vector<std::string> skipped_;
  std::shared_ptr<Loaded> loaded_;
  struct Record {
    std::string path, hash, fingerprint;
    double seconds = 0.0;
    uint64_t seed = 0;
  };
  std::map<std::string, Record> artifacts_;
};

}  // namespace attrec::pipeline
