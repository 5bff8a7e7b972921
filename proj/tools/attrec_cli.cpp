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

// attrec: command-line front end for the training / retrieval pipeline.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attrec/errors.hpp"
#include "attrec/log.hpp"
#include "attrec/parallel.hpp"
#include "attrec/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

std::vector<std::string> read_users(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw attrec::DataError("cannot open user list " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"attrec - attentive multi-representation recommender"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  bool single_thread = false, force = false, verbose = false, quiet = false;
  app.add_option("-c,--config", config_path, "flat key = value run configuration");
  app.add_flag("--single-thread", single_thread, "run every stage on one thread");
  app.add_flag("--force", force, "redo stages even when their inputs are unchanged");
  app.add_flag("-v,--verbose", verbose, "per-epoch logging");
  app.add_flag("-q,--quiet", quiet, "warnings and errors only");

  // every config key doubles as an override flag
  std::map<std::string, std::string> overrides;
  for (const auto& k : attrec::pipeline::config_keys()) {
    app.add_option_function<std::string>(
        "--" + k.key, [&overrides, key = k.key](const std::string& v) { overrides[key] = v; }, k.help);
  }

  auto* ingest = app.add_subcommand("ingest", "load, filter and split the interaction file");
  auto* train = app.add_subcommand("train", "train representations, index, local models and attention");
  auto* index = app.add_subcommand("index", "(re)build the item cluster index in the GD space");
  auto* attend = app.add_subcommand("attend", "train the attention configurations");
  auto* recommend = app.add_subcommand("recommend", "write top-N lists");
  auto* evaluate = app.add_subcommand("evaluate", "top-N, coverage or leave-one-out tables");
  auto* report = app.add_subcommand("report", "summarize the run directory");
  auto* run = app.add_subcommand("run", "ingest, train, evaluate and report in one go");

  std::vector<std::string> users;
  std::string users_file, scorer_name, out_path;
  recommend->add_option("-u,--user", users, "raw user id (repeatable)");
  recommend->add_option("--users", users_file, "file with one raw user id per line")->check(CLI::ExistingFile);
  recommend->add_option("--with", scorer_name, "representation or attention config to rank with");
  recommend->add_option("-o,--out", out_path, "output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  attrec::log::set_level(verbose ? attrec::log::Level::debug
                         : quiet ? attrec::log::Level::warn
                                 : attrec::log::Level::info);
  if (single_thread) attrec::set_thread_count(1);

  try {
    attrec::pipeline::RunConfig cfg;
    if (!config_path.empty()) cfg = attrec::pipeline::load_config(config_path);
    for (const auto& [k, v] : overrides) attrec::pipeline::set_key(cfg, k, v);
    attrec::pipeline::Pipeline p(cfg, force);

    if (ingest->parsed()) p.ingest();
    if (train->parsed()) p.train();
    if (index->parsed()) p.index();
    if (attend->parsed()) p.attend();
    if (recommend->parsed()) {
      if (!users_file.empty()) {
        for (auto& u : read_users(users_file)) users.push_back(std::move(u));
      }
      std::optional<std::filesystem::path> out;
      if (!out_path.empty()) out = out_path;
      std::cout << p.recommend(users, scorer_name, out).string() << "\n";
    }
    if (evaluate->parsed()) p.evaluate();
    if (run->parsed()) {
      p.ingest();
      p.train();
      p.evaluate();
    }
    if (report->parsed() || run->parsed()) std::cout << p.report();
  } catch (const attrec::ConfigError& e) {
    attrec::log::error("config: ", e.what());
    return kConfig;
  } catch (const attrec::DataError& e) {
    attrec::log::error("data: ", e.what());
    return kData;
  } catch (const attrec::NumericError& e) {
    attrec::log::error("numeric: ", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    attrec::log::error(e.what());
    return kFailure;
  }
  return kOk;
}
