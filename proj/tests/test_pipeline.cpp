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

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attrec/errors.hpp"
#include "attrec/pipeline.hpp"
#include "support.hpp"

using namespace attrec;
using namespace attrec::pipeline;
using testkit::ScratchDir;

namespace {

RunConfig parse(const std::string& text, const std::filesystem::path& base = {}) {
  std::istringstream in(text);
  return parse_config(in, "<test>", base);
}

// Writes a small block-structured interaction file with timestamps.
void write_toy_data(const std::filesystem::path& path) {
  const auto m = testkit::block_matrix(60, 80, 4, 0.3, 0.02, 5);
  std::ofstream out(path);
  for (UserIndex u = 0; u < static_cast<UserIndex>(m.user_count()); ++u) {
    for (const auto& p : m.row(u)) {
      out << m.user_ids()[static_cast<size_t>(u)] << '\t' << m.item_ids()[static_cast<size_t>(p.item)] << "\t4\t"
          << 1000 + p.timestamp << '\n';
    }
  }
}

std::string toy_config(const ScratchDir& dir) {
  return "data = " + (dir / "toy.tsv").string() + "\n" +
         "output = " + (dir / "run").string() + "\n"
         "dim = 32\nembed_dim = 16\nhidden = 16,16\nmax_epochs = 2\nbatch_size = 64\n"
         "learning_rate = 0.005\nclusters = 4\ncandidates = 2\nmining_clusters = 2\n"
         "topn = 5,10\ncoverage_k = 1,2\ncoverage_n = 10\nseed = 3\n";
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ATTREC_CLI) + " -q " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

size_t line_count(const std::filesystem::path& p) {
  std::ifstream in(p);
  return static_cast<size_t>(std::count(std::istreambuf_iterator<char>(in), {}, '\n'));
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndLists) {
  const auto c = parse(
      "# comment\n"
      "data = ml/u.data   # trailing comment\n"
      "\n"
      "dim = 128\n"
      "topn = 5, 15\n"
      "representations = GD,GP\n"
      "attention = GAP\n"
      "split = leave-one-out\n"
      "learning_rate = 1e-3\n",
      "/base");
  EXPECT_EQ(c.data, std::filesystem::path("/base/ml/u.data"));
  EXPECT_EQ(c.output, std::filesystem::path("/base/run"));
  EXPECT_EQ(c.train.dim, 128u);
  EXPECT_EQ(c.topn, (std::vector<size_t>{5, 15}));
  EXPECT_EQ(c.representations, (std::vector<std::string>{"GD", "GP"}));
  EXPECT_EQ(c.attention, (std::vector<std::string>{"GAP"}));
  EXPECT_EQ(c.protocol, SplitProtocol::leave_one_out);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 1e-3);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, DefaultsMatchTheReferenceSetup) {
  const RunConfig c;
  EXPECT_EQ(c.train.dim, 64u);
  EXPECT_EQ(c.train.batch_size, 512u);
  EXPECT_EQ(c.train.max_epochs, 200u);
  EXPECT_EQ(c.train.patience, 10u);
  EXPECT_DOUBLE_EQ(c.train.learning_rate, 0.00017);
  EXPECT_DOUBLE_EQ(c.train.margin, 0.5);
  EXPECT_EQ(c.clusters, 20u);
  EXPECT_EQ(c.candidates, 2u);
  EXPECT_EQ(c.mining_clusters, 5u);
  EXPECT_EQ(c.loo_negatives, 99u);
}

TEST(Config, EntriesRoundTrip) {
  auto c = parse("dim = 32\nattention = \nmargin = 0.25\nactivation = tanh\ndelimiter = comma\n", "/x");
  std::ostringstream text;
  for (const auto& [k, v] : c.entries()) text << k << " = " << v << "\n";
  const auto back = parse(text.str(), "/x");
  EXPECT_EQ(back.entries(), c.entries());
  EXPECT_EQ(back.value_of("margin"), c.value_of("margin"));
  EXPECT_TRUE(back.attention.empty());
  for (const auto& k : config_keys()) EXPECT_NO_THROW(c.value_of(k.key)) << k.key;
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(parse("dim = 32\ndim = 64\n"), ConfigError);
  EXPECT_THROW(parse("dimension = 32\n"), ConfigError);
  EXPECT_THROW(parse("dim 32\n"), ConfigError);
  EXPECT_THROW(parse("clusters = -3\n"), ConfigError);
  EXPECT_THROW(parse("clusters = many\n"), ConfigError);
  EXPECT_THROW(parse("split = random\n"), ConfigError);
  EXPECT_THROW(parse("dim = 48\n").validate(), ConfigError);
  EXPECT_THROW(parse("representations = GD,GP\nattention = AD\n").validate(), ConfigError);
  EXPECT_THROW(parse("representations = GD,XX\nattention =\n").validate(), ConfigError);
  EXPECT_THROW(parse("representations = LD\nattention =\n").validate(), ConfigError);  // locals need GD's index
  EXPECT_THROW(parse("candidates = 21\n").validate(), ConfigError);
  EXPECT_THROW(parse("user_fraction = 0\n").validate(), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/attrec.cfg"), ConfigError);
}

TEST(Config, AttentionChannels) {
  EXPECT_EQ(channels_of("AD"), (std::vector<std::string>{"GD", "GP", "LD", "LP"}));
  EXPECT_EQ(channels_of("AP"), (std::vector<std::string>{"GD", "GP", "LD", "LP"}));
  EXPECT_EQ(channels_of("GAP"), (std::vector<std::string>{"GD", "GP"}));
  EXPECT_EQ(channels_of("LAD"), (std::vector<std::string>{"LD", "LP"}));
  EXPECT_EQ(loss_of("LAD"), LossKind::distance);
  EXPECT_EQ(loss_of("GP"), LossKind::product);
  EXPECT_THROW(channels_of("XAD"), ConfigError);
}

TEST(Pipeline, EndToEndIsIdempotentAndDetectsStaleArtifacts) {
  ScratchDir dir("pipeline");
  write_toy_data(dir / "toy.tsv");
  const auto cfg = parse(toy_config(dir));
  {
    Pipeline p(cfg);
    p.ingest();
    p.train();
    p.evaluate();
    const auto md = p.report();
    EXPECT_TRUE(p.skipped().empty());
    EXPECT_NE(md.find("AD"), std::string::npos);
  }
  for (const auto* name : {"split.tsv", "index.bin", "triplets.tsv", "models/GD.params", "models/GP.params",
                           "models/LD.params", "models/LP.params", "models/AD.params", "models/AP.params",
                           "ablation.tsv", "coverage.tsv", "report.md", "run.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / ("run/" + std::string(name)))) << name;
  }
  // 6 representations x 2 list lengths + header
  EXPECT_EQ(line_count(dir / "run/ablation.tsv"), 13u);
  EXPECT_EQ(line_count(dir / "run/coverage.tsv"), 13u);

  std::ifstream first(dir / "run/models/AP.params", std::ios::binary);
  const std::string ap_before((std::istreambuf_iterator<char>(first)), {});
  {
    Pipeline p(cfg);
    p.train();
    // everything already built: nothing re-runs
    const std::vector<std::string> all{"model/GD", "model/GP", "index",    "triplets",
                                       "model/LD", "model/LP", "model/AD", "model/AP"};
    EXPECT_EQ(p.skipped(), all);
  }
  auto skipped = [](const Pipeline& p, const std::string& a) {
    return std::find(p.skipped().begin(), p.skipped().end(), a) != p.skipped().end();
  };
  {
    // a hand-edited model is rebuilt; the rebuild reproduces the same bytes,
    // so what depends on it stays valid
    std::ofstream(dir / "run/models/GP.params", std::ios::app) << "x";
    Pipeline p(cfg);
    p.train();
    EXPECT_TRUE(skipped(p, "model/GD"));
    EXPECT_FALSE(skipped(p, "model/GP"));
    EXPECT_TRUE(skipped(p, "model/AP"));
  }
  std::ifstream second(dir / "run/models/AP.params", std::ios::binary);
  const std::string ap_after((std::istreambuf_iterator<char>(second)), {});
  EXPECT_EQ(ap_before, ap_after);
  {
    // different mining settings: new triplets, so the local and attention models rerun
    auto changed = cfg;
    changed.mining_negatives = 2;
    Pipeline p(changed);
    p.train();
    for (const auto* a : {"model/GD", "model/GP", "index"}) EXPECT_TRUE(skipped(p, a)) << a;
    for (const auto* a : {"triplets", "model/LD", "model/LP", "model/AD", "model/AP"}) EXPECT_FALSE(skipped(p, a)) << a;
  }

  Pipeline p(cfg);
  const auto out = p.recommend({"u0", "u7"}, "GD");
  EXPECT_EQ(line_count(out), 2 * cfg.recommend_n);
  EXPECT_THROW(p.recommend({"nobody"}), DataError);
}

TEST(Pipeline, MissingInputsNameTheStage) {
  ScratchDir dir("missing");
  write_toy_data(dir / "toy.tsv");
  Pipeline p(parse(toy_config(dir)));
  auto message = [&](auto stage) -> std::string {
    try {
      stage();
    } catch (const DataError& e) {
      return e.what();
    }
    return "no error";
  };
  EXPECT_NE(message([&] { p.index(); }).find("'ingest'"), std::string::npos);
  p.ingest();
  EXPECT_NE(message([&] { p.index(); }).find("'train'"), std::string::npos);
  auto cfg = parse(toy_config(dir));
  cfg.data = dir / "absent.tsv";
  EXPECT_THROW(Pipeline(cfg).ingest(), DataError);
}

TEST(Pipeline, StageSeedsAreDistinctAndStable) {
  RunConfig a;
  a.data = "toy.tsv";
  auto b = a;
  b.seed = 2;
  const Pipeline pa(a), pa2(a), pb(b);
  EXPECT_EQ(pa.stage_seed("train/GD"), pa2.stage_seed("train/GD"));
  EXPECT_NE(pa.stage_seed("train/GD"), pa.stage_seed("train/GP"));
  EXPECT_NE(pa.stage_seed("train/GD"), pb.stage_seed("train/GD"));
}

TEST(Cli, ExitCodes) {
  ScratchDir dir("cli");
  write_toy_data(dir / "toy.tsv");
  std::ofstream(dir / "toy.cfg") << toy_config(dir);
  const std::string cfg = "-c " + (dir / "toy.cfg").string();
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_EQ(run_cli(cfg + " --no-such-flag ingest"), 2);
  EXPECT_EQ(run_cli(cfg + " --dim 48 ingest"), 2);
  EXPECT_EQ(run_cli("-c " + (dir / "absent.cfg").string() + " ingest"), 2);
  EXPECT_EQ(run_cli(cfg + " --data " + (dir / "absent.tsv").string() + " ingest"), 3);
  EXPECT_EQ(run_cli(cfg + " --output " + (dir / "fresh").string() + " index"), 3);
  EXPECT_EQ(run_cli(cfg + " --learning_rate 1e30 --representations GD --attention '' run"), 4);
  EXPECT_EQ(run_cli(cfg + " --representations GD,GP --attention GAD run"), 0);
  EXPECT_EQ(run_cli(cfg + " --single-thread ingest"), 0);
}
