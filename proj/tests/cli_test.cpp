// Copyright 2026 The Allophone Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "allophone_cli.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"

namespace allo::cli {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args, const std::string& stdin_text = "") {
  args.insert(args.begin(), "allophone");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  std::istringstream in(stdin_text);
  const int code = dispatch(int(argv.size()), argv.data(), out, err, in);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small synthetic corpus plus a briefly pretrained checkpoint, built once.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::temp_dir("cli_pipeline");
    const auto d = dir_.string();
    ASSERT_EQ(run({"synth", "--out-dir", d, "--seed", "3", "--pretrain-size",
                   "30", "--train-size", "20", "--dev-size", "6",
                   "--test-size", "10", "--epochs", "2"})
                  .code,
              0);
    ASSERT_EQ(run({"pretrain", "--config", d + "/pretrain.json", "--out",
                   d + "/pre.ckpt"})
                  .code,
              0);
  }
  static fs::path dir_;
  static std::string p(const std::string& name) { return (dir_ / name).string(); }
};
fs::path Pipeline::dir_;

TEST_F(Pipeline, DecodeWithInventoryStaysInsideIt) {
  auto r = run({"decode", "--model", p("pre.ckpt"), "--manifest",
                p("B.test.jsonl"), "--inventory", p("B.inventory.txt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto inv = read_inventory_file(p("B.inventory.txt"));
  const std::set<std::string> allowed(inv.begin(), inv.end());
  std::istringstream in(r.out);
  const auto hyps = eval::read_transcripts(in, "stdout");
  EXPECT_EQ(hyps.size(), 10u);
  for (const auto& h : hyps)
    for (const auto& ph : h.phones) EXPECT_TRUE(allowed.count(ph)) << ph;
}

TEST_F(Pipeline, DecodeIsIndependentOfJobs) {
  auto a = run({"decode", "--model", p("pre.ckpt"), "--manifest",
                p("B.test.jsonl"), "--jobs", "1"});
  auto b = run({"decode", "--model", p("pre.ckpt"), "--manifest",
                p("B.test.jsonl"), "--jobs", "4"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
}

TEST_F(Pipeline, DecodeThroughLanguageHead) {
  auto r = run({"decode", "--model", p("pre.ckpt"), "--manifest",
                p("B.test.jsonl"), "--language", "A"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::set<std::string> phonemes = {"a", "i", "u", "e", "n", "d", "l"};
  std::istringstream in(r.out);
  for (const auto& h : eval::read_transcripts(in, "stdout"))
    for (const auto& ph : h.phones) EXPECT_TRUE(phonemes.count(ph)) << ph;
  EXPECT_EQ(run({"decode", "--model", p("pre.ckpt"), "--manifest",
                 p("B.test.jsonl"), "--language", "Z"})
                .code,
            1);
}

TEST_F(Pipeline, SubsetIsReproducible) {
  const std::vector<std::string> args = {"subset", "--manifest",
                                         p("B.train.jsonl"), "--size", "7",
                                         "--seed", "11"};
  auto a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(lines(a.out).size(), 7u);
  auto c = run({"subset", "--manifest", p("B.train.jsonl"), "--size", "7",
                "--seed", "12"});
  EXPECT_NE(a.out, c.out);
}

TEST_F(Pipeline, SubsetManifestLoads) {
  fs::create_directories(dir_ / "sub");
  ASSERT_EQ(run({"subset", "--manifest", p("B.train.jsonl"), "--size", "5",
                 "--out", p("sub/s.jsonl")})
                .code,
            0);
  EXPECT_EQ(dataprep::load_dataset(p("sub/s.jsonl")).size(), 5u);
}

TEST_F(Pipeline, EvalPerIdenticalIsZero) {
  auto r = run({"eval-per", "--ref", p("B.test.ref.txt"), "--hyp",
                p("B.test.ref.txt"), "--pretty"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("PER 0.00", 0), 0u) << r.out;
  auto j = nlohmann::json::parse(
      run({"eval-per", "--ref", p("B.test.ref.txt"), "--hyp",
           p("B.test.ref.txt")})
          .out);
  EXPECT_EQ(j["per"].get<double>(), 0.0);
  EXPECT_EQ(j["utterances"].get<int>(), 10);
}

TEST_F(Pipeline, FinetuneSweepAndCurves) {
  auto r = run({"finetune", "--init", p("pre.ckpt"), "--train",
                p("B.train.jsonl"), "--dev", p("B.dev.jsonl"), "--out",
                p("ft.ckpt"), "--history", p("ft.hist"), "--config",
                p("finetune.json"), "--sweep-sizes", "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 2u);  // 10, then the full 20
  EXPECT_EQ(nlohmann::json::parse(rows[0])["size"], 10);
  EXPECT_EQ(nlohmann::json::parse(rows[1])["size"], 20);
  EXPECT_TRUE(fs::exists(p("ft.ckpt.n20")));
  EXPECT_TRUE(fs::exists(p("ft.hist.n10")));

  std::ofstream(p("sweep.jsonl")) << r.out;
  auto c = run({"curves", "--sweep", p("sweep.jsonl"), "--history",
                p("ft.hist.n10")});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto cl = lines(c.out);
  ASSERT_EQ(cl.size(), 2u + 2u);  // 2 sizes, epochs 0 and 1
  EXPECT_EQ(nlohmann::json::parse(cl[2])["curve"], "per_vs_epoch");
  EXPECT_EQ(nlohmann::json::parse(cl[3])["epoch"], 1);
}

TEST_F(Pipeline, FinetuneAllophoneModeCreatesHead) {
  auto r = run({"finetune", "--init", p("pre.ckpt"), "--train",
                p("B.train.jsonl"), "--dev", p("B.dev.jsonl"), "--out",
                p("ftb.ckpt"), "--mode", "allophone", "--language", "B",
                "--epochs", "1"});
  EXPECT_EQ(r.code, 1);  // no head for B and no signature
  ojson sig = ojson::object();
  for (const auto& ph : read_inventory_file(p("B.inventory.txt")))
    sig[ph] = ojson::array({ph});
  std::ofstream(p("B.signature.json")) << sig.dump();
  r = run({"finetune", "--init", p("pre.ckpt"), "--train", p("B.train.jsonl"),
           "--dev", p("B.dev.jsonl"), "--out", p("ftb.ckpt"), "--mode",
           "allophone", "--language", "B", "--signature",
           p("B.signature.json"), "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(load_checkpoint(p("ftb.ckpt")).model.heads.count("B"));
}

TEST_F(Pipeline, ConfusionsAndCorrections) {
  const auto ref = p("B.test.ref.txt");
  auto hyp = run({"decode", "--model", p("pre.ckpt"), "--manifest",
                  p("B.test.jsonl"), "--out", p("hyp.txt")});
  ASSERT_EQ(hyp.code, 0);
  auto c = run({"confusions", "--ref", ref, "--hyp", p("hyp.txt")});
  ASSERT_EQ(c.code, 0) << c.err;
  for (const auto& l : lines(c.out))
    EXPECT_EQ(nlohmann::json::parse(l)["kind"], "substitution");
  auto fixed = run({"confusions", "--ref", ref, "--baseline", p("hyp.txt"),
                    "--finetuned", ref});
  ASSERT_EQ(fixed.code, 0) << fixed.err;
  // Against a perfect system every baseline error is corrected.
  std::size_t subs = 0;
  for (const auto& l : lines(c.out))
    subs += nlohmann::json::parse(l)["count"].get<std::size_t>();
  std::size_t corrected_subs = 0;
  for (const auto& l : lines(fixed.out)) {
    auto j = nlohmann::json::parse(l);
    if (j["kind"] == "corrected_substitution")
      corrected_subs += j["count"].get<std::size_t>();
  }
  EXPECT_EQ(corrected_subs, subs);
  EXPECT_EQ(run({"confusions", "--ref", ref}).code, 1);
}

TEST_F(Pipeline, PretrainSeedOverrideChangesWeights) {
  ASSERT_EQ(run({"pretrain", "--config", p("pretrain.json"), "--out",
                 p("pre2.ckpt"), "--history", p("pre2.hist")})
                .code,
            0);
  EXPECT_EQ(slurp(p("pre.ckpt")), slurp(p("pre2.ckpt")));
  ASSERT_EQ(run({"pretrain", "--config", p("pretrain.json"), "--out",
                 p("pre3.ckpt"), "--seed", "99"})
                .code,
            0);
  EXPECT_NE(slurp(p("pre.ckpt")), slurp(p("pre3.ckpt")));
  EXPECT_EQ(lines(slurp(p("pre2.hist"))).size(), 2u);
}

TEST(ExitCodes, UsageAndDataErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"eval-per", "--ref", "x"}).code, 1);
  EXPECT_EQ(run({"--help"}).code, 0);
  auto missing = run({"eval-per", "--ref", "/nonexistent/r", "--hyp", "/nonexistent/h"});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("error:"), std::string::npos);
  auto usage = run({"decode"});
  EXPECT_NE(usage.err.find("run_config.schema.json"), std::string::npos);
}

TEST(ExitCodes, CorruptInputIsDataError) {
  auto dir = testing::temp_dir("cli_corrupt");
  std::ofstream(dir / "bad.txt") << "u1 no tab\n";
  std::ofstream(dir / "ok.txt") << "u1\ta\n";
  EXPECT_EQ(run({"eval-per", "--ref", (dir / "bad.txt").string(), "--hyp",
                 (dir / "ok.txt").string()})
                .code,
            2);
}

TEST(RunConfig, RejectsUnknownKeysAtEveryLevel) {
  for (const auto& [section, keys] : config_keys()) {
    nlohmann::json j;
    if (section.empty())
      j = {{"bogus", 1}};
    else if (section == "languages[]")
      j = {{"languages",
            {{{"id", "x"}, {"signature", "s"}, {"train", "t"}, {"bogus", 1}}}}};
    else
      j = {{section, {{"bogus", 1}}}};
    try {
      parse_run_config(j);
      ADD_FAILURE() << "accepted unknown key in '" << section << "'";
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find("bogus"), std::string::npos);
    }
  }
}

TEST(RunConfig, UnknownKeyFromCommandLineIsUsageError) {
  auto dir = testing::temp_dir("cli_config");
  std::ofstream(dir / "c.json") << R"({"seed": 1, "trian": {}})";
  auto r = run({"pretrain", "--config", (dir / "c.json").string(), "--out",
                (dir / "o.ckpt").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("trian"), std::string::npos);
  EXPECT_NE(r.err.find("run_config.schema.json"), std::string::npos);
}

TEST(RunConfig, TypeAndValueErrors) {
  EXPECT_THROW(parse_run_config({{"seed", "one"}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"train", {{"mode", "phonemic"}}}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"train", {{"batch_size", 0}}}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"languages", {{{"id", "x"}}}}}), ConfigError);
}

TEST(RunConfig, PathsResolveAgainstConfigDirectory) {
  auto c = parse_run_config(
      {{"universal_inventory", "u.txt"},
       {"inventory", "/abs/i.txt"},
       {"languages", {{{"id", "x"}, {"signature", "s.json"}, {"train", "t.jsonl"}}}}},
      "/data/run");
  EXPECT_EQ(c.universal_inventory, "/data/run/u.txt");
  EXPECT_EQ(c.inventory, "/abs/i.txt");
  EXPECT_EQ(c.languages[0].train, "/data/run/t.jsonl");
  EXPECT_TRUE(c.languages[0].dev.empty());
}

TEST(RunConfig, SchemaMatchesAcceptedKeys) {
  std::ifstream in(fs::path(ALLOPHONE_SOURCE_DIR) / "docs" / "run_config.schema.json");
  ASSERT_TRUE(in);
  const auto schema = nlohmann::json::parse(in);
  auto props = [](const nlohmann::json& node) {
    EXPECT_EQ(node.at("additionalProperties"), false);
    std::set<std::string> out;
    for (auto it = node.at("properties").begin(); it != node.at("properties").end(); ++it)
      out.insert(it.key());
    return out;
  };
  const auto& top = schema;
  auto as_set = [](const std::vector<std::string>& v) {
    return std::set<std::string>(v.begin(), v.end());
  };
  const auto& keys = config_keys();
  EXPECT_EQ(props(top), as_set(keys.at("")));
  for (const char* s : {"encoder", "train", "vad"})
    EXPECT_EQ(props(top["properties"][s]), as_set(keys.at(s))) << s;
  EXPECT_EQ(props(top["properties"]["languages"]["items"]), as_set(keys.at("languages[]")));
}

TEST(RunConfig, SchemaDefaultsMatchCode) {
  std::ifstream in(fs::path(ALLOPHONE_SOURCE_DIR) / "docs" / "run_config.schema.json");
  const auto s = nlohmann::json::parse(in)["properties"];
  const RunConfig c = parse_run_config(nlohmann::json::object());
  EXPECT_EQ(s["encoder"]["properties"]["hidden_size"]["default"], c.encoder.hidden_size);
  EXPECT_EQ(s["encoder"]["properties"]["num_layers"]["default"], c.encoder.num_layers);
  EXPECT_EQ(s["encoder"]["properties"]["input_dim"]["default"], c.encoder.input_dim);
  EXPECT_EQ(s["train"]["properties"]["learning_rate"]["default"], c.train.learning_rate);
  EXPECT_EQ(s["train"]["properties"]["max_epochs"]["default"], c.train.max_epochs);
  EXPECT_EQ(s["train"]["properties"]["batch_size"]["default"], c.train.batch_size);
  EXPECT_EQ(s["train"]["properties"]["alpha"]["default"], c.train.alpha);
  EXPECT_EQ(s["vad"]["properties"]["threshold_factor"]["default"], c.vad.threshold_factor);
  EXPECT_EQ(s["vad"]["properties"]["min_silence_ms"]["default"], c.vad.min_silence_ms);
}

TEST(G2p, WordByWordWithIds) {
  auto dir = testing::temp_dir("cli_g2p");
  std::ofstream(dir / "rules.tsv") << "ch\ttʃ\na\ta\nt\tt\n";
  std::ofstream(dir / "inv.txt") << "tʃ\na\nt\n";
  auto r = run({"g2p", "--rules", (dir / "rules.tsv").string(), "--inventory",
                (dir / "inv.txt").string()},
               "u1\tChat at\n");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, "u1\ttʃ a t a t\n");
  auto bad = run({"g2p", "--rules", (dir / "rules.tsv").string()}, "xyz\n");
  EXPECT_EQ(bad.code, 2);
}

dataprep::AudioBuffer tone(double seconds, double amp, std::size_t silence_before) {
  dataprep::AudioBuffer a;
  a.samples.assign(silence_before, 0.0f);
  const auto n = std::size_t(seconds * 16000);
  for (std::size_t i = 0; i < n; ++i)
    a.samples.push_back(float(amp * std::sin(2 * M_PI * 440.0 * double(i) / 16000)));
  a.samples.resize(a.samples.size() + 8000, 0.0f);
  return a;
}

TEST(Featurize, WritesManifestAndFeatures) {
  auto dir = testing::temp_dir("cli_featurize");
  dataprep::save_audio((dir / "a.wav").string(), tone(0.5, 0.3, 4000));
  dataprep::save_audio((dir / "b.wav").string(), tone(0.25, 0.3, 0));
  std::ofstream(dir / "inv.txt") << "a\nⁿd\nd\n";
  std::ofstream(dir / "list.tsv") << "ua\ta.wav\taⁿda\nub\tb.wav\n";
  auto r = run({"featurize", "--list", (dir / "list.tsv").string(), "--out-dir",
                (dir / "out").string(), "--inventory", (dir / "inv.txt").string(),
                "--jobs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto m = dataprep::load_manifest((dir / "out" / "train.jsonl").string());
  ASSERT_EQ(m.records.size(), 2u);
  EXPECT_EQ(m.records[0].transcript, (std::vector<std::string>{"a", "ⁿd", "a"}));
  EXPECT_TRUE(m.records[1].transcript.empty());
  auto f = dataprep::load_features((dir / "out" / "feats" / "ua.feat").string());
  EXPECT_EQ(f.cols, 40u);
  EXPECT_EQ(f.rows, dataprep::Framing::from_ms(25, 10).count(4000 + 8000 + 8000));
  EXPECT_EQ(run({"featurize", "--list", (dir / "list.tsv").string(), "--out-dir",
                 (dir / "out").string(), "--split", "holdout"})
                .code,
            2);
}

TEST(VadSplit, PrintsAndCutsSegments) {
  auto dir = testing::temp_dir("cli_vad");
  auto a = tone(0.5, 0.5, 16000);
  dataprep::AudioBuffer noise = a;
  Rng rng(4);
  for (auto& s : noise.samples) s += float(0.001 * rng.normal());
  dataprep::save_audio((dir / "x.wav").string(), noise);
  auto r = run({"vad-split", "--wav", (dir / "x.wav").string(), "--out-dir",
                (dir / "seg").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 1u);
  auto j = nlohmann::json::parse(rows[0]);
  EXPECT_NEAR(j["start"].get<double>(), 16000, 160);
  EXPECT_NEAR(j["end"].get<double>(), 24000, 160);
  EXPECT_TRUE(fs::exists(dir / "seg" / "x_0000.wav"));
}

}  // namespace
}  // namespace allo::cli
