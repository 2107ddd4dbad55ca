#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using repflow::test::fixtures;
using repflow::test::temp_dir;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "repflow");
  std::ostringstream out, err;
  const int code = repflow::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string l;
  std::getline(in, l);
  return l;
}

}  // namespace

TEST_CASE("gen subcommands reproduce the golden files") {
  const Result k = run({"gen", "kvpr", "--pairs", "3", "--gold", "2", "--seed", "7"});
  CHECK(k.code == 0);
  CHECK(k.out == slurp(fixtures() / "kvpr_pairs3_gold2_seed7.json"));

  const std::string corpus = (fixtures() / "mdqa_sample.jsonl").string();
  const Result m =
      run({"gen", "mdqa", "--corpus", corpus, "--record", "0", "--docs", "5", "--gold", "3", "--seed", "11"});
  CHECK(m.code == 0);
  CHECK(m.out == slurp(fixtures() / "mdqa_record0_docs5_gold3_seed11.json"));

  const auto dir = temp_dir("cli_kvpr");
  CHECK(run({"gen", "kvpr", "--pairs", "3", "--gold", "2", "--seed", "7", "--out", dir.string()}).code == 0);
  CHECK(slurp(dir / "prompt.json") == k.out);
  const auto rj = nlohmann::json::parse(slurp(dir / "run.json"));
  CHECK(rj["command"] == "gen kvpr");
  CHECK(rj["config"]["pairs"] == 3);

  const Result t = run({"gen", "kvpr", "--target-tokens", "300", "--gold", "1", "--seed", "1"});
  CHECK(t.code == 0);
  const auto tp = nlohmann::json::parse(t.out);
  CHECK(tp["n_items"].get<int>() > 100);
}

TEST_CASE("metrics on the round-trip fixture") {
  const auto dir = temp_dir("cli_metrics");
  const Result r = run({"metrics", (fixtures() / "stack_small").string(), "--out", dir.string(), "--svg"});
  REQUIRE(r.code == 0);
  CHECK(first_line(dir / "layerwise_cosine.csv") == "layer,token,cosine");
  CHECK(first_line(dir / "inter_token.csv") == "layer,inter_token_similarity");
  CHECK(first_line(dir / "cka.csv") == "layer_i,layer_j,cka");
  CHECK(first_line(dir / "scalars.csv") == "metric,value");
  CHECK(fs::exists(dir / "metrics.json"));
  CHECK(fs::exists(dir / "run.json"));
  const auto j = nlohmann::json::parse(slurp(dir / "metrics.json"));
  CHECK(j["inter_token"][0].get<double>() == doctest::Approx(0.4714045207910316).epsilon(1e-12));
  CHECK(j["smoothness"].get<double>() == doctest::Approx(0.3541666666666667).epsilon(1e-12));
}

TEST_CASE("synth, probe and dataset metrics") {
  const auto data = temp_dir("cli_probe_data");
  REQUIRE(run({"synth", "probe-dataset", "--samples", "80", "--out", data.string()}).code == 0);
  const Result p = run({"probe", data.string(), "--seeds", "2", "--epochs", "100"});
  REQUIRE(p.code == 0);
  const auto j = nlohmann::json::parse(p.out);
  CHECK(j["peak_layer"] == 2);
  CHECK(j["train_size"] == 64);

  const auto out = temp_dir("cli_probe_out");
  REQUIRE(run({"probe", data.string(), "--seeds", "2", "--epochs", "100", "--out", out.string()}).code == 0);
  CHECK(first_line(out / "layer_sweep.csv") == "layer,mean_acc,std_acc");
  CHECK(nlohmann::json::parse(slurp(out / "probe.json")) == j);

  const auto m = temp_dir("cli_dataset_metrics");
  REQUIRE(run({"metrics", data.string(), "--out", m.string()}).code == 0);
  CHECK(fs::exists(m / "mean" / "cka.csv"));
  CHECK(fs::exists(m / "samples" / "sample-0" / "cka.csv"));

  const auto stack = temp_dir("cli_stack");
  const Result s = run({"synth", "stack", "--arch", "mamba", "--depth", "3", "--n", "16", "--d", "8", "--out",
                        stack.string()});
  REQUIRE(s.code == 0);
  CHECK(s.out.find("inter-token similarity") != std::string::npos);
  const Result pc = run({"poincare", stack.string()});
  CHECK(pc.code == 0);
  CHECK(nlohmann::json::parse(pc.out)["bound_holds"] == true);
}

TEST_CASE("theory compare is deterministic") {
  const std::vector<std::string> args{"theory", "compare", "--n-grid", "1,4", "--trials", "4000", "--seed", "3"};
  const Result a = run(args);
  const Result b = run(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  std::vector<std::string> threaded{"--threads", "3"};
  threaded.insert(threaded.end(), args.begin(), args.end());
  CHECK(run(threaded).out == a.out);
  const auto j = nlohmann::json::parse(a.out);
  CHECK(j["points"].size() == 2);
  CHECK(j["ordering_holds"] == true);

  const auto dir = temp_dir("cli_theory");
  std::vector<std::string> with_out = args;
  with_out.insert(with_out.end(), {"--out", dir.string(), "--svg"});
  REQUIRE(run(with_out).code == 0);
  CHECK(slurp(dir / "theory.json") == a.out);
  CHECK(fs::exists(dir / "theory.svg"));

  const Result t = run({"theory", "threshold", "--n", "4", "--q-max", "8"});
  REQUIRE(t.code == 0);
  const auto tj = nlohmann::json::parse(t.out);
  CHECK(tj["q_table"].size() == 8);
  CHECK(tj["below_threshold"] == true);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == 1);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"--version"}).code == 0);
  const Result unknown = run({"gen", "kvpr", "--bogus"});
  CHECK(unknown.code == 1);
  CHECK_FALSE(unknown.err.empty());
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"synth", "stack", "--arch", "rnn", "--out", "x"}).code == 1);
  const Result data = run({"gen", "kvpr", "--pairs", "3", "--gold", "9"});
  CHECK(data.code == 2);
  CHECK(data.err.starts_with("error: "));
  const auto empty = temp_dir("cli_empty");
  CHECK(run({"metrics", empty.string(), "--out", (empty / "o").string()}).code == 2);
  CHECK(run({"theory", "compare", "--trials", "10"}).code == 1);
}
