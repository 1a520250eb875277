#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fedblock/embedding.hpp"
#include "nlohmann/json.hpp"
#include "support/synthetic.hpp"

namespace fs = std::filesystem;
namespace ts = fedblock::testsupport;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const std::string command = std::string(FEDBLOCK_CLI_PATH) + " " + args + " 2>&1";
  CliResult result;
  FILE* pipe = ::popen(command.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) {
    result.output.append(buf, n);
  }
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / ("fedblock-cli-" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("cli pipeline: ingest -> embed -> train -> eval composes end to end") {
  Workspace ws;
  ts::BundleOptions opts;
  opts.count = 80;
  opts.seed = 42;
  opts.english_words = ts::load_english_words(FEDBLOCK_WORDLIST_PATH);
  const auto data = ts::generate_bundles(opts);
  const auto tree = ts::write_fixture_tree(ws.root, data);

  // two extra block-list domains with blank whois logs
  for (const std::string name : {"blanked-one.bad-zone.test", "blanked-two.bad-zone.test"}) {
    std::ofstream(tree.fixtures / "whois" / (name + ".txt"));  // zero lines
    std::ofstream(tree.fixtures / "dns" / (name + ".json")) << R"({"cname": []})";
    std::ofstream(ws.root / "lists" / "block_domains.txt", std::ios::app) << name << "\n";
  }

  const fs::path corpus = ws.root / "corpus.jsonl";
  const auto ingest = run_cli("--seed 7 ingest --manifest " + tree.manifest.string() + " --out " +
                              corpus.string());
  CAPTURE(ingest.output);
  REQUIRE(ingest.exit_code == 0);
  CHECK(ingest.output.find("label0=42") != std::string::npos);  // 40 block + 2 blank extras
  CHECK(ingest.output.find("label1=40") != std::string::npos);
  CHECK(ingest.output.find("manifest {") != std::string::npos);
  CHECK(ingest.output.find("\"seed\":7") != std::string::npos);

  // reruns are byte-identical
  const std::string corpus_bytes = read_file(corpus);
  const auto again = run_cli("--seed 7 ingest --manifest " + tree.manifest.string() + " --out " +
                             corpus.string());
  REQUIRE(again.exit_code == 0);
  CHECK(read_file(corpus) == corpus_bytes);

  const fs::path instances = ws.root / "instances.jsonl";
  const auto embed = run_cli("--seed 7 embed --corpus " + corpus.string() + " --out " +
                             instances.string() + " --fixtures " + tree.fixtures.string() +
                             " --dim 32");
  CAPTURE(embed.output);
  REQUIRE(embed.exit_code == 0);
  CHECK(embed.output.find("rejected_blank=2") != std::string::npos);
  CHECK(embed.output.find("instances=80") != std::string::npos);

  const fs::path model = ws.root / "model.bin";
  const fs::path curve = ws.root / "curve.csv";
  const auto train = run_cli("--seed 7 train --instances " + instances.string() +
                             " --model-out " + model.string() + " --curve " + curve.string() +
                             " --epochs 300 --batch 8 --lr 0.05 --hidden 24 --hidden 8");
  CAPTURE(train.output);
  REQUIRE(train.exit_code == 0);
  CHECK(fs::exists(model));
  const std::string curve_text = read_file(curve);
  CHECK(curve_text.rfind("epoch,loss", 0) == 0);

  const auto eval = run_cli("--seed 7 eval --model " + model.string() + " --instances " +
                            instances.string());
  CAPTURE(eval.output);
  REQUIRE(eval.exit_code == 0);
  const auto json_start = eval.output.find('{');
  REQUIRE(json_start != std::string::npos);
  const auto parsed =
      nlohmann::json::parse(eval.output.substr(json_start, eval.output.find('\n', json_start) -
                                                               json_start));
  const std::vector<std::string> expected_keys = {"accuracy", "roc_auc", "f1",
                                                  "tp",       "fp",      "tn", "fn"};
  CHECK(parsed.size() == expected_keys.size());
  for (const auto& key : expected_keys) CHECK(parsed.contains(key));
  CHECK(parsed["accuracy"].get<double>() >= 0.8);  // trained on its own data
}

TEST_CASE("cli ingest: missing list file fails loudly with the path") {
  Workspace ws;
  nlohmann::json manifest = nlohmann::json::array();
  manifest.push_back({{"title", "pi-hole list"},
                      {"description", "dns"},
                      {"syntax", "Domains"},
                      {"software", {"Pi-hole"}},
                      {"tags", {"ads"}},
                      {"role", "block"},
                      {"path", "lists/not-there.txt"}});
  const fs::path manifest_path = ws.root / "manifest.json";
  std::ofstream(manifest_path) << manifest.dump();
  const auto result =
      run_cli("ingest --manifest " + manifest_path.string() + " --out " +
              (ws.root / "corpus.jsonl").string());
  CHECK(result.exit_code != 0);
  CHECK(result.output.find("not-there.txt") != std::string::npos);
}

TEST_CASE("cli baseline emits the two-algorithm comparison table") {
  Workspace ws;
  ts::BundleOptions opts;
  opts.count = 120;
  opts.seed = 5;
  opts.english_words = ts::load_english_words(FEDBLOCK_WORDLIST_PATH);
  const auto data = ts::generate_bundles(opts);
  const auto tree = ts::write_fixture_tree(ws.root, data);

  const fs::path corpus = ws.root / "corpus.jsonl";
  REQUIRE(run_cli("--seed 3 ingest --manifest " + tree.manifest.string() + " --out " +
                  corpus.string())
              .exit_code == 0);
  const auto result =
      run_cli("--seed 3 baseline --corpus " + corpus.string() + " --fixtures " +
              tree.fixtures.string() + " --wordlist " + std::string(FEDBLOCK_WORDLIST_PATH) +
              " --epochs 40 --dim 16 --out " + (ws.root / "table.csv").string() +
              " --features-csv " + (ws.root / "features.csv").string());
  CAPTURE(result.output);
  REQUIRE(result.exit_code == 0);
  CHECK(result.output.find("algorithm,accuracy,roc_auc,f1") != std::string::npos);
  CHECK(result.output.find("neural_network,") != std::string::npos);
  CHECK(result.output.find("random_forest,") != std::string::npos);
  CHECK(result.output.find("forest_cv_mean_accuracy=") != std::string::npos);
  const std::string features = read_file(ws.root / "features.csv");
  CHECK(features.rfind("domain,label,days_since_creation", 0) == 0);
}

TEST_CASE("cli experiment writes the two report CSVs") {
  Workspace ws;
  ts::InstanceOptions opts;
  opts.count = 260;
  opts.feature_width = 16;
  opts.seed = 11;
  const auto pool = ts::generate_instances(opts);
  opts.count = 60;
  opts.seed = 12;
  const auto test_set = ts::generate_instances(opts);
  std::ofstream(ws.root / "pool.jsonl") << fedblock::instances_to_jsonl(pool);
  std::ofstream(ws.root / "test.jsonl") << fedblock::instances_to_jsonl(test_set);

  nlohmann::json config;
  config["experiments"] = nlohmann::json::array();
  config["experiments"].push_back({{"n_clients", 10},
                                   {"unique_per_client", 10},
                                   {"new_domains", 20},
                                   {"base_size", 20},
                                   {"rounds", 4},
                                   {"sync_interval", 2},
                                   {"local_epochs", 2},
                                   {"repeats", 1},
                                   {"hidden", {8, 4}},
                                   {"seed", 21}});
  std::ofstream(ws.root / "exp.json") << config.dump();

  const auto result = run_cli("--seed 5 experiment --experiment-config " +
                              (ws.root / "exp.json").string() + " --instances " +
                              (ws.root / "pool.jsonl").string() + " --test " +
                              (ws.root / "test.jsonl").string() + " --out-dir " +
                              (ws.root / "out").string());
  CAPTURE(result.output);
  REQUIRE(result.exit_code == 0);
  const std::string table6 = read_file(ws.root / "out" / "experiments.csv");
  CHECK(table6.rfind("experiment,n_clients,unique_per_client,new_domains,central_test_acc",
                     0) == 0);
  CHECK(table6.find("\n0,10,10,20,") != std::string::npos);
  const std::string table7 = read_file(ws.root / "out" / "loss_improvements.csv");
  CHECK(table7.rfind("experiment,n_clients,unique_per_client,new_domains,loss_improvement", 0) ==
        0);
  CHECK(result.output.find("finetuned_vs_private_test=") != std::string::npos);
}
