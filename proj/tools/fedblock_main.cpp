#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fedblock/baseline.hpp"
#include "fedblock/digest.hpp"
#include "fedblock/embedding.hpp"
#include "fedblock/errors.hpp"
#include "fedblock/fedsim.hpp"
#include "fedblock/filterlists.hpp"
#include "fedblock/mlp.hpp"
#include "fedblock/proxy.hpp"
#include "fedblock/rng.hpp"
#include "nlohmann/json.hpp"

namespace fb = fedblock;
using nlohmann::json;

namespace {


// flags beat the config file; the config file beats built-in defaults
template <typename T>
void config_default(const CLI::Option* opt, const json& section, const char* key, T& value) {
  if (opt != nullptr && opt->count() > 0) return;
  if (section.contains(key)) value = section.at(key).get<T>();
}

struct GlobalArgs {
  std::uint64_t seed = 0;
  std::string config_path;
  bool verbose = false;
};

json load_config(const GlobalArgs& args) {
  if (args.config_path.empty()) return json::object();
  std::ifstream in(args.config_path);
  if (!in) throw fb::IoError("cannot open config file: " + args.config_path);
  json j;
  in >> j;
  return j;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fb::IoError("cannot open file: " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw fb::IoError("cannot write file: " + path.string());
  out << content;
}

// every command echoes one of these so reruns are verifiable by digest
void print_manifest(const std::string& command, const GlobalArgs& args,
                    const std::vector<std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs,
                    std::chrono::steady_clock::time_point started) {
  json m;
  m["command"] = command;
  m["seed"] = args.seed;
  m["config_digest"] =
      args.config_path.empty() ? "" : fb::sha256_file_hex(args.config_path);
  json in_digests = json::object();
  for (const auto& path : inputs) {
    in_digests[path.string()] = fb::sha256_file_hex(path);
  }
  m["input_digests"] = std::move(in_digests);
  json outs = json::array();
  for (const auto& path : outputs) outs.push_back(path.string());
  m["outputs"] = std::move(outs);
  const auto elapsed = std::chrono::steady_clock::now() - started;
  m["wall_time_s"] =
      std::chrono::duration_cast<std::chrono::duration<double>>(elapsed).count();
  std::cout << "manifest " << m.dump() << "\n";
}

std::vector<fb::Example> make_examples(const std::vector<fb::Instance>& instances) {
  std::vector<fb::Example> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back({inst.features, inst.label});
  return out;
}

std::vector<fb::LayerSpec> architecture_from_config(std::size_t input_width,
                                                    const std::vector<std::size_t>& hidden) {
  std::vector<fb::LayerSpec> arch{{input_width, fb::Activation::None}};
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    arch.push_back({hidden[i], i == 1 ? fb::Activation::SeLU : fb::Activation::ReLU});
  }
  arch.push_back({1, fb::Activation::Sigmoid});
  return arch;
}

std::unique_ptr<fb::Embedder> make_embedder(const std::string& kind, std::size_t dim,
                                            const std::string& vector_table) {
  if (kind == "hash") return std::make_unique<fb::HashEmbedder>(dim);
  if (kind == "file") {
    if (vector_table.empty()) throw fb::IoError("file embedder needs --vector-table");
    return std::make_unique<fb::FileEmbedder>(vector_table, dim);
  }
  throw fb::IoError("unknown embedder kind: " + kind);
}

struct EnrichedCorpus {
  std::vector<fb::DomainRecordBundle> bundles;
  std::vector<int> labels;
  std::size_t missing = 0;
};

EnrichedCorpus enrich_corpus(const fb::Corpus& corpus, const std::filesystem::path& fixtures,
                             const std::string& cache_dir) {
  fb::FixtureWhoisClient whois_client(fixtures / "whois");
  fb::FixtureDnsClient dns_client(fixtures / "dns");
  std::unique_ptr<fb::EnrichmentCache> cache;
  if (!cache_dir.empty()) cache = std::make_unique<fb::EnrichmentCache>(cache_dir);

  EnrichedCorpus out;
  for (const fb::CorpusEntry& entry : corpus.entries) {
    try {
      fb::WhoisLog whois = fb::fetch_whois(entry.domain, whois_client, cache.get());
      fb::AssociatedDomains assoc = fb::fetch_associated(entry.domain, dns_client, cache.get());
      out.bundles.push_back(fb::build_bundle(entry.domain, std::move(whois), std::move(assoc)));
      out.labels.push_back(entry.label);
    } catch (const fb::Error&) {
      ++out.missing;
    }
  }
  return out;
}

int cmd_ingest(const GlobalArgs& args, const std::string& manifest_path,
               const std::string& out_path, std::size_t cap_flag) {
  const auto started = std::chrono::steady_clock::now();
  const json config = load_config(args);
  std::size_t cap = cap_flag ? cap_flag
                             : config.value("ingest", json::object())
                                   .value("cap", fb::kDefaultDownsampleCap);

  const json manifest = json::parse(read_file(manifest_path));
  const json& lists = manifest.is_array() ? manifest : manifest.at("lists");

  const fb::KeywordSets keywords = fb::default_keywords();
  const fb::GateSets gates = fb::default_gates();
  std::vector<fb::ParsedList> block_lists, allow_lists;
  std::vector<std::filesystem::path> inputs{manifest_path};
  std::size_t rejected_category = 0, rejected_gate = 0;

  const std::filesystem::path manifest_dir =
      std::filesystem::path(manifest_path).parent_path();
  for (const json& entry : lists) {
    fb::FilterListMeta meta;
    meta.title = entry.value("title", std::string{});
    meta.description = entry.value("description", std::string{});
    meta.syntax_tag = entry.value("syntax", std::string{});
    meta.software_tags = entry.value("software", std::vector<std::string>{});
    meta.block_category_tags = entry.value("tags", std::vector<std::string>{});
    const std::string role = entry.value("role", std::string{"block"});
    std::filesystem::path path = entry.at("path").get<std::string>();
    if (path.is_relative()) path = manifest_dir / path;
    const std::string id = entry.value("id", path.filename().string());

    if (role == "block") {
      bool collision = false;
      const fb::ListCategory category =
          fb::categorize_list(meta, keywords.iot, keywords.mobile, &collision);
      if (collision && args.verbose) {
        std::cerr << "note: list '" << meta.title << "' matches both keyword sets; IoT wins\n";
      }
      if (category == fb::ListCategory::Rejected) {
        ++rejected_category;
        if (args.verbose) std::cerr << "rejected (no category keyword): " << id << "\n";
        continue;
      }
      if (!fb::gate_list(meta, gates)) {
        ++rejected_gate;
        if (args.verbose) std::cerr << "rejected (syntax/software/tag gate): " << id << "\n";
        continue;
      }
    }

    fb::Grammar grammar = fb::resolve_grammar(meta.syntax_tag);
    if (role == "allow" && grammar == fb::Grammar::Domains) {
      grammar = fb::Grammar::DomainsAllow;
    }
    fb::ParsedList parsed;
    parsed.id = id;
    std::istringstream text(read_file(path));
    inputs.push_back(path);
    std::string line;
    while (std::getline(text, line)) parsed.rules.push_back(fb::parse_rule(line, grammar));
    (role == "allow" ? allow_lists : block_lists).push_back(std::move(parsed));
  }

  fb::CorpusBuildStats stats;
  const fb::Corpus corpus = fb::build_corpus(block_lists, allow_lists, cap,
                                             fb::derive_seed(args.seed, "ingest"), &stats);
  write_file(out_path, fb::corpus_to_jsonl(corpus));

  std::cout << "label0=" << stats.label0 << " label1=" << stats.label1
            << " conflicts_dropped=" << stats.conflicts_dropped
            << " duplicates_merged=" << stats.duplicates_merged
            << " lists_rejected_category=" << rejected_category
            << " lists_rejected_gate=" << rejected_gate << "\n";
  print_manifest("ingest", args, inputs, {out_path}, started);
  return 0;
}

struct EmbedFlagOpts {
  const CLI::Option* fixtures = nullptr;
  const CLI::Option* embedder = nullptr;
  const CLI::Option* vector_table = nullptr;
  const CLI::Option* dim = nullptr;
  const CLI::Option* cache = nullptr;
};

int cmd_embed(const GlobalArgs& args, const std::string& corpus_path, const std::string& out_path,
              std::string fixtures, std::string embedder_kind, std::string vector_table,
              std::size_t dim, std::string cache_dir, const EmbedFlagOpts& opts) {
  const auto started = std::chrono::steady_clock::now();
  const json embedding_cfg = load_config(args).value("embedding", json::object());
  config_default(opts.fixtures, embedding_cfg, "fixtures_dir", fixtures);
  config_default(opts.embedder, embedding_cfg, "embedder", embedder_kind);
  config_default(opts.vector_table, embedding_cfg, "vector_table", vector_table);
  config_default(opts.dim, embedding_cfg, "dim", dim);
  config_default(opts.cache, embedding_cfg, "cache_dir", cache_dir);
  const fb::Corpus corpus = fb::corpus_from_jsonl(read_file(corpus_path));
  const auto embedder = make_embedder(embedder_kind, dim, vector_table);

  fb::FixtureWhoisClient whois_client(std::filesystem::path(fixtures) / "whois");
  fb::FixtureDnsClient dns_client(std::filesystem::path(fixtures) / "dns");
  std::unique_ptr<fb::EnrichmentCache> cache;
  if (!cache_dir.empty()) cache = std::make_unique<fb::EnrichmentCache>(cache_dir);

  std::vector<fb::Instance> instances;
  std::size_t rejected_blank = 0, rejected_unk = 0, missing = 0;
  std::size_t label_counts[2] = {0, 0};
  for (const fb::CorpusEntry& entry : corpus.entries) {
    try {
      fb::WhoisLog whois = fb::fetch_whois(entry.domain, whois_client, cache.get());
      fb::AssociatedDomains assoc = fb::fetch_associated(entry.domain, dns_client, cache.get());
      const auto bundle = fb::build_bundle(entry.domain, std::move(whois), std::move(assoc));
      fb::InstanceResult result = fb::make_instance(bundle, entry.label, *embedder);
      if (result.ok()) {
        ++label_counts[entry.label];
        instances.push_back(std::move(*result.instance));
      } else if (result.reject == fb::RejectReason::BlankWhois) {
        ++rejected_blank;
      } else {
        ++rejected_unk;
      }
    } catch (const fb::Error&) {
      ++missing;
    }
  }
  if (instances.empty()) {
    std::cerr << "error: every corpus entry was rejected or missing fixtures\n";
    return 1;
  }
  write_file(out_path, fb::instances_to_jsonl(instances));
  std::cout << "instances=" << instances.size() << " label0=" << label_counts[0]
            << " label1=" << label_counts[1] << " rejected_blank=" << rejected_blank
            << " rejected_unk=" << rejected_unk << " missing=" << missing << "\n";
  // instance counts are a property of the input corpus, not a fixed target
  std::cout << "note: class sizes depend entirely on the ingested lists\n";
  print_manifest("embed", args, {corpus_path}, {out_path}, started);
  return 0;
}

struct TrainFlagOpts {
  const CLI::Option* epochs = nullptr;
  const CLI::Option* lr = nullptr;
  const CLI::Option* batch = nullptr;
  const CLI::Option* hidden = nullptr;
};

int cmd_train(const GlobalArgs& args, const std::string& instances_path,
              const std::string& model_out, const std::string& curve_out, std::size_t epochs,
              double learning_rate, std::size_t batch_size, std::vector<std::size_t> hidden,
              const TrainFlagOpts& opts) {
  const auto started = std::chrono::steady_clock::now();
  const json model_cfg = load_config(args).value("model", json::object());
  config_default(opts.epochs, model_cfg, "epochs", epochs);
  config_default(opts.lr, model_cfg, "learning_rate", learning_rate);
  config_default(opts.batch, model_cfg, "batch_size", batch_size);
  config_default(opts.hidden, model_cfg, "hidden", hidden);
  const auto instances = fb::instances_from_jsonl(read_file(instances_path));
  if (instances.empty()) throw fb::EmptyDatasetError("no instances to train on");

  const auto arch = architecture_from_config(instances.front().features.size(), hidden);
  fb::ModelParams params = fb::init_params(arch, fb::derive_seed(args.seed, "init"));
  fb::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.learning_rate = learning_rate;
  cfg.batch_size = batch_size;
  cfg.seed = fb::derive_seed(args.seed, "train");
  fb::TrainResult result = fb::train(std::move(params), make_examples(instances), cfg);
  result.params.save(model_out);

  std::vector<std::filesystem::path> outputs{model_out};
  if (!curve_out.empty()) {
    std::ostringstream csv;
    csv << "epoch,loss\n";
    for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", result.loss_curve[e]);
      csv << e << ',' << buf << '\n';
    }
    write_file(curve_out, csv.str());
    outputs.push_back(curve_out);
  }
  std::cout << "trained epochs=" << result.loss_curve.size() << " final_loss="
            << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
  print_manifest("train", args, {instances_path}, outputs, started);
  return 0;
}

int cmd_eval(const GlobalArgs& args, const std::string& model_path,
             const std::string& instances_path, double threshold, const std::string& out_path) {
  const auto started = std::chrono::steady_clock::now();
  const fb::ModelParams params = fb::ModelParams::load(model_path);
  const auto instances = fb::instances_from_jsonl(read_file(instances_path));
  const fb::MetricsReport report = fb::evaluate(params, make_examples(instances), threshold);
  const std::string text = fb::metrics_to_json(report);
  std::cout << text << "\n";
  std::vector<std::filesystem::path> outputs;
  if (!out_path.empty()) {
    write_file(out_path, text);
    outputs.push_back(out_path);
  }
  print_manifest("eval", args, {model_path, instances_path}, outputs, started);
  return 0;
}

int cmd_baseline(const GlobalArgs& args, const std::string& corpus_path,
                 const std::string& fixtures, const std::string& wordlist_path,
                 const std::string& reference_date, std::size_t epochs, std::size_t dim,
                 const std::string& out_path, const std::string& features_csv,
                 const std::string& cache_dir) {
  const auto started = std::chrono::steady_clock::now();
  const json config = load_config(args);
  const json forest_cfg = config.value("forest", json::object());

  const fb::Corpus corpus = fb::corpus_from_jsonl(read_file(corpus_path));
  EnrichedCorpus enriched = enrich_corpus(corpus, fixtures, cache_dir);
  if (enriched.bundles.size() < 10) throw fb::EmptyDatasetError("too few enriched bundles");

  auto date = [&]() -> std::chrono::sys_days {
    int y = 2026, m = 1, d = 1;
    if (reference_date.size() >= 10) {
      y = std::stoi(reference_date.substr(0, 4));
      m = std::stoi(reference_date.substr(5, 2));
      d = std::stoi(reference_date.substr(8, 2));
    }
    return std::chrono::sys_days{std::chrono::year_month_day{
        std::chrono::year{y}, std::chrono::month(unsigned(m)), std::chrono::day(unsigned(d))}};
  }();
  const std::set<std::string> wordlist = fb::load_wordlist(wordlist_path);

  // same split feeds both sides of the comparison
  std::vector<std::size_t> order(enriched.bundles.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  fb::Rng rng(fb::derive_seed(args.seed, "baseline-split"));
  rng.shuffle(order);
  const std::size_t n_test = std::max<std::size_t>(1, order.size() / 5);

  std::vector<fb::HandFeatures> rows;
  rows.reserve(enriched.bundles.size());
  for (const auto& bundle : enriched.bundles) {
    rows.push_back(fb::extract_hand_features(bundle, date, wordlist));
  }
  fb::HandFeatureEncoder encoder;
  encoder.fit(rows);

  std::vector<std::vector<double>> train_x, test_x;
  std::vector<int> train_y, test_y;
  const fb::HashEmbedder embedder(dim);
  std::vector<fb::Instance> train_inst, test_inst;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    const bool is_test = k < n_test;
    (is_test ? test_x : train_x).push_back(encoder.encode(rows[i]));
    (is_test ? test_y : train_y).push_back(enriched.labels[i]);
    fb::InstanceResult inst = fb::make_instance(enriched.bundles[i], enriched.labels[i], embedder);
    if (inst.ok()) (is_test ? test_inst : train_inst).push_back(std::move(*inst.instance));
  }

  fb::ForestConfig fc;
  fc.n_trees = forest_cfg.value("n_trees", fc.n_trees);
  fc.max_depth = forest_cfg.value("max_depth", fc.max_depth);
  fc.min_leaf = forest_cfg.value("min_leaf", fc.min_leaf);
  fc.features_per_split = forest_cfg.value("features_per_split", fc.features_per_split);
  fc.seed = fb::derive_seed(args.seed, "forest");
  const fb::Forest forest = fb::train_forest(train_x, train_y, fc);
  const fb::CvReport cv = fb::cross_validate_forest(train_x, train_y, fc);

  std::vector<double> forest_scores;
  std::vector<int> forest_labels;
  std::size_t forest_correct = 0;
  std::size_t ftp = 0, ffp = 0, ftn = 0, ffn = 0;
  for (std::size_t k = 0; k < test_x.size(); ++k) {
    const double p = forest.predict(test_x[k]);
    const int predicted = p >= 0.5 ? 1 : 0;
    forest_scores.push_back(p);
    forest_labels.push_back(test_y[k]);
    forest_correct += static_cast<std::size_t>(predicted == test_y[k]);
    if (predicted == 0 && test_y[k] == 0) ++ftp;
    if (predicted == 0 && test_y[k] == 1) ++ffp;
    if (predicted == 1 && test_y[k] == 1) ++ftn;
    if (predicted == 1 && test_y[k] == 0) ++ffn;
  }
  const double forest_acc =
      static_cast<double>(forest_correct) / static_cast<double>(test_x.size());
  const double forest_roc = fb::roc_auc(forest_scores, forest_labels);
  const double forest_f1 =
      (2 * ftp + ffp + ffn) == 0
          ? 0.0
          : 2.0 * static_cast<double>(ftp) / static_cast<double>(2 * ftp + ffp + ffn);

  const auto arch = architecture_from_config(2 * dim, {416, 32});
  fb::TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = fb::derive_seed(args.seed, "baseline-train");
  fb::TrainResult mlp = fb::train(fb::init_params(arch, fb::derive_seed(args.seed, "init")),
                                  make_examples(train_inst), tc);
  const fb::MetricsReport mlp_report = fb::evaluate(mlp.params, make_examples(test_inst));

  std::ostringstream csv;
  csv << "algorithm,accuracy,roc_auc,f1\n";
  csv << "neural_network," << mlp_report.accuracy << ',' << mlp_report.roc_auc << ','
      << mlp_report.f1 << "\n";
  csv << "random_forest," << forest_acc << ',' << forest_roc << ',' << forest_f1 << "\n";
  std::cout << csv.str();
  std::cout << "forest_cv_mean_accuracy=" << cv.mean_accuracy << "\n";

  std::vector<std::filesystem::path> outputs;
  if (!out_path.empty()) {
    write_file(out_path, csv.str());
    outputs.push_back(out_path);
  }
  if (!features_csv.empty()) {
    std::vector<std::string> domains;
    for (const auto& bundle : enriched.bundles) domains.push_back(bundle.domain.str());
    write_file(features_csv, fb::features_to_csv(encoder, rows, domains, enriched.labels));
    outputs.push_back(features_csv);
  }
  print_manifest("baseline", args, {corpus_path}, outputs, started);
  return 0;
}

int cmd_experiment(const GlobalArgs& args, const std::string& experiment_config,
                   const std::string& instances_path, const std::string& test_path,
                   const std::string& out_dir) {
  const auto started = std::chrono::steady_clock::now();
  const auto pool = fb::instances_from_jsonl(read_file(instances_path));
  const auto test_set = fb::instances_from_jsonl(read_file(test_path));

  const json spec = json::parse(read_file(experiment_config));
  std::vector<fb::ExperimentConfig> configs;
  if (spec.contains("experiments")) {
    for (const json& one : spec.at("experiments")) {
      configs.push_back(fb::experiment_config_from_json(one.dump()));
    }
  } else {
    configs.push_back(fb::experiment_config_from_json(spec.dump()));
  }

  std::string table6 = fb::report_csv_header();
  std::string table7 = fb::loss_csv_header();
  for (std::size_t i = 0; i < configs.size(); ++i) {
    fb::ExperimentConfig cfg = configs[i];
    if (cfg.seed == 0) cfg.seed = fb::derive_seed(args.seed, "experiment", i);
    const fb::ExperimentReport report = fb::run_experiment(cfg, pool, test_set);
    table6 += fb::report_csv_row(i, report);
    table7 += fb::loss_csv_row(i, report);
    const fb::SystemComparison cmp = fb::compare_systems(report);
    auto name = [](fb::Winner w) {
      return w == fb::Winner::A ? "finetuned" : (w == fb::Winner::B ? "other" : "tie");
    };
    std::cout << "experiment " << i << " [" << cfg.n_clients << ", " << cfg.unique_per_client
              << ", " << cfg.new_domains << "]"
              << " finetuned_vs_private_test=" << name(cmp.finetuned_vs_private_test)
              << " finetuned_vs_central_test=" << name(cmp.finetuned_vs_central_test)
              << " finetuned_vs_central_local=" << name(cmp.finetuned_vs_central_local)
              << " loss_improvement=" << report.loss_improvement << "\n";
  }

  const std::filesystem::path dir = out_dir;
  write_file(dir / "experiments.csv", table6);
  write_file(dir / "loss_improvements.csv", table7);
  print_manifest("experiment", args, {experiment_config, instances_path, test_path},
                 {dir / "experiments.csv", dir / "loss_improvements.csv"}, started);
  return 0;
}

volatile std::sig_atomic_t g_stop = 0;

int cmd_serve(const GlobalArgs& args, const std::string& fixtures, std::size_t dim) {
  const json config = load_config(args);
  const json p = config.value("proxy", json::object());
  fb::ProxyConfig proxy_config;
  proxy_config.listen_address = p.value("listen_address", proxy_config.listen_address);
  proxy_config.listen_port = p.value("listen_port", 5353);
  proxy_config.upstream_address = p.value("upstream_address", std::string{"8.8.8.8"});
  proxy_config.upstream_port = p.value("upstream_port", 53);
  proxy_config.base_list_path = p.value("base_list", std::string{});
  proxy_config.federated_model_path = p.value("federated_model", std::string{});
  if (p.contains("private_model")) {
    proxy_config.private_model_path = p.at("private_model").get<std::string>();
  }
  proxy_config.block_response = p.value("block_response", std::string{"zero_address"}) ==
                                        std::string{"name_error"}
                                    ? fb::dns::BlockResponseMode::NameError
                                    : fb::dns::BlockResponseMode::ZeroAddress;
  proxy_config.block_threshold = p.value("block_threshold", 0.5);
  proxy_config.verdict_cache_ttl = std::chrono::seconds(p.value("verdict_cache_ttl", 300));
  proxy_config.metrics_port = p.value("metrics_port", 0);

  auto federated = std::make_shared<const fb::ModelParams>(
      fb::ModelParams::load(proxy_config.federated_model_path));
  std::shared_ptr<const fb::ModelParams> private_model;
  if (proxy_config.private_model_path) {
    private_model = std::make_shared<const fb::ModelParams>(
        fb::ModelParams::load(*proxy_config.private_model_path));
  }

  std::shared_ptr<fb::WhoisClient> whois_client;
  std::shared_ptr<fb::DnsClient> dns_client;
  if (p.value("enrichment", std::string{"fixture"}) == std::string{"live"}) {
    fb::LiveClientConfig whois_config;
    whois_config.endpoint_url = p.value("whois_endpoint", std::string{});
    whois_config.api_key_env = p.value("whois_api_key_env", std::string{"FEDBLOCK_API_KEY"});
    whois_client = std::make_shared<fb::LiveWhoisClient>(whois_config);
    fb::LiveDnsConfig dns_config;
    dns_config.resolver_address = p.value("resolver_address", proxy_config.upstream_address);
    dns_config.resolver_port = p.value("resolver_port", proxy_config.upstream_port);
    dns_client = std::make_shared<fb::LiveDnsClient>(dns_config);
  } else {
    whois_client =
        std::make_shared<fb::FixtureWhoisClient>(std::filesystem::path(fixtures) / "whois");
    dns_client =
        std::make_shared<fb::FixtureDnsClient>(std::filesystem::path(fixtures) / "dns");
  }
  std::shared_ptr<fb::EnrichmentCache> cache;
  if (p.contains("cache_dir")) {
    // live lookups expire after a week; fixtures are timeless
    std::optional<std::chrono::seconds> ttl;
    if (p.value("enrichment", std::string{"fixture"}) == std::string{"live"}) {
      ttl = std::chrono::seconds(p.value("cache_ttl_seconds", 7 * 24 * 3600));
    }
    cache = std::make_shared<fb::EnrichmentCache>(p.at("cache_dir").get<std::string>(), ttl);
  }
  auto embedder = std::make_shared<fb::HashEmbedder>(dim);

  auto engine = std::make_shared<fb::DecisionEngine>(
      fb::BaseList::load(proxy_config.base_list_path), federated, private_model, whois_client,
      dns_client, cache, embedder, proxy_config.block_threshold,
      proxy_config.verdict_cache_ttl);
  fb::ProxyServer server(proxy_config, engine);
  server.start();
  std::cout << "listening on " << proxy_config.listen_address << ":" << server.port()
            << " metrics_port=" << server.metrics_port() << std::endl;

  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });

  // user-maintained private list: edits enqueue a retraining job and the
  // rebuilt model file hot-swaps in; queries keep flowing meanwhile
  const std::string private_list = p.value("private_list", std::string{});
  const std::string private_allow_list = p.value("private_allow_list", std::string{});
  std::unique_ptr<fb::Retrainer> retrainer;
  if (!private_list.empty() && proxy_config.private_model_path) {
    auto train_private = [=]() -> std::optional<fb::ModelParams> {
      std::vector<fb::Instance> instances;
      auto embed_list = [&](const std::string& path, int label) {
        if (path.empty() || !std::filesystem::exists(path)) return;
        std::istringstream lines(read_file(path));
        std::string line;
        while (std::getline(lines, line)) {
          const auto domain = fb::DomainName::parse(line);
          if (!domain) continue;
          try {
            auto whois = fb::fetch_whois(*domain, *whois_client, cache.get());
            auto assoc = fb::fetch_associated(*domain, *dns_client, cache.get());
            auto inst = fb::make_instance(fb::build_bundle(*domain, whois, assoc), label,
                                          *embedder);
            if (inst.ok()) instances.push_back(std::move(*inst.instance));
          } catch (const fb::Error&) {
          }
        }
      };
      embed_list(private_list, 0);
      embed_list(private_allow_list, 1);
      if (instances.empty()) return std::nullopt;
      const auto arch = architecture_from_config(2 * dim, {416, 32});
      fb::TrainConfig cfg;
      cfg.epochs = 50;
      cfg.seed = fb::derive_seed(args.seed, "private-retrain");
      return fb::train(fb::init_params(arch, fb::derive_seed(args.seed, "private-init")),
                       make_examples(instances), cfg)
          .params;
    };
    retrainer = std::make_unique<fb::Retrainer>(
        train_private, [engine, path = *proxy_config.private_model_path](fb::ModelParams model) {
          model.save(path);
          engine->swap_private(std::make_shared<const fb::ModelParams>(std::move(model)));
          std::cout << "private model retrained and swapped" << std::endl;
        });
  }

  // poll the watched list files; edits reload without blocking queries
  auto mtime = [](const std::string& path) {
    std::error_code ec;
    return std::filesystem::last_write_time(path, ec);
  };
  auto base_write = std::filesystem::last_write_time(proxy_config.base_list_path);
  auto private_write = private_list.empty() ? std::filesystem::file_time_type{}
                                            : mtime(private_list);
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(500));
    auto now_write = std::filesystem::last_write_time(proxy_config.base_list_path);
    if (now_write != base_write) {
      base_write = now_write;
      engine->swap_base_list(fb::BaseList::load(proxy_config.base_list_path));
      std::cout << "base list reloaded" << std::endl;
    }
    if (retrainer && !private_list.empty()) {
      auto now_private = mtime(private_list);
      if (now_private != private_write) {
        private_write = now_private;
        retrainer->notify_changed();
        std::cout << "private list changed; retraining queued" << std::endl;
      }
    }
  }
  server.stop();
  std::cout << "metrics:\n" << engine->metrics().render();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated domain-blocking pipeline"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--seed", global.seed, "global seed; stages derive their own streams from it");
  app.add_option("--config", global.config_path, "JSON config file");
  app.add_flag("--verbose", global.verbose, "chatty diagnostics on stderr");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse filter lists into a labeled corpus");
  std::string manifest_path, out_path;
  std::size_t cap = 0;
  ingest->add_option("--manifest", manifest_path, "list manifest JSON")->required();
  ingest->add_option("--out", out_path, "corpus JSONL output")->required();
  ingest->add_option("--cap", cap, "per-list downsample cap (default 289)");

  // embed
  auto* embed = app.add_subcommand("embed", "enrich corpus domains and emit feature instances");
  std::string corpus_path, instances_out, fixtures = "fixtures", embedder_kind = "hash",
              vector_table, cache_dir;
  std::size_t dim = fb::kDefaultEmbeddingDim;
  embed->add_option("--corpus", corpus_path, "corpus JSONL")->required();
  embed->add_option("--out", instances_out, "instances JSONL output")->required();
  EmbedFlagOpts embed_opts;
  embed_opts.fixtures = embed->add_option("--fixtures", fixtures, "fixture dir with whois/ and dns/");
  embed_opts.embedder = embed->add_option("--embedder", embedder_kind, "hash | file");
  embed_opts.vector_table =
      embed->add_option("--vector-table", vector_table, "precomputed vector table (file embedder)");
  embed_opts.dim = embed->add_option("--dim", dim, "embedding dimension D (features are 2*D)");
  embed_opts.cache = embed->add_option("--cache", cache_dir, "enrichment cache dir");

  // train
  auto* train_cmd = app.add_subcommand("train", "train the classifier on instances");
  std::string train_instances, model_out, curve_out;
  std::size_t epochs = 5, batch_size = 32;
  double learning_rate = 0.01;
  std::vector<std::size_t> hidden = {416, 32};
  train_cmd->add_option("--instances", train_instances, "instances JSONL")->required();
  train_cmd->add_option("--model-out", model_out, "model file output")->required();
  train_cmd->add_option("--curve", curve_out, "loss curve CSV output");
  TrainFlagOpts train_opts;
  train_opts.epochs = train_cmd->add_option("--epochs", epochs, "training epochs");
  train_opts.lr = train_cmd->add_option("--lr", learning_rate, "SGD learning rate");
  train_opts.batch = train_cmd->add_option("--batch", batch_size, "batch size");
  train_opts.hidden = train_cmd->add_option("--hidden", hidden, "hidden layer widths");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model on instances");
  std::string eval_model, eval_instances, eval_out;
  double threshold = 0.5;
  eval_cmd->add_option("--model", eval_model, "model file")->required();
  eval_cmd->add_option("--instances", eval_instances, "instances JSONL")->required();
  eval_cmd->add_option("--threshold", threshold, "label-1 decision threshold");
  eval_cmd->add_option("--out", eval_out, "metrics JSON output");

  // baseline
  auto* baseline_cmd =
      app.add_subcommand("baseline", "hand-feature random forest vs the neural network");
  std::string baseline_corpus, baseline_fixtures = "fixtures", wordlist = "data/english_words.txt",
              reference_date = "2026-01-01", baseline_out, features_csv, baseline_cache;
  std::size_t baseline_epochs = 150, baseline_dim = fb::kDefaultEmbeddingDim;
  baseline_cmd->add_option("--corpus", baseline_corpus, "corpus JSONL")->required();
  baseline_cmd->add_option("--fixtures", baseline_fixtures, "fixture dir");
  baseline_cmd->add_option("--wordlist", wordlist, "english wordlist file");
  baseline_cmd->add_option("--reference-date", reference_date, "YYYY-MM-DD for day deltas");
  baseline_cmd->add_option("--epochs", baseline_epochs, "MLP training epochs");
  baseline_cmd->add_option("--dim", baseline_dim, "hash embedder dimension");
  baseline_cmd->add_option("--out", baseline_out, "comparison CSV output");
  baseline_cmd->add_option("--features-csv", features_csv, "hand-features CSV export");
  baseline_cmd->add_option("--cache", baseline_cache, "enrichment cache dir");

  // experiment
  auto* experiment_cmd = app.add_subcommand("experiment", "federated grid harness");
  std::string exp_config, exp_instances, exp_test, exp_out = "experiments";
  experiment_cmd->add_option("--experiment-config", exp_config, "experiment config JSON")
      ->required();
  experiment_cmd->add_option("--instances", exp_instances, "instance pool JSONL")->required();
  experiment_cmd->add_option("--test", exp_test, "held-out test instances JSONL")->required();
  experiment_cmd->add_option("--out-dir", exp_out, "output directory for the CSVs");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "run the DNS filtering proxy");
  std::string serve_fixtures = "fixtures";
  std::size_t serve_dim = fb::kDefaultEmbeddingDim;
  serve_cmd->add_option("--fixtures", serve_fixtures, "fixture dir for enrichment");
  serve_cmd->add_option("--dim", serve_dim, "hash embedder dimension");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) return cmd_ingest(global, manifest_path, out_path, cap);
    if (*embed) {
      return cmd_embed(global, corpus_path, instances_out, fixtures, embedder_kind, vector_table,
                       dim, cache_dir, embed_opts);
    }
    if (*train_cmd) {
      return cmd_train(global, train_instances, model_out, curve_out, epochs, learning_rate,
                       batch_size, hidden, train_opts);
    }
    if (*eval_cmd) return cmd_eval(global, eval_model, eval_instances, threshold, eval_out);
    if (*baseline_cmd) {
      return cmd_baseline(global, baseline_corpus, baseline_fixtures, wordlist, reference_date,
                          baseline_epochs, baseline_dim, baseline_out, features_csv,
                          baseline_cache);
    }
    if (*experiment_cmd) {
      return cmd_experiment(global, exp_config, exp_instances, exp_test, exp_out);
    }
    if (*serve_cmd) return cmd_serve(global, serve_fixtures, serve_dim);
  } catch (const fb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
