#include "fedblock/fedsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "fedblock/errors.hpp"
#include "fedblock/rng.hpp"
#include "nlohmann/json.hpp"

namespace fedblock {

namespace {

std::vector<Example> make_examples(const std::vector<Instance>& instances) {
  std::vector<Example> out;
  out.reserve(instances.size());
  for (const Instance& inst : instances) out.push_back({inst.features, inst.label});
  return out;
}

// full-precision doubles so determinism diffs show up in the CSV bytes
std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<LayerSpec> harness_architecture(std::size_t input_width,
                                            const std::vector<std::size_t>& hidden) {
  std::vector<LayerSpec> arch{{input_width, Activation::None}};
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    // first hidden layer ReLU, second SeLU, any further hidden layers ReLU
    arch.push_back({hidden[i], i == 1 ? Activation::SeLU : Activation::ReLU});
  }
  arch.push_back({1, Activation::Sigmoid});
  return arch;
}

}  // namespace

std::string experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  j["n_clients"] = c.n_clients;
  j["unique_per_client"] = c.unique_per_client;
  j["new_domains"] = c.new_domains;
  j["base_size"] = c.base_size;
  j["rounds"] = c.rounds;
  j["sync_interval"] = c.sync_interval;
  j["local_epochs"] = c.local_epochs;
  j["fine_tune_epochs"] = c.fine_tune_epochs;
  j["selection_fraction"] = c.selection_fraction;
  j["repeats"] = c.repeats;
  j["seed"] = c.seed;
  j["probe_rounds"] = c.probe_rounds;
  j["hidden"] = c.hidden;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["anomaly_filter_on"] = c.anomaly_filter_on;
  j["warmup"] = c.warmup;
  j["n_threads"] = c.n_threads;
  return j.dump(2);
}

ExperimentConfig experiment_config_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  ExperimentConfig c;
  c.n_clients = j.value("n_clients", c.n_clients);
  c.unique_per_client = j.value("unique_per_client", c.unique_per_client);
  c.new_domains = j.value("new_domains", c.new_domains);
  c.base_size = j.value("base_size", c.base_size);
  c.rounds = j.value("rounds", c.rounds);
  c.sync_interval = j.value("sync_interval", c.sync_interval);
  c.local_epochs = j.value("local_epochs", c.local_epochs);
  c.fine_tune_epochs = j.value("fine_tune_epochs", c.fine_tune_epochs);
  c.selection_fraction = j.value("selection_fraction", c.selection_fraction);
  c.repeats = j.value("repeats", c.repeats);
  c.seed = j.value("seed", c.seed);
  c.probe_rounds = j.value("probe_rounds", c.probe_rounds);
  if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.anomaly_filter_on = j.value("anomaly_filter_on", c.anomaly_filter_on);
  c.warmup = j.value("warmup", c.warmup);
  c.n_threads = j.value("n_threads", c.n_threads);
  if (c.n_clients < 1 || c.rounds < 1 || c.sync_interval < 1 || c.local_epochs < 1 ||
      c.selection_fraction <= 0.0 || c.selection_fraction > 1.0) {
    throw IoError("invalid experiment config");
  }
  return c;
}

std::vector<ClientState> partition(const std::vector<Instance>& corpus, std::size_t n_clients,
                                   std::size_t base_size, std::size_t unique_per_client,
                                   std::uint64_t seed, const ModelParams& central) {
  const std::size_t demand = base_size + n_clients * unique_per_client;
  if (demand > corpus.size()) {
    throw InsufficientDataError("partition needs " + std::to_string(demand) +
                                " instances, corpus has " + std::to_string(corpus.size()));
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "partition"));
  rng.shuffle(order);

  std::vector<Instance> base;
  base.reserve(base_size);
  for (std::size_t i = 0; i < base_size; ++i) base.push_back(corpus[order[i]]);

  std::vector<ClientState> clients(n_clients);
  std::size_t cursor = base_size;
  for (std::size_t c = 0; c < n_clients; ++c) {
    clients[c].client_id = c;
    clients[c].local_instances = base;
    for (std::size_t u = 0; u < unique_per_client; ++u) {
      clients[c].local_instances.push_back(corpus[order[cursor++]]);
    }
    clients[c].local_params = central;
  }
  return clients;
}

std::vector<std::size_t> select_clients(std::size_t round, std::size_t n_clients, double fraction,
                                        std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) throw Error("selection fraction must be in (0, 1]");
  const auto k = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n_clients)));
  Rng rng(derive_seed(derive_seed(seed, "select"), round));
  return rng.sample_indices(n_clients, std::max<std::size_t>(k, 1));
}

ClientUpdate local_update(const ClientState& client, const ModelParams& central,
                          std::size_t epochs, double learning_rate, std::size_t batch_size,
                          std::uint64_t seed) {
  TrainConfig cfg;
  cfg.learning_rate = learning_rate;
  cfg.epochs = epochs;
  cfg.batch_size = batch_size;
  cfg.seed = seed;
  const auto examples = make_examples(client.local_instances);
  TrainResult trained = train(central, examples, cfg);

  ClientUpdate update;
  update.client_id = client.client_id;
  update.trained = trained.params.flatten();
  const std::vector<double> before = central.flatten();
  update.delta.resize(before.size());
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    update.delta[i] = update.trained[i] - before[i];
    norm_sq += update.delta[i] * update.delta[i];
  }
  update.norm = std::sqrt(norm_sq);
  return update;
}

FilterResult filter_anomalies(std::vector<ClientUpdate> updates, NormStats& stats,
                              std::size_t warmup) {
  FilterResult result;
  for (ClientUpdate& update : updates) {
    if (stats.n_accepted >= warmup &&
        std::abs(update.norm - stats.mean) > 2.0 * stats.stddev()) {
      result.rejected.push_back(std::move(update));
      continue;
    }
    stats.add(update.norm);
    result.accepted.push_back(std::move(update));
  }
  return result;
}

std::vector<double> aggregate(const std::vector<ClientUpdate>& accepted) {
  if (accepted.empty()) throw NoAcceptedUpdatesError("no accepted updates this round");
  std::vector<double> mean(accepted.front().delta.size(), 0.0);
  for (const ClientUpdate& update : accepted) {
    if (update.delta.size() != mean.size()) throw WidthMismatchError("update length mismatch");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += update.delta[i];
  }
  const double inv = 1.0 / static_cast<double>(accepted.size());
  for (double& v : mean) v *= inv;
  return mean;
}

ModelParams apply_updates(const ModelParams& central, const std::vector<ClientUpdate>& accepted) {
  if (accepted.empty()) throw NoAcceptedUpdatesError("no accepted updates to apply");
  std::vector<double> mean(accepted.front().trained.size(), 0.0);
  for (const ClientUpdate& u : accepted) {
    if (u.trained.size() != mean.size()) throw WidthMismatchError("update length mismatch");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += u.trained[i];
  }
  const double inv = 1.0 / static_cast<double>(accepted.size());
  for (double& v : mean) v *= inv;
  return ModelParams::from_flat(central.architecture, mean);
}

FederatedSimulation::FederatedSimulation(ModelParams central, std::vector<ClientState> clients,
                                         SimulationOptions options)
    : central_(std::move(central)), clients_(std::move(clients)), options_(options) {
  update_scales_.assign(clients_.size(), 1.0);
}

void FederatedSimulation::set_update_scale(std::size_t client_id, double scale) {
  update_scales_.at(client_id) = scale;
}

RoundLog FederatedSimulation::run_round() {
  RoundLog log;
  log.round = round_;
  log.selected = select_clients(round_, clients_.size(), options_.selection_fraction,
                                options_.seed);

  // selected clients train a copy of the central model (independent, so
  // optionally parallel; per-client seeds keep the result identical)
  std::vector<ClientUpdate> updates(log.selected.size());
  auto compute = [&](std::size_t slot) {
    const std::size_t id = log.selected[slot];
    updates[slot] = local_update(clients_[id], central_, options_.local_epochs,
                                 options_.learning_rate, options_.batch_size,
                                 derive_seed(derive_seed(options_.seed, "local", round_), id));
    updates[slot].round = round_;
    const double scale = update_scales_[id];
    if (scale != 1.0) {
      ClientUpdate& u = updates[slot];
      const std::vector<double> before = central_.flatten();
      for (std::size_t i = 0; i < u.delta.size(); ++i) {
        u.delta[i] *= scale;
        u.trained[i] = before[i] + u.delta[i];
      }
      u.norm *= scale;
    }
  };
  if (options_.n_threads > 1 && log.selected.size() > 1) {
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min(options_.n_threads, log.selected.size());
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t slot = t; slot < updates.size(); slot += n_threads) compute(slot);
      });
    }
    for (auto& th : pool) th.join();
  } else {
    for (std::size_t slot = 0; slot < updates.size(); ++slot) compute(slot);
  }

  std::vector<ClientUpdate> accepted;
  if (options_.anomaly_filter_on) {
    FilterResult filtered = filter_anomalies(std::move(updates), stats_, options_.warmup);
    accepted = std::move(filtered.accepted);
    log.rejected = filtered.rejected.size();
    for (const ClientUpdate& u : filtered.rejected) log.rejected_ids.push_back(u.client_id);
  } else {
    accepted = std::move(updates);
  }
  log.accepted = accepted.size();

  if (!accepted.empty()) {
    central_ = apply_updates(central_, accepted);
    log.applied = true;
  }

  // everyone not selected fine-tunes their local copy
  for (ClientState& client : clients_) {
    const bool selected =
        std::binary_search(log.selected.begin(), log.selected.end(), client.client_id);
    if (!selected && options_.fine_tune_epochs > 0) {
      TrainConfig cfg;
      cfg.learning_rate = options_.learning_rate;
      cfg.epochs = options_.fine_tune_epochs;
      cfg.batch_size = options_.batch_size;
      cfg.seed = derive_seed(derive_seed(options_.seed, "finetune", round_), client.client_id);
      client.local_params =
          train(std::move(client.local_params), make_examples(client.local_instances), cfg).params;
    }
    ++client.rounds_since_sync;
  }

  if ((round_ + 1) % options_.sync_interval == 0) {
    pre_resync_locals_.clear();
    for (ClientState& client : clients_) {
      pre_resync_locals_.push_back(client.local_params);
      client.local_params = central_;
      client.rounds_since_sync = 0;
    }
    log.resynced = true;
  }

  ++round_;
  logs_.push_back(log);
  return log;
}

void FederatedSimulation::run_rounds(std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) run_round();
}

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return out;
}

Winner lower_bound_winner(const MeanStd& a, const MeanStd& b) {
  const double la = a.lower_bound();
  const double lb = b.lower_bound();
  if (la > lb) return Winner::A;
  if (lb > la) return Winner::B;
  return Winner::Tie;
}

SystemComparison compare_systems(const ExperimentReport& report) {
  SystemComparison out;
  out.finetuned_vs_private_test = lower_bound_winner(report.finetuned_test, report.private_test);
  out.finetuned_vs_central_test =
      lower_bound_winner(report.finetuned_test, MeanStd{report.central_test_accuracy, 0.0});
  out.finetuned_vs_central_local =
      lower_bound_winner(report.finetuned_local, report.central_local);
  return out;
}

double convergence_probe(FederatedSimulation& sim, const std::vector<Instance>& new_instances,
                         std::size_t extra_rounds) {
  for (ClientState& client : sim.clients()) {
    client.local_instances.insert(client.local_instances.end(), new_instances.begin(),
                                  new_instances.end());
  }
  const auto probe_examples = make_examples(new_instances);
  const double loss_before = mean_loss(sim.central(), probe_examples);
  sim.run_rounds(extra_rounds);
  const double loss_after = mean_loss(sim.central(), probe_examples);
  return loss_before - loss_after;
}

ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::vector<Instance>& corpus,
                                const std::vector<Instance>& test_set) {
  if (corpus.empty() || test_set.empty()) throw EmptyDatasetError("experiment needs data");

  const std::size_t input_width = corpus.front().features.size();
  const auto arch = harness_architecture(input_width, config.hidden);
  const auto test_examples = make_examples(test_set);

  // a private model gets the epoch budget a federated client expects to spend
  const double expected_epochs_per_round =
      config.selection_fraction * static_cast<double>(config.local_epochs) +
      (1.0 - config.selection_fraction) * static_cast<double>(config.fine_tune_epochs);
  const auto private_epochs = static_cast<std::size_t>(std::max(
      1.0, std::round(static_cast<double>(config.rounds) * expected_epochs_per_round)));

  ExperimentReport report;
  report.config = config;
  std::vector<double> private_test, finetuned_test, finetuned_local, central_local;
  double central_test_sum = 0.0;
  double improvement_sum = 0.0;

  for (std::size_t rep = 0; rep < config.repeats; ++rep) {
    const std::uint64_t rep_seed = derive_seed(config.seed, "repeat", rep);
    ModelParams central = init_params(arch, derive_seed(rep_seed, "init"));

    // clients + a disjoint slice for the convergence probe
    const std::size_t demand =
        config.base_size + config.n_clients * config.unique_per_client + config.new_domains;
    if (demand > corpus.size()) {
      throw InsufficientDataError("experiment needs " + std::to_string(demand) +
                                  " instances, corpus has " + std::to_string(corpus.size()));
    }
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(rep_seed, "partition"));
    rng.shuffle(order);

    std::vector<ClientState> clients(config.n_clients);
    std::size_t cursor = 0;
    std::vector<Instance> base;
    for (std::size_t i = 0; i < config.base_size; ++i) base.push_back(corpus[order[cursor++]]);
    for (std::size_t c = 0; c < config.n_clients; ++c) {
      clients[c].client_id = c;
      clients[c].local_instances = base;
      for (std::size_t u = 0; u < config.unique_per_client; ++u) {
        clients[c].local_instances.push_back(corpus[order[cursor++]]);
      }
      clients[c].local_params = central;
    }
    std::vector<Instance> probe_set;
    for (std::size_t i = 0; i < config.new_domains; ++i) probe_set.push_back(corpus[order[cursor++]]);

    // private baselines: same architecture, local data only
    std::vector<ModelParams> private_models;
    for (std::size_t c = 0; c < config.n_clients; ++c) {
      TrainConfig cfg;
      cfg.learning_rate = config.learning_rate;
      cfg.epochs = private_epochs;
      cfg.batch_size = config.batch_size;
      cfg.seed = derive_seed(rep_seed, "private-train", c);
      ModelParams init = init_params(arch, derive_seed(rep_seed, "private-init", c));
      private_models.push_back(
          train(std::move(init), make_examples(clients[c].local_instances), cfg).params);
    }

    SimulationOptions opts;
    opts.selection_fraction = config.selection_fraction;
    opts.local_epochs = config.local_epochs;
    opts.fine_tune_epochs = config.fine_tune_epochs;
    opts.sync_interval = config.sync_interval;
    opts.learning_rate = config.learning_rate;
    opts.batch_size = config.batch_size;
    opts.anomaly_filter_on = config.anomaly_filter_on;
    opts.warmup = config.warmup;
    opts.seed = derive_seed(rep_seed, "sim");
    opts.n_threads = config.n_threads;
    FederatedSimulation sim(central, std::move(clients), opts);
    sim.run_rounds(config.rounds);

    // "fine-tuned" models are the locals captured just before the final
    // resync; if no resync ever fired, the current locals stand in
    std::vector<ModelParams> finetuned = sim.last_pre_resync_locals();
    if (finetuned.empty()) {
      for (const ClientState& c : sim.clients()) finetuned.push_back(c.local_params);
    }

    central_test_sum += accuracy(sim.central(), test_examples);
    for (std::size_t c = 0; c < config.n_clients; ++c) {
      const auto local_examples = make_examples(sim.clients()[c].local_instances);
      private_test.push_back(accuracy(private_models[c], test_examples));
      finetuned_test.push_back(accuracy(finetuned[c], test_examples));
      finetuned_local.push_back(accuracy(finetuned[c], local_examples));
      central_local.push_back(accuracy(sim.central(), local_examples));
    }

    improvement_sum += convergence_probe(sim, probe_set, config.probe_rounds);
  }

  report.central_test_accuracy = central_test_sum / static_cast<double>(config.repeats);
  report.private_test = mean_std(private_test);
  report.finetuned_test = mean_std(finetuned_test);
  report.finetuned_local = mean_std(finetuned_local);
  report.central_local = mean_std(central_local);
  report.loss_improvement = improvement_sum / static_cast<double>(config.repeats);
  return report;
}

std::string report_csv_header() {
  return "experiment,n_clients,unique_per_client,new_domains,"
         "central_test_acc,private_test_mean,private_test_std,"
         "finetuned_test_mean,finetuned_test_std,"
         "finetuned_local_mean,finetuned_local_std,"
         "central_local_mean,central_local_std\n";
}

std::string report_csv_row(std::size_t experiment_number, const ExperimentReport& r) {
  std::string out = std::to_string(experiment_number) + ',' +
                    std::to_string(r.config.n_clients) + ',' +
                    std::to_string(r.config.unique_per_client) + ',' +
                    std::to_string(r.config.new_domains);
  for (double v : {r.central_test_accuracy, r.private_test.mean, r.private_test.stddev,
                   r.finetuned_test.mean, r.finetuned_test.stddev, r.finetuned_local.mean,
                   r.finetuned_local.stddev, r.central_local.mean, r.central_local.stddev}) {
    out += ',';
    out += fmt(v);
  }
  out += '\n';
  return out;
}

std::string loss_csv_header() {
  return "experiment,n_clients,unique_per_client,new_domains,loss_improvement\n";
}

std::string loss_csv_row(std::size_t experiment_number, const ExperimentReport& r) {
  return std::to_string(experiment_number) + ',' + std::to_string(r.config.n_clients) + ',' +
         std::to_string(r.config.unique_per_client) + ',' + std::to_string(r.config.new_domains) +
         ',' + fmt(r.loss_improvement) + '\n';
}

}  // namespace fedblock
