#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedblock/embedding.hpp"
#include "fedblock/mlp.hpp"

namespace fedblock {

struct ClientState {
  std::size_t client_id = 0;
  std::vector<Instance> local_instances;  // shared base plus this client's uniques
  ModelParams local_params;
  std::size_t rounds_since_sync = 0;
};

struct ClientUpdate {
  std::size_t client_id = 0;
  std::size_t round = 0;
  std::vector<double> delta;  // trained - central, flattened
  double norm = 0.0;          // L2 of delta
  // Trained parameters as produced by the client. Applying updates by
  // averaging these (instead of re-adding deltas to the central params) is
  // algebraically identical but avoids float round-trip error, which keeps
  // the one-client case exactly equal to plain centralized training.
  std::vector<double> trained;
};

// Welford accumulation over accepted update norms.
struct NormStats {
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n_accepted = 0;

  void add(double norm) {
    ++n_accepted;
    const double d1 = norm - mean;
    mean += d1 / static_cast<double>(n_accepted);
    m2 += d1 * (norm - mean);
  }
  double stddev() const {
    return n_accepted == 0 ? 0.0 : std::sqrt(m2 / static_cast<double>(n_accepted));
  }
};

struct ExperimentConfig {
  std::size_t n_clients = 10;
  std::size_t unique_per_client = 10;
  std::size_t new_domains = 20;  // added for the convergence probe
  std::size_t base_size = 50;
  std::size_t rounds = 150;
  std::size_t sync_interval = 30;
  std::size_t local_epochs = 5;
  std::size_t fine_tune_epochs = 1;
  double selection_fraction = 0.2;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  std::size_t probe_rounds = 15;

  // model/training knobs for the harness
  std::vector<std::size_t> hidden = {416, 32};  // ReLU then SeLU widths
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  bool anomaly_filter_on = true;
  std::size_t warmup = 10;
  std::size_t n_threads = 1;
};

std::string experiment_config_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(std::string_view text);

// One shared base sample plus disjoint unique samples per client; every
// client's params start as a copy of `central`.
std::vector<ClientState> partition(const std::vector<Instance>& corpus, std::size_t n_clients,
                                   std::size_t base_size, std::size_t unique_per_client,
                                   std::uint64_t seed, const ModelParams& central);

// ceil(fraction * n) distinct client ids, uniform, deterministic in
// (seed, round); returned sorted.
std::vector<std::size_t> select_clients(std::size_t round, std::size_t n_clients, double fraction,
                                        std::uint64_t seed);

ClientUpdate local_update(const ClientState& client, const ModelParams& central,
                          std::size_t epochs, double learning_rate, std::size_t batch_size,
                          std::uint64_t seed);

struct FilterResult {
  std::vector<ClientUpdate> accepted;
  std::vector<ClientUpdate> rejected;
};

// Warm-up accepts everything; afterwards any norm farther than two standard
// deviations from the running mean is rejected. Accepted norms fold into
// `stats`.
FilterResult filter_anomalies(std::vector<ClientUpdate> updates, NormStats& stats,
                              std::size_t warmup = 10);

// Componentwise mean of the accepted deltas; throws NoAcceptedUpdatesError.
std::vector<double> aggregate(const std::vector<ClientUpdate>& accepted);

// central + mean(delta), realized as the mean of the clients' trained
// parameters; one accepted update reproduces that client's trained params
// bit for bit.
ModelParams apply_updates(const ModelParams& central, const std::vector<ClientUpdate>& accepted);

struct RoundLog {
  std::size_t round = 0;
  std::vector<std::size_t> selected;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::vector<std::size_t> rejected_ids;
  bool applied = false;
  bool resynced = false;
};

struct SimulationOptions {
  double selection_fraction = 0.2;
  std::size_t local_epochs = 5;
  std::size_t fine_tune_epochs = 1;
  std::size_t sync_interval = 30;
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  bool anomaly_filter_on = true;
  std::size_t warmup = 10;
  std::uint64_t seed = 0;
  std::size_t n_threads = 1;
};

// The in-process federated system: central model, clients, anomaly stats.
class FederatedSimulation {
 public:
  FederatedSimulation(ModelParams central, std::vector<ClientState> clients,
                      SimulationOptions options);

  RoundLog run_round();
  void run_rounds(std::size_t n);

  const ModelParams& central() const { return central_; }
  const std::vector<ClientState>& clients() const { return clients_; }
  std::vector<ClientState>& clients() { return clients_; }
  const NormStats& norm_stats() const { return stats_; }
  std::size_t rounds_run() const { return round_; }

  // Local models as they stood just before the most recent resync overwrote
  // them; empty until the first resync happens.
  const std::vector<ModelParams>& last_pre_resync_locals() const { return pre_resync_locals_; }

  // Per-client hook for adversarial behavior in tests/experiments: scales the
  // client's update delta (and trained params to match).
  void set_update_scale(std::size_t client_id, double scale);

  const std::vector<RoundLog>& round_logs() const { return logs_; }

 private:
  ModelParams central_;
  std::vector<ClientState> clients_;
  SimulationOptions options_;
  NormStats stats_;
  std::size_t round_ = 0;
  std::vector<ModelParams> pre_resync_locals_;
  std::vector<double> update_scales_;
  std::vector<RoundLog> logs_;
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;

  double lower_bound() const { return mean - stddev; }
};

MeanStd mean_std(const std::vector<double>& values);

// One Table-6-style row plus the convergence-probe loss improvement.
struct ExperimentReport {
  ExperimentConfig config;
  double central_test_accuracy = 0.0;  // mean over repeats
  MeanStd private_test;      // private models on the shared test set
  MeanStd finetuned_test;    // pre-final-resync local models on the test set
  MeanStd finetuned_local;   // same models on their own local data
  MeanStd central_local;     // central model on each client's local data
  double loss_improvement = 0.0;  // mean over repeats
};

enum class Winner { A, B, Tie };

// mean - stddev comparison
Winner lower_bound_winner(const MeanStd& a, const MeanStd& b);

struct SystemComparison {
  Winner finetuned_vs_private_test = Winner::Tie;
  Winner finetuned_vs_central_test = Winner::Tie;
  Winner finetuned_vs_central_local = Winner::Tie;
};

SystemComparison compare_systems(const ExperimentReport& report);

// Full harness: partitions, trains private baselines, runs the federated
// rounds, captures pre-final-resync models, measures the report columns and
// the convergence probe, aggregated over config.repeats.
ExperimentReport run_experiment(const ExperimentConfig& config,
                                const std::vector<Instance>& corpus,
                                const std::vector<Instance>& test_set);

// Adds the new instances to every client's local list, measures central loss
// on them, runs extra rounds, and returns loss_before - loss_after.
double convergence_probe(FederatedSimulation& sim, const std::vector<Instance>& new_instances,
                         std::size_t extra_rounds);

std::string report_csv_header();
std::string report_csv_row(std::size_t experiment_number, const ExperimentReport& report);
std::string loss_csv_header();
std::string loss_csv_row(std::size_t experiment_number, const ExperimentReport& report);

}  // namespace fedblock
