#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "fedblock/dns_message.hpp"
#include "fedblock/embedding.hpp"
#include "fedblock/enrichment.hpp"
#include "fedblock/mlp.hpp"

namespace fedblock {

struct Verdict {
  enum class Decision { Block, Allow };
  enum class Source { BaseList, PrivateModel, FederatedModel, Upstream };

  Decision decision = Decision::Allow;
  Source source = Source::Upstream;
  std::optional<double> score;  // absent for BaseList verdicts
};

struct ProxyConfig {
  std::string listen_address = "127.0.0.1";
  std::uint16_t listen_port = 0;  // 0 picks an ephemeral port
  std::string upstream_address = "127.0.0.1";
  std::uint16_t upstream_port = 53;
  std::filesystem::path base_list_path;
  std::optional<std::filesystem::path> private_model_path;
  std::filesystem::path federated_model_path;
  dns::BlockResponseMode block_response = dns::BlockResponseMode::ZeroAddress;
  double block_threshold = 0.5;
  std::chrono::seconds verdict_cache_ttl{300};
  std::chrono::milliseconds upstream_timeout{2000};
  std::size_t workers = 4;
  std::uint16_t metrics_port = 0;  // 0 disables the metrics endpoint
};

// One-domain-per-line block list with parent-suffix matching: listing x.com
// also blocks ads.x.com.
class BaseList {
 public:
  BaseList() = default;
  static BaseList load(const std::filesystem::path& path);
  static BaseList from_lines(const std::vector<std::string>& lines);
  bool contains(const DomainName& domain) const;
  std::size_t size() const { return domains_.size(); }

 private:
  std::set<std::string> domains_;
};

struct ProxyMetrics {
  std::atomic<std::uint64_t> queries_total{0};
  std::atomic<std::uint64_t> blocked_base{0};
  std::atomic<std::uint64_t> blocked_private{0};
  std::atomic<std::uint64_t> blocked_federated{0};
  std::atomic<std::uint64_t> forwarded{0};
  std::atomic<std::uint64_t> cache_hits{0};
  std::atomic<std::uint64_t> upstream_failures{0};
  std::atomic<std::uint64_t> malformed_dropped{0};
  std::atomic<std::uint64_t> model_calls{0};
  std::atomic<std::uint64_t> enrichment_failures{0};

  std::string render() const;  // plain-text "name value" lines
};

// The verdict path: base list, then the private model, then the federated
// model, then upstream. Model scores are P(label 1); a score below the
// threshold means malicious. Missing enrichment data fails open.
class DecisionEngine {
 public:
  DecisionEngine(BaseList base_list, std::shared_ptr<const ModelParams> federated,
                 std::shared_ptr<const ModelParams> private_model,
                 std::shared_ptr<WhoisClient> whois_client, std::shared_ptr<DnsClient> dns_client,
                 std::shared_ptr<EnrichmentCache> cache, std::shared_ptr<const Embedder> embedder,
                 double block_threshold, std::chrono::seconds verdict_cache_ttl);

  Verdict decide(const DomainName& domain);

  // Atomic model swap between queries (retraining hot-swap path).
  void swap_federated(std::shared_ptr<const ModelParams> params);
  void swap_private(std::shared_ptr<const ModelParams> params);
  void swap_base_list(BaseList base_list);

  std::uint64_t model_version() const { return model_version_.load(); }
  ProxyMetrics& metrics() { return metrics_; }
  void clear_verdict_cache();

 private:
  Verdict decide_uncached(const DomainName& domain);

  mutable std::mutex mutex_;  // guards snapshots and the verdict cache
  BaseList base_list_;
  std::shared_ptr<const ModelParams> federated_;
  std::shared_ptr<const ModelParams> private_;
  std::shared_ptr<WhoisClient> whois_client_;
  std::shared_ptr<DnsClient> dns_client_;
  std::shared_ptr<EnrichmentCache> cache_;
  std::shared_ptr<const Embedder> embedder_;
  double block_threshold_;
  std::chrono::seconds verdict_cache_ttl_;
  std::atomic<std::uint64_t> model_version_{1};

  struct CachedVerdict {
    Verdict verdict;
    std::chrono::steady_clock::time_point expires;
  };
  std::map<std::string, CachedVerdict> verdict_cache_;
  ProxyMetrics metrics_;
};

// UDP DNS proxy around a DecisionEngine. Blocked queries get synthesized
// replies; allowed ones are forwarded verbatim and the upstream reply relayed
// back, transaction id untouched.
class ProxyServer {
 public:
  ProxyServer(ProxyConfig config, std::shared_ptr<DecisionEngine> engine);
  ~ProxyServer();

  void start();  // throws on bind failure
  void stop();
  std::uint16_t port() const { return port_; }
  std::uint16_t metrics_port() const { return metrics_port_; }

 private:
  void accept_loop();
  void worker_loop();
  void handle_packet(std::vector<std::uint8_t> packet, const std::string& client_addr,
                     std::uint16_t client_port);

  ProxyConfig config_;
  std::shared_ptr<DecisionEngine> engine_;
  int socket_fd_ = -1;
  std::uint16_t port_ = 0;
  std::uint16_t metrics_port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::vector<std::thread> workers_;
  std::thread metrics_thread_;
  int metrics_fd_ = -1;

  struct Job {
    std::vector<std::uint8_t> packet;
    std::string client_addr;
    std::uint16_t client_port;
  };
  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::vector<Job> queue_;
};

// Coalescing retrain queue: list edits enqueue one pending job; the worker
// runs `train_job` and hot-swaps through `on_success`. A failed job leaves
// the served model untouched.
class Retrainer {
 public:
  Retrainer(std::function<std::optional<ModelParams>()> train_job,
            std::function<void(ModelParams)> on_success);
  ~Retrainer();

  void notify_changed();
  void wait_idle();  // blocks until no job is pending or running
  std::size_t completed_jobs() const { return completed_.load(); }
  std::size_t failed_jobs() const { return failed_.load(); }

 private:
  void worker();

  std::function<std::optional<ModelParams>()> train_job_;
  std::function<void(ModelParams)> on_success_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool pending_ = false;
  bool running_job_ = false;
  bool shutdown_ = false;
  std::atomic<std::size_t> completed_{0};
  std::atomic<std::size_t> failed_{0};
  std::thread thread_;
};

}  // namespace fedblock
