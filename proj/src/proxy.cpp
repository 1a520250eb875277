#include "fedblock/proxy.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include "fedblock/errors.hpp"

namespace fedblock {

BaseList BaseList::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open base list: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return from_lines(lines);
}

BaseList BaseList::from_lines(const std::vector<std::string>& lines) {
  BaseList list;
  for (const std::string& line : lines) {
    if (line.empty() || line.front() == '#') continue;
    if (auto d = DomainName::parse(line)) list.domains_.insert(d->str());
  }
  return list;
}

bool BaseList::contains(const DomainName& domain) const {
  std::optional<DomainName> current = domain;
  while (current) {
    if (domains_.contains(current->str())) return true;
    current = current->parent();
  }
  return false;
}

std::string ProxyMetrics::render() const {
  std::ostringstream out;
  out << "queries_total " << queries_total.load() << '\n'
      << "blocked_base " << blocked_base.load() << '\n'
      << "blocked_private " << blocked_private.load() << '\n'
      << "blocked_federated " << blocked_federated.load() << '\n'
      << "forwarded " << forwarded.load() << '\n'
      << "cache_hits " << cache_hits.load() << '\n'
      << "upstream_failures " << upstream_failures.load() << '\n'
      << "malformed_dropped " << malformed_dropped.load() << '\n'
      << "model_calls " << model_calls.load() << '\n'
      << "enrichment_failures " << enrichment_failures.load() << '\n';
  return out.str();
}

DecisionEngine::DecisionEngine(BaseList base_list, std::shared_ptr<const ModelParams> federated,
                               std::shared_ptr<const ModelParams> private_model,
                               std::shared_ptr<WhoisClient> whois_client,
                               std::shared_ptr<DnsClient> dns_client,
                               std::shared_ptr<EnrichmentCache> cache,
                               std::shared_ptr<const Embedder> embedder, double block_threshold,
                               std::chrono::seconds verdict_cache_ttl)
    : base_list_(std::move(base_list)),
      federated_(std::move(federated)),
      private_(std::move(private_model)),
      whois_client_(std::move(whois_client)),
      dns_client_(std::move(dns_client)),
      cache_(std::move(cache)),
      embedder_(std::move(embedder)),
      block_threshold_(block_threshold),
      verdict_cache_ttl_(verdict_cache_ttl) {
  if (!federated_) throw ModelMissingError("decision engine needs a federated model");
  if (block_threshold_ <= 0.0 || block_threshold_ >= 1.0) {
    throw Error("block_threshold must be inside (0, 1)");
  }
}

void DecisionEngine::swap_federated(std::shared_ptr<const ModelParams> params) {
  if (!params) throw ModelMissingError("cannot swap in a null federated model");
  std::lock_guard lock(mutex_);
  federated_ = std::move(params);
  verdict_cache_.clear();
  model_version_.fetch_add(1);
}

void DecisionEngine::swap_private(std::shared_ptr<const ModelParams> params) {
  std::lock_guard lock(mutex_);
  private_ = std::move(params);
  verdict_cache_.clear();
  model_version_.fetch_add(1);
}

void DecisionEngine::swap_base_list(BaseList base_list) {
  std::lock_guard lock(mutex_);
  base_list_ = std::move(base_list);
  verdict_cache_.clear();
}

void DecisionEngine::clear_verdict_cache() {
  std::lock_guard lock(mutex_);
  verdict_cache_.clear();
}

Verdict DecisionEngine::decide(const DomainName& domain) {
  const std::string key = domain.str();
  const auto now = std::chrono::steady_clock::now();
  {
    std::lock_guard lock(mutex_);
    auto it = verdict_cache_.find(key);
    if (it != verdict_cache_.end() && it->second.expires > now) {
      metrics_.cache_hits.fetch_add(1);
      return it->second.verdict;
    }
  }
  Verdict verdict = decide_uncached(domain);
  {
    std::lock_guard lock(mutex_);
    // periodic sweep keeps a long-running proxy's cache bounded
    if (verdict_cache_.size() >= 4096) {
      std::erase_if(verdict_cache_, [&](const auto& entry) { return entry.second.expires <= now; });
    }
    verdict_cache_[key] = {verdict, now + verdict_cache_ttl_};
  }
  return verdict;
}

Verdict DecisionEngine::decide_uncached(const DomainName& domain) {
  std::shared_ptr<const ModelParams> federated;
  std::shared_ptr<const ModelParams> private_model;
  {
    std::lock_guard lock(mutex_);
    if (base_list_.contains(domain)) {
      return {Verdict::Decision::Block, Verdict::Source::BaseList, std::nullopt};
    }
    federated = federated_;
    private_model = private_;
  }

  // enrichment failures fail open: a missing whois must not break the web
  std::optional<std::vector<double>> features;
  try {
    WhoisLog whois = fetch_whois(domain, *whois_client_, cache_.get());
    AssociatedDomains assoc = fetch_associated(domain, *dns_client_, cache_.get());
    const DomainRecordBundle bundle = build_bundle(domain, std::move(whois), std::move(assoc));
    FeatureResult result = embed_bundle(bundle, *embedder_);
    if (result.ok()) features = std::move(result.features);
  } catch (const Error&) {
    features.reset();
  }
  if (!features) {
    metrics_.enrichment_failures.fetch_add(1);
    return {Verdict::Decision::Allow, Verdict::Source::Upstream, std::nullopt};
  }

  if (private_model) {
    metrics_.model_calls.fetch_add(1);
    const double p = forward(*private_model, *features);
    if (p < block_threshold_) {
      return {Verdict::Decision::Block, Verdict::Source::PrivateModel, p};
    }
  }
  metrics_.model_calls.fetch_add(1);
  const double p = forward(*federated, *features);
  if (p < block_threshold_) {
    return {Verdict::Decision::Block, Verdict::Source::FederatedModel, p};
  }
  return {Verdict::Decision::Allow, Verdict::Source::Upstream, p};
}

namespace {

int open_udp_socket(const std::string& address, std::uint16_t port, std::uint16_t* bound_port) {
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) throw IoError("cannot create UDP socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw IoError("bad listen address: " + address);
  }
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw IoError("cannot bind UDP socket on " + address + ":" + std::to_string(port));
  }
  if (bound_port) {
    sockaddr_in actual{};
    socklen_t len = sizeof(actual);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &len);
    *bound_port = ntohs(actual.sin_port);
  }
  return fd;
}

}  // namespace

ProxyServer::ProxyServer(ProxyConfig config, std::shared_ptr<DecisionEngine> engine)
    : config_(std::move(config)), engine_(std::move(engine)) {}

ProxyServer::~ProxyServer() { stop(); }

void ProxyServer::start() {
  socket_fd_ = open_udp_socket(config_.listen_address, config_.listen_port, &port_);
  running_.store(true);
  accept_thread_ = std::thread([this] { accept_loop(); });
  const std::size_t n_workers = std::max<std::size_t>(1, config_.workers);
  for (std::size_t i = 0; i < n_workers; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
  {
    // metrics listener; port 0 picks an ephemeral one
    metrics_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (metrics_fd_ >= 0) {
      int one = 1;
      ::setsockopt(metrics_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_port = htons(config_.metrics_port);
      ::inet_pton(AF_INET, config_.listen_address.c_str(), &addr.sin_addr);
      if (::bind(metrics_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0 &&
          ::listen(metrics_fd_, 8) == 0) {
        sockaddr_in actual{};
        socklen_t len = sizeof(actual);
        ::getsockname(metrics_fd_, reinterpret_cast<sockaddr*>(&actual), &len);
        metrics_port_ = ntohs(actual.sin_port);
        metrics_thread_ = std::thread([this] {
          while (running_.load()) {
            pollfd pfd{metrics_fd_, POLLIN, 0};
            if (::poll(&pfd, 1, 200) <= 0) continue;
            const int client = ::accept(metrics_fd_, nullptr, nullptr);
            if (client < 0) continue;
            const std::string body = engine_->metrics().render();
            (void)!::write(client, body.data(), body.size());
            ::close(client);
          }
        });
      } else {
        ::close(metrics_fd_);
        metrics_fd_ = -1;
      }
    }
  }
}

void ProxyServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(socket_fd_, SHUT_RDWR);
  queue_cv_.notify_all();
  if (accept_thread_.joinable()) accept_thread_.join();
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
  workers_.clear();
  if (metrics_thread_.joinable()) metrics_thread_.join();
  if (metrics_fd_ >= 0) {
    ::close(metrics_fd_);
    metrics_fd_ = -1;
  }
  ::close(socket_fd_);
  socket_fd_ = -1;
}

void ProxyServer::accept_loop() {
  std::vector<std::uint8_t> buf(65535);
  while (running_.load()) {
    sockaddr_in from{};
    socklen_t from_len = sizeof(from);
    pollfd pfd{socket_fd_, POLLIN, 0};
    if (::poll(&pfd, 1, 200) <= 0) continue;
    const ssize_t n = ::recvfrom(socket_fd_, buf.data(), buf.size(), 0,
                                 reinterpret_cast<sockaddr*>(&from), &from_len);
    if (n <= 0) continue;
    char addr_str[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &from.sin_addr, addr_str, sizeof(addr_str));
    Job job{std::vector<std::uint8_t>(buf.begin(), buf.begin() + n), addr_str,
            ntohs(from.sin_port)};
    {
      std::lock_guard lock(queue_mutex_);
      queue_.push_back(std::move(job));
    }
    queue_cv_.notify_one();
  }
}

void ProxyServer::worker_loop() {
  while (true) {
    Job job;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait(lock, [this] { return !queue_.empty() || !running_.load(); });
      if (queue_.empty()) {
        if (!running_.load()) return;
        continue;
      }
      job = std::move(queue_.front());
      queue_.erase(queue_.begin());
    }
    handle_packet(std::move(job.packet), job.client_addr, job.client_port);
  }
}

void ProxyServer::handle_packet(std::vector<std::uint8_t> packet, const std::string& client_addr,
                                std::uint16_t client_port) {
  ProxyMetrics& metrics = engine_->metrics();
  auto reply = [&](std::span<const std::uint8_t> data) {
    sockaddr_in to{};
    to.sin_family = AF_INET;
    to.sin_port = htons(client_port);
    ::inet_pton(AF_INET, client_addr.c_str(), &to.sin_addr);
    ::sendto(socket_fd_, data.data(), data.size(), 0, reinterpret_cast<sockaddr*>(&to),
             sizeof(to));
  };

  auto parsed = dns::parse(packet);
  if (!parsed || parsed->header.is_response() || parsed->questions.empty()) {
    metrics.malformed_dropped.fetch_add(1);
    return;
  }
  metrics.queries_total.fetch_add(1);

  Verdict verdict{Verdict::Decision::Allow, Verdict::Source::Upstream, std::nullopt};
  if (auto domain = DomainName::parse(parsed->questions.front().qname)) {
    verdict = engine_->decide(*domain);
  }
  // names that cannot even parse as FQDNs (e.g. single labels) fall through
  // to the upstream, same as any other fail-open path

  if (verdict.decision == Verdict::Decision::Block) {
    switch (verdict.source) {
      case Verdict::Source::BaseList:
        metrics.blocked_base.fetch_add(1);
        break;
      case Verdict::Source::PrivateModel:
        metrics.blocked_private.fetch_add(1);
        break;
      case Verdict::Source::FederatedModel:
        metrics.blocked_federated.fetch_add(1);
        break;
      case Verdict::Source::Upstream:
        break;
    }
    reply(dns::build_block_response(*parsed, config_.block_response));
    return;
  }

  auto upstream_reply = dns::exchange_udp(config_.upstream_address, config_.upstream_port,
                                          packet, config_.upstream_timeout);
  if (!upstream_reply) {
    metrics.upstream_failures.fetch_add(1);
    reply(dns::build_rcode_response(*parsed, dns::kRcodeServFail));
    return;
  }
  metrics.forwarded.fetch_add(1);
  reply(*upstream_reply);
}

Retrainer::Retrainer(std::function<std::optional<ModelParams>()> train_job,
                     std::function<void(ModelParams)> on_success)
    : train_job_(std::move(train_job)), on_success_(std::move(on_success)) {
  thread_ = std::thread([this] { worker(); });
}

Retrainer::~Retrainer() {
  {
    std::lock_guard lock(mutex_);
    shutdown_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable()) thread_.join();
}

void Retrainer::notify_changed() {
  {
    std::lock_guard lock(mutex_);
    pending_ = true;  // rapid edits coalesce into one pending job
  }
  cv_.notify_all();
}

void Retrainer::wait_idle() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return !pending_ && !running_job_; });
}

void Retrainer::worker() {
  while (true) {
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return pending_ || shutdown_; });
      if (shutdown_) return;
      pending_ = false;
      running_job_ = true;
    }
    std::optional<ModelParams> result;
    try {
      result = train_job_();
    } catch (...) {
      result.reset();
    }
    if (result) {
      on_success_(std::move(*result));
      completed_.fetch_add(1);
    } else {
      failed_.fetch_add(1);  // serving keeps the old model
    }
    {
      std::lock_guard lock(mutex_);
      running_job_ = false;
    }
    cv_.notify_all();
  }
}

}  // namespace fedblock
