#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fedblock/domain.hpp"

namespace fedblock {

struct WhoisLog {
  std::vector<std::string> lines;  // may be empty; rejection happens at embedding
  std::int64_t fetched_at = 0;     // unix seconds

  bool operator==(const WhoisLog&) const = default;
};

struct AssociatedDomains {
  std::set<DomainName> names;  // always includes the target domain

  bool operator==(const AssociatedDomains&) const = default;
};

struct DomainRecordBundle {
  DomainName domain;
  WhoisLog whois;
  AssociatedDomains assoc;

  bool operator==(const DomainRecordBundle&) const = default;
};

struct DnsRecords {
  std::vector<std::string> cname;
  std::vector<std::string> aaaa_owners;
};

// Clients count their lookups so tests can assert cache idempotence and that
// fixture mode stays offline.
class WhoisClient {
 public:
  virtual ~WhoisClient() = default;
  std::optional<WhoisLog> lookup(const DomainName& domain) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_lookup(domain);
  }
  std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  virtual std::optional<WhoisLog> do_lookup(const DomainName& domain) = 0;
  std::atomic<std::size_t> calls_{0};
};

class DnsClient {
 public:
  virtual ~DnsClient() = default;
  std::optional<DnsRecords> lookup(const DomainName& domain) {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return do_lookup(domain);
  }
  std::size_t calls() const { return calls_.load(std::memory_order_relaxed); }

 private:
  virtual std::optional<DnsRecords> do_lookup(const DomainName& domain) = 0;
  std::atomic<std::size_t> calls_{0};
};

// Reads fixtures/whois/<domain>.txt, one log line per file line.
class FixtureWhoisClient final : public WhoisClient {
 public:
  explicit FixtureWhoisClient(std::filesystem::path dir) : dir_(std::move(dir)) {}

 private:
  std::optional<WhoisLog> do_lookup(const DomainName& domain) override;
  std::filesystem::path dir_;
};

// Reads fixtures/dns/<domain>.json: {"cname": [...], "aaaa_owners": [...]}.
class FixtureDnsClient final : public DnsClient {
 public:
  explicit FixtureDnsClient(std::filesystem::path dir) : dir_(std::move(dir)) {}

 private:
  std::optional<DnsRecords> do_lookup(const DomainName& domain) override;
  std::filesystem::path dir_;
};

struct LiveClientConfig {
  std::string endpoint_url;                    // e.g. http://host:port/whois
  std::string api_key_env = "FEDBLOCK_API_KEY";
  std::chrono::milliseconds timeout{5000};
  std::chrono::milliseconds min_request_interval{2000};  // token-bucket rate limit
};

// HTTP whois API client; GET <endpoint>?domain=<name> with the key from the
// configured environment variable, response body taken as raw log lines.
class LiveWhoisClient final : public WhoisClient {
 public:
  explicit LiveWhoisClient(LiveClientConfig config) : config_(std::move(config)) {}

 private:
  std::optional<WhoisLog> do_lookup(const DomainName& domain) override;
  void rate_limit();
  LiveClientConfig config_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point last_request_{};
};

struct LiveDnsConfig {
  std::string resolver_address = "127.0.0.1";
  std::uint16_t resolver_port = 53;
  std::chrono::milliseconds timeout{3000};
};

// Queries the configured resolver over UDP for CNAME targets and AAAA owner
// names.
class LiveDnsClient final : public DnsClient {
 public:
  explicit LiveDnsClient(LiveDnsConfig config) : config_(std::move(config)) {}

 private:
  std::optional<DnsRecords> do_lookup(const DomainName& domain) override;
  LiveDnsConfig config_;
  std::atomic<std::uint16_t> next_id_{1};
};

// On-disk store of enrichment results keyed by sha256(domain); writes are
// write-temp-then-rename so concurrent readers never see partial files.
class EnrichmentCache {
 public:
  explicit EnrichmentCache(std::filesystem::path dir,
                           std::optional<std::chrono::seconds> ttl = std::nullopt);

  std::optional<WhoisLog> get_whois(const DomainName& domain) const;
  void put_whois(const DomainName& domain, const WhoisLog& log);
  std::optional<AssociatedDomains> get_assoc(const DomainName& domain) const;
  void put_assoc(const DomainName& domain, const AssociatedDomains& assoc);

 private:
  std::filesystem::path entry_path(std::string_view kind, const DomainName& domain) const;
  void write_atomic(const std::filesystem::path& path, const std::string& content);
  bool expired(std::int64_t stored_at) const;

  std::filesystem::path dir_;
  std::optional<std::chrono::seconds> ttl_;
};

inline constexpr int kDefaultCnameDepth = 8;

// Cache-first whois fetch; throws NotFoundError when the client has nothing.
WhoisLog fetch_whois(const DomainName& domain, WhoisClient& client, EnrichmentCache* cache);

// Target plus CNAME-chain names and AAAA owner names, deduplicated. Follows
// CNAME targets through the client up to max_depth hops; throws
// ChainTooDeepError when the chain is still growing at the limit and
// NotFoundError when the target itself has no records.
AssociatedDomains fetch_associated(const DomainName& domain, DnsClient& client,
                                   EnrichmentCache* cache, int max_depth = kDefaultCnameDepth);

// Enforces the invariant that assoc contains the target.
DomainRecordBundle build_bundle(DomainName domain, WhoisLog whois, AssociatedDomains assoc);

std::string bundle_to_json(const DomainRecordBundle& bundle);
DomainRecordBundle bundle_from_json(std::string_view text);

}  // namespace fedblock
