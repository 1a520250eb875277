#include "fedblock/enrichment.hpp"

#include <unistd.h>

#include <cstdlib>
#include <deque>
#include <fstream>
#include <sstream>
#include <thread>

#include "fedblock/digest.hpp"
#include "fedblock/dns_message.hpp"
#include "fedblock/errors.hpp"
#include "nlohmann/json.hpp"

// keep the heavy header out of enrichment.hpp
#define CPPHTTPLIB_NO_EXCEPTIONS
#include "httplib.h"

namespace fedblock {

namespace {

std::int64_t now_unix() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

}  // namespace

std::optional<WhoisLog> FixtureWhoisClient::do_lookup(const DomainName& domain) {
  std::ifstream in(dir_ / (domain.str() + ".txt"));
  if (!in) return std::nullopt;
  WhoisLog log;
  log.lines = read_lines(in);
  log.fetched_at = 0;  // fixtures are timeless
  return log;
}

std::optional<DnsRecords> FixtureDnsClient::do_lookup(const DomainName& domain) {
  std::ifstream in(dir_ / (domain.str() + ".json"));
  if (!in) return std::nullopt;
  nlohmann::json j;
  in >> j;
  DnsRecords rec;
  for (const auto& c : j.value("cname", nlohmann::json::array())) {
    rec.cname.push_back(c.get<std::string>());
  }
  for (const auto& a : j.value("aaaa_owners", nlohmann::json::array())) {
    rec.aaaa_owners.push_back(a.get<std::string>());
  }
  return rec;
}

void LiveWhoisClient::rate_limit() {
  std::lock_guard lock(mutex_);
  const auto now = std::chrono::steady_clock::now();
  const auto next_allowed = last_request_ + config_.min_request_interval;
  if (last_request_.time_since_epoch().count() != 0 && now < next_allowed) {
    std::this_thread::sleep_for(next_allowed - now);
  }
  last_request_ = std::chrono::steady_clock::now();
}

std::optional<WhoisLog> LiveWhoisClient::do_lookup(const DomainName& domain) {
  rate_limit();
  // split endpoint into host part and path
  std::string url = config_.endpoint_url;
  auto scheme_end = url.find("://");
  auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  std::string host = path_start == std::string::npos ? url : url.substr(0, path_start);
  std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  httplib::Client client(host);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(config_.timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(config_.timeout));
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str())) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  auto res = client.Get(path + "?domain=" + domain.str(), headers);
  if (!res || res->status != 200) return std::nullopt;
  std::istringstream body(res->body);
  WhoisLog log;
  log.lines = read_lines(body);
  log.fetched_at = now_unix();
  return log;
}

std::optional<DnsRecords> LiveDnsClient::do_lookup(const DomainName& domain) {
  DnsRecords records;
  bool any_response = false;
  for (std::uint16_t qtype : {dns::kTypeCNAME, dns::kTypeAAAA}) {
    const auto id = next_id_.fetch_add(1, std::memory_order_relaxed);
    const auto query = dns::build_query(id, domain.str(), qtype);
    const auto reply =
        dns::exchange_udp(config_.resolver_address, config_.resolver_port, query, config_.timeout);
    if (!reply) continue;
    const auto parsed = dns::parse(*reply);
    if (!parsed || parsed->header.id != id) continue;
    any_response = true;
    for (const dns::ResourceRecord& rr : parsed->answers) {
      if (rr.type == dns::kTypeCNAME && !rr.rdata_name.empty()) {
        records.cname.push_back(rr.rdata_name);
      } else if (rr.type == dns::kTypeAAAA) {
        records.aaaa_owners.push_back(rr.name);
      }
    }
  }
  if (!any_response) return std::nullopt;
  return records;
}

EnrichmentCache::EnrichmentCache(std::filesystem::path dir, std::optional<std::chrono::seconds> ttl)
    : dir_(std::move(dir)), ttl_(ttl) {
  std::filesystem::create_directories(dir_ / "whois");
  std::filesystem::create_directories(dir_ / "dns");
}

std::filesystem::path EnrichmentCache::entry_path(std::string_view kind,
                                                  const DomainName& domain) const {
  return dir_ / kind / (sha256_hex(domain.str()) + ".json");
}

void EnrichmentCache::write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::ostringstream suffix;
  suffix << ".tmp." << ::getpid() << "." << std::this_thread::get_id();
  const std::filesystem::path tmp = path.string() + suffix.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

bool EnrichmentCache::expired(std::int64_t stored_at) const {
  if (!ttl_) return false;
  return now_unix() - stored_at > ttl_->count();
}

std::optional<WhoisLog> EnrichmentCache::get_whois(const DomainName& domain) const {
  std::ifstream in(entry_path("whois", domain));
  if (!in) return std::nullopt;
  nlohmann::json j;
  in >> j;
  if (expired(j.value("stored_at", std::int64_t{0}))) return std::nullopt;
  WhoisLog log;
  log.fetched_at = j.value("fetched_at", std::int64_t{0});
  for (const auto& line : j.at("lines")) log.lines.push_back(line.get<std::string>());
  return log;
}

void EnrichmentCache::put_whois(const DomainName& domain, const WhoisLog& log) {
  nlohmann::json j;
  j["domain"] = domain.str();
  j["stored_at"] = now_unix();
  j["fetched_at"] = log.fetched_at;
  j["lines"] = log.lines;
  write_atomic(entry_path("whois", domain), j.dump());
}

std::optional<AssociatedDomains> EnrichmentCache::get_assoc(const DomainName& domain) const {
  std::ifstream in(entry_path("dns", domain));
  if (!in) return std::nullopt;
  nlohmann::json j;
  in >> j;
  if (expired(j.value("stored_at", std::int64_t{0}))) return std::nullopt;
  AssociatedDomains assoc;
  for (const auto& n : j.at("names")) {
    if (auto d = DomainName::parse(n.get<std::string>())) assoc.names.insert(std::move(*d));
  }
  return assoc;
}

void EnrichmentCache::put_assoc(const DomainName& domain, const AssociatedDomains& assoc) {
  nlohmann::json j;
  j["domain"] = domain.str();
  j["stored_at"] = now_unix();
  auto names = nlohmann::json::array();
  for (const DomainName& n : assoc.names) names.push_back(n.str());
  j["names"] = std::move(names);
  write_atomic(entry_path("dns", domain), j.dump());
}

WhoisLog fetch_whois(const DomainName& domain, WhoisClient& client, EnrichmentCache* cache) {
  if (cache) {
    if (auto hit = cache->get_whois(domain)) return *hit;
  }
  auto log = client.lookup(domain);
  if (!log) throw NotFoundError("whois lookup failed for " + domain.str());
  if (cache) cache->put_whois(domain, *log);
  return *log;
}

AssociatedDomains fetch_associated(const DomainName& domain, DnsClient& client,
                                   EnrichmentCache* cache, int max_depth) {
  if (cache) {
    if (auto hit = cache->get_assoc(domain)) return *hit;
  }

  AssociatedDomains assoc;
  assoc.names.insert(domain);

  auto target_records = client.lookup(domain);
  if (!target_records) throw NotFoundError("dns lookup failed for " + domain.str());

  // breadth-first over CNAME targets; hop count is per chain link, and a
  // frontier still alive past max_depth (loops included) is an error
  std::deque<std::pair<DomainName, int>> frontier;
  auto ingest = [&](const DnsRecords& rec, int depth) {
    for (const std::string& owner : rec.aaaa_owners) {
      if (auto d = DomainName::parse(owner)) assoc.names.insert(std::move(*d));
    }
    for (const std::string& target : rec.cname) {
      if (auto d = DomainName::parse(target)) {
        assoc.names.insert(*d);
        frontier.emplace_back(std::move(*d), depth + 1);
      }
    }
  };
  ingest(*target_records, 0);
  while (!frontier.empty()) {
    auto [name, depth] = frontier.front();
    frontier.pop_front();
    if (depth > max_depth) {
      throw ChainTooDeepError("cname chain exceeds depth " + std::to_string(max_depth) +
                              " from " + domain.str());
    }
    // names outside the client's view (external hosts) end the chain quietly
    if (auto rec = client.lookup(name)) ingest(*rec, depth);
  }

  if (cache) cache->put_assoc(domain, assoc);
  return assoc;
}

DomainRecordBundle build_bundle(DomainName domain, WhoisLog whois, AssociatedDomains assoc) {
  assoc.names.insert(domain);
  return DomainRecordBundle{std::move(domain), std::move(whois), std::move(assoc)};
}

std::string bundle_to_json(const DomainRecordBundle& bundle) {
  nlohmann::ordered_json j;
  j["domain"] = bundle.domain.str();
  j["whois"] = {{"lines", bundle.whois.lines}, {"fetched_at", bundle.whois.fetched_at}};
  auto names = nlohmann::json::array();
  for (const DomainName& n : bundle.assoc.names) names.push_back(n.str());
  j["assoc"] = std::move(names);
  return j.dump();
}

DomainRecordBundle bundle_from_json(std::string_view text) {
  auto j = nlohmann::json::parse(text);
  auto domain = DomainName::parse(j.at("domain").get<std::string>());
  if (!domain) throw IoError("invalid bundle domain");
  WhoisLog log;
  log.fetched_at = j.at("whois").value("fetched_at", std::int64_t{0});
  for (const auto& line : j.at("whois").at("lines")) log.lines.push_back(line.get<std::string>());
  AssociatedDomains assoc;
  for (const auto& n : j.at("assoc")) {
    if (auto d = DomainName::parse(n.get<std::string>())) assoc.names.insert(std::move(*d));
  }
  return build_bundle(std::move(*domain), std::move(log), std::move(assoc));
}

}  // namespace fedblock
