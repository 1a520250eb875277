#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedblock::dns {

inline constexpr std::uint16_t kTypeA = 1;
inline constexpr std::uint16_t kTypeCNAME = 5;
inline constexpr std::uint16_t kTypeAAAA = 28;
inline constexpr std::uint16_t kClassIN = 1;

inline constexpr std::uint8_t kRcodeNoError = 0;
inline constexpr std::uint8_t kRcodeServFail = 2;
inline constexpr std::uint8_t kRcodeNxDomain = 3;

struct Header {
  std::uint16_t id = 0;
  std::uint16_t flags = 0;
  std::uint16_t qdcount = 0;
  std::uint16_t ancount = 0;
  std::uint16_t nscount = 0;
  std::uint16_t arcount = 0;

  bool is_response() const { return flags & 0x8000; }
  std::uint8_t rcode() const { return flags & 0x000f; }
};

struct Question {
  std::string qname;  // dotted, lowercase, no trailing dot
  std::uint16_t qtype = 0;
  std::uint16_t qclass = kClassIN;
};

struct ResourceRecord {
  std::string name;
  std::uint16_t type = 0;
  std::uint16_t klass = kClassIN;
  std::uint32_t ttl = 0;
  std::vector<std::uint8_t> rdata;
  std::string rdata_name;  // decoded target for CNAME/NS/PTR records
};

struct Message {
  Header header;
  std::vector<Question> questions;
  std::vector<ResourceRecord> answers;
  std::vector<ResourceRecord> authorities;
  std::vector<ResourceRecord> additionals;
};

// RFC 1035 wire parse, compression pointers included; nullopt on malformed
// input (truncation, pointer loops, label overruns).
std::optional<Message> parse(std::span<const std::uint8_t> wire);

std::vector<std::uint8_t> build_query(std::uint16_t id, const std::string& qname,
                                      std::uint16_t qtype);

enum class BlockResponseMode { ZeroAddress, NameError };

// Synthesized reply to a blocked query: ZeroAddress answers A with 0.0.0.0
// and AAAA with :: (TTL 60, NODATA for other types); NameError returns
// NXDOMAIN. The query's transaction id and question are preserved.
std::vector<std::uint8_t> build_block_response(const Message& query, BlockResponseMode mode);

std::vector<std::uint8_t> build_rcode_response(const Message& query, std::uint8_t rcode);

// Dotted-quad / colon-hex rendering of an A or AAAA record's rdata.
std::string rdata_to_ip(const ResourceRecord& rr);

// One blocking UDP request/response exchange; nullopt on timeout or error.
std::optional<std::vector<std::uint8_t>> exchange_udp(const std::string& address,
                                                      std::uint16_t port,
                                                      std::span<const std::uint8_t> payload,
                                                      std::chrono::milliseconds timeout);

inline constexpr std::uint32_t kBlockTtl = 60;

}  // namespace fedblock::dns
