#include "fedblock/dns_message.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdio>

namespace fedblock::dns {

namespace {

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> wire) : wire_(wire) {}

  bool read_u8(std::uint8_t& out) {
    if (pos_ >= wire_.size()) return false;
    out = wire_[pos_++];
    return true;
  }
  bool read_u16(std::uint16_t& out) {
    std::uint8_t hi, lo;
    if (!read_u8(hi) || !read_u8(lo)) return false;
    out = static_cast<std::uint16_t>((hi << 8) | lo);
    return true;
  }
  bool read_u32(std::uint32_t& out) {
    std::uint16_t hi, lo;
    if (!read_u16(hi) || !read_u16(lo)) return false;
    out = (static_cast<std::uint32_t>(hi) << 16) | lo;
    return true;
  }
  bool read_bytes(std::size_t n, std::vector<std::uint8_t>& out) {
    if (pos_ + n > wire_.size()) return false;
    out.assign(wire_.begin() + static_cast<std::ptrdiff_t>(pos_),
               wire_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return true;
  }

  // compression-aware name decode; jump count bounded to kill pointer loops
  bool read_name(std::string& out) {
    out.clear();
    std::size_t pos = pos_;
    bool jumped = false;
    int jumps = 0;
    while (true) {
      if (pos >= wire_.size()) return false;
      const std::uint8_t len = wire_[pos];
      if ((len & 0xc0) == 0xc0) {
        if (pos + 1 >= wire_.size()) return false;
        if (++jumps > 32) return false;
        const std::size_t target =
            (static_cast<std::size_t>(len & 0x3f) << 8) | wire_[pos + 1];
        if (!jumped) pos_ = pos + 2;
        jumped = true;
        pos = target;
        continue;
      }
      if (len & 0xc0) return false;  // 0x40/0x80 label types are unsupported
      if (len == 0) {
        if (!jumped) pos_ = pos + 1;
        return true;
      }
      if (pos + 1 + len > wire_.size()) return false;
      if (!out.empty()) out.push_back('.');
      for (std::size_t i = 0; i < len; ++i) {
        char c = static_cast<char>(wire_[pos + 1 + i]);
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        out.push_back(c);
      }
      if (out.size() > 255) return false;
      pos += 1 + len;
    }
  }

  std::size_t pos() const { return pos_; }
  void skip_to(std::size_t pos) { pos_ = pos; }

 private:
  std::span<const std::uint8_t> wire_;
  std::size_t pos_ = 0;
};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put_u16(out, static_cast<std::uint16_t>(v >> 16));
  put_u16(out, static_cast<std::uint16_t>(v & 0xffff));
}

bool put_name(std::vector<std::uint8_t>& out, const std::string& name) {
  if (name.empty()) {
    out.push_back(0);
    return true;
  }
  if (name.back() == '.') return false;
  std::size_t start = 0;
  while (start < name.size()) {
    std::size_t dot = name.find('.', start);
    if (dot == std::string::npos) dot = name.size();
    const std::size_t len = dot - start;
    if (len == 0 || len > 63) return false;
    out.push_back(static_cast<std::uint8_t>(len));
    for (std::size_t i = start; i < dot; ++i) out.push_back(static_cast<std::uint8_t>(name[i]));
    start = dot + 1;
  }
  out.push_back(0);
  return true;
}

bool read_record(std::span<const std::uint8_t> wire, Reader& reader, ResourceRecord& rr) {
  if (!reader.read_name(rr.name)) return false;
  std::uint16_t rdlength = 0;
  if (!reader.read_u16(rr.type) || !reader.read_u16(rr.klass) || !reader.read_u32(rr.ttl) ||
      !reader.read_u16(rdlength)) {
    return false;
  }
  const std::size_t rdata_offset = reader.pos();
  if (!reader.read_bytes(rdlength, rr.rdata)) return false;
  if (rr.type == kTypeCNAME || rr.type == 2 /*NS*/ || rr.type == 12 /*PTR*/) {
    // rdata holds a possibly-compressed name relative to the whole message
    Reader name_reader(wire);
    name_reader.skip_to(rdata_offset);
    if (!name_reader.read_name(rr.rdata_name)) return false;
  }
  return true;
}

std::vector<std::uint8_t> build_response_skeleton(const Message& query, std::uint8_t rcode,
                                                  std::uint16_t ancount) {
  std::vector<std::uint8_t> out;
  put_u16(out, query.header.id);
  // QR=1, opcode copied, RD copied, RA=1
  std::uint16_t flags = 0x8000;
  flags |= query.header.flags & 0x7800;  // opcode
  flags |= query.header.flags & 0x0100;  // RD
  flags |= 0x0080;                       // RA
  flags |= rcode;
  put_u16(out, flags);
  put_u16(out, static_cast<std::uint16_t>(query.questions.size()));
  put_u16(out, ancount);
  put_u16(out, 0);
  put_u16(out, 0);
  for (const Question& q : query.questions) {
    put_name(out, q.qname);
    put_u16(out, q.qtype);
    put_u16(out, q.qclass);
  }
  return out;
}

}  // namespace

std::optional<Message> parse(std::span<const std::uint8_t> wire) {
  Reader reader(wire);
  Message msg;
  if (!reader.read_u16(msg.header.id) || !reader.read_u16(msg.header.flags) ||
      !reader.read_u16(msg.header.qdcount) || !reader.read_u16(msg.header.ancount) ||
      !reader.read_u16(msg.header.nscount) || !reader.read_u16(msg.header.arcount)) {
    return std::nullopt;
  }
  for (std::uint16_t i = 0; i < msg.header.qdcount; ++i) {
    Question q;
    if (!reader.read_name(q.qname) || !reader.read_u16(q.qtype) || !reader.read_u16(q.qclass)) {
      return std::nullopt;
    }
    msg.questions.push_back(std::move(q));
  }
  auto read_section = [&](std::uint16_t count, std::vector<ResourceRecord>& section) {
    for (std::uint16_t i = 0; i < count; ++i) {
      ResourceRecord rr;
      if (!read_record(wire, reader, rr)) return false;
      section.push_back(std::move(rr));
    }
    return true;
  };
  if (!read_section(msg.header.ancount, msg.answers)) return std::nullopt;
  if (!read_section(msg.header.nscount, msg.authorities)) return std::nullopt;
  if (!read_section(msg.header.arcount, msg.additionals)) return std::nullopt;
  return msg;
}

std::vector<std::uint8_t> build_query(std::uint16_t id, const std::string& qname,
                                      std::uint16_t qtype) {
  std::vector<std::uint8_t> out;
  put_u16(out, id);
  put_u16(out, 0x0100);  // RD
  put_u16(out, 1);
  put_u16(out, 0);
  put_u16(out, 0);
  put_u16(out, 0);
  put_name(out, qname);
  put_u16(out, qtype);
  put_u16(out, kClassIN);
  return out;
}

std::vector<std::uint8_t> build_block_response(const Message& query, BlockResponseMode mode) {
  if (mode == BlockResponseMode::NameError) {
    return build_rcode_response(query, kRcodeNxDomain);
  }
  if (query.questions.empty()) return build_rcode_response(query, kRcodeNoError);
  const Question& q = query.questions.front();
  const bool answerable = q.qtype == kTypeA || q.qtype == kTypeAAAA;
  auto out = build_response_skeleton(query, kRcodeNoError, answerable ? 1 : 0);
  if (answerable) {
    put_name(out, q.qname);
    put_u16(out, q.qtype);
    put_u16(out, q.qclass);
    put_u32(out, kBlockTtl);
    if (q.qtype == kTypeA) {
      put_u16(out, 4);
      for (int i = 0; i < 4; ++i) out.push_back(0);  // 0.0.0.0
    } else {
      put_u16(out, 16);
      for (int i = 0; i < 16; ++i) out.push_back(0);  // ::
    }
  }
  return out;
}

std::vector<std::uint8_t> build_rcode_response(const Message& query, std::uint8_t rcode) {
  return build_response_skeleton(query, rcode, 0);
}

std::optional<std::vector<std::uint8_t>> exchange_udp(const std::string& address,
                                                      std::uint16_t port,
                                                      std::span<const std::uint8_t> payload,
                                                      std::chrono::milliseconds timeout) {
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) return std::nullopt;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, address.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    return std::nullopt;
  }
  if (::sendto(fd, payload.data(), payload.size(), 0, reinterpret_cast<sockaddr*>(&addr),
               sizeof(addr)) < 0) {
    ::close(fd);
    return std::nullopt;
  }
  pollfd pfd{fd, POLLIN, 0};
  if (::poll(&pfd, 1, static_cast<int>(timeout.count())) <= 0) {
    ::close(fd);
    return std::nullopt;
  }
  std::vector<std::uint8_t> buf(65535);
  const ssize_t n = ::recv(fd, buf.data(), buf.size(), 0);
  ::close(fd);
  if (n <= 0) return std::nullopt;
  buf.resize(static_cast<std::size_t>(n));
  return buf;
}

std::string rdata_to_ip(const ResourceRecord& rr) {
  char buf[64];
  if (rr.type == kTypeA && rr.rdata.size() == 4) {
    std::snprintf(buf, sizeof(buf), "%u.%u.%u.%u", rr.rdata[0], rr.rdata[1], rr.rdata[2],
                  rr.rdata[3]);
    return buf;
  }
  if (rr.type == kTypeAAAA && rr.rdata.size() == 16) {
    std::string out;
    for (int i = 0; i < 16; i += 2) {
      if (i) out.push_back(':');
      std::snprintf(buf, sizeof(buf), "%x",
                    (static_cast<unsigned>(rr.rdata[i]) << 8) | rr.rdata[i + 1]);
      out += buf;
    }
    return out;
  }
  return {};
}

}  // namespace fedblock::dns
