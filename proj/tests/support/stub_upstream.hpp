#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <optional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "fedblock/dns_message.hpp"

namespace fedblock::testsupport {

// Minimal scripted upstream resolver: answers every query with a single A
// record 93.184.216.34, echoing the question via a compression pointer.
class StubUpstream {
 public:
  StubUpstream() {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      throw std::runtime_error("stub upstream bind failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    thread_ = std::thread([this] { loop(); });
  }

  ~StubUpstream() {
    running_ = false;
    ::shutdown(fd_, SHUT_RDWR);
    if (thread_.joinable()) thread_.join();
    ::close(fd_);
  }

  std::uint16_t port() const { return port_; }
  std::size_t served() const { return served_.load(); }

 private:
  void loop() {
    std::vector<std::uint8_t> buf(4096);
    while (running_) {
      sockaddr_in from{};
      socklen_t from_len = sizeof(from);
      const ssize_t n = ::recvfrom(fd_, buf.data(), buf.size(), 0,
                                   reinterpret_cast<sockaddr*>(&from), &from_len);
      if (n <= 0) continue;
      auto query = dns::parse(std::span<const std::uint8_t>(buf.data(), std::size_t(n)));
      if (!query || query->questions.empty()) continue;
      std::vector<std::uint8_t> out;
      auto put16 = [&](std::uint16_t v) {
        out.push_back(std::uint8_t(v >> 8));
        out.push_back(std::uint8_t(v & 0xff));
      };
      put16(query->header.id);
      put16(0x8180);
      put16(1);
      put16(1);
      put16(0);
      put16(0);
      const std::string& qname = query->questions[0].qname;
      std::size_t start = 0;
      while (start < qname.size()) {
        auto dot = qname.find('.', start);
        if (dot == std::string::npos) dot = qname.size();
        out.push_back(std::uint8_t(dot - start));
        for (std::size_t i = start; i < dot; ++i) out.push_back(std::uint8_t(qname[i]));
        start = dot + 1;
      }
      out.push_back(0);
      put16(query->questions[0].qtype);
      put16(1);
      out.push_back(0xc0);  // answer name: pointer back to the question
      out.push_back(12);
      put16(dns::kTypeA);
      put16(1);
      put16(0);
      put16(300);
      put16(4);
      for (std::uint8_t octet : {93, 184, 216, 34}) out.push_back(octet);
      ::sendto(fd_, out.data(), out.size(), 0, reinterpret_cast<sockaddr*>(&from), from_len);
      served_.fetch_add(1);
    }
  }

  int fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{true};
  std::atomic<std::size_t> served_{0};
  std::thread thread_;
};

// One blocking UDP exchange against 127.0.0.1:port.
inline std::optional<std::vector<std::uint8_t>> udp_roundtrip(std::uint16_t port,
                                                              std::span<const std::uint8_t> query,
                                                              int timeout_ms = 3000) {
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  ::sendto(fd, query.data(), query.size(), 0, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  std::vector<std::uint8_t> buf(4096);
  const ssize_t n = ::recv(fd, buf.data(), buf.size(), 0);
  ::close(fd);
  if (n <= 0) return std::nullopt;
  buf.resize(std::size_t(n));
  return buf;
}

}  // namespace fedblock::testsupport
