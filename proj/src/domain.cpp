#include "fedblock/domain.hpp"

#include <cctype>

namespace fedblock {

namespace {

bool valid_label_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_';
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::optional<DomainName> DomainName::parse(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.back() == '.') text.remove_suffix(1);
  if (text.empty()) return std::nullopt;

  DomainName out;
  std::string label;
  auto flush = [&]() -> bool {
    if (label.empty()) return false;
    out.labels_.push_back(std::move(label));
    label.clear();
    return true;
  };
  for (char raw : text) {
    char c = raw;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c == '.') {
      if (!flush()) return std::nullopt;
      continue;
    }
    if (!valid_label_char(c)) return std::nullopt;
    label.push_back(c);
  }
  if (!flush()) return std::nullopt;
  if (out.labels_.size() < 2) return std::nullopt;
  return out;
}

std::string DomainName::str() const {
  std::string out;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (i) out.push_back('.');
    out += labels_[i];
  }
  return out;
}

std::optional<DomainName> DomainName::parent() const {
  if (labels_.size() <= 2) return std::nullopt;
  DomainName out;
  out.labels_.assign(labels_.begin() + 1, labels_.end());
  return out;
}

}  // namespace fedblock
