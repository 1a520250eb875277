#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedblock {

// Normalized fully-qualified domain name: lowercase labels, no trailing dot,
// at least two labels, every label limited to [a-z0-9_-]. Rendering then
// re-parsing is the identity.
class DomainName {
 public:
  static std::optional<DomainName> parse(std::string_view text);

  const std::vector<std::string>& labels() const { return labels_; }

  // Labels joined with '.'.
  std::string str() const;

  // Name with the leftmost label removed; nullopt once only two labels remain.
  std::optional<DomainName> parent() const;

  auto operator<=>(const DomainName&) const = default;

 private:
  std::vector<std::string> labels_;
};

}  // namespace fedblock
