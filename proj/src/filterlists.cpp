#include "fedblock/filterlists.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "fedblock/errors.hpp"
#include "fedblock/rng.hpp"
#include "nlohmann/json.hpp"

namespace fedblock {

namespace {

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

bool looks_like_ipv4(std::string_view tok) {
  if (tok == "0") return true;  // 0-prefixed hosts variant
  int dots = 0;
  for (char c : tok) {
    if (c == '.') {
      ++dots;
    } else if (c < '0' || c > '9') {
      return false;
    }
  }
  return dots == 3;
}

bool looks_like_ipv6(std::string_view tok) {
  if (tok.find(':') == std::string_view::npos) return false;
  return std::all_of(tok.begin(), tok.end(), [](char c) {
    return c == ':' || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
  });
}

// Strips any leading "*." labels; returns nullopt if a wildcard remains inside
// a label (those rules carry element-matching semantics we do not evaluate).
std::optional<std::string_view> strip_wildcard_prefix(std::string_view s) {
  while (s.rfind("*.", 0) == 0) s.remove_prefix(2);
  if (s.find('*') != std::string_view::npos) return std::nullopt;
  return s;
}

FilterRule make_rule(std::string_view raw, RuleKind kind,
                     std::optional<DomainName> domain = std::nullopt) {
  FilterRule rule;
  rule.raw = std::string(raw);
  rule.kind = kind;
  rule.domain = std::move(domain);
  return rule;
}

FilterRule domain_or_invalid(std::string_view raw, std::string_view candidate, RuleKind kind) {
  auto stripped = strip_wildcard_prefix(candidate);
  if (!stripped) return make_rule(raw, RuleKind::ElementOrOption);
  auto parsed = DomainName::parse(*stripped);
  if (!parsed) return make_rule(raw, RuleKind::Invalid);
  return make_rule(raw, kind, std::move(parsed));
}

FilterRule parse_hosts(std::string_view raw, std::string_view line) {
  if (line.front() == '#') return make_rule(raw, RuleKind::Comment);
  if (auto hash = line.find('#'); hash != std::string_view::npos) {
    line = trim(line.substr(0, hash));
  }
  std::vector<std::string_view> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    std::size_t start = pos;
    while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos > start) tokens.push_back(line.substr(start, pos - start));
  }
  if (tokens.size() < 2) return make_rule(raw, RuleKind::Invalid);
  if (!looks_like_ipv4(tokens[0]) && !looks_like_ipv6(tokens[0])) {
    return make_rule(raw, RuleKind::Invalid);
  }
  // multi-hostname lines keep the first name; the rest are rare enough to drop
  return domain_or_invalid(raw, tokens[1], RuleKind::DomainBlock);
}

FilterRule parse_domains(std::string_view raw, std::string_view line, RuleKind domain_kind) {
  if (line.front() == '#' || line.front() == '!') return make_rule(raw, RuleKind::Comment);
  if (auto hash = line.find('#'); hash != std::string_view::npos) {
    if (line.find("##") != std::string_view::npos) return make_rule(raw, RuleKind::ElementOrOption);
    line = trim(line.substr(0, hash));
    if (line.empty()) return make_rule(raw, RuleKind::Comment);
  }
  if (line.find('/') != std::string_view::npos || line.find('$') != std::string_view::npos) {
    return make_rule(raw, RuleKind::ElementOrOption);
  }
  if (line.find_first_of(" \t") != std::string_view::npos) return make_rule(raw, RuleKind::Invalid);
  return domain_or_invalid(raw, line, domain_kind);
}

FilterRule parse_adblock(std::string_view raw, std::string_view line) {
  if (line.front() == '!') return make_rule(raw, RuleKind::Comment);
  if (line.front() == '[' && line.back() == ']') return make_rule(raw, RuleKind::Comment);
  if (line.find("##") != std::string_view::npos || line.find("#@#") != std::string_view::npos ||
      line.find("#?#") != std::string_view::npos) {
    return make_rule(raw, RuleKind::ElementOrOption);
  }
  RuleKind kind = RuleKind::DomainBlock;
  if (line.rfind("@@", 0) == 0) {
    kind = RuleKind::DomainAllow;
    line = line.substr(2);
    if (line.empty()) return make_rule(raw, RuleKind::Invalid);
  }
  if (line.find('$') != std::string_view::npos) return make_rule(raw, RuleKind::ElementOrOption);
  if (line.rfind("||", 0) == 0) {
    line = line.substr(2);
    if (!line.empty() && line.back() == '^') line.remove_suffix(1);
    if (line.empty()) return make_rule(raw, RuleKind::Invalid);
    if (line.find('/') != std::string_view::npos || line.find('^') != std::string_view::npos) {
      return make_rule(raw, RuleKind::ElementOrOption);
    }
    return domain_or_invalid(raw, line, kind);
  }
  // single-pipe anchors and anything URL-shaped target more than a domain
  if (line.front() == '|' || line.find('/') != std::string_view::npos) {
    return make_rule(raw, RuleKind::ElementOrOption);
  }
  if (line.find('^') != std::string_view::npos) return make_rule(raw, RuleKind::ElementOrOption);
  return domain_or_invalid(raw, line, kind);
}

FilterRule parse_dnsmasq(std::string_view raw, std::string_view line) {
  if (line.front() == '#') return make_rule(raw, RuleKind::Comment);
  for (std::string_view prefix : {"address=/", "server=/", "local=/"}) {
    if (line.rfind(prefix, 0) == 0) {
      std::string_view rest = line.substr(prefix.size());
      auto slash = rest.find('/');
      if (slash == std::string_view::npos) return make_rule(raw, RuleKind::Invalid);
      return domain_or_invalid(raw, rest.substr(0, slash), RuleKind::DomainBlock);
    }
  }
  return make_rule(raw, RuleKind::Invalid);
}

}  // namespace

Grammar resolve_grammar(std::string_view syntax_tag) {
  static const std::map<std::string, Grammar, std::less<>> kTable = {
      {"hosts", Grammar::Hosts},
      {"non-localhost hosts (ipv4)", Grammar::Hosts},
      {"non-localhost hosts (ipv6)", Grammar::Hosts},
      {"hosts (0)", Grammar::Hosts},
      {"hosts (localhost ipv4)", Grammar::Hosts},
      {"domains", Grammar::Domains},
      {"domains with abp tags", Grammar::Domains},
      {"domains with wildcards", Grammar::Domains},
      {"domains for allow listing", Grammar::DomainsAllow},
      {"adblock", Grammar::Adblock},
      {"adblock plus", Grammar::Adblock},
      {"adblocker-syntax domains", Grammar::Adblock},
      {"adblocker-syntax domains w/o abp tag", Grammar::Adblock},
      {"adguard", Grammar::Adblock},
      {"ublock origin static", Grammar::Adblock},
      {"dnsmasq", Grammar::Dnsmasq},
      {"dnsmasq domains list", Grammar::Dnsmasq},
  };
  auto it = kTable.find(to_lower(syntax_tag));
  return it == kTable.end() ? Grammar::Unsupported : it->second;
}

KeywordSets default_keywords() {
  return {{"internet of things", "internet-of-things", "iot", "i.o.t", "home", "pi-hole",
           "pihole", "dns", "server", "smart", "network", "router", "gateway", "protocol"},
          {"ios", "android", "mobile", "phone"}};
}

GateSets default_gates() {
  GateSets g;
  g.allowed_syntax = {"Non-localhost hosts (IPv4)", "uBlock Origin Static", "Domains", "Unbound",
                      "BIND", "Socks5", "Hosts (0)", "Hosts (localhost IPv4)",
                      "Privoxy action file", "Adblocker-syntax domains",
                      "Adblocker-syntax domains w/o ABP tag", "AdGuard Superadvanced onlys",
                      "Adblock Plus", "SmartDNS", "$important/$empty only", "AdGuard",
                      "Domains with ABP tags", "dnsmasq domains list", "Adblock Plus Advanceds",
                      "Pi-hole RegEx", "Non-localhost hosts (IPv6)", "DNS servers",
                      "Response Policy Zones (RPZ)", "Domains with wildcards"};
  g.allowed_software = {"AdGuard (free versions)", "DNS66", "Adblock", "AdAway", "Pi-hole",
                        "FireHOL", "Samsung Knox", "Privoxy", "Diversion", "dnsmasq", "Blokada",
                        "personalDNSfilter", "Unbound", "BIND", "AdGuard Home", "pfBlockerNG",
                        "Opera's built-in adblocker", "Surge", "dnscrypt-proxy", "SmartDNS",
                        "AdGuard for Android", "Vivaldi's Privacy settings"};
  g.allowed_block_tags = {"crypto miners", "ads", "trackers", "malware", "privacy"};
  return g;
}

bool keyword_match(std::string_view text, std::string_view keyword) {
  if (keyword.empty() || text.size() < keyword.size()) return false;
  const std::string hay = to_lower(text);
  const std::string needle = to_lower(keyword);
  std::size_t pos = 0;
  while ((pos = hay.find(needle, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end == hay.size() || !is_word_char(hay[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

ListCategory categorize_list(const FilterListMeta& meta, const std::set<std::string>& iot_keywords,
                             const std::set<std::string>& mobile_keywords, bool* both_matched) {
  auto any_match = [&](const std::set<std::string>& keywords) {
    return std::any_of(keywords.begin(), keywords.end(), [&](const std::string& kw) {
      return keyword_match(meta.title, kw) || keyword_match(meta.description, kw);
    });
  };
  const bool iot = any_match(iot_keywords);
  const bool mobile = any_match(mobile_keywords);
  if (both_matched) *both_matched = iot && mobile;
  if (iot) return ListCategory::IoT;
  if (mobile) return ListCategory::Mobile;
  return ListCategory::Rejected;
}

bool gate_list(const FilterListMeta& meta, const GateSets& gates) {
  if (!gates.allowed_syntax.contains(meta.syntax_tag)) return false;
  const bool software_ok = std::any_of(
      meta.software_tags.begin(), meta.software_tags.end(),
      [&](const std::string& s) { return gates.allowed_software.contains(s); });
  if (!software_ok) return false;
  return std::any_of(meta.block_category_tags.begin(), meta.block_category_tags.end(),
                     [&](const std::string& t) { return gates.allowed_block_tags.contains(t); });
}

FilterRule parse_rule(std::string_view line, Grammar grammar) {
  const std::string_view raw = line;
  const std::string_view trimmed = trim(line);
  if (trimmed.empty()) return make_rule(raw, RuleKind::Comment);
  switch (grammar) {
    case Grammar::Hosts:
      return parse_hosts(raw, trimmed);
    case Grammar::Domains:
      return parse_domains(raw, trimmed, RuleKind::DomainBlock);
    case Grammar::DomainsAllow:
      return parse_domains(raw, trimmed, RuleKind::DomainAllow);
    case Grammar::Adblock:
      return parse_adblock(raw, trimmed);
    case Grammar::Dnsmasq:
      return parse_dnsmasq(raw, trimmed);
    case Grammar::Unsupported:
      break;
  }
  if (trimmed.front() == '#' || trimmed.front() == '!') return make_rule(raw, RuleKind::Comment);
  return make_rule(raw, RuleKind::Invalid);
}

FilterRule parse_rule(std::string_view line, std::string_view syntax_tag) {
  return parse_rule(line, resolve_grammar(syntax_tag));
}

std::vector<DomainName> downsample(const std::vector<DomainName>& domains, std::size_t cap,
                                   std::uint64_t seed) {
  if (domains.size() <= cap) return domains;
  Rng rng(seed);
  const auto keep = rng.sample_indices(domains.size(), cap);
  std::vector<DomainName> out;
  out.reserve(cap);
  for (std::size_t i : keep) out.push_back(domains[i]);
  return out;
}

Corpus build_corpus(const std::vector<ParsedList>& block_lists,
                    const std::vector<ParsedList>& allow_lists, std::size_t cap,
                    std::uint64_t seed, CorpusBuildStats* stats) {
  CorpusBuildStats local;
  CorpusBuildStats& st = stats ? *stats : local;
  st = CorpusBuildStats{};

  struct Candidate {
    DomainName domain;
    int label;
    std::string source;
  };
  std::vector<Candidate> candidates;
  std::unordered_map<std::string, int> first_label;  // rendered domain -> label
  std::unordered_set<std::string> conflicted;

  auto add = [&](const DomainName& d, int label, const std::string& source) {
    const std::string key = d.str();
    auto [it, inserted] = first_label.emplace(key, label);
    if (!inserted) {
      if (it->second != label && !conflicted.contains(key)) {
        conflicted.insert(key);
        st.conflict_domains.push_back(key);
      } else if (it->second == label) {
        ++st.duplicates_merged;
      }
      return;
    }
    candidates.push_back({d, label, source});
  };

  for (std::size_t li = 0; li < block_lists.size(); ++li) {
    const ParsedList& list = block_lists[li];
    std::vector<DomainName> domains;
    std::unordered_set<std::string> seen;
    for (const FilterRule& rule : list.rules) {
      if (rule.kind != RuleKind::DomainBlock || !rule.domain) continue;
      if (seen.insert(rule.domain->str()).second) domains.push_back(*rule.domain);
    }
    for (const DomainName& d : downsample(domains, cap, derive_seed(seed, list.id))) {
      add(d, 0, list.id);
    }
  }
  for (const ParsedList& list : allow_lists) {
    // allow-list role comes from the manifest; accept either rule kind here
    for (const FilterRule& rule : list.rules) {
      if (!rule.domain) continue;
      if (rule.kind != RuleKind::DomainAllow && rule.kind != RuleKind::DomainBlock) continue;
      add(*rule.domain, 1, list.id);
    }
  }

  Corpus corpus;
  for (Candidate& c : candidates) {
    if (conflicted.contains(c.domain.str())) {
      ++st.conflicts_dropped;
      continue;
    }
    if (c.label == 0) {
      ++st.label0;
    } else {
      ++st.label1;
    }
    corpus.entries.push_back({std::move(c.domain), c.label, std::move(c.source)});
  }
  if (st.label0 < 2 || st.label1 < 2) {
    throw EmptyCorpusError("corpus needs at least 2 entries per class (label0=" +
                           std::to_string(st.label0) + " label1=" + std::to_string(st.label1) +
                           ")");
  }
  return corpus;
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const CorpusEntry& e : corpus.entries) {
    nlohmann::ordered_json j;
    j["domain"] = e.domain.str();
    j["label"] = e.label;
    j["source"] = e.source_list_id;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

Corpus corpus_from_jsonl(std::string_view text) {
  Corpus corpus;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    auto domain = DomainName::parse(j.at("domain").get<std::string>());
    if (!domain) throw IoError("invalid domain in corpus: " + j.at("domain").get<std::string>());
    const int label = j.at("label").get<int>();
    if (label != 0 && label != 1) throw IoError("invalid label in corpus");
    corpus.entries.push_back({std::move(*domain), label, j.value("source", std::string{})});
  }
  return corpus;
}

}  // namespace fedblock
