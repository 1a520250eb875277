#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "fedblock/domain.hpp"

namespace fedblock {

// Catalogue metadata attached to a filter list.
struct FilterListMeta {
  std::string title;
  std::string description;
  std::string syntax_tag;
  std::vector<std::string> software_tags;
  std::vector<std::string> block_category_tags;
};

enum class ListCategory { IoT, Mobile, Rejected };

enum class RuleKind { DomainBlock, DomainAllow, ElementOrOption, Comment, Invalid };

struct FilterRule {
  std::string raw;
  RuleKind kind = RuleKind::Invalid;
  std::optional<DomainName> domain;  // present iff kind is DomainBlock/DomainAllow
};

// The five rule grammars actually parsed. Catalogue syntax tags are mapped
// onto these; tags that fit none are Unsupported and their lines come back
// Invalid (never silently misread).
enum class Grammar { Hosts, Domains, DomainsAllow, Adblock, Dnsmasq, Unsupported };

Grammar resolve_grammar(std::string_view syntax_tag);

struct KeywordSets {
  std::set<std::string> iot;
  std::set<std::string> mobile;
};

struct GateSets {
  std::set<std::string> allowed_syntax;
  std::set<std::string> allowed_software;
  std::set<std::string> allowed_block_tags;
};

KeywordSets default_keywords();
GateSets default_gates();

// Case-insensitive substring match of `keyword` in `text` at word boundaries:
// "home" matches "smart home hub" but not "homestead".
bool keyword_match(std::string_view text, std::string_view keyword);

// IoT wins when both keyword sets match (collisions are reported through
// `both_matched` when provided).
ListCategory categorize_list(const FilterListMeta& meta, const std::set<std::string>& iot_keywords,
                             const std::set<std::string>& mobile_keywords,
                             bool* both_matched = nullptr);

bool gate_list(const FilterListMeta& meta, const GateSets& gates);

// Total: every line maps to exactly one kind; unparseable input is Invalid.
FilterRule parse_rule(std::string_view line, Grammar grammar);
FilterRule parse_rule(std::string_view line, std::string_view syntax_tag);

// Uniform cap-sized subsample, deterministic in seed; identity (order
// preserved) when already within cap.
std::vector<DomainName> downsample(const std::vector<DomainName>& domains, std::size_t cap,
                                   std::uint64_t seed);

struct CorpusEntry {
  DomainName domain;
  int label = 0;  // 0 = malicious/blocked, 1 = non-malicious
  std::string source_list_id;
};

struct Corpus {
  std::vector<CorpusEntry> entries;
};

struct ParsedList {
  std::string id;
  std::vector<FilterRule> rules;
};

struct CorpusBuildStats {
  std::size_t label0 = 0;
  std::size_t label1 = 0;
  std::size_t conflicts_dropped = 0;
  std::size_t duplicates_merged = 0;
  std::vector<std::string> conflict_domains;
};

// Block-list domains -> label 0 (downsampled per list); allow-list domains ->
// label 1 (no downsampling). A domain seen with both labels is dropped
// entirely. Throws EmptyCorpusError if either class ends up with fewer than
// two entries.
Corpus build_corpus(const std::vector<ParsedList>& block_lists,
                    const std::vector<ParsedList>& allow_lists, std::size_t cap,
                    std::uint64_t seed, CorpusBuildStats* stats = nullptr);

inline constexpr std::size_t kDefaultDownsampleCap = 289;

// JSON-lines codec: {"domain": ..., "label": 0|1, "source": ...}
std::string corpus_to_jsonl(const Corpus& corpus);
Corpus corpus_from_jsonl(std::string_view text);

}  // namespace fedblock
