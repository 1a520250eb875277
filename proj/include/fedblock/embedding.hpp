#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fedblock/enrichment.hpp"

namespace fedblock {

inline constexpr std::size_t kDefaultEmbeddingDim = 768;
inline constexpr std::size_t kLineTruncationChars = 512;

struct EmbedderOutput {
  std::vector<double> vector;
  bool has_unknown_tokens = false;
};

// Text -> fixed-length vector contract. Immutable after construction; safe
// for concurrent reads.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::size_t dim() const = 0;
  virtual EmbedderOutput embed(std::string_view text) const = 0;
};

// Signed feature hashing: lowercased alnum tokens, each hashed into one of
// dim buckets with a +-1 sign, accumulated, then L2-normalized (the zero
// vector stays zero). Never reports unknown tokens.
class HashEmbedder final : public Embedder {
 public:
  explicit HashEmbedder(std::size_t dim = kDefaultEmbeddingDim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  EmbedderOutput embed(std::string_view text) const override;

 private:
  std::size_t dim_;
};

// Looks vectors up in a precomputed table keyed by sha256 of the exact
// (post-truncation) text, so an external pipeline can supply real model
// embeddings. Table format is JSON-lines:
//   {"sha256": hex, "vector": [dim floats], "has_unk": bool}
class FileEmbedder final : public Embedder {
 public:
  FileEmbedder(const std::filesystem::path& table_path, std::size_t dim = kDefaultEmbeddingDim);
  std::size_t dim() const override { return dim_; }
  // throws MissingVectorError when the digest is absent
  EmbedderOutput embed(std::string_view text) const override;

  std::size_t table_size() const { return table_.size(); }

 private:
  struct Entry {
    std::vector<double> vector;
    bool has_unk;
  };
  std::size_t dim_;
  std::unordered_map<std::string, Entry> table_;
};

// Appends one table row; used to populate FileEmbedder inputs.
void append_vector_table_row(std::string& out, std::string_view text,
                             const std::vector<double>& vector, bool has_unk);

EmbedderOutput embed_text(std::string_view text, const Embedder& embedder);

// Per-line embeddings (each line truncated to its first 512 characters),
// column-summed and divided by the line count. Throws BlankLogError on an
// empty log. has_unknown_tokens is the OR over lines.
EmbedderOutput embed_whois(const WhoisLog& log, const Embedder& embedder);

// Split every associated name on '.', pool the labels, dedupe, sort
// lexicographically, join with single spaces.
std::string canonicalize_domains(const AssociatedDomains& assoc);

struct Instance {
  std::vector<double> features;  // whois embedding ++ domains embedding, length 2*dim
  int label = 0;
  DomainName domain;
};

enum class RejectReason { BlankWhois, UnknownTokens };

struct FeatureResult {
  std::optional<std::vector<double>> features;
  std::optional<RejectReason> reject;
  bool ok() const { return features.has_value(); }
};

// The inference-side feature path: no label required.
FeatureResult embed_bundle(const DomainRecordBundle& bundle, const Embedder& embedder);

struct InstanceResult {
  std::optional<Instance> instance;
  std::optional<RejectReason> reject;
  bool ok() const { return instance.has_value(); }
};

InstanceResult make_instance(const DomainRecordBundle& bundle, int label,
                             const Embedder& embedder);

// JSON-lines codec: {"domain": ..., "label": 0|1, "features": [...]}
std::string instances_to_jsonl(const std::vector<Instance>& instances);
std::vector<Instance> instances_from_jsonl(std::string_view text);

}  // namespace fedblock
