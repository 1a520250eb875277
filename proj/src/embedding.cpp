#include "fedblock/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "fedblock/digest.hpp"
#include "fedblock/errors.hpp"
#include "fedblock/rng.hpp"
#include "nlohmann/json.hpp"

namespace fedblock {

namespace {

bool is_token_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

std::string_view truncate_chars(std::string_view text, std::size_t max_chars) {
  return text.size() <= max_chars ? text : text.substr(0, max_chars);
}

}  // namespace

EmbedderOutput HashEmbedder::embed(std::string_view text) const {
  EmbedderOutput out;
  out.vector.assign(dim_, 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    const std::uint64_t h = fnv1a64(token);
    const std::size_t bucket = static_cast<std::size_t>(h % dim_);
    const double sign = (h >> 63) ? 1.0 : -1.0;
    out.vector[bucket] += sign;
    token.clear();
  };
  for (char c : text) {
    if (is_token_char(c)) {
      token.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
    } else {
      flush();
    }
  }
  flush();
  double norm_sq = 0.0;
  for (double v : out.vector) norm_sq += v * v;
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : out.vector) v *= inv;
  }
  return out;
}

FileEmbedder::FileEmbedder(const std::filesystem::path& table_path, std::size_t dim) : dim_(dim) {
  std::ifstream in(table_path);
  if (!in) throw IoError("cannot open vector table: " + table_path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Entry entry;
    entry.has_unk = j.value("has_unk", false);
    for (const auto& v : j.at("vector")) entry.vector.push_back(v.get<double>());
    if (entry.vector.size() != dim_) {
      throw IoError("vector table row has dimension " + std::to_string(entry.vector.size()) +
                    ", expected " + std::to_string(dim_));
    }
    table_.emplace(j.at("sha256").get<std::string>(), std::move(entry));
  }
}

EmbedderOutput FileEmbedder::embed(std::string_view text) const {
  auto it = table_.find(sha256_hex(text));
  if (it == table_.end()) {
    throw MissingVectorError("no precomputed vector for text digest " + sha256_hex(text));
  }
  return {it->second.vector, it->second.has_unk};
}

void append_vector_table_row(std::string& out, std::string_view text,
                             const std::vector<double>& vector, bool has_unk) {
  nlohmann::ordered_json j;
  j["sha256"] = sha256_hex(text);
  j["vector"] = vector;
  j["has_unk"] = has_unk;
  out += j.dump();
  out.push_back('\n');
}

EmbedderOutput embed_text(std::string_view text, const Embedder& embedder) {
  return embedder.embed(text);
}

EmbedderOutput embed_whois(const WhoisLog& log, const Embedder& embedder) {
  if (log.lines.empty()) throw BlankLogError("blank whois log");
  EmbedderOutput out;
  out.vector.assign(embedder.dim(), 0.0);
  for (const std::string& line : log.lines) {
    EmbedderOutput e = embedder.embed(truncate_chars(line, kLineTruncationChars));
    for (std::size_t i = 0; i < out.vector.size(); ++i) out.vector[i] += e.vector[i];
    out.has_unknown_tokens = out.has_unknown_tokens || e.has_unknown_tokens;
  }
  const double inv = 1.0 / static_cast<double>(log.lines.size());
  for (double& v : out.vector) v *= inv;
  return out;
}

std::string canonicalize_domains(const AssociatedDomains& assoc) {
  std::set<std::string> keywords;
  for (const DomainName& name : assoc.names) {
    for (const std::string& label : name.labels()) keywords.insert(label);
  }
  std::string out;
  for (const std::string& kw : keywords) {
    if (!out.empty()) out.push_back(' ');
    out += kw;
  }
  return out;
}

FeatureResult embed_bundle(const DomainRecordBundle& bundle, const Embedder& embedder) {
  FeatureResult result;
  EmbedderOutput whois;
  try {
    whois = embed_whois(bundle.whois, embedder);
  } catch (const BlankLogError&) {
    result.reject = RejectReason::BlankWhois;
    return result;
  }
  const std::string domains_text = canonicalize_domains(bundle.assoc);
  EmbedderOutput domains = embedder.embed(truncate_chars(domains_text, kLineTruncationChars));
  if (whois.has_unknown_tokens || domains.has_unknown_tokens) {
    result.reject = RejectReason::UnknownTokens;
    return result;
  }
  std::vector<double> features;
  features.reserve(2 * embedder.dim());
  features.insert(features.end(), whois.vector.begin(), whois.vector.end());
  features.insert(features.end(), domains.vector.begin(), domains.vector.end());
  result.features = std::move(features);
  return result;
}

InstanceResult make_instance(const DomainRecordBundle& bundle, int label,
                             const Embedder& embedder) {
  InstanceResult result;
  FeatureResult features = embed_bundle(bundle, embedder);
  if (!features.ok()) {
    result.reject = features.reject;
    return result;
  }
  result.instance = Instance{std::move(*features.features), label, bundle.domain};
  return result;
}

std::string instances_to_jsonl(const std::vector<Instance>& instances) {
  std::string out;
  for (const Instance& inst : instances) {
    nlohmann::ordered_json j;
    j["domain"] = inst.domain.str();
    j["label"] = inst.label;
    j["features"] = inst.features;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<Instance> instances_from_jsonl(std::string_view text) {
  std::vector<Instance> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto j = nlohmann::json::parse(line);
    Instance inst;
    auto domain = DomainName::parse(j.at("domain").get<std::string>());
    if (!domain) throw IoError("invalid domain in instances file");
    inst.domain = std::move(*domain);
    inst.label = j.at("label").get<int>();
    if (inst.label != 0 && inst.label != 1) throw IoError("invalid label in instances file");
    for (const auto& v : j.at("features")) inst.features.push_back(v.get<double>());
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace fedblock
