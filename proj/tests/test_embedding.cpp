#include "fedblock/embedding.hpp"

#include <cmath>
#include <fstream>

#include "doctest.h"
#include "fedblock/digest.hpp"
#include "fedblock/errors.hpp"
#include "fedblock/rng.hpp"

using namespace fedblock;

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return dot / std::sqrt(na * nb);
}

AssociatedDomains assoc_of(const std::vector<std::string>& names) {
  AssociatedDomains assoc;
  for (const std::string& n : names) assoc.names.insert(*DomainName::parse(n));
  return assoc;
}

}  // namespace

TEST_CASE("hash embedder is deterministic and normalized") {
  const HashEmbedder embedder(64);
  const auto a = embedder.embed("tracker pixel analytics");
  const auto b = embedder.embed("tracker pixel analytics");
  CHECK(a.vector == b.vector);
  CHECK_FALSE(a.has_unknown_tokens);
  CHECK(a.vector.size() == 64);

  double norm = 0;
  for (double v : a.vector) norm += v * v;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine(a.vector, a.vector) == doctest::Approx(1.0));

  const auto empty = embedder.embed("");
  for (double v : empty.vector) CHECK(v == 0.0);
  const auto punct = embedder.embed("...!!!///");
  for (double v : punct.vector) CHECK(v == 0.0);
}

TEST_CASE("hash embedder keeps random tokens nearly orthogonal") {
  const HashEmbedder embedder(kDefaultEmbeddingDim);
  Rng rng(99);
  std::set<std::string> tokens;
  while (tokens.size() < 1000) {
    std::string t;
    const std::size_t len = 4 + rng.below(8);
    for (std::size_t i = 0; i < len; ++i) t.push_back('a' + char(rng.below(26)));
    tokens.insert(t);
  }
  std::vector<std::vector<double>> vectors;
  for (const std::string& t : tokens) vectors.push_back(embedder.embed(t).vector);

  std::size_t close = 0, pairs = 0;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = i + 1; j < vectors.size(); ++j) {
      ++pairs;
      if (cosine(vectors[i], vectors[j]) >= 0.5) ++close;
    }
  }
  // distinct token strings collide into the same signed bucket rarely
  CHECK(static_cast<double>(close) / static_cast<double>(pairs) < 0.01);
}

TEST_CASE("embed_whois averages per-line embeddings") {
  const HashEmbedder embedder(32);
  WhoisLog log;
  log.lines = {"alpha beta", "gamma delta epsilon"};
  const auto mean = embed_whois(log, embedder);
  const auto e1 = embedder.embed("alpha beta");
  const auto e2 = embedder.embed("gamma delta epsilon");
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(mean.vector[i] == doctest::Approx((e1.vector[i] + e2.vector[i]) / 2.0).epsilon(1e-15));
  }
}

TEST_CASE("embed_whois truncates lines to 512 characters") {
  const HashEmbedder embedder(32);
  std::string line(600, 'x');
  line[100] = ' ';
  line[550] = ' ';  // would split a token beyond the cut
  WhoisLog log;
  log.lines = {line};
  const auto full = embed_whois(log, embedder);
  const auto truncated = embedder.embed(std::string_view(line).substr(0, 512));
  CHECK(full.vector == truncated.vector);
}

TEST_CASE("embed_whois rejects a blank log") {
  const HashEmbedder embedder(32);
  CHECK_THROWS_AS(embed_whois(WhoisLog{}, embedder), BlankLogError);
}

TEST_CASE("embed_whois is invariant to line order") {
  const HashEmbedder embedder(64);
  WhoisLog log;
  log.lines = {"alpha", "beta", "gamma", "delta"};
  WhoisLog permuted;
  permuted.lines = {"delta", "alpha", "gamma", "beta"};
  // the mean is order-free: exact equality required
  CHECK(embed_whois(log, embedder).vector == embed_whois(permuted, embedder).vector);
}

TEST_CASE("canonicalize_domains pools, dedupes and sorts labels") {
  CHECK(canonicalize_domains(assoc_of({"ads.tracking.ads.com"})) == "ads com tracking");
  CHECK(canonicalize_domains(assoc_of({"a.b", "b.c"})) == "a b c");
  CHECK(canonicalize_domains(assoc_of({"cdn.example.net", "example.net"})) == "cdn example net");

  // idempotent: re-applying split/dedupe/sort to the output changes nothing
  const auto canonical = canonicalize_domains(assoc_of({"z.y.x", "a.b.x"}));
  CHECK(canonical == "a b x y z");
  std::set<std::string> tokens;
  std::string token;
  for (char c : canonical + " ") {
    if (c == ' ') {
      if (!token.empty()) tokens.insert(token);
      token.clear();
    } else {
      token.push_back(c);
    }
  }
  std::string rejoined;
  for (const auto& t : tokens) {
    if (!rejoined.empty()) rejoined.push_back(' ');
    rejoined += t;
  }
  CHECK(rejoined == canonical);
}

TEST_CASE("make_instance produces 2*D features with the default dimension") {
  const HashEmbedder embedder;  // D = 768
  const auto bundle = build_bundle(*DomainName::parse("t.example"),
                                   WhoisLog{{"some whois line"}, 0},
                                   assoc_of({"t.example", "cdn.example"}));
  const auto result = make_instance(bundle, 0, embedder);
  REQUIRE(result.ok());
  CHECK(result.instance->features.size() == 1536);
  CHECK(result.instance->label == 0);
  for (double v : result.instance->features) CHECK(std::isfinite(v));
}

TEST_CASE("make_instance rejection reasons") {
  const HashEmbedder embedder(16);
  const auto blank = make_instance(build_bundle(*DomainName::parse("t.example"), WhoisLog{},
                                                assoc_of({"t.example"})),
                                   0, embedder);
  CHECK_FALSE(blank.ok());
  CHECK(blank.reject == RejectReason::BlankWhois);
}

TEST_CASE("random bundles always yield 2*D finite features") {
  const HashEmbedder embedder(48);
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    WhoisLog log;
    const std::size_t n_lines = 1 + rng.below(6);
    for (std::size_t l = 0; l < n_lines; ++l) {
      std::string line;
      const std::size_t len = rng.below(80);
      for (std::size_t k = 0; k < len; ++k) line.push_back(char(32 + rng.below(95)));
      log.lines.push_back(std::move(line));
    }
    const auto bundle = build_bundle(*DomainName::parse("d" + std::to_string(i) + ".example"),
                                     std::move(log), assoc_of({"cdn.example"}));
    const auto result = make_instance(bundle, int(i % 2), embedder);
    REQUIRE(result.ok());
    CHECK(result.instance->features.size() == 96);
    for (double v : result.instance->features) CHECK(std::isfinite(v));
  }
}

TEST_CASE("file embedder looks up post-truncation digests and flags UNKs") {
  const auto tmp = std::filesystem::temp_directory_path() / "fedblock-vectors.jsonl";
  const std::string text = "tracker cdn example";
  std::string table;
  append_vector_table_row(table, text, std::vector<double>(8, 0.25), false);
  append_vector_table_row(table, "unknown words", std::vector<double>(8, 0.5), true);
  {
    std::ofstream out(tmp);
    out << table;
  }
  const FileEmbedder embedder(tmp, 8);
  CHECK(embedder.table_size() == 2);
  const auto hit = embedder.embed(text);
  CHECK(hit.vector == std::vector<double>(8, 0.25));
  CHECK_FALSE(hit.has_unknown_tokens);
  CHECK(embedder.embed("unknown words").has_unknown_tokens);
  CHECK_THROWS_AS(embedder.embed("absent"), MissingVectorError);

  // UNK on the domains text rejects the whole instance
  WhoisLog log;
  log.lines = {text};
  AssociatedDomains assoc;
  assoc.names.insert(*DomainName::parse("unknown.words"));
  std::string domains_text = canonicalize_domains(assoc);
  std::string table2 = table;
  append_vector_table_row(table2, domains_text, std::vector<double>(8, 0.1), true);
  {
    std::ofstream out(tmp);
    out << table2;
  }
  const FileEmbedder embedder2(tmp, 8);
  const auto bundle = build_bundle(*DomainName::parse("unknown.words"), log, assoc);
  const auto result = make_instance(bundle, 1, embedder2);
  CHECK_FALSE(result.ok());
  CHECK(result.reject == RejectReason::UnknownTokens);
  std::filesystem::remove(tmp);
}

TEST_CASE("instances jsonl round trip") {
  std::vector<Instance> instances;
  Instance inst;
  inst.features = {0.5, -1.25, 3.0, 0.0};
  inst.label = 1;
  inst.domain = *DomainName::parse("t.example");
  instances.push_back(inst);
  const auto parsed = instances_from_jsonl(instances_to_jsonl(instances));
  REQUIRE(parsed.size() == 1);
  CHECK(parsed[0].features == instances[0].features);
  CHECK(parsed[0].label == 1);
  CHECK(parsed[0].domain == instances[0].domain);
}
