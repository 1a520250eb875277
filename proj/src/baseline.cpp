#include "fedblock/baseline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "fedblock/embedding.hpp"
#include "fedblock/errors.hpp"
#include "fedblock/rng.hpp"

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

// value after "<key>:" when the trimmed line starts with the key, else nullopt
std::optional<std::string> value_after_key(std::string_view line, std::string_view lower_key) {
  const std::string lower_line = to_lower(trim(line));
  if (lower_line.rfind(lower_key, 0) != 0) return std::nullopt;
  std::string_view rest = trim(line).substr(lower_key.size());
  rest = trim(rest);
  return std::string(rest);
}

// ISO-8601 prefix: YYYY-MM-DD, ignoring anything after the date part
std::optional<std::chrono::sys_days> parse_iso_date(std::string_view text) {
  text = trim(text);
  if (text.size() < 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  auto parse_int = [](std::string_view s, int& out) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
  };
  if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), m) ||
      !parse_int(text.substr(8, 2), d)) {
    return std::nullopt;
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                                        std::chrono::day{unsigned(d)}};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days{ymd};
}

}  // namespace

const std::vector<std::string>& default_epp_vocabulary() {
  static const std::vector<std::string> kCodes = {
      "clientDeleteProhibited", "clientHold",           "clientRenewProhibited",
      "clientTransferProhibited", "clientUpdateProhibited",
      "serverDeleteProhibited", "serverHold",           "serverRenewProhibited",
      "serverTransferProhibited", "serverUpdateProhibited",
      "ok",                     "inactive",             "pendingCreate",
      "pendingDelete",          "pendingRenew",         "pendingTransfer",
      "pendingUpdate"};
  return kCodes;
}

std::set<std::string> load_wordlist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open wordlist: " + path.string());
  std::set<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    auto word = trim(line);
    if (!word.empty() && word.front() != '#') words.insert(to_lower(word));
  }
  return words;
}

HandFeatures extract_hand_features(const DomainRecordBundle& bundle,
                                   std::chrono::sys_days reference_date,
                                   const std::set<std::string>& wordlist,
                                   const std::vector<std::string>& epp_vocabulary) {
  HandFeatures f;
  std::optional<std::chrono::sys_days> creation;
  std::optional<std::chrono::sys_days> expiry;
  for (const std::string& line : bundle.whois.lines) {
    if (f.admin_country.empty()) {
      if (auto v = value_after_key(line, "admin country:")) f.admin_country = to_lower(*v);
    }
    if (f.tech_country.empty()) {
      if (auto v = value_after_key(line, "tech country:")) f.tech_country = to_lower(*v);
    }
    if (f.registrant_country.empty()) {
      if (auto v = value_after_key(line, "registrant country:")) {
        f.registrant_country = to_lower(*v);
      }
    }
    if (!creation) {
      if (auto v = value_after_key(line, "creation date:")) creation = parse_iso_date(*v);
    }
    if (!expiry) {
      if (auto v = value_after_key(line, "registry expiry date:")) expiry = parse_iso_date(*v);
    }
  }
  if (creation) {
    f.days_since_creation = static_cast<double>((reference_date - *creation).count());
  }
  if (expiry) {
    f.days_since_expiry = static_cast<double>((reference_date - *expiry).count());
  }

  // english-word share of the canonicalized associated-domain keywords
  const std::string canonical = canonicalize_domains(bundle.assoc);
  std::size_t total = 0, hits = 0;
  std::istringstream tokens(canonical);
  std::string token;
  while (tokens >> token) {
    ++total;
    if (wordlist.contains(token)) ++hits;
  }
  if (total > 0) {
    f.english_word_ratio = static_cast<double>(hits) / static_cast<double>(total);
  }

  std::string log_lower;
  for (const std::string& line : bundle.whois.lines) {
    log_lower += to_lower(line);
    log_lower.push_back('\n');
  }
  f.epp_onehot.reserve(epp_vocabulary.size());
  for (const std::string& code : epp_vocabulary) {
    f.epp_onehot.push_back(log_lower.find(to_lower(code)) != std::string::npos ? 1 : 0);
  }
  return f;
}

void HandFeatureEncoder::fit(std::span<const HandFeatures> rows) {
  std::set<std::string> codes;
  for (const HandFeatures& row : rows) {
    if (!row.admin_country.empty()) codes.insert(row.admin_country);
    if (!row.tech_country.empty()) codes.insert(row.tech_country);
    if (!row.registrant_country.empty()) codes.insert(row.registrant_country);
  }
  country_vocab_.assign(codes.begin(), codes.end());
  epp_width_ = rows.empty() ? default_epp_vocabulary().size() : rows.front().epp_onehot.size();

  columns_ = {"days_since_creation", "days_since_expiry", "english_word_ratio"};
  for (const char* role : {"admin", "tech", "registrant"}) {
    for (const std::string& code : country_vocab_) {
      columns_.push_back(std::string(role) + "_country=" + code);
    }
    columns_.push_back(std::string(role) + "_country=other");
  }
  for (std::size_t i = 0; i < epp_width_; ++i) {
    columns_.push_back(i < default_epp_vocabulary().size()
                           ? "epp=" + default_epp_vocabulary()[i]
                           : "epp_" + std::to_string(i));
  }
}

std::vector<double> HandFeatureEncoder::encode(const HandFeatures& row) const {
  std::vector<double> out;
  out.reserve(columns_.size());
  out.push_back(row.days_since_creation);
  out.push_back(row.days_since_expiry);
  out.push_back(row.english_word_ratio);
  auto one_hot = [&](const std::string& code) {
    std::size_t hot = country_vocab_.size();  // "other" bucket
    bool present = !code.empty();
    if (present) {
      auto it = std::lower_bound(country_vocab_.begin(), country_vocab_.end(), code);
      if (it != country_vocab_.end() && *it == code) {
        hot = static_cast<std::size_t>(it - country_vocab_.begin());
      }
    }
    for (std::size_t i = 0; i <= country_vocab_.size(); ++i) {
      // missing code leaves the whole block zero (the -1 sentinel case)
      out.push_back(present && i == hot ? 1.0 : 0.0);
    }
  };
  one_hot(row.admin_country);
  one_hot(row.tech_country);
  one_hot(row.registrant_country);
  for (std::size_t i = 0; i < epp_width_; ++i) {
    out.push_back(i < row.epp_onehot.size() ? static_cast<double>(row.epp_onehot[i]) : 0.0);
  }
  return out;
}

std::string features_to_csv(const HandFeatureEncoder& encoder, std::span<const HandFeatures> rows,
                            std::span<const std::string> domains, std::span<const int> labels) {
  std::ostringstream out;
  out << "domain,label";
  for (const std::string& col : encoder.column_names()) out << ',' << col;
  out << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << (i < domains.size() ? domains[i] : std::string{}) << ','
        << (i < labels.size() ? labels[i] : -1);
    for (double v : encoder.encode(rows[i])) {
      out << ',';
      if (v == static_cast<double>(static_cast<long long>(v))) {
        out << static_cast<long long>(v);
      } else {
        out << v;
      }
    }
    out << '\n';
  }
  return out.str();
}

namespace {

struct TreeBuilder {
  const std::vector<std::vector<double>>& X;
  const std::vector<int>& y;
  std::size_t max_depth;
  std::size_t min_leaf;
  std::size_t features_per_split;
  Rng rng;
  std::vector<Forest::Node>* nodes;

  double class1_freq(const std::vector<std::size_t>& idx) const {
    std::size_t ones = 0;
    for (std::size_t i : idx) ones += static_cast<std::size_t>(y[i] == 1);
    return static_cast<double>(ones) / static_cast<double>(idx.size());
  }

  static double gini(std::size_t ones, std::size_t total) {
    if (total == 0) return 0.0;
    const double p = static_cast<double>(ones) / static_cast<double>(total);
    return 2.0 * p * (1.0 - p);
  }

  std::int32_t build(std::vector<std::size_t>& idx, std::size_t depth) {
    const std::int32_t node_id = static_cast<std::int32_t>(nodes->size());
    nodes->push_back({});
    (*nodes)[node_id].class1_freq = class1_freq(idx);

    const double freq = (*nodes)[node_id].class1_freq;
    if (depth >= max_depth || idx.size() < 2 * min_leaf || freq == 0.0 || freq == 1.0) {
      return node_id;
    }

    const std::size_t n_features = X.front().size();
    const auto candidates = rng.sample_indices(n_features, features_per_split);

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_impurity = std::numeric_limits<double>::infinity();

    std::vector<std::pair<double, int>> column(idx.size());
    for (std::size_t f : candidates) {
      for (std::size_t k = 0; k < idx.size(); ++k) {
        column[k] = {X[idx[k]][f], y[idx[k]]};
      }
      std::sort(column.begin(), column.end());
      const std::size_t total_ones =
          static_cast<std::size_t>(std::count_if(column.begin(), column.end(),
                                                 [](const auto& p) { return p.second == 1; }));
      std::size_t left_ones = 0;
      for (std::size_t k = 0; k + 1 < column.size(); ++k) {
        left_ones += static_cast<std::size_t>(column[k].second == 1);
        if (column[k].first == column[k + 1].first) continue;  // no boundary here
        const std::size_t left_n = k + 1;
        const std::size_t right_n = column.size() - left_n;
        if (left_n < min_leaf || right_n < min_leaf) continue;
        const double impurity =
            (static_cast<double>(left_n) * gini(left_ones, left_n) +
             static_cast<double>(right_n) * gini(total_ones - left_ones, right_n)) /
            static_cast<double>(column.size());
        if (impurity < best_impurity) {
          best_impurity = impurity;
          best_feature = static_cast<int>(f);
          best_threshold = column[k].first + 0.5 * (column[k + 1].first - column[k].first);
        }
      }
    }
    if (best_feature < 0) return node_id;

    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i : idx) {
      (X[i][static_cast<std::size_t>(best_feature)] < best_threshold ? left_idx : right_idx)
          .push_back(i);
    }
    if (left_idx.empty() || right_idx.empty()) return node_id;

    (*nodes)[node_id].feature = best_feature;
    (*nodes)[node_id].threshold = best_threshold;
    const std::int32_t left = build(left_idx, depth + 1);
    (*nodes)[node_id].left = left;
    const std::int32_t right = build(right_idx, depth + 1);
    (*nodes)[node_id].right = right;
    return node_id;
  }
};

double predict_tree(const std::vector<Forest::Node>& nodes, std::span<const double> x);

}  // namespace

Forest train_forest(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                    const ForestConfig& config) {
  if (X.empty() || X.size() != y.size()) throw EmptyDatasetError("forest needs matching X/y");
  const bool has0 = std::find(y.begin(), y.end(), 0) != y.end();
  const bool has1 = std::find(y.begin(), y.end(), 1) != y.end();
  if (!has0 || !has1) throw SingleClassError("forest training needs both classes");

  const std::size_t n_features = X.front().size();
  std::size_t per_split = config.features_per_split;
  if (per_split == 0) {
    per_split = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_features))));
  }
  per_split = std::min(per_split, n_features);

  Forest forest;
  forest.trees_.resize(config.n_trees);
  for (std::size_t t = 0; t < config.n_trees; ++t) {
    Rng tree_rng(derive_seed(config.seed, "tree", t));
    std::vector<std::size_t> idx;
    idx.reserve(X.size());
    if (config.bootstrap) {
      for (std::size_t i = 0; i < X.size(); ++i) {
        idx.push_back(static_cast<std::size_t>(tree_rng.below(X.size())));
      }
    } else {
      idx.resize(X.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    TreeBuilder builder{X,      y,        config.max_depth,
                        config.min_leaf, per_split, Rng(derive_seed(config.seed, "split", t)),
                        &forest.trees_[t].nodes};
    builder.build(idx, 0);
  }
  return forest;
}

namespace {

double predict_tree(const std::vector<Forest::Node>& nodes, std::span<const double> x) {
  std::int32_t node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(node)];
    node = x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(node)].class1_freq;
}

}  // namespace

double Forest::predict(std::span<const double> features) const {
  double sum = 0.0;
  for (const Tree& tree : trees_) sum += predict_tree(tree.nodes, features);
  return sum / static_cast<double>(trees_.size());
}

CvReport cross_validate_forest(const std::vector<std::vector<double>>& X,
                               const std::vector<int>& y, const ForestConfig& config,
                               std::size_t folds) {
  if (folds < 2 || X.size() < folds) throw EmptyDatasetError("not enough data for k-fold CV");
  std::vector<std::size_t> order(X.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(config.seed, "cv"));
  rng.shuffle(order);

  CvReport report;
  for (std::size_t fold = 0; fold < folds; ++fold) {
    std::vector<std::vector<double>> train_x, test_x;
    std::vector<int> train_y, test_y;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k % folds == fold) {
        test_x.push_back(X[order[k]]);
        test_y.push_back(y[order[k]]);
      } else {
        train_x.push_back(X[order[k]]);
        train_y.push_back(y[order[k]]);
      }
    }
    ForestConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, "cv-fold", fold);
    const Forest forest = train_forest(train_x, train_y, fold_config);
    std::size_t correct = 0;
    for (std::size_t k = 0; k < test_x.size(); ++k) {
      const int predicted = forest.predict(test_x[k]) >= 0.5 ? 1 : 0;
      correct += static_cast<std::size_t>(predicted == test_y[k]);
    }
    report.fold_accuracy.push_back(static_cast<double>(correct) /
                                   static_cast<double>(test_x.size()));
  }
  report.mean_accuracy = std::accumulate(report.fold_accuracy.begin(), report.fold_accuracy.end(),
                                         0.0) /
                         static_cast<double>(report.fold_accuracy.size());
  return report;
}

}  // namespace fedblock
