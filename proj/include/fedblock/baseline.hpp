#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedblock/enrichment.hpp"

namespace fedblock {

// Hand-picked whois/domain features for the comparison classifier. Every
// parse failure maps to its sentinel instead of failing the extraction.
struct HandFeatures {
  std::string admin_country;       // empty = missing (-1 code after encoding)
  std::string tech_country;        // empty = missing
  std::string registrant_country;  // empty = missing
  double days_since_creation = -1.0;  // -1 on error
  double days_since_expiry = 0.0;     // 0 on error
  double english_word_ratio = -1.0;   // -1 on error
  std::vector<int> epp_onehot;        // fixed order over the configured vocabulary
};

// The 17 standard client/server EPP status codes.
const std::vector<std::string>& default_epp_vocabulary();

std::set<std::string> load_wordlist(const std::filesystem::path& path);

HandFeatures extract_hand_features(const DomainRecordBundle& bundle,
                                   std::chrono::sys_days reference_date,
                                   const std::set<std::string>& wordlist,
                                   const std::vector<std::string>& epp_vocabulary =
                                       default_epp_vocabulary());

// Numeric layout for the trees: scalar columns first, then one-hot country
// blocks over the codes seen at build time (plus an "other" bucket), then the
// EPP one-hot block.
class HandFeatureEncoder {
 public:
  void fit(std::span<const HandFeatures> rows);
  std::vector<double> encode(const HandFeatures& row) const;
  const std::vector<std::string>& column_names() const { return columns_; }

 private:
  std::vector<std::string> country_vocab_;  // sorted codes seen during fit
  std::size_t epp_width_ = 0;
  std::vector<std::string> columns_;
};

// One row per domain; header fixed by the encoder's column layout.
std::string features_to_csv(const HandFeatureEncoder& encoder,
                            std::span<const HandFeatures> rows,
                            std::span<const std::string> domains, std::span<const int> labels);

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 12;
  std::size_t min_leaf = 2;
  std::size_t features_per_split = 0;  // 0 = ceil(sqrt(feature count))
  std::uint64_t seed = 0;
  bool bootstrap = true;
};

class Forest {
 public:
  struct Node {
    int feature = -1;  // -1 = leaf
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    double class1_freq = 0.0;
  };
  struct Tree {
    std::vector<Node> nodes;
  };

  // mean of per-tree leaf class-1 frequencies
  double predict(std::span<const double> features) const;
  std::size_t tree_count() const { return trees_.size(); }
  const std::vector<Tree>& trees() const { return trees_; }

 private:
  friend Forest train_forest(const std::vector<std::vector<double>>& X,
                             const std::vector<int>& y, const ForestConfig& config);
  std::vector<Tree> trees_;
};

// Bagged CART trees, Gini impurity, deterministic in seed. Throws
// SingleClassError unless both classes are present.
Forest train_forest(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                    const ForestConfig& config);

struct CvReport {
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
};

CvReport cross_validate_forest(const std::vector<std::vector<double>>& X,
                               const std::vector<int>& y, const ForestConfig& config,
                               std::size_t folds = 5);

}  // namespace fedblock
