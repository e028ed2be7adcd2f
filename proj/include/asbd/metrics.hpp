#ifndef ASBD_METRICS_HPP
#define ASBD_METRICS_HPP

#include "asbd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace asbd {

struct BleuScore {
  double value = 0.0;              // [0, 100]
  std::vector<double> precisions;  // p1..p_max_n; excluded orders hold 0
  double brevity_penalty = 0.0;
  int orders_used = 0;
};

// Smoothed sentence BLEU. Order 1 is unsmoothed (clipped matches / hyp
// unigrams); orders >= 2 use (matches + 1) / (total + 1). Orders for which
// the hypothesis has no n-grams are left out of the geometric mean.
template <typename Token>
BleuScore sentence_bleu(std::span<const Token> hyp, std::span<const Token> ref, int max_n = 4) {
  if (ref.empty()) throw DataError("sentence_bleu: empty reference");
  if (max_n < 1) throw ConfigError("sentence_bleu: max_n must be >= 1");
  BleuScore score;
  score.precisions.assign(static_cast<std::size_t>(max_n), 0.0);
  if (hyp.empty()) return score;

  const auto counts = [](std::span<const Token> seq, std::size_t n) {
    std::map<std::vector<Token>, long long> out;
    for (std::size_t k = 0; k + n <= seq.size(); ++k) ++out[std::vector<Token>(seq.begin() + k, seq.begin() + k + n)];
    return out;
  };

  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    if (hyp.size() < un) break;
    const auto h = counts(hyp, un);
    const auto r = counts(ref, un);
    long long matches = 0;
    for (const auto& [gram, c] : h) {
      const auto it = r.find(gram);
      if (it != r.end()) matches += std::min(c, it->second);
    }
    const auto total = static_cast<long long>(hyp.size() - un + 1);
    const double p = n == 1 ? static_cast<double>(matches) / static_cast<double>(total)
                            : static_cast<double>(matches + 1) / static_cast<double>(total + 1);
    score.precisions[un - 1] = p;
    ++score.orders_used;
    if (p == 0.0) {
      log_sum = -INFINITY;
    } else {
      log_sum += std::log(p);
    }
  }
  const double ratio = static_cast<double>(ref.size()) / static_cast<double>(hyp.size());
  score.brevity_penalty = std::min(1.0, std::exp(1.0 - ratio));
  if (std::isinf(log_sum)) return score;
  score.value = std::clamp(100.0 * score.brevity_penalty * std::exp(log_sum / score.orders_used), 0.0, 100.0);
  return score;
}

template <typename Token>
BleuScore sentence_bleu(const std::vector<Token>& hyp, const std::vector<Token>& ref, int max_n = 4) {
  return sentence_bleu(std::span<const Token>(hyp), std::span<const Token>(ref), max_n);
}

// Arithmetic mean.
double mean_score(std::span<const double> scores);

template <typename Token>
double corpus_mean_bleu(std::span<const std::pair<std::vector<Token>, std::vector<Token>>> pairs, int max_n = 4) {
  if (pairs.empty()) throw DataError("corpus_mean_bleu: empty corpus");
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& [hyp, ref] : pairs) scores.push_back(sentence_bleu(hyp, ref, max_n).value);
  return mean_score(scores);
}

struct BucketItem {
  std::size_t src_len = 0;
  std::vector<double> scores;  // one per system
};

struct BucketRow {
  std::string label;
  std::size_t count = 0;
  std::vector<std::optional<double>> means;  // nullopt for an empty bucket
};

struct BucketReport {
  std::vector<std::size_t> boundaries;
  std::vector<std::string> systems;
  std::vector<BucketRow> rows;
};

BucketReport bucket_report(std::span<const BucketItem> items, const std::vector<std::string>& systems,
                           std::span<const std::size_t> boundaries);

// bucket,count,<system>...; means with 3 decimals; empty cell for empty buckets.
void write_bucket_csv(std::ostream& out, const BucketReport& report);

struct SummaryRow {
  std::string system;
  double mean_sentence_bleu = 0.0;
};

// system,mean_sentence_bleu
void write_summary_csv(std::ostream& out, std::span<const SummaryRow> rows);

// Plain comma-separated table (no quoting); first row is the header.
using CsvTable = std::vector<std::vector<std::string>>;
CsvTable read_csv(std::istream& in);
CsvTable read_csv(const std::filesystem::path& path);

std::vector<SummaryRow> parse_summary_csv(const CsvTable& table);
BucketReport parse_bucket_csv(const CsvTable& table);

std::string format_fixed(double value, int decimals);

}  // namespace asbd

#endif  // ASBD_METRICS_HPP
