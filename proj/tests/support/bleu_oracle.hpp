#ifndef ASBD_TESTS_BLEU_ORACLE_HPP
#define ASBD_TESTS_BLEU_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace asbd::testing {

struct BleuFixture {
  std::string hyp;
  std::string ref;
};

inline std::vector<BleuFixture> bleu_fixtures() {
  return {
      {"the the the", "the cat"},
      {"a b", "c d e f"},
      {"the cat sat on the mat", "the cat is on the mat"},
      {"a b c", "a b c d e f"},
      {"x y z w x y z w q", "x y z w"},
  };
}

// Brute-force hand count: for every hypothesis position, count how many
// times that n-gram occurs in each side by linear scan, and clip. Each
// distinct n-gram is credited once, at its first occurrence.
template <typename Token>
double oracle_bleu(const std::vector<Token>& hyp, const std::vector<Token>& ref) {
  if (hyp.empty()) return 0.0;
  const auto occurrences = [](const std::vector<Token>& seq, const std::vector<Token>& h, std::size_t at, std::size_t n) {
    int c = 0;
    for (std::size_t s = 0; s + n <= seq.size(); ++s) {
      bool same = true;
      for (std::size_t k = 0; k < n && same; ++k) same = seq[s + k] == h[at + k];
      c += same ? 1 : 0;
    }
    return c;
  };
  double log_p = 0.0;
  int used = 0;
  for (std::size_t n = 1; n <= 4 && n <= hyp.size(); ++n) {
    const std::size_t total = hyp.size() - n + 1;
    int matches = 0;
    for (std::size_t i = 0; i < total; ++i) {
      bool first = true;
      for (std::size_t j = 0; j < i && first; ++j) {
        bool same = true;
        for (std::size_t k = 0; k < n && same; ++k) same = hyp[j + k] == hyp[i + k];
        first = !same;
      }
      if (!first) continue;
      matches += std::min(occurrences(hyp, hyp, i, n), occurrences(ref, hyp, i, n));
    }
    const double p = n == 1 ? double(matches) / double(total) : double(matches + 1) / double(total + 1);
    if (p == 0.0) return 0.0;
    log_p += std::log(p);
    ++used;
  }
  const double bp = hyp.size() >= ref.size() ? 1.0 : std::exp(1.0 - double(ref.size()) / double(hyp.size()));
  return 100.0 * bp * std::exp(log_p / used);
}

}  // namespace asbd::testing

#endif  // ASBD_TESTS_BLEU_ORACLE_HPP
