#include "asbd/decoding.hpp"

#include "asbd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace asbd {

// ---------------------------------------------------------------- Hypothesis

Hypothesis Hypothesis::from_decoding_order(Direction direction, std::vector<int> tokens, std::vector<double> logprobs,
                                           bool finished, double eos_logprob) {
  if (tokens.size() != logprobs.size()) throw DimensionError("hypothesis tokens and logprobs differ in length");
  for (int t : tokens) {
    if (t == kPadId || t == kBosId || t == kEosId) throw ContractError("special token inside hypothesis content");
  }
  if (direction == Direction::reverse) {
    std::reverse(tokens.begin(), tokens.end());
    std::reverse(logprobs.begin(), logprobs.end());
  }
  Hypothesis h;
  h.direction = direction;
  h.total_logprob = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
  h.tokens = std::move(tokens);
  h.logprobs = std::move(logprobs);
  h.finished = finished;
  h.eos_logprob = finished ? eos_logprob : 0.0;
  return h;
}

std::vector<int> Hypothesis::decoding_order() const {
  std::vector<int> out = tokens;
  if (direction == Direction::reverse) std::reverse(out.begin(), out.end());
  return out;
}

double Hypothesis::norm_score() const {
  return tokens.empty() ? 0.0 : total_logprob / static_cast<double>(tokens.size());
}

double Hypothesis::search_score(double alpha) const {
  const double steps = static_cast<double>(tokens.size() + (finished ? 1 : 0));
  const double raw = total_logprob + eos_logprob;
  if (alpha == 0.0 || steps == 0.0) return raw;
  return raw / std::pow(steps, alpha);
}

double StepScorer::sequence_log_prob(std::span<const int> tokens) {
  double total = 0.0;
  for (std::size_t k = 0; k <= tokens.size(); ++k) {
    const auto lp = next_log_probs(tokens.first(k));
    total += lp.at(static_cast<std::size_t>(k < tokens.size() ? tokens[k] : kEosId));
  }
  return total;
}

// ---------------------------------------------------------------- search

namespace {

bool emittable(int id) { return id != kPadId && id != kBosId; }

struct Partial {
  std::vector<int> tokens;
  std::vector<double> logprobs;
  double score = 0.0;
};

}  // namespace

Hypothesis greedy_decode(StepScorer& scorer, Direction direction, Index max_steps) {
  if (max_steps < 1) throw ConfigError("max decoding steps must be >= 1");
  std::vector<int> tokens;
  std::vector<double> logprobs;
  for (Index step = 0; step < max_steps; ++step) {
    const auto lp = scorer.next_log_probs(tokens);
    int best = -1;
    for (int id = 0; id < static_cast<int>(lp.size()); ++id) {
      if (!emittable(id)) continue;
      if (best < 0 || lp[static_cast<std::size_t>(id)] > lp[static_cast<std::size_t>(best)]) best = id;
    }
    if (best < 0) throw ContractError("scorer returned no emittable token");
    if (best == kEosId) {
      return Hypothesis::from_decoding_order(direction, std::move(tokens), std::move(logprobs), true,
                                             lp[static_cast<std::size_t>(best)]);
    }
    tokens.push_back(best);
    logprobs.push_back(lp[static_cast<std::size_t>(best)]);
  }
  return Hypothesis::from_decoding_order(direction, std::move(tokens), std::move(logprobs), false, 0.0);
}

std::vector<Hypothesis> beam_decode(StepScorer& scorer, Direction direction, Index beam, Index max_steps,
                                    double length_alpha) {
  if (beam < 1) throw ConfigError("beam width must be >= 1");
  if (max_steps < 1) throw ConfigError("max decoding steps must be >= 1");

  struct Expansion {
    std::size_t parent;
    int token;
    double logprob;
    double score;
  };

  std::vector<Partial> live(1);
  std::vector<Hypothesis> results;
  for (Index step = 0; step < max_steps && !live.empty(); ++step) {
    std::vector<Expansion> candidates;
    for (std::size_t p = 0; p < live.size(); ++p) {
      const auto lp = scorer.next_log_probs(live[p].tokens);
      for (int id = 0; id < static_cast<int>(lp.size()); ++id) {
        if (!emittable(id)) continue;
        const double l = lp[static_cast<std::size_t>(id)];
        if (l == -std::numeric_limits<double>::infinity()) continue;
        candidates.push_back({p, id, l, live[p].score + l});
      }
    }
    // Stable: equal scores keep (parent, token) order, matching greedy's first-max rule.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Expansion& a, const Expansion& b) { return a.score > b.score; });
    if (static_cast<Index>(candidates.size()) > beam) candidates.resize(static_cast<std::size_t>(beam));

    std::vector<Partial> next;
    for (const auto& c : candidates) {
      const Partial& parent = live[c.parent];
      if (c.token == kEosId) {
        results.push_back(Hypothesis::from_decoding_order(direction, parent.tokens, parent.logprobs, true, c.logprob));
        continue;
      }
      Partial child = parent;
      child.tokens.push_back(c.token);
      child.logprobs.push_back(c.logprob);
      child.score = c.score;
      next.push_back(std::move(child));
    }
    live = std::move(next);
  }
  for (auto& p : live) {
    results.push_back(Hypothesis::from_decoding_order(direction, std::move(p.tokens), std::move(p.logprobs), false, 0.0));
  }
  std::stable_sort(results.begin(), results.end(), [length_alpha](const Hypothesis& a, const Hypothesis& b) {
    return a.search_score(length_alpha) > b.search_score(length_alpha);
  });
  return results;
}

// ---------------------------------------------------------------- merge

MergeStrategy parse_merge_strategy(const std::string& name) {
  if (name == "score_split") return MergeStrategy::score_split;
  if (name == "midpoint") return MergeStrategy::midpoint;
  if (name == "rescore") return MergeStrategy::rescore;
  if (name == "l2r_only") return MergeStrategy::l2r_only;
  if (name == "r2l_only") return MergeStrategy::r2l_only;
  throw ConfigError("unknown strategy '" + name + "' (expected score_split, midpoint, rescore, l2r_only or r2l_only)");
}

std::string to_string(MergeStrategy strategy) {
  switch (strategy) {
    case MergeStrategy::score_split:
      return "score_split";
    case MergeStrategy::midpoint:
      return "midpoint";
    case MergeStrategy::rescore:
      return "rescore";
    case MergeStrategy::l2r_only:
      return "l2r_only";
    case MergeStrategy::r2l_only:
      return "r2l_only";
  }
  return "?";
}

double merge_candidate_score(const Hypothesis& fwd, const Hypothesis& rev, std::size_t i, std::size_t j) {
  if (i > fwd.length() || j > rev.length()) throw IndexError("merge split outside hypothesis bounds");
  const std::size_t length = i + (rev.length() - j);
  if (length == 0) throw ContractError("merge candidate with empty result");
  double total = 0.0;
  for (std::size_t k = 0; k < i; ++k) total += fwd.logprobs[k];
  for (std::size_t k = j; k < rev.length(); ++k) total += rev.logprobs[k];
  return total / static_cast<double>(length);
}

MergedTranslation assemble(const Hypothesis& fwd, const Hypothesis& rev, std::size_t i, std::size_t j,
                           double norm_score, MergeStrategy strategy) {
  MergedTranslation m;
  m.tokens.assign(fwd.tokens.begin(), fwd.tokens.begin() + static_cast<std::ptrdiff_t>(i));
  m.tokens.insert(m.tokens.end(), rev.tokens.begin() + static_cast<std::ptrdiff_t>(j), rev.tokens.end());
  m.split_i = i;
  m.split_j = j;
  m.norm_score = norm_score;
  m.strategy = strategy;
  return m;
}

std::vector<MergeCandidate> rank_merge_candidates(const Hypothesis& fwd, const Hypothesis& rev) {
  if (fwd.tokens.empty() && rev.tokens.empty()) throw ContractError("cannot merge two empty hypotheses");
  // Merged lengths stay between the two hypothesis lengths (an empty side
  // does not count), so a merge is two complementary segments rather than a
  // fragment built from the few most confident tokens.
  std::size_t lo = std::min(fwd.length(), rev.length());
  const std::size_t hi = std::max(fwd.length(), rev.length());
  if (lo == 0) lo = hi;
  std::vector<MergeCandidate> out;
  for (std::size_t i = 0; i <= fwd.length(); ++i) {
    for (std::size_t j = 0; j <= rev.length(); ++j) {
      const std::size_t length = i + (rev.length() - j);
      if (length < lo || length > hi) continue;
      out.push_back({i, j, length, merge_candidate_score(fwd, rev, i, j)});
    }
  }
  std::sort(out.begin(), out.end(), [](const MergeCandidate& a, const MergeCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.length != b.length) return a.length > b.length;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  return out;
}

MergedTranslation merge_by_score(const Hypothesis& fwd, const Hypothesis& rev) {
  const auto ranked = rank_merge_candidates(fwd, rev);
  const auto& best = ranked.front();
  return assemble(fwd, rev, best.i, best.j, best.score, MergeStrategy::score_split);
}

MergedTranslation merge_midpoint(const Hypothesis& fwd, const Hypothesis& rev) {
  if (fwd.tokens.empty() && rev.tokens.empty()) throw ContractError("cannot merge two empty hypotheses");
  std::size_t i = (fwd.length() + 1) / 2;
  std::size_t j = rev.length() / 2;
  if (fwd.tokens.empty()) {
    i = 0;
    j = 0;
  } else if (rev.tokens.empty()) {
    i = fwd.length();
    j = 0;
  }
  return assemble(fwd, rev, i, j, merge_candidate_score(fwd, rev, i, j), MergeStrategy::midpoint);
}

MergedTranslation merge_rescore(const Hypothesis& fwd, const Hypothesis& rev, StepScorer& forward_scorer,
                                std::size_t top_n) {
  if (top_n == 0) throw ConfigError("rescore needs at least one candidate");
  const auto ranked = rank_merge_candidates(fwd, rev);
  const std::size_t n = std::min(top_n, ranked.size());
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) {
    const MergedTranslation m = assemble(fwd, rev, ranked[c].i, ranked[c].j, 0.0, MergeStrategy::rescore);
    const double score = forward_scorer.sequence_log_prob(m.tokens) / static_cast<double>(m.tokens.size() + 1);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return assemble(fwd, rev, ranked[best].i, ranked[best].j, best_score, MergeStrategy::rescore);
}

// ---------------------------------------------------------------- model scorer

namespace {

template <typename Scalar>
std::vector<double> log_softmax_row(const Tensor<Scalar>& logits, Index row) {
  const Index vocab = logits.dim(-1);
  const auto values = logits.values().segment(row * vocab, vocab).template cast<double>().eval();
  const double mx = values.maxCoeff();
  const double log_z = mx + std::log((values - mx).exp().sum());
  std::vector<double> out(static_cast<std::size_t>(vocab));
  for (Index v = 0; v < vocab; ++v) out[static_cast<std::size_t>(v)] = values[v] - log_z;
  return out;
}

}  // namespace

template <typename Scalar>
ModelStepScorer<Scalar>::ModelStepScorer(const BidirModel<Scalar>& model, Direction direction, Tensor<Scalar> enc_out,
                                         Index src_length)
    : model_(model), direction_(direction), enc_out_(std::move(enc_out)), src_length_(src_length) {}

template <typename Scalar>
std::vector<double> ModelStepScorer<Scalar>::next_log_probs(std::span<const int> prefix) {
  TokenMatrix in(1, static_cast<Index>(prefix.size()) + 1);
  in(0, 0) = kBosId;
  for (std::size_t k = 0; k < prefix.size(); ++k) in(0, static_cast<Index>(k) + 1) = prefix[k];
  const std::vector<Index> lengths{src_length_};
  const Tensor<Scalar> logits = decode_logits(model_, direction_, in, enc_out_, lengths);
  return log_softmax_row(logits, in.cols() - 1);
}

template <typename Scalar>
double ModelStepScorer<Scalar>::sequence_log_prob(std::span<const int> tokens) {
  if (static_cast<Index>(tokens.size()) + 1 > model_.config.max_len) return StepScorer::sequence_log_prob(tokens);
  TokenMatrix in(1, static_cast<Index>(tokens.size()) + 1);
  in(0, 0) = kBosId;
  for (std::size_t k = 0; k < tokens.size(); ++k) in(0, static_cast<Index>(k) + 1) = tokens[k];
  const std::vector<Index> lengths{src_length_};
  const Tensor<Scalar> logits = decode_logits(model_, direction_, in, enc_out_, lengths);
  double total = 0.0;
  for (Index pos = 0; pos < in.cols(); ++pos) {
    const auto lp = log_softmax_row(logits, pos);
    const int target = pos < static_cast<Index>(tokens.size()) ? tokens[static_cast<std::size_t>(pos)] : kEosId;
    total += lp[static_cast<std::size_t>(target)];
  }
  return total;
}

// ---------------------------------------------------------------- translate

namespace {

Index effective_steps(const TranslateOptions& options, Index model_max_len) {
  const Index cap = model_max_len - 1;
  return options.max_steps > 0 ? std::min(options.max_steps, cap) : cap;
}

bool needs_forward(MergeStrategy s) { return s != MergeStrategy::r2l_only; }
bool needs_reverse(MergeStrategy s) { return s != MergeStrategy::l2r_only; }

MergedTranslation combine(const Hypothesis& fwd, const Hypothesis& rev, const TranslateOptions& options,
                          StepScorer* forward_scorer) {
  switch (options.strategy) {
    case MergeStrategy::l2r_only:
      return assemble(fwd, rev, fwd.length(), rev.length(), fwd.norm_score(), options.strategy);
    case MergeStrategy::r2l_only:
      return assemble(fwd, rev, 0, 0, rev.norm_score(), options.strategy);
    default:
      break;
  }
  if (fwd.tokens.empty() && rev.tokens.empty()) return assemble(fwd, rev, 0, 0, 0.0, options.strategy);
  if (options.strategy == MergeStrategy::midpoint) return merge_midpoint(fwd, rev);
  if (options.strategy == MergeStrategy::rescore) return merge_rescore(fwd, rev, *forward_scorer, options.rescore_top_n);
  return merge_by_score(fwd, rev);
}

}  // namespace

template <typename Scalar>
Translation translate(const BidirModel<Scalar>& model, std::span<const int> src, const TranslateOptions& options) {
  if (src.empty()) throw DataError("cannot translate an empty source sentence");
  if (options.beam < 1) throw ConfigError("beam width must be >= 1");
  const Index src_len = std::min<Index>(static_cast<Index>(src.size()), model.config.max_len);
  TokenMatrix ids(1, src_len);
  for (Index k = 0; k < src_len; ++k) ids(0, k) = src[static_cast<std::size_t>(k)];
  const std::vector<Index> lengths{src_len};
  const Tensor<Scalar> enc_out = encode_batch(model, ids, lengths);
  const Index steps = effective_steps(options, model.config.max_len);

  const auto run = [&](Direction d, StepScorer& scorer) {
    if (options.beam == 1) return greedy_decode(scorer, d, steps);
    return beam_decode(scorer, d, options.beam, steps, options.length_alpha).front();
  };

  Translation out;
  out.reverse.direction = Direction::reverse;
  ModelStepScorer<Scalar> fwd_scorer(model, Direction::forward, enc_out, src_len);
  if (needs_forward(options.strategy)) out.forward = run(Direction::forward, fwd_scorer);
  if (needs_reverse(options.strategy)) {
    ModelStepScorer<Scalar> rev_scorer(model, Direction::reverse, enc_out, src_len);
    out.reverse = run(Direction::reverse, rev_scorer);
  }
  out.merged = combine(out.forward, out.reverse, options, &fwd_scorer);
  return out;
}

template <typename Scalar>
std::vector<Translation> translate_batch(const BidirModel<Scalar>& model, std::span<const std::vector<int>> sources,
                                         const TranslateOptions& options, Index batch_size) {
  if (options.beam != 1 || options.strategy == MergeStrategy::rescore) {
    std::vector<Translation> out;
    out.reserve(sources.size());
    for (const auto& s : sources) out.push_back(translate(model, s, options));
    return out;
  }
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  const Index steps = effective_steps(options, model.config.max_len);
  std::vector<Translation> out(sources.size());

  for (std::size_t start = 0; start < sources.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(sources.size(), start + static_cast<std::size_t>(batch_size));
    const auto rows = static_cast<Index>(end - start);
    std::vector<Index> lengths;
    Index width = 0;
    for (std::size_t s = start; s < end; ++s) {
      if (sources[s].empty()) throw DataError("cannot translate an empty source sentence");
      lengths.push_back(std::min<Index>(static_cast<Index>(sources[s].size()), model.config.max_len));
      width = std::max(width, lengths.back());
    }
    TokenMatrix src = TokenMatrix::Constant(rows, width, kPadId);
    for (Index r = 0; r < rows; ++r) {
      for (Index k = 0; k < lengths[static_cast<std::size_t>(r)]; ++k) {
        src(r, k) = sources[start + static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
      }
    }
    const Tensor<Scalar> enc_out = encode_batch(model, src, lengths);

    const auto decode_direction = [&](Direction d) {
      std::vector<std::vector<int>> tokens(static_cast<std::size_t>(rows));
      std::vector<std::vector<double>> logprobs(static_cast<std::size_t>(rows));
      std::vector<bool> done(static_cast<std::size_t>(rows), false);
      std::vector<double> eos(static_cast<std::size_t>(rows), 0.0);
      Index remaining = rows;
      for (Index step = 0; step < steps && remaining > 0; ++step) {
        TokenMatrix in = TokenMatrix::Constant(rows, step + 1, kPadId);
        for (Index r = 0; r < rows; ++r) {
          in(r, 0) = kBosId;
          const auto& t = tokens[static_cast<std::size_t>(r)];
          for (std::size_t k = 0; k < t.size(); ++k) in(r, static_cast<Index>(k) + 1) = t[k];
        }
        const Tensor<Scalar> logits = decode_logits(model, d, in, enc_out, lengths);
        for (Index r = 0; r < rows; ++r) {
          const auto ri = static_cast<std::size_t>(r);
          if (done[ri]) continue;
          const auto lp = log_softmax_row(logits, r * (step + 1) + step);
          int best = -1;
          for (int id = 0; id < static_cast<int>(lp.size()); ++id) {
            if (!emittable(id)) continue;
            if (best < 0 || lp[static_cast<std::size_t>(id)] > lp[static_cast<std::size_t>(best)]) best = id;
          }
          if (best == kEosId) {
            done[ri] = true;
            eos[ri] = lp[static_cast<std::size_t>(best)];
            --remaining;
          } else {
            tokens[ri].push_back(best);
            logprobs[ri].push_back(lp[static_cast<std::size_t>(best)]);
          }
        }
      }
      std::vector<Hypothesis> hyps;
      for (Index r = 0; r < rows; ++r) {
        const auto ri = static_cast<std::size_t>(r);
        hyps.push_back(Hypothesis::from_decoding_order(d, std::move(tokens[ri]), std::move(logprobs[ri]), done[ri], eos[ri]));
      }
      return hyps;
    };

    std::vector<Hypothesis> fwd;
    std::vector<Hypothesis> rev;
    if (needs_forward(options.strategy)) fwd = decode_direction(Direction::forward);
    if (needs_reverse(options.strategy)) rev = decode_direction(Direction::reverse);
    for (Index r = 0; r < rows; ++r) {
      Translation& t = out[start + static_cast<std::size_t>(r)];
      t.reverse.direction = Direction::reverse;
      if (!fwd.empty()) t.forward = std::move(fwd[static_cast<std::size_t>(r)]);
      if (!rev.empty()) t.reverse = std::move(rev[static_cast<std::size_t>(r)]);
      t.merged = combine(t.forward, t.reverse, options, nullptr);
    }
  }
  return out;
}

template class ModelStepScorer<float>;
template class ModelStepScorer<double>;
template Translation translate(const BidirModel<float>&, std::span<const int>, const TranslateOptions&);
template Translation translate(const BidirModel<double>&, std::span<const int>, const TranslateOptions&);
template std::vector<Translation> translate_batch(const BidirModel<float>&, std::span<const std::vector<int>>,
                                                  const TranslateOptions&, Index);
template std::vector<Translation> translate_batch(const BidirModel<double>&, std::span<const std::vector<int>>,
                                                  const TranslateOptions&, Index);

}  // namespace asbd
