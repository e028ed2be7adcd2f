#ifndef ASBD_DECODING_HPP
#define ASBD_DECODING_HPP

#include "asbd/bidir_model.hpp"

#include <span>
#include <string>
#include <vector>

namespace asbd {

// One decoder's output. Tokens are content ids in original target order:
// reverse hypotheses are un-reversed on construction. logprobs[k] is the
// log-probability the producing decoder gave tokens[k] when it emitted it.
struct Hypothesis {
  Direction direction = Direction::forward;
  std::vector<int> tokens;
  std::vector<double> logprobs;
  double total_logprob = 0.0;
  bool finished = false;
  double eos_logprob = 0.0;  // 0 unless finished

  // Takes tokens in the order the decoder produced them.
  static Hypothesis from_decoding_order(Direction direction, std::vector<int> tokens, std::vector<double> logprobs,
                                        bool finished, double eos_logprob);

  // Back to the order the decoder produced them.
  std::vector<int> decoding_order() const;

  std::size_t length() const { return tokens.size(); }
  // total_logprob / length, 0 for an empty hypothesis.
  double norm_score() const;
  // Beam ranking: (total + eos) / steps^alpha, steps counting EOS when emitted.
  double search_score(double alpha) const;
};

// Next-token distribution given the tokens generated so far (decoding order,
// BOS excluded). Implemented by the model and by scripted test models.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual std::vector<double> next_log_probs(std::span<const int> prefix) = 0;
  // Log-probability of `tokens` followed by EOS.
  virtual double sequence_log_prob(std::span<const int> tokens);
};

// Argmax chain for at most max_steps steps. PAD and BOS are never emitted.
Hypothesis greedy_decode(StepScorer& scorer, Direction direction, Index max_steps);

// Beam search ranked by search_score(alpha); beam 1 reproduces greedy_decode.
// Finished and unfinished survivors are returned best first.
std::vector<Hypothesis> beam_decode(StepScorer& scorer, Direction direction, Index beam, Index max_steps,
                                    double length_alpha = 0.6);

enum class MergeStrategy { score_split, midpoint, rescore, l2r_only, r2l_only };

MergeStrategy parse_merge_strategy(const std::string& name);
std::string to_string(MergeStrategy strategy);

// tokens == forward.tokens[0..split_i) ++ reverse.tokens[split_j..).
struct MergedTranslation {
  std::vector<int> tokens;
  std::size_t split_i = 0;
  std::size_t split_j = 0;
  double norm_score = 0.0;
  MergeStrategy strategy = MergeStrategy::score_split;
};

// (sum F.logprobs[0..i) + sum R.logprobs[j..)) / merged length.
double merge_candidate_score(const Hypothesis& fwd, const Hypothesis& rev, std::size_t i, std::size_t j);

struct MergeCandidate {
  std::size_t i;
  std::size_t j;
  std::size_t length;
  double score;
};

// Splits whose merged length lies between |F| and |R| (just the non-empty
// side's length when the other is empty), best first: score desc, then
// longer, then smaller i. Both pure hypotheses are always candidates.
std::vector<MergeCandidate> rank_merge_candidates(const Hypothesis& fwd, const Hypothesis& rev);

MergedTranslation merge_by_score(const Hypothesis& fwd, const Hypothesis& rev);
// i = ceil(|F|/2), j = floor(|R|/2); an empty side yields the other side whole.
MergedTranslation merge_midpoint(const Hypothesis& fwd, const Hypothesis& rev);
// Re-ranks the top_n score_split candidates by forward-decoder likelihood
// (tokens + EOS, divided by length + 1).
MergedTranslation merge_rescore(const Hypothesis& fwd, const Hypothesis& rev, StepScorer& forward_scorer,
                                std::size_t top_n = 8);

MergedTranslation assemble(const Hypothesis& fwd, const Hypothesis& rev, std::size_t i, std::size_t j,
                           double norm_score, MergeStrategy strategy);

// Decoder over one pre-encoded source sentence.
template <typename Scalar>
class ModelStepScorer final : public StepScorer {
 public:
  ModelStepScorer(const BidirModel<Scalar>& model, Direction direction, Tensor<Scalar> enc_out, Index src_length);

  std::vector<double> next_log_probs(std::span<const int> prefix) override;
  double sequence_log_prob(std::span<const int> tokens) override;

 private:
  const BidirModel<Scalar>& model_;
  Direction direction_;
  Tensor<Scalar> enc_out_;
  Index src_length_;
};

struct TranslateOptions {
  MergeStrategy strategy = MergeStrategy::score_split;
  Index beam = 1;
  Index max_steps = 0;  // 0: model max_len - 1
  double length_alpha = 0.6;
  std::size_t rescore_top_n = 8;
};

struct Translation {
  MergedTranslation merged;
  Hypothesis forward;  // empty when the strategy skipped this direction
  Hypothesis reverse;
};

// Encodes once and runs the decoder(s) the strategy needs. If both
// hypotheses come back empty the merged translation is empty.
template <typename Scalar>
Translation translate(const BidirModel<Scalar>& model, std::span<const int> src, const TranslateOptions& options);

// Greedy decoding of many sources in padded batches; per-sentence results
// follow `translate` but batch padding may perturb logits at float rounding level.
template <typename Scalar>
std::vector<Translation> translate_batch(const BidirModel<Scalar>& model, std::span<const std::vector<int>> sources,
                                         const TranslateOptions& options, Index batch_size = 64);

}  // namespace asbd

#endif  // ASBD_DECODING_HPP
