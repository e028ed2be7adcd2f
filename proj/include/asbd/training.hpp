#ifndef ASBD_TRAINING_HPP
#define ASBD_TRAINING_HPP

#include "asbd/bidir_model.hpp"
#include "asbd/decoding.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace asbd {

// Adam moments, one pair per parameter in list order.
template <typename Scalar>
struct OptimState {
  using Array = typename Tensor<Scalar>::Array;

  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  std::int64_t step = 0;
  std::vector<Array> m;
  std::vector<Array> v;

  static OptimState for_parameters(const ParameterList<Scalar>& params);
};

// Bias-corrected Adam update in place. A non-finite gradient aborts with
// NumericError naming the parameter before anything is modified.
template <typename Scalar>
void adam_step(const ParameterList<Scalar>& params, std::span<const typename Tensor<Scalar>::Array> grads,
               OptimState<Scalar>& state, double lr);

// d^-0.5 * min(step^-0.5, step * warmup^-1.5); step counts from 1.
double lr_schedule(std::int64_t step, Index d_model, std::int64_t warmup);

// Rescales grads so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename Scalar>
double clip_grad_norm(std::vector<typename Tensor<Scalar>::Array>& grads, double max_norm);

struct EarlyStopState {
  int patience = 10;
  double min_delta = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  int best_epoch = 0;  // 1-based, 0 before the first update
  int epochs_seen = 0;
  int epochs_since_improvement = 0;
};

// Records one epoch's metric (higher is better). Returns true once
// `patience` consecutive epochs failed to beat best + min_delta.
bool early_stop_update(EarlyStopState& state, double metric);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_bleu = 0.0;
};

struct TrainConfig {
  int epochs = 100;
  Index batch_size = 32;
  std::int64_t warmup = 4000;
  double lr_scale = 1.0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  int patience = 10;
  double min_delta = 0.0;
  Index chunk_batches = 64;
  std::uint64_t seed = 1;
  MergeStrategy valid_strategy = MergeStrategy::score_split;
  // Called after every epoch that sets a new best validation score.
  std::function<void(int epoch, const std::vector<EpochRecord>& history)> on_best;
  // Called after every epoch.
  std::function<void(const EpochRecord&)> on_epoch;

  void validate() const;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_bleu = 0.0;
  bool stopped_early = false;
};

// Seeded batch plan: indices are shuffled, cut into chunks of
// chunk_batches * batch_size, sorted by length inside each chunk, split into
// batches, and the batch order is shuffled.
std::vector<std::vector<std::size_t>> plan_batches(std::span<const EncodedPair> pairs, Index batch_size,
                                                   Index chunk_batches, Rng& rng);

// Greedy translation of every source; mean sentence BLEU against targets.
template <typename Scalar>
double validation_bleu(const BidirModel<Scalar>& model, std::span<const EncodedPair> pairs, MergeStrategy strategy);

// Joint-loss training with Adam, Noam schedule, clipping, per-epoch
// validation and early stopping. The model ends holding the best epoch's
// parameters. A non-finite loss raises NumericError naming epoch and batch.
template <typename Scalar>
TrainResult train(BidirModel<Scalar>& model, std::span<const EncodedPair> train_pairs,
                  std::span<const EncodedPair> valid_pairs, const TrainConfig& config);

// Mean joint loss of one batch without updating anything.
template <typename Scalar>
double batch_loss(const BidirModel<Scalar>& model, const TrainBatch& batch);

}  // namespace asbd

#endif  // ASBD_TRAINING_HPP
