#include "asbd/training.hpp"

#include "asbd/errors.hpp"
#include "asbd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace asbd {

template <typename Scalar>
OptimState<Scalar> OptimState<Scalar>::for_parameters(const ParameterList<Scalar>& params) {
  OptimState s;
  for (const auto& p : params) {
    s.m.push_back(Array::Zero(p.tensor.size()));
    s.v.push_back(Array::Zero(p.tensor.size()));
  }
  return s;
}

template <typename Scalar>
void adam_step(const ParameterList<Scalar>& params, std::span<const typename Tensor<Scalar>::Array> grads,
               OptimState<Scalar>& state, double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam_step: learning rate must be positive and finite");
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (grads[k].size() != params[k].tensor.size() || state.m[k].size() != params[k].tensor.size()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + params[k].name);
    }
    if (!grads[k].allFinite()) throw NumericError("adam_step: non-finite gradient in parameter " + params[k].name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.m[k];
    auto& v = state.v[k];
    const auto& g = grads[k];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    Tensor<Scalar> p = params[k].tensor;
    p.mutable_values() -= static_cast<Scalar>(lr) * (m / static_cast<Scalar>(c1)) /
                          ((v / static_cast<Scalar>(c2)).sqrt() + static_cast<Scalar>(state.eps));
  }
}

double lr_schedule(std::int64_t step, Index d_model, std::int64_t warmup) {
  if (step < 1) throw ConfigError("lr_schedule: step must be >= 1");
  if (warmup < 1) throw ConfigError("lr_schedule: warmup must be >= 1");
  if (d_model < 1) throw ConfigError("lr_schedule: d_model must be >= 1");
  const auto s = static_cast<double>(step);
  const auto w = static_cast<double>(warmup);
  return std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

template <typename Scalar>
double clip_grad_norm(std::vector<typename Tensor<Scalar>::Array>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.template cast<double>().square().sum();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto factor = static_cast<Scalar>(max_norm / norm);
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

bool early_stop_update(EarlyStopState& state, double metric) {
  if (!std::isfinite(metric)) throw NumericError("early_stop_update: non-finite metric");
  ++state.epochs_seen;
  if (metric > state.best + state.min_delta) {
    state.best = metric;
    state.best_epoch = state.epochs_seen;
    state.epochs_since_improvement = 0;
  } else {
    ++state.epochs_since_improvement;
  }
  return state.epochs_since_improvement >= state.patience;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (warmup < 1) throw ConfigError("warmup must be >= 1");
  if (!(lr_scale > 0.0)) throw ConfigError("lr_scale must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (min_delta < 0.0) throw ConfigError("min_delta must be >= 0");
  if (chunk_batches < 1) throw ConfigError("chunk_batches must be >= 1");
}

std::vector<std::vector<std::size_t>> plan_batches(std::span<const EncodedPair> pairs, Index batch_size,
                                                   Index chunk_batches, Rng& rng) {
  if (batch_size < 1 || chunk_batches < 1) throw ConfigError("batch_size and chunk_batches must be >= 1");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  const auto bs = static_cast<std::size_t>(batch_size);
  const std::size_t chunk = bs * static_cast<std::size_t>(chunk_batches);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += chunk) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + chunk));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      return pairs[a].source.size() + pairs[a].target.size() < pairs[b].source.size() + pairs[b].target.size();
    });
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(std::min<std::size_t>(bs, last - it))) {
      batches.emplace_back(it, it + static_cast<std::ptrdiff_t>(std::min<std::size_t>(bs, last - it)));
    }
  }
  rng.shuffle(batches);
  return batches;
}

template <typename Scalar>
double validation_bleu(const BidirModel<Scalar>& model, std::span<const EncodedPair> pairs, MergeStrategy strategy) {
  if (pairs.empty()) throw DataError("validation set is empty");
  std::vector<std::vector<int>> sources;
  std::size_t longest = 0;
  for (const auto& p : pairs) {
    if (p.target.empty()) throw DataError("validation pair with empty target");
    sources.push_back(p.source);
    longest = std::max(longest, p.source.size());
  }
  TranslateOptions options;
  options.strategy = strategy;
  // An untrained model may never emit EOS; bound the search by source length.
  options.max_steps = std::min<Index>(model.config.max_len - 1, 2 * static_cast<Index>(longest) + 10);
  if (strategy == MergeStrategy::rescore) options.strategy = MergeStrategy::score_split;
  const auto translations = translate_batch(model, sources, options);
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    scores.push_back(sentence_bleu(translations[k].merged.tokens, pairs[k].target).value);
  }
  return mean_score(scores);
}

template <typename Scalar>
double batch_loss(const BidirModel<Scalar>& model, const TrainBatch& batch) {
  const auto heads = heads_for_lambda(model.config.loss_weight_lambda);
  return static_cast<double>(joint_loss(forward_pass(model, batch, {}, heads), batch, model.config.loss_weight_lambda).item());
}

template <typename Scalar>
TrainResult train(BidirModel<Scalar>& model, std::span<const EncodedPair> train_pairs,
                  std::span<const EncodedPair> valid_pairs, const TrainConfig& config) {
  using Array = typename Tensor<Scalar>::Array;
  config.validate();
  TrainResult result;
  if (config.epochs == 0) return result;
  if (train_pairs.empty()) throw DataError("training set is empty");

  const ParameterList<Scalar> params = model.parameters();
  for (const auto& p : params) Tensor<Scalar>(p.tensor).set_requires_grad(true);
  OptimState<Scalar> optim = OptimState<Scalar>::for_parameters(params);
  EarlyStopState stopper;
  stopper.patience = config.patience;
  stopper.min_delta = config.min_delta;

  Rng root(config.seed);
  Rng batch_rng = root.fork(1);
  Rng dropout_rng = root.fork(2);
  ForwardContext ctx;
  ctx.training = true;
  ctx.rng = &dropout_rng;
  ctx.dropout = model.config.dropout;
  const double lambda = model.config.loss_weight_lambda;
  const Heads heads = heads_for_lambda(lambda);

  std::vector<Array> best_values;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto plan = plan_batches(train_pairs, config.batch_size, config.chunk_batches, batch_rng);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      std::vector<EncodedPair> rows;
      rows.reserve(plan[b].size());
      for (std::size_t idx : plan[b]) rows.push_back(train_pairs[idx]);
      const TrainBatch batch = make_train_batch(rows, model.config.max_len);
      if (batch.empty()) continue;

      for (const auto& p : params) Tensor<Scalar>(p.tensor).zero_grad();
      std::vector<Array> grads;
      double loss_value = 0.0;
      try {
        Tape<Scalar> tape;
        TapeScope<Scalar> scope(tape);
        const Tensor<Scalar> loss = joint_loss(forward_pass(model, batch, ctx, heads), batch, lambda);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) throw NumericError("non-finite loss");
        tape.backward(loss);
        grads.reserve(params.size());
        for (const auto& p : params) grads.push_back(p.tensor.grad());
        if (config.clip_norm > 0.0) clip_grad_norm<Scalar>(grads, config.clip_norm);
        const double lr = config.lr_scale * lr_schedule(optim.step + 1, model.config.d_model, config.warmup);
        adam_step<Scalar>(params, grads, optim, lr);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1) + ": " + e.what());
      }
      loss_sum += loss_value;
      ++loss_count;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_count == 0 ? 0.0 : loss_sum / static_cast<double>(loss_count);
    record.valid_bleu = valid_pairs.empty() ? 0.0 : validation_bleu(model, valid_pairs, config.valid_strategy);
    result.history.push_back(record);
    const bool stop = early_stop_update(stopper, record.valid_bleu);
    if (stopper.best_epoch == epoch) {
      best_values.clear();
      for (const auto& p : params) best_values.push_back(p.tensor.values());
      if (config.on_best) config.on_best(epoch, result.history);
    }
    if (config.on_epoch) config.on_epoch(record);
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }

  for (std::size_t k = 0; k < params.size() && !best_values.empty(); ++k) {
    Tensor<Scalar>(params[k].tensor).mutable_values() = best_values[k];
  }
  for (const auto& p : params) {
    Tensor<Scalar> t = p.tensor;
    t.zero_grad();
    t.set_requires_grad(false);
  }
  result.best_epoch = stopper.best_epoch;
  result.best_bleu = stopper.best;
  return result;
}

#define ASBD_INSTANTIATE_TRAINING(S)                                                                          \
  template struct OptimState<S>;                                                                             \
  template void adam_step<S>(const ParameterList<S>&, std::span<const typename Tensor<S>::Array>, OptimState<S>&, \
                             double);                                                                        \
  template double clip_grad_norm<S>(std::vector<typename Tensor<S>::Array>&, double);                         \
  template double validation_bleu(const BidirModel<S>&, std::span<const EncodedPair>, MergeStrategy);         \
  template double batch_loss(const BidirModel<S>&, const TrainBatch&);                                        \
  template TrainResult train(BidirModel<S>&, std::span<const EncodedPair>, std::span<const EncodedPair>,      \
                             const TrainConfig&);

ASBD_INSTANTIATE_TRAINING(float)
ASBD_INSTANTIATE_TRAINING(double)

#undef ASBD_INSTANTIATE_TRAINING

}  // namespace asbd
