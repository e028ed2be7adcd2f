#ifndef ASBD_TESTS_REFERENCE_MODEL_HPP
#define ASBD_TESTS_REFERENCE_MODEL_HPP

#include "asbd/bidir_model.hpp"
#include "asbd/ops.hpp"
#include "asbd/training.hpp"
#include "asbd/transformer.hpp"

#include <span>
#include <vector>

namespace asbd::testing {

// Plain left-to-right encoder-decoder assembled directly from the
// transformer modules, drawing parameters in the same order init_model does.
template <typename Scalar>
struct UnidirectionalModel {
  TransformerConfig config;
  Tensor<Scalar> src_embedding;
  Tensor<Scalar> tgt_embedding;
  EncoderStack<Scalar> encoder;
  DecoderStack<Scalar> decoder;

  static UnidirectionalModel init(const ModelConfig& c) {
    UnidirectionalModel m;
    m.config = c.transformer();
    Rng rng(c.seed);
    m.src_embedding = init_embedding<Scalar>(c.src_vocab, c.d_model, rng);
    m.tgt_embedding = init_embedding<Scalar>(c.tgt_vocab, c.d_model, rng);
    m.encoder = EncoderStack<Scalar>::init(m.config, rng);
    m.decoder = DecoderStack<Scalar>::init(m.config, 0, c.tgt_vocab, rng);
    return m;
  }

  ParameterList<Scalar> parameters() const {
    ParameterList<Scalar> out;
    out.push_back({"src_embedding", src_embedding});
    out.push_back({"tgt_embedding", tgt_embedding});
    encoder.collect("encoder", out);
    decoder.collect("decoder", out);
    return out;
  }

  Tensor<Scalar> loss(const TrainBatch& batch) const {
    const Tensor<Scalar> enc = encoder_forward(batch.src, batch.src_lengths, src_embedding, encoder, config);
    const Tensor<Scalar> logits = decoder_forward(batch.fwd_in, enc, batch.src_lengths, tgt_embedding, decoder, config);
    return cross_entropy(logits, std::span<const int>(batch.fwd_out.data(), static_cast<std::size_t>(batch.fwd_out.size())),
                         kPadId);
  }
};

// Mean training loss per epoch for the reference model, following the same
// batch plan, clipping, schedule and Adam updates as train().
template <typename Scalar>
std::vector<double> reference_train_losses(UnidirectionalModel<Scalar>& model, std::span<const EncodedPair> pairs,
                                           const TrainConfig& config, Index max_len) {
  using Array = typename Tensor<Scalar>::Array;
  const ParameterList<Scalar> params = model.parameters();
  for (const auto& p : params) Tensor<Scalar>(p.tensor).set_requires_grad(true);
  OptimState<Scalar> optim = OptimState<Scalar>::for_parameters(params);
  Rng batch_rng = Rng(config.seed).fork(1);
  std::vector<double> losses;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto plan = plan_batches(pairs, config.batch_size, config.chunk_batches, batch_rng);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& indices : plan) {
      std::vector<EncodedPair> rows;
      for (std::size_t idx : indices) rows.push_back(pairs[idx]);
      const TrainBatch batch = make_train_batch(rows, max_len);
      if (batch.empty()) continue;
      for (const auto& p : params) Tensor<Scalar>(p.tensor).zero_grad();
      Tape<Scalar> tape;
      TapeScope<Scalar> scope(tape);
      const Tensor<Scalar> loss = model.loss(batch);
      tape.backward(loss);
      std::vector<Array> grads;
      for (const auto& p : params) grads.push_back(p.tensor.grad());
      if (config.clip_norm > 0.0) clip_grad_norm<Scalar>(grads, config.clip_norm);
      adam_step<Scalar>(params, grads, optim,
                        config.lr_scale * lr_schedule(optim.step + 1, model.config.d_model, config.warmup));
      sum += static_cast<double>(loss.item());
      ++count;
    }
    losses.push_back(count == 0 ? 0.0 : sum / static_cast<double>(count));
  }
  for (const auto& p : params) Tensor<Scalar>(p.tensor).set_requires_grad(false);
  return losses;
}

}  // namespace asbd::testing

#endif  // ASBD_TESTS_REFERENCE_MODEL_HPP
