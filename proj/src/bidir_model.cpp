#include "asbd/bidir_model.hpp"

#include "asbd/errors.hpp"

#include <algorithm>

namespace asbd {

void ModelConfig::validate() const {
  transformer().validate();
  if (extra_res_fwd < 0 || extra_res_rev < 0) throw ConfigError("extra residual block counts must be >= 0");
  if (src_vocab <= kNumReserved || tgt_vocab <= kNumReserved) {
    throw ConfigError("vocabularies must contain at least one token beyond the reserved ids");
  }
  if (!(loss_weight_lambda >= 0.0 && loss_weight_lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
}

TransformerConfig ModelConfig::transformer() const {
  TransformerConfig t;
  t.d_model = d_model;
  t.n_heads = n_heads;
  t.d_ff = d_ff;
  t.n_enc_layers = n_enc_layers;
  t.n_dec_layers = n_dec_layers;
  t.max_len = max_len;
  t.dropout = dropout;
  return t;
}

template <typename Scalar>
ParameterList<Scalar> BidirModel<Scalar>::parameters() const {
  ParameterList<Scalar> out = forward_path_parameters();
  if (!config.share_tgt_embedding) out.push_back({"rev_tgt_embedding", rev_tgt_embedding});
  rev_decoder.collect("rev_decoder", out);
  return out;
}

template <typename Scalar>
ParameterList<Scalar> BidirModel<Scalar>::forward_path_parameters() const {
  ParameterList<Scalar> out;
  out.push_back({"src_embedding", src_embedding});
  out.push_back({"tgt_embedding", tgt_embedding});
  encoder.collect("encoder", out);
  fwd_decoder.collect("fwd_decoder", out);
  return out;
}

template <typename Scalar>
BidirModel<Scalar> init_model(const ModelConfig& config) {
  config.validate();
  const TransformerConfig tc = config.transformer();
  Rng rng(config.seed);
  BidirModel<Scalar> m;
  m.config = config;
  m.src_embedding = init_embedding<Scalar>(config.src_vocab, config.d_model, rng);
  m.tgt_embedding = init_embedding<Scalar>(config.tgt_vocab, config.d_model, rng);
  m.encoder = EncoderStack<Scalar>::init(tc, rng);
  m.fwd_decoder = DecoderStack<Scalar>::init(tc, config.extra_res_fwd, config.tgt_vocab, rng);
  if (!config.share_tgt_embedding) m.rev_tgt_embedding = init_embedding<Scalar>(config.tgt_vocab, config.d_model, rng);
  m.rev_decoder = DecoderStack<Scalar>::init(tc, config.extra_res_rev, config.tgt_vocab, rng);
  return m;
}

Index expected_parameter_count(const ModelConfig& c) {
  const Index d = c.d_model;
  const Index ff = c.d_ff;
  const Index linear_dd = d * d + d;
  const Index attention = 4 * linear_dd - d;  // key projection has no bias
  const Index ffn = (d * ff + ff) + (ff * d + d);
  const Index norm = 2 * d;
  const Index enc_layer = attention + norm + ffn + norm;
  const Index dec_layer = 2 * attention + 3 * norm + ffn;
  const Index block = ffn + norm;
  const Index projection = d * c.tgt_vocab + c.tgt_vocab;
  const Index decoder_stack = c.n_dec_layers * dec_layer + projection;
  const Index tgt_tables = (c.share_tgt_embedding ? 1 : 2) * c.tgt_vocab * d;
  return c.src_vocab * d + tgt_tables + c.n_enc_layers * enc_layer + 2 * decoder_stack +
         (c.extra_res_fwd + c.extra_res_rev) * block;
}

// ---------------------------------------------------------------- batches

TrainBatch make_train_batch(std::span<const EncodedPair> pairs, Index max_len) {
  if (max_len < 2) throw ConfigError("max_len must be >= 2");
  TrainBatch batch;
  std::vector<const EncodedPair*> kept;
  for (const auto& p : pairs) {
    if (p.source.empty() || p.target.empty()) {
      ++batch.skipped;
      continue;
    }
    kept.push_back(&p);
  }
  if (kept.empty()) return batch;

  const auto rows = static_cast<Index>(kept.size());
  Index src_width = 0;
  Index tgt_width = 0;
  for (const auto* p : kept) {
    const Index s = std::min<Index>(static_cast<Index>(p->source.size()), max_len);
    const Index t = std::min<Index>(static_cast<Index>(p->target.size()), max_len - 1);
    if (s < static_cast<Index>(p->source.size()) || t < static_cast<Index>(p->target.size())) ++batch.truncated;
    src_width = std::max(src_width, s);
    tgt_width = std::max(tgt_width, t + 1);
  }
  batch.src = TokenMatrix::Constant(rows, src_width, kPadId);
  batch.fwd_in = TokenMatrix::Constant(rows, tgt_width, kPadId);
  batch.fwd_out = batch.fwd_in;
  batch.rev_in = batch.fwd_in;
  batch.rev_out = batch.fwd_in;
  for (Index r = 0; r < rows; ++r) {
    const auto& p = *kept[static_cast<std::size_t>(r)];
    const Index s = std::min<Index>(static_cast<Index>(p.source.size()), max_len);
    const Index t = std::min<Index>(static_cast<Index>(p.target.size()), max_len - 1);
    for (Index i = 0; i < s; ++i) batch.src(r, i) = p.source[static_cast<std::size_t>(i)];
    batch.src_lengths.push_back(s);
    batch.tgt_lengths.push_back(t + 1);
    batch.fwd_in(r, 0) = kBosId;
    batch.rev_in(r, 0) = kBosId;
    for (Index i = 0; i < t; ++i) {
      const int tok = p.target[static_cast<std::size_t>(i)];
      const int rev_tok = p.target[static_cast<std::size_t>(t - 1 - i)];
      batch.fwd_in(r, i + 1) = tok;
      batch.fwd_out(r, i) = tok;
      batch.rev_in(r, i + 1) = rev_tok;
      batch.rev_out(r, i) = rev_tok;
    }
    batch.fwd_out(r, t) = kEosId;
    batch.rev_out(r, t) = kEosId;
  }
  return batch;
}

// ---------------------------------------------------------------- forward

template <typename Scalar>
Tensor<Scalar> encode_batch(const BidirModel<Scalar>& model, const TokenMatrix& src,
                            std::span<const Index> src_lengths, const ForwardContext& ctx) {
  return encoder_forward(src, src_lengths, model.src_embedding, model.encoder, model.config.transformer(), ctx);
}

template <typename Scalar>
Tensor<Scalar> decode_logits(const BidirModel<Scalar>& model, Direction direction, const TokenMatrix& tgt_in,
                             const Tensor<Scalar>& enc_out, std::span<const Index> src_lengths,
                             const ForwardContext& ctx) {
  const TransformerConfig tc = model.config.transformer();
  if (direction == Direction::forward) {
    return decoder_forward(tgt_in, enc_out, src_lengths, model.tgt_embedding, model.fwd_decoder, tc, ctx);
  }
  return decoder_forward(tgt_in, enc_out, src_lengths, model.reverse_embedding(), model.rev_decoder, tc, ctx);
}

template <typename Scalar>
BidirLogits<Scalar> forward_pass(const BidirModel<Scalar>& model, const TrainBatch& batch, const ForwardContext& ctx,
                                 Heads heads) {
  if (batch.empty()) throw DimensionError("forward_pass on an empty batch");
  if (batch.fwd_in.rows() != batch.rows() || batch.rev_in.rows() != batch.rows()) {
    throw DimensionError("batch source/target row counts differ");
  }
  const Tensor<Scalar> enc_out = encode_batch(model, batch.src, batch.src_lengths, ctx);
  BidirLogits<Scalar> out;
  if (heads != Heads::reverse_only) {
    out.forward = decode_logits(model, Direction::forward, batch.fwd_in, enc_out, batch.src_lengths, ctx);
  }
  if (heads != Heads::forward_only) {
    out.reverse = decode_logits(model, Direction::reverse, batch.rev_in, enc_out, batch.src_lengths, ctx);
  }
  return out;
}

Heads heads_for_lambda(double lambda) {
  if (lambda >= 1.0) return Heads::forward_only;
  if (lambda <= 0.0) return Heads::reverse_only;
  return Heads::both;
}

template <typename Scalar>
Tensor<Scalar> joint_loss(const BidirLogits<Scalar>& logits, const TrainBatch& batch, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  const auto ce = [&](const Tensor<Scalar>& l, const TokenMatrix& targets) {
    if (!l.defined()) throw ContractError("joint_loss needs logits for every head with non-zero weight");
    return cross_entropy(l, std::span<const int>(targets.data(), static_cast<std::size_t>(targets.size())), kPadId);
  };
  if (lambda == 1.0) return scale(ce(logits.forward, batch.fwd_out), Scalar(1));
  if (lambda == 0.0) return scale(ce(logits.reverse, batch.rev_out), Scalar(1));
  return add(scale(ce(logits.forward, batch.fwd_out), static_cast<Scalar>(lambda)),
             scale(ce(logits.reverse, batch.rev_out), static_cast<Scalar>(1.0 - lambda)));
}

#define ASBD_INSTANTIATE_BIDIR(S)                                                                                   \
  template struct BidirModel<S>;                                                                                   \
  template BidirModel<S> init_model<S>(const ModelConfig&);                                                        \
  template Tensor<S> encode_batch(const BidirModel<S>&, const TokenMatrix&, std::span<const Index>,               \
                                  const ForwardContext&);                                                          \
  template Tensor<S> decode_logits(const BidirModel<S>&, Direction, const TokenMatrix&, const Tensor<S>&,         \
                                   std::span<const Index>, const ForwardContext&);                                \
  template BidirLogits<S> forward_pass(const BidirModel<S>&, const TrainBatch&, const ForwardContext&, Heads);     \
  template Tensor<S> joint_loss(const BidirLogits<S>&, const TrainBatch&, double);

ASBD_INSTANTIATE_BIDIR(float)
ASBD_INSTANTIATE_BIDIR(double)

#undef ASBD_INSTANTIATE_BIDIR

}  // namespace asbd
