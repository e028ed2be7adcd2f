#include "asbd/transformer.hpp"

#include "asbd/errors.hpp"

#include <cmath>

namespace asbd {

void TransformerConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || d_ff <= 0 || max_len <= 0) {
    throw ConfigError("transformer sizes must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for sinusoidal positional encoding");
  if (n_enc_layers < 0 || n_dec_layers < 0) throw ConfigError("layer counts must be non-negative");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
}

// ---------------------------------------------------------------- init

template <typename Scalar>
Linear<Scalar> Linear<Scalar>::init(Index in, Index out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  typename Tensor<Scalar>::Array w(in * out);
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  Linear layer{Tensor<Scalar>({in, out}, std::move(w), true), {}};
  if (with_bias) layer.bias = Tensor<Scalar>::zeros({out}, true);
  return layer;
}

template <typename Scalar>
void Linear<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename Scalar>
LayerNormParams<Scalar> LayerNormParams<Scalar>::init(Index d) {
  return {Tensor<Scalar>::constant({d}, Scalar(1), true), Tensor<Scalar>::zeros({d}, true)};
}

template <typename Scalar>
void LayerNormParams<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

template <typename Scalar>
FeedForward<Scalar> FeedForward<Scalar>::init(Index d_model, Index d_ff, Rng& rng) {
  auto expand = Linear<Scalar>::init(d_model, d_ff, rng);
  auto contract = Linear<Scalar>::init(d_ff, d_model, rng);
  return {std::move(expand), std::move(contract)};
}

template <typename Scalar>
void FeedForward<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  expand.collect(prefix + ".expand", out);
  contract.collect(prefix + ".contract", out);
}

template <typename Scalar>
MultiHeadAttention<Scalar> MultiHeadAttention<Scalar>::init(Index d_model, Rng& rng) {
  auto q = Linear<Scalar>::init(d_model, d_model, rng);
  // A key bias adds the same q.b to every score of a query row, which the
  // softmax cancels; it would be a parameter with identically zero gradient.
  auto k = Linear<Scalar>::init(d_model, d_model, rng, false);
  auto v = Linear<Scalar>::init(d_model, d_model, rng);
  auto o = Linear<Scalar>::init(d_model, d_model, rng);
  return {std::move(q), std::move(k), std::move(v), std::move(o)};
}

template <typename Scalar>
void MultiHeadAttention<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  output.collect(prefix + ".output", out);
}

template <typename Scalar>
ResidualBlock<Scalar> ResidualBlock<Scalar>::init(Index d_model, Index d_ff, Rng& rng) {
  auto ffn = FeedForward<Scalar>::init(d_model, d_ff, rng);
  return {std::move(ffn), LayerNormParams<Scalar>::init(d_model)};
}

template <typename Scalar>
void ResidualBlock<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  ffn.collect(prefix + ".ffn", out);
  norm.collect(prefix + ".norm", out);
}

template <typename Scalar>
EncoderLayer<Scalar> EncoderLayer<Scalar>::init(const TransformerConfig& cfg, Rng& rng) {
  EncoderLayer layer;
  layer.self_attn = MultiHeadAttention<Scalar>::init(cfg.d_model, rng);
  layer.norm1 = LayerNormParams<Scalar>::init(cfg.d_model);
  layer.ffn = FeedForward<Scalar>::init(cfg.d_model, cfg.d_ff, rng);
  layer.norm2 = LayerNormParams<Scalar>::init(cfg.d_model);
  return layer;
}

template <typename Scalar>
void EncoderLayer<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  self_attn.collect(prefix + ".self_attn", out);
  norm1.collect(prefix + ".norm1", out);
  ffn.collect(prefix + ".ffn", out);
  norm2.collect(prefix + ".norm2", out);
}

template <typename Scalar>
DecoderLayer<Scalar> DecoderLayer<Scalar>::init(const TransformerConfig& cfg, Rng& rng) {
  DecoderLayer layer;
  layer.self_attn = MultiHeadAttention<Scalar>::init(cfg.d_model, rng);
  layer.norm1 = LayerNormParams<Scalar>::init(cfg.d_model);
  layer.cross_attn = MultiHeadAttention<Scalar>::init(cfg.d_model, rng);
  layer.norm2 = LayerNormParams<Scalar>::init(cfg.d_model);
  layer.ffn = FeedForward<Scalar>::init(cfg.d_model, cfg.d_ff, rng);
  layer.norm3 = LayerNormParams<Scalar>::init(cfg.d_model);
  return layer;
}

template <typename Scalar>
void DecoderLayer<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  self_attn.collect(prefix + ".self_attn", out);
  norm1.collect(prefix + ".norm1", out);
  cross_attn.collect(prefix + ".cross_attn", out);
  norm2.collect(prefix + ".norm2", out);
  ffn.collect(prefix + ".ffn", out);
  norm3.collect(prefix + ".norm3", out);
}

template <typename Scalar>
EncoderStack<Scalar> EncoderStack<Scalar>::init(const TransformerConfig& cfg, Rng& rng) {
  EncoderStack stack;
  for (int i = 0; i < cfg.n_enc_layers; ++i) stack.layers.push_back(EncoderLayer<Scalar>::init(cfg, rng));
  return stack;
}

template <typename Scalar>
void EncoderStack<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layers." + std::to_string(i), out);
}

template <typename Scalar>
DecoderStack<Scalar> DecoderStack<Scalar>::init(const TransformerConfig& cfg, int extra_blocks, Index vocab,
                                                Rng& rng) {
  if (extra_blocks < 0) throw ConfigError("extra residual block count must be non-negative");
  DecoderStack stack;
  for (int i = 0; i < cfg.n_dec_layers; ++i) stack.layers.push_back(DecoderLayer<Scalar>::init(cfg, rng));
  for (int i = 0; i < extra_blocks; ++i) {
    stack.extra_blocks.push_back(ResidualBlock<Scalar>::init(cfg.d_model, cfg.d_ff, rng));
  }
  stack.output = Linear<Scalar>::init(cfg.d_model, vocab, rng);
  return stack;
}

template <typename Scalar>
void DecoderStack<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layers." + std::to_string(i), out);
  for (std::size_t i = 0; i < extra_blocks.size(); ++i) {
    extra_blocks[i].collect(prefix + ".extra." + std::to_string(i), out);
  }
  output.collect(prefix + ".output", out);
}

template <typename Scalar>
Tensor<Scalar> init_embedding(Index vocab, Index d_model, Rng& rng) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d_model));
  typename Tensor<Scalar>::Array table(vocab * d_model);
  for (Index i = 0; i < table.size(); ++i) table[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return Tensor<Scalar>({vocab, d_model}, std::move(table), true);
}

// ---------------------------------------------------------------- forward

template <typename Scalar>
Tensor<Scalar> positional_encoding(Index max_len, Index d_model) {
  if (d_model % 2 != 0) throw ConfigError("positional encoding requires an even d_model");
  if (max_len <= 0) throw ConfigError("positional encoding requires max_len >= 1");
  typename Tensor<Scalar>::Array pe(max_len * d_model);
  for (Index pos = 0; pos < max_len; ++pos) {
    for (Index i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = static_cast<Scalar>(std::sin(angle));
      pe[pos * d_model + 2 * i + 1] = static_cast<Scalar>(std::cos(angle));
    }
  }
  return Tensor<Scalar>({max_len, d_model}, std::move(pe));
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Linear<Scalar>& layer) {
  const Index in = layer.weight.dim(0);
  const Index out = layer.weight.dim(1);
  if (x.dim(-1) != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(layer.weight.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = out;
  const Tensor<Scalar> flat = x.rank() == 2 ? x : reshape(x, {x.size() / in, in});
  const Tensor<Scalar> product = matmul(flat, layer.weight);
  const Tensor<Scalar> y = layer.bias.defined() ? add_broadcast(product, layer.bias) : product;
  return x.rank() == 2 ? y : reshape(y, std::move(out_shape));
}

template <typename Scalar>
Tensor<Scalar> feed_forward(const Tensor<Scalar>& x, const FeedForward<Scalar>& ffn) {
  return linear(relu(linear(x, ffn.expand)), ffn.contract);
}

template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& queries, const Tensor<Scalar>& keys_values,
                                    const AttentionMask& mask, Index heads, const MultiHeadAttention<Scalar>& params,
                                    Tensor<Scalar>* weights) {
  if (queries.rank() != 3 || keys_values.rank() != 3) {
    throw DimensionError("attention expects [B,T,d] inputs, got " + shape_str(queries.shape()) + " and " +
                         shape_str(keys_values.shape()));
  }
  const Index batch = queries.dim(0);
  const Index tq = queries.dim(1);
  const Index d = queries.dim(2);
  const Index tk = keys_values.dim(1);
  if (keys_values.dim(0) != batch || keys_values.dim(2) != d) {
    throw DimensionError("attention batch/width mismatch: " + shape_str(queries.shape()) + " vs " +
                         shape_str(keys_values.shape()));
  }
  if (heads <= 0 || d % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  const Index dh = d / heads;

  const auto split = [&](const Tensor<Scalar>& x, Index t) {
    return permute(reshape(x, {batch, t, heads, dh}), {0, 2, 1, 3});
  };
  const Tensor<Scalar> q = split(linear(queries, params.query), tq);
  const Tensor<Scalar> k = split(linear(keys_values, params.key), tk);
  const Tensor<Scalar> v = split(linear(keys_values, params.value), tk);

  const Scalar inv_sqrt = Scalar(1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor<Scalar> scores = scale(matmul(q, transpose(k)), inv_sqrt);
  const Tensor<Scalar> attn = masked_softmax(scores, mask);
  if (weights != nullptr) *weights = attn;
  const Tensor<Scalar> context = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {batch, tq, d});
  return linear(context, params.output);
}

template <typename Scalar>
Tensor<Scalar> residual_block(const Tensor<Scalar>& x, const ResidualBlock<Scalar>& block, double eps) {
  return layer_norm(add(x, feed_forward(x, block.ffn)), block.norm.gamma, block.norm.beta, static_cast<Scalar>(eps));
}

namespace {

template <typename Scalar>
Tensor<Scalar> sublayer_dropout(const Tensor<Scalar>& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0 || ctx.rng == nullptr) return x;
  return dropout(x, ctx.dropout, *ctx.rng);
}

template <typename Scalar>
Tensor<Scalar> add_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& sub, const LayerNormParams<Scalar>& norm,
                        const TransformerConfig& cfg, const ForwardContext& ctx) {
  return layer_norm(add(x, sublayer_dropout(sub, ctx)), norm.gamma, norm.beta, static_cast<Scalar>(cfg.layer_norm_eps));
}

void check_lengths(std::span<const Index> lengths, Index batch, Index width) {
  if (static_cast<Index>(lengths.size()) != batch) {
    throw DimensionError("got " + std::to_string(lengths.size()) + " source lengths for batch of " +
                         std::to_string(batch));
  }
  for (Index len : lengths) {
    if (len < 1 || len > width) throw DimensionError("source length " + std::to_string(len) + " out of range");
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> embed_tokens(const TokenMatrix& ids, const Tensor<Scalar>& table, const TransformerConfig& cfg) {
  if (ids.cols() > cfg.max_len) {
    throw DimensionError("sequence length " + std::to_string(ids.cols()) + " exceeds max_len " +
                         std::to_string(cfg.max_len));
  }
  Tensor<Scalar> x = scale(embedding_lookup(table, ids), Scalar(std::sqrt(static_cast<double>(cfg.d_model))));
  if (cfg.use_positional_encoding) x = add_broadcast(x, positional_encoding<Scalar>(ids.cols(), cfg.d_model));
  return x;
}

template <typename Scalar>
Tensor<Scalar> encoder_forward(const TokenMatrix& src_ids, std::span<const Index> src_lengths,
                               const Tensor<Scalar>& src_embedding, const EncoderStack<Scalar>& encoder,
                               const TransformerConfig& cfg, const ForwardContext& ctx) {
  check_lengths(src_lengths, src_ids.rows(), src_ids.cols());
  const AttentionMask mask = AttentionMask::padding(src_lengths, src_ids.cols(), src_ids.cols());
  Tensor<Scalar> x = sublayer_dropout(embed_tokens(src_ids, src_embedding, cfg), ctx);
  for (const auto& layer : encoder.layers) {
    x = add_norm(x, multi_head_attention(x, x, mask, cfg.n_heads, layer.self_attn), layer.norm1, cfg, ctx);
    x = add_norm(x, feed_forward(x, layer.ffn), layer.norm2, cfg, ctx);
  }
  return x;
}

template <typename Scalar>
Tensor<Scalar> decoder_hidden(const TokenMatrix& tgt_in_ids, const Tensor<Scalar>& enc_out,
                              std::span<const Index> src_lengths, const Tensor<Scalar>& tgt_embedding,
                              const DecoderStack<Scalar>& decoder, const TransformerConfig& cfg,
                              const ForwardContext& ctx) {
  const Index batch = tgt_in_ids.rows();
  const Index t = tgt_in_ids.cols();
  if (enc_out.rank() != 3 || enc_out.dim(0) != batch) {
    throw DimensionError("decoder batch " + std::to_string(batch) + " does not match encoder output " +
                         shape_str(enc_out.shape()));
  }
  check_lengths(src_lengths, batch, enc_out.dim(1));
  const AttentionMask self_mask = AttentionMask::causal(batch, t);
  const AttentionMask cross_mask = AttentionMask::padding(src_lengths, t, enc_out.dim(1));

  Tensor<Scalar> x = sublayer_dropout(embed_tokens(tgt_in_ids, tgt_embedding, cfg), ctx);
  for (const auto& layer : decoder.layers) {
    x = add_norm(x, multi_head_attention(x, x, self_mask, cfg.n_heads, layer.self_attn), layer.norm1, cfg, ctx);
    x = add_norm(x, multi_head_attention(x, enc_out, cross_mask, cfg.n_heads, layer.cross_attn), layer.norm2, cfg,
                 ctx);
    x = add_norm(x, feed_forward(x, layer.ffn), layer.norm3, cfg, ctx);
  }
  for (const auto& block : decoder.extra_blocks) x = add_norm(x, feed_forward(x, block.ffn), block.norm, cfg, ctx);
  return x;
}

template <typename Scalar>
Tensor<Scalar> decoder_forward(const TokenMatrix& tgt_in_ids, const Tensor<Scalar>& enc_out,
                               std::span<const Index> src_lengths, const Tensor<Scalar>& tgt_embedding,
                               const DecoderStack<Scalar>& decoder, const TransformerConfig& cfg,
                               const ForwardContext& ctx) {
  return linear(decoder_hidden(tgt_in_ids, enc_out, src_lengths, tgt_embedding, decoder, cfg, ctx), decoder.output);
}

#define ASBD_INSTANTIATE_TRANSFORMER(S)                                                                            \
  template struct Linear<S>;                                                                                      \
  template struct LayerNormParams<S>;                                                                             \
  template struct FeedForward<S>;                                                                                 \
  template struct MultiHeadAttention<S>;                                                                          \
  template struct ResidualBlock<S>;                                                                               \
  template struct EncoderLayer<S>;                                                                                \
  template struct DecoderLayer<S>;                                                                                \
  template struct EncoderStack<S>;                                                                                \
  template struct DecoderStack<S>;                                                                                \
  template Tensor<S> init_embedding<S>(Index, Index, Rng&);                                                       \
  template Tensor<S> positional_encoding<S>(Index, Index);                                                        \
  template Tensor<S> linear(const Tensor<S>&, const Linear<S>&);                                                 \
  template Tensor<S> feed_forward(const Tensor<S>&, const FeedForward<S>&);                                      \
  template Tensor<S> multi_head_attention(const Tensor<S>&, const Tensor<S>&, const AttentionMask&, Index,        \
                                          const MultiHeadAttention<S>&, Tensor<S>*);                              \
  template Tensor<S> residual_block(const Tensor<S>&, const ResidualBlock<S>&, double);                          \
  template Tensor<S> embed_tokens(const TokenMatrix&, const Tensor<S>&, const TransformerConfig&);                \
  template Tensor<S> encoder_forward(const TokenMatrix&, std::span<const Index>, const Tensor<S>&,               \
                                     const EncoderStack<S>&, const TransformerConfig&, const ForwardContext&);    \
  template Tensor<S> decoder_hidden(const TokenMatrix&, const Tensor<S>&, std::span<const Index>,                \
                                    const Tensor<S>&, const DecoderStack<S>&, const TransformerConfig&,          \
                                    const ForwardContext&);                                                       \
  template Tensor<S> decoder_forward(const TokenMatrix&, const Tensor<S>&, std::span<const Index>,               \
                                     const Tensor<S>&, const DecoderStack<S>&, const TransformerConfig&,         \
                                     const ForwardContext&);

ASBD_INSTANTIATE_TRANSFORMER(float)
ASBD_INSTANTIATE_TRANSFORMER(double)

#undef ASBD_INSTANTIATE_TRANSFORMER

}  // namespace asbd
