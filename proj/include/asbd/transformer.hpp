#ifndef ASBD_TRANSFORMER_HPP
#define ASBD_TRANSFORMER_HPP

#include "asbd/attention_mask.hpp"
#include "asbd/ops.hpp"
#include "asbd/rng.hpp"
#include "asbd/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace asbd {

// Sizes shared by the encoder and decoder stacks. Post-norm layout.
struct TransformerConfig {
  Index d_model = 64;
  Index n_heads = 4;
  Index d_ff = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  Index max_len = 64;
  double dropout = 0.0;
  double layer_norm_eps = 1e-5;
  // Test switch: without positional encodings the encoder is permutation-equivariant.
  bool use_positional_encoding = true;

  void validate() const;
};

// Dropout source during training; default-constructed means inference.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  double dropout = 0.0;
};

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // [in, out]
  Tensor<Scalar> bias;    // [out], undefined for a bias-free projection

  // weight ~ U(-1/sqrt(in), 1/sqrt(in)), bias = 0.
  static Linear init(Index in, Index out, Rng& rng, bool with_bias = true);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

template <typename Scalar>
struct LayerNormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;

  static LayerNormParams init(Index d);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

template <typename Scalar>
struct FeedForward {
  Linear<Scalar> expand;    // d_model -> d_ff
  Linear<Scalar> contract;  // d_ff -> d_model

  static FeedForward init(Index d_model, Index d_ff, Rng& rng);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

template <typename Scalar>
struct MultiHeadAttention {
  Linear<Scalar> query;
  Linear<Scalar> key;
  Linear<Scalar> value;
  Linear<Scalar> output;

  static MultiHeadAttention init(Index d_model, Rng& rng);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

// y = LayerNorm(x + FFN(x)); the extra blocks stacked on a decoder.
template <typename Scalar>
struct ResidualBlock {
  FeedForward<Scalar> ffn;
  LayerNormParams<Scalar> norm;

  static ResidualBlock init(Index d_model, Index d_ff, Rng& rng);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

template <typename Scalar>
struct EncoderLayer {
  MultiHeadAttention<Scalar> self_attn;
  LayerNormParams<Scalar> norm1;
  FeedForward<Scalar> ffn;
  LayerNormParams<Scalar> norm2;

  static EncoderLayer init(const TransformerConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

template <typename Scalar>
struct DecoderLayer {
  MultiHeadAttention<Scalar> self_attn;
  LayerNormParams<Scalar> norm1;
  MultiHeadAttention<Scalar> cross_attn;
  LayerNormParams<Scalar> norm2;
  FeedForward<Scalar> ffn;
  LayerNormParams<Scalar> norm3;

  static DecoderLayer init(const TransformerConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

template <typename Scalar>
struct EncoderStack {
  std::vector<EncoderLayer<Scalar>> layers;

  static EncoderStack init(const TransformerConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

// Standard decoder layers, then `extra_blocks`, then the vocabulary projection.
template <typename Scalar>
struct DecoderStack {
  std::vector<DecoderLayer<Scalar>> layers;
  std::vector<ResidualBlock<Scalar>> extra_blocks;
  Linear<Scalar> output;

  static DecoderStack init(const TransformerConfig& cfg, int extra_blocks, Index vocab, Rng& rng);
  void collect(const std::string& prefix, ParameterList<Scalar>& out) const;
};

// Embedding table [vocab, d_model] drawn from N(0, d_model^-1/2) (std dev).
template <typename Scalar>
Tensor<Scalar> init_embedding(Index vocab, Index d_model, Rng& rng);

// Sinusoidal table: PE[pos,2i] = sin(pos / 10000^(2i/d)), PE[pos,2i+1] = cos(...).
template <typename Scalar>
Tensor<Scalar> positional_encoding(Index max_len, Index d_model);

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Linear<Scalar>& layer);

template <typename Scalar>
Tensor<Scalar> feed_forward(const Tensor<Scalar>& x, const FeedForward<Scalar>& ffn);

// Scaled dot-product attention per head, concatenated and projected.
// `weights`, when given, receives the [B,H,Tq,Tk] attention weights.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& queries, const Tensor<Scalar>& keys_values,
                                    const AttentionMask& mask, Index heads, const MultiHeadAttention<Scalar>& params,
                                    Tensor<Scalar>* weights = nullptr);

template <typename Scalar>
Tensor<Scalar> residual_block(const Tensor<Scalar>& x, const ResidualBlock<Scalar>& block, double eps = 1e-5);

// Embedding * sqrt(d_model) + positional encoding (when enabled).
template <typename Scalar>
Tensor<Scalar> embed_tokens(const TokenMatrix& ids, const Tensor<Scalar>& table, const TransformerConfig& cfg);

// [B,S] source ids -> [B,S,d_model]. Keys beyond src_lengths[b] are masked.
template <typename Scalar>
Tensor<Scalar> encoder_forward(const TokenMatrix& src_ids, std::span<const Index> src_lengths,
                               const Tensor<Scalar>& src_embedding, const EncoderStack<Scalar>& encoder,
                               const TransformerConfig& cfg, const ForwardContext& ctx = {});

// Final hidden states [B,T,d_model] after the extra blocks, before projection.
template <typename Scalar>
Tensor<Scalar> decoder_hidden(const TokenMatrix& tgt_in_ids, const Tensor<Scalar>& enc_out,
                              std::span<const Index> src_lengths, const Tensor<Scalar>& tgt_embedding,
                              const DecoderStack<Scalar>& decoder, const TransformerConfig& cfg,
                              const ForwardContext& ctx = {});

// [B,T] teacher-forced inputs -> [B,T,vocab] logits under a causal self mask.
template <typename Scalar>
Tensor<Scalar> decoder_forward(const TokenMatrix& tgt_in_ids, const Tensor<Scalar>& enc_out,
                               std::span<const Index> src_lengths, const Tensor<Scalar>& tgt_embedding,
                               const DecoderStack<Scalar>& decoder, const TransformerConfig& cfg,
                               const ForwardContext& ctx = {});

}  // namespace asbd

#endif  // ASBD_TRANSFORMER_HPP
