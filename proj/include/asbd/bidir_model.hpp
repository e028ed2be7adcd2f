#ifndef ASBD_BIDIR_MODEL_HPP
#define ASBD_BIDIR_MODEL_HPP

#include "asbd/data.hpp"
#include "asbd/transformer.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace asbd {

struct ModelConfig {
  Index d_model = 64;
  Index n_heads = 4;
  Index d_ff = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int extra_res_fwd = 2;
  int extra_res_rev = 1;
  Index src_vocab = 0;
  Index tgt_vocab = 0;
  Index max_len = 64;
  double dropout = 0.0;
  double loss_weight_lambda = 0.5;
  std::uint64_t seed = 1;
  bool share_tgt_embedding = true;

  void validate() const;
  TransformerConfig transformer() const;
};

// One encoder shared by a left-to-right decoder and a right-to-left decoder.
// The decoders own separate parameters; with share_tgt_embedding they read
// the same target embedding table.
template <typename Scalar>
struct BidirModel {
  ModelConfig config;
  Tensor<Scalar> src_embedding;
  Tensor<Scalar> tgt_embedding;
  Tensor<Scalar> rev_tgt_embedding;  // defined only when embeddings are not shared
  EncoderStack<Scalar> encoder;
  DecoderStack<Scalar> fwd_decoder;
  DecoderStack<Scalar> rev_decoder;

  const Tensor<Scalar>& reverse_embedding() const {
    return config.share_tgt_embedding ? tgt_embedding : rev_tgt_embedding;
  }

  // Canonical order: src embedding, tgt embedding, encoder, forward decoder,
  // [reverse embedding], reverse decoder. Checkpoints store this order.
  ParameterList<Scalar> parameters() const;
  // Parameters the forward path reads (all but the reverse decoder side).
  ParameterList<Scalar> forward_path_parameters() const;
};

// Parameters drawn in canonical order from Rng(config.seed).
template <typename Scalar>
BidirModel<Scalar> init_model(const ModelConfig& config);

// Closed-form parameter count for a config.
Index expected_parameter_count(const ModelConfig& config);

enum class Direction { forward, reverse };

// Teacher-forcing tensors for both directions. Rows are padded with PAD to
// the batch maximum; tgt_lengths counts content tokens + 1 (BOS or EOS).
struct TrainBatch {
  TokenMatrix src;
  std::vector<Index> src_lengths;
  TokenMatrix fwd_in;
  TokenMatrix fwd_out;
  TokenMatrix rev_in;
  TokenMatrix rev_out;
  std::vector<Index> tgt_lengths;
  std::size_t skipped = 0;    // pairs with an empty side
  std::size_t truncated = 0;  // pairs cut to max_len

  Index rows() const { return src.rows(); }
  bool empty() const { return src.rows() == 0; }
};

// fwd: in=[BOS,t1..tn], out=[t1..tn,EOS]; rev: in=[BOS,tn..t1], out=[tn..t1,EOS].
// Sources are cut to max_len tokens and targets to max_len-1 content tokens.
TrainBatch make_train_batch(std::span<const EncodedPair> pairs, Index max_len);

template <typename Scalar>
struct BidirLogits {
  Tensor<Scalar> forward;  // [B,T,V], undefined when that head was skipped
  Tensor<Scalar> reverse;
};

enum class Heads { both, forward_only, reverse_only };

template <typename Scalar>
Tensor<Scalar> encode_batch(const BidirModel<Scalar>& model, const TokenMatrix& src,
                            std::span<const Index> src_lengths, const ForwardContext& ctx = {});

// Runs one decoder over an already-encoded source.
template <typename Scalar>
Tensor<Scalar> decode_logits(const BidirModel<Scalar>& model, Direction direction, const TokenMatrix& tgt_in,
                             const Tensor<Scalar>& enc_out, std::span<const Index> src_lengths,
                             const ForwardContext& ctx = {});

// Encoder runs once; each requested decoder consumes the same output.
template <typename Scalar>
BidirLogits<Scalar> forward_pass(const BidirModel<Scalar>& model, const TrainBatch& batch, const ForwardContext& ctx = {},
                                 Heads heads = Heads::both);

// lambda * CE(fwd) + (1 - lambda) * CE(rev), PAD ignored. A head whose
// weight is zero is left off the graph (its logits may be undefined).
template <typename Scalar>
Tensor<Scalar> joint_loss(const BidirLogits<Scalar>& logits, const TrainBatch& batch, double lambda);

// Heads needed for a given loss weight.
Heads heads_for_lambda(double lambda);

}  // namespace asbd

#endif  // ASBD_BIDIR_MODEL_HPP
