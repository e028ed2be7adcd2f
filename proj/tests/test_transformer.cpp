#include "asbd/bidir_model.hpp"
#include "asbd/errors.hpp"
#include "asbd/ops.hpp"
#include "asbd/transformer.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace asbd;

namespace {

using T = Tensor<double>;

T random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  T::Array v(shape_size(shape));
  for (Index k = 0; k < v.size(); ++k) v[k] = rng.normal(0.0, stddev);
  return T(std::move(shape), std::move(v));
}

TransformerConfig tiny_transformer() {
  TransformerConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.n_enc_layers = 2;
  cfg.n_dec_layers = 2;
  cfg.max_len = 10;
  return cfg;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.src_vocab = 11;
  cfg.tgt_vocab = 9;
  cfg.max_len = 10;
  cfg.seed = 21;
  return cfg;
}

TokenMatrix row(std::initializer_list<int> ids) {
  TokenMatrix m(1, static_cast<Index>(ids.size()));
  Index k = 0;
  for (int id : ids) m(0, k++) = id;
  return m;
}

}  // namespace

TEST_SUITE("transformer") {

TEST_CASE("positional encoding values") {
  const T pe = positional_encoding<double>(16, 8);
  CHECK(pe.shape() == Shape{16, 8});
  for (Index i = 0; i < 4; ++i) {
    CHECK(pe.at({0, 2 * i}) == 0.0);
    CHECK(pe.at({0, 2 * i + 1}) == 1.0);
  }
  CHECK(std::abs(pe.at({1, 0}) - std::sin(1.0)) < 1e-15);
  CHECK(std::abs(pe.at({1, 0}) - 0.84147) < 1e-5);
  CHECK(std::abs(pe.at({3, 5}) - std::cos(3.0 / std::pow(10000.0, 4.0 / 8.0))) < 1e-12);
  CHECK(pe.values().abs().maxCoeff() <= 1.0);
  CHECK_THROWS_AS(positional_encoding<double>(4, 7), ConfigError);
}

TEST_CASE("attention over identical values returns the projected value") {
  Rng rng(1);
  const auto mha = MultiHeadAttention<double>::init(8, rng);
  const T q = random_tensor({1, 3, 8}, rng);
  const T v = random_tensor({1, 1, 8}, rng);
  T kv = T::zeros({1, 4, 8});
  for (Index t = 0; t < 4; ++t) kv.mutable_values().segment(t * 8, 8) = v.values();
  const T out = multi_head_attention(q, kv, AttentionMask(1, 3, 4), 2, mha);

  // (v Wv + bv) Wo + bo by hand
  const Eigen::RowVectorXd vrow = v.values().matrix().transpose();
  const Eigen::RowVectorXd projected = vrow * mha.value.weight.matrix() + mha.value.bias.values().matrix().transpose();
  const Eigen::RowVectorXd expected =
      projected * mha.output.weight.matrix() + mha.output.bias.values().matrix().transpose();
  for (Index t = 0; t < 3; ++t) {
    for (Index c = 0; c < 8; ++c) CHECK(std::abs(out.at({0, t, c}) - expected[c]) < 1e-12);
  }
}

TEST_CASE("causal attention: first query puts all weight on the first key") {
  Rng rng(2);
  const auto mha = MultiHeadAttention<double>::init(8, rng);
  const T x = random_tensor({2, 5, 8}, rng);
  T weights;
  multi_head_attention(x, x, AttentionMask::causal(2, 5), 2, mha, &weights);
  CHECK(weights.shape() == Shape{2, 2, 5, 5});
  for (Index b = 0; b < 2; ++b) {
    for (Index h = 0; h < 2; ++h) {
      CHECK(weights.at({b, h, 0, 0}) == 1.0);
      for (Index q = 0; q < 5; ++q) {
        double total = 0.0;
        for (Index k = 0; k < 5; ++k) {
          total += weights.at({b, h, q, k});
          if (k > q) CHECK(weights.at({b, h, q, k}) == 0.0);
        }
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("padding mask gives zero weight to padded keys") {
  Rng rng(3);
  const auto mha = MultiHeadAttention<double>::init(8, rng);
  const T q = random_tensor({2, 3, 8}, rng);
  const T kv = random_tensor({2, 4, 8}, rng);
  const std::vector<Index> lengths{4, 2};
  T weights;
  multi_head_attention(q, kv, AttentionMask::padding(lengths, 3, 4), 2, mha, &weights);
  for (Index h = 0; h < 2; ++h) {
    for (Index qi = 0; qi < 3; ++qi) {
      CHECK(weights.at({1, h, qi, 2}) == 0.0);
      CHECK(weights.at({1, h, qi, 3}) == 0.0);
      CHECK(std::abs(weights.at({1, h, qi, 0}) + weights.at({1, h, qi, 1}) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("a row with no allowed key is rejected") {
  AttentionMask mask(1, 2, 3);
  for (Index k = 0; k < 3; ++k) mask.set(0, 1, k, false);
  CHECK_FALSE(mask.every_row_attends());
  CHECK_THROWS_AS(masked_softmax(T::zeros({1, 1, 2, 3}), mask), ContractError);
}

TEST_CASE("head count must divide d_model") {
  Rng rng(4);
  const auto mha = MultiHeadAttention<double>::init(8, rng);
  const T x = random_tensor({1, 2, 8}, rng);
  CHECK_THROWS_AS(multi_head_attention(x, x, AttentionMask(1, 2, 2), 3, mha), ConfigError);
  TransformerConfig cfg = tiny_transformer();
  cfg.n_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("residual block with a zero FFN reduces to layer norm") {
  Rng rng(5);
  auto block = ResidualBlock<double>::init(8, 16, rng);
  block.ffn.expand.weight.mutable_values().setZero();
  block.ffn.contract.weight.mutable_values().setZero();
  const T x = random_tensor({2, 3, 8}, rng);
  const T y = residual_block(x, block);
  const T ln = layer_norm(x, block.norm.gamma, block.norm.beta);
  CHECK(y.shape() == x.shape());
  CHECK((y.values() - ln.values()).abs().maxCoeff() < 1e-15);
}

TEST_CASE("decoder stack with zeroed extra blocks equals layer norm of the base hidden states") {
  const TransformerConfig cfg = tiny_transformer();
  Rng rng(6);
  const T src_emb = init_embedding<double>(10, 8, rng);
  const T tgt_emb = init_embedding<double>(10, 8, rng);
  const auto enc = EncoderStack<double>::init(cfg, rng);
  Rng dec_rng(7);
  auto with_blocks = DecoderStack<double>::init(cfg, 2, 10, dec_rng);
  DecoderStack<double> without = with_blocks;
  without.extra_blocks.clear();
  for (auto& b : with_blocks.extra_blocks) {
    b.ffn.expand.weight = T::zeros(b.ffn.expand.weight.shape());
    b.ffn.contract.weight = T::zeros(b.ffn.contract.weight.shape());
  }
  const TokenMatrix src = row({4, 5, 6});
  const std::vector<Index> lengths{3};
  const T enc_out = encoder_forward(src, lengths, src_emb, enc, cfg);
  const TokenMatrix tgt = row({1, 7, 8});
  const T base = decoder_hidden(tgt, enc_out, lengths, tgt_emb, without, cfg);
  const T blocks = decoder_hidden(tgt, enc_out, lengths, tgt_emb, with_blocks, cfg);
  // Post-norm output already has zero mean and unit variance per row, so
  // LN(LN(x)) differs from LN(x) only by the eps term.
  const T ln1 = layer_norm(base, with_blocks.extra_blocks[0].norm.gamma, with_blocks.extra_blocks[0].norm.beta);
  const T ln2 = layer_norm(ln1, with_blocks.extra_blocks[1].norm.gamma, with_blocks.extra_blocks[1].norm.beta);
  CHECK((blocks.values() - ln2.values()).abs().maxCoeff() < 1e-12);
  CHECK((blocks.values() - base.values()).abs().maxCoeff() < 1e-4);
}

TEST_CASE("encoder output shape and padding invariance") {
  const TransformerConfig cfg = tiny_transformer();
  Rng rng(8);
  const T emb = init_embedding<double>(10, 8, rng);
  const auto enc = EncoderStack<double>::init(cfg, rng);
  const std::vector<Index> short_len{3};
  const T plain = encoder_forward(row({4, 5, 6}), short_len, emb, enc, cfg);
  CHECK(plain.shape() == Shape{1, 3, 8});
  const T padded = encoder_forward(row({4, 5, 6, 0, 0}), short_len, emb, enc, cfg);
  CHECK(padded.shape() == Shape{1, 5, 8});
  for (Index t = 0; t < 3; ++t) {
    for (Index c = 0; c < 8; ++c) CHECK(std::abs(plain.at({0, t, c}) - padded.at({0, t, c})) < 1e-5);
  }
}

TEST_CASE("cross-attention ignores padded encoder positions") {
  const TransformerConfig cfg = tiny_transformer();
  Rng rng(9);
  const T src_emb = init_embedding<double>(10, 8, rng);
  const T tgt_emb = init_embedding<double>(10, 8, rng);
  const auto enc = EncoderStack<double>::init(cfg, rng);
  const auto dec = DecoderStack<double>::init(cfg, 1, 10, rng);
  const std::vector<Index> len{2};
  const TokenMatrix tgt = row({1, 5, 6});
  const T enc_a = encoder_forward(row({4, 7}), len, src_emb, enc, cfg);
  T enc_b = encoder_forward(row({4, 7, 9, 9}), len, src_emb, enc, cfg);
  // Scramble the padded encoder rows entirely.
  for (Index k = 2 * 8; k < enc_b.size(); ++k) enc_b.mutable_values()[k] = 1000.0 + static_cast<double>(k);
  const T a = decoder_forward(tgt, enc_a, len, tgt_emb, dec, cfg);
  const T b = decoder_forward(tgt, enc_b, len, tgt_emb, dec, cfg);
  CHECK(a.shape() == Shape{1, 3, 10});
  CHECK((a.values() - b.values()).abs().maxCoeff() < 1e-5);
}

TEST_CASE("without positional encoding the encoder is permutation-equivariant") {
  TransformerConfig cfg = tiny_transformer();
  cfg.use_positional_encoding = false;
  Rng rng(10);
  const T emb = init_embedding<double>(10, 8, rng);
  const auto enc = EncoderStack<double>::init(cfg, rng);
  const std::vector<Index> len{4};
  const T a = encoder_forward(row({4, 5, 6, 7}), len, emb, enc, cfg);
  const T b = encoder_forward(row({6, 4, 7, 5}), len, emb, enc, cfg);
  const int perm[] = {2, 0, 3, 1};  // b position p holds a position perm[p]
  for (Index p = 0; p < 4; ++p) {
    for (Index c = 0; c < 8; ++c) CHECK(std::abs(b.at({0, p, c}) - a.at({0, perm[p], c})) < 1e-9);
  }
}

TEST_CASE("overlength and mismatched inputs are rejected") {
  const TransformerConfig cfg = tiny_transformer();
  Rng rng(11);
  const T emb = init_embedding<double>(10, 8, rng);
  const auto enc = EncoderStack<double>::init(cfg, rng);
  TokenMatrix longer = TokenMatrix::Constant(1, 11, 4);
  const std::vector<Index> len{11};
  CHECK_THROWS_AS(encoder_forward(longer, len, emb, enc, cfg), DimensionError);

  const auto dec = DecoderStack<double>::init(cfg, 1, 10, rng);
  const std::vector<Index> one{2};
  const T enc_out = encoder_forward(row({4, 5}), one, emb, enc, cfg);
  TokenMatrix two_rows = TokenMatrix::Constant(2, 2, 4);
  CHECK_THROWS_AS(decoder_forward(two_rows, enc_out, one, emb, dec, cfg), DimensionError);
}

TEST_CASE("decoders are causal at T=6") {
  const ModelConfig cfg = tiny_model();
  const auto model = init_model<double>(cfg);
  const TokenMatrix src = row({4, 5, 6, 7});
  const std::vector<Index> len{4};
  const T enc_out = encode_batch(model, src, len);
  const TokenMatrix base = row({1, 4, 5, 6, 7, 8});
  for (Direction d : {Direction::forward, Direction::reverse}) {
    const T ref = decode_logits(model, d, base, enc_out, len);
    for (Index j = 1; j < 6; ++j) {
      TokenMatrix changed = base;
      changed(0, j) = base(0, j) == 3 ? 4 : 3;
      const T out = decode_logits(model, d, changed, enc_out, len);
      const Index v = cfg.tgt_vocab;
      for (Index i = 0; i < j; ++i) {
        for (Index c = 0; c < v; ++c) CHECK(out.values()[i * v + c] == ref.values()[i * v + c]);
      }
      bool moved = false;
      for (Index c = 0; c < v; ++c) moved = moved || out.values()[j * v + c] != ref.values()[j * v + c];
      CHECK(moved);
    }
  }
}

}  // TEST_SUITE
