#include "asbd/bidir_model.hpp"
#include "asbd/errors.hpp"
#include "asbd/gradcheck.hpp"
#include "asbd/ops.hpp"
#include "asbd/rng.hpp"
#include "asbd/transformer.hpp"

namespace asbd {

namespace {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  typename Tensor<Scalar>::Array values(shape_size(shape));
  for (Index k = 0; k < values.size(); ++k) values[k] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return Tensor<Scalar>(std::move(shape), std::move(values));
}

// Scalar loss sum(y * W) with a fixed random W shaped like y.
template <typename Scalar>
class Readout {
 public:
  explicit Readout(std::uint64_t seed) : seed_(seed) {}

  Tensor<Scalar> operator()(const Tensor<Scalar>& y) {
    if (!weights_.defined() || weights_.shape() != y.shape()) {
      Rng rng(seed_);
      weights_ = random_tensor<Scalar>(y.shape(), rng);
    }
    return sum(mul(y, weights_));
  }

 private:
  std::uint64_t seed_;
  Tensor<Scalar> weights_;
};

TokenMatrix random_ids(Index rows, Index cols, int lo, int hi, Rng& rng) {
  TokenMatrix ids(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) ids(r, c) = static_cast<int>(rng.between(lo, hi));
  }
  return ids;
}

// Central differences need f to be smooth within h of the point. Redraws
// (from forks of rng) until every relu input stays kReluMargin away from 0.
constexpr double kReluMargin = 1e-3;
constexpr int kMaxDraws = 200;

template <typename Build>
void draw_smooth(Rng& rng, Build&& build) {
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    Rng r = rng.fork(static_cast<std::uint64_t>(attempt));
    reset_relu_margin();
    build(r);
    if (relu_margin() >= kReluMargin) {
      rng.next_u64();
      return;
    }
  }
  throw NumericError("gradcheck: no draw kept relu inputs away from the kink");
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  return {"matmul",         "matmul_batched", "permute",   "reshape",        "add",
          "add_broadcast",  "mul",            "scale",     "relu",           "sum",
          "softmax",        "log_softmax",    "masked_softmax", "layer_norm", "embedding",
          "cross_entropy",  "dropout",        "linear",    "feed_forward",   "multi_head_attention",
          "residual_block", "encoder_decoder"};
}

template <typename Scalar>
std::vector<GradCheckCase> gradcheck_suite(std::uint64_t seed, double h) {
  Rng rng(seed);
  std::vector<GradCheckCase> out;
  const auto run = [&](const std::string& name, const std::function<Tensor<Scalar>()>& loss,
                       const ParameterList<Scalar>& params) {
    out.push_back({name, grad_check<Scalar>(loss, params, h)});
  };

  {
    auto a = random_tensor<Scalar>({3, 4}, rng);
    auto b = random_tensor<Scalar>({4, 5}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("matmul", [&] { return r(matmul(a, b)); }, {{"a", a}, {"b", b}});
  }
  {
    auto a = random_tensor<Scalar>({2, 2, 3, 4}, rng);
    auto b = random_tensor<Scalar>({2, 2, 4, 3}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("matmul_batched", [&] { return r(matmul(a, b)); }, {{"a", a}, {"b", b}});
  }
  {
    auto x = random_tensor<Scalar>({2, 3, 4}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("permute", [&] { return r(permute(x, {2, 0, 1})); }, {{"x", x}});
  }
  {
    auto x = random_tensor<Scalar>({2, 3, 4}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("reshape", [&] { return r(reshape(x, {6, 4})); }, {{"x", x}});
  }
  {
    auto a = random_tensor<Scalar>({3, 4}, rng);
    auto b = random_tensor<Scalar>({3, 4}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("add", [&] { return r(add(a, b)); }, {{"a", a}, {"b", b}});
  }
  {
    auto x = random_tensor<Scalar>({2, 3, 4}, rng);
    auto y = random_tensor<Scalar>({4}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("add_broadcast", [&] { return r(add_broadcast(x, y)); }, {{"x", x}, {"y", y}});
  }
  {
    auto a = random_tensor<Scalar>({3, 4}, rng);
    auto b = random_tensor<Scalar>({3, 4}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("mul", [&] { return r(mul(a, b)); }, {{"a", a}, {"b", b}});
  }
  {
    auto x = random_tensor<Scalar>({3, 4}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("scale", [&] { return r(scale(x, Scalar(-1.7))); }, {{"x", x}});
  }
  {
    // Keep inputs at least 0.1 from the kink.
    auto x = random_tensor<Scalar>({3, 4}, rng);
    for (Index k = 0; k < x.size(); ++k) {
      auto& v = x.mutable_values()[k];
      if (std::abs(v) < Scalar(0.1)) v = v < 0 ? Scalar(-0.1) : Scalar(0.1);
    }
    Readout<Scalar> r(rng.next_u64());
    run("relu", [&] { return r(relu(x)); }, {{"x", x}});
  }
  {
    auto x = random_tensor<Scalar>({3, 4}, rng);
    run("sum", [&] { return sum(x); }, {{"x", x}});
  }
  {
    auto x = random_tensor<Scalar>({2, 3, 5}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("softmax", [&] { return r(softmax(x, 1)); }, {{"x", x}});
  }
  {
    auto x = random_tensor<Scalar>({2, 3, 5}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("log_softmax", [&] { return r(log_softmax(x, -1)); }, {{"x", x}});
  }
  {
    auto x = random_tensor<Scalar>({2, 2, 3, 4}, rng);
    const std::vector<Index> lengths{4, 2};
    const AttentionMask mask = AttentionMask::padding(lengths, 3, 4) && AttentionMask(2, 3, 4);
    Readout<Scalar> r(rng.next_u64());
    run("masked_softmax", [&] { return r(masked_softmax(x, mask)); }, {{"x", x}});
  }
  {
    auto x = random_tensor<Scalar>({2, 3, 6}, rng);
    auto gamma = random_tensor<Scalar>({6}, rng);
    auto beta = random_tensor<Scalar>({6}, rng);
    Readout<Scalar> r(rng.next_u64());
    run("layer_norm", [&] { return r(layer_norm(x, gamma, beta)); }, {{"x", x}, {"gamma", gamma}, {"beta", beta}});
  }
  {
    auto table = random_tensor<Scalar>({6, 4}, rng);
    const TokenMatrix ids = random_ids(2, 5, 0, 5, rng);
    Readout<Scalar> r(rng.next_u64());
    run("embedding", [&] { return r(embedding_lookup(table, ids)); }, {{"table", table}});
  }
  {
    auto logits = random_tensor<Scalar>({2, 3, 5}, rng);
    const std::vector<int> targets{1, 4, 0, 2, 0, 3};
    run("cross_entropy", [&] { return cross_entropy(logits, targets, 0); }, {{"logits", logits}});
  }
  {
    auto x = random_tensor<Scalar>({3, 5}, rng);
    const std::uint64_t mask_seed = rng.next_u64();
    Readout<Scalar> r(rng.next_u64());
    run("dropout",
        [&] {
          Rng mask_rng(mask_seed);
          return r(dropout(x, 0.4, mask_rng));
        },
        {{"x", x}});
  }
  {
    auto x = random_tensor<Scalar>({2, 3, 4}, rng);
    auto layer = Linear<Scalar>::init(4, 5, rng);
    layer.bias = random_tensor<Scalar>({5}, rng, 0.1);
    Readout<Scalar> r(rng.next_u64());
    ParameterList<Scalar> params{{"x", x}};
    layer.collect("linear", params);
    run("linear", [&] { return r(linear(x, layer)); }, params);
  }
  {
    Tensor<Scalar> x;
    FeedForward<Scalar> ffn;
    draw_smooth(rng, [&](Rng& r) {
      x = random_tensor<Scalar>({2, 3, 4}, r);
      ffn = FeedForward<Scalar>::init(4, 8, r);
      return feed_forward(x, ffn);
    });
    Readout<Scalar> r(rng.next_u64());
    ParameterList<Scalar> params{{"x", x}};
    ffn.collect("ffn", params);
    run("feed_forward", [&] { return r(feed_forward(x, ffn)); }, params);
  }
  {
    auto q = random_tensor<Scalar>({2, 3, 8}, rng);
    auto kv = random_tensor<Scalar>({2, 4, 8}, rng);
    auto mha = MultiHeadAttention<Scalar>::init(8, rng);
    const std::vector<Index> lengths{4, 3};
    const AttentionMask mask = AttentionMask::padding(lengths, 3, 4);
    Readout<Scalar> r(rng.next_u64());
    ParameterList<Scalar> params{{"queries", q}, {"keys_values", kv}};
    mha.collect("mha", params);
    run("multi_head_attention", [&] { return r(multi_head_attention(q, kv, mask, 2, mha)); }, params);
  }
  {
    Tensor<Scalar> x;
    ResidualBlock<Scalar> block;
    draw_smooth(rng, [&](Rng& r) {
      x = random_tensor<Scalar>({2, 3, 6}, r);
      block = ResidualBlock<Scalar>::init(6, 12, r);
      return residual_block(x, block);
    });
    Readout<Scalar> r(rng.next_u64());
    ParameterList<Scalar> params{{"x", x}};
    block.collect("block", params);
    run("residual_block", [&] { return r(residual_block(x, block)); }, params);
  }
  {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.src_vocab = 7;
    cfg.tgt_vocab = 7;
    cfg.max_len = 8;
    const std::vector<EncodedPair> pairs{{{4, 5, 6, 4}, {5, 6, 4}}, {{6, 5}, {4, 4}}};
    const TrainBatch batch = make_train_batch(pairs, cfg.max_len);
    BidirModel<Scalar> model;
    draw_smooth(rng, [&](Rng& r) {
      cfg.seed = r.next_u64();
      model = init_model<Scalar>(cfg);
      return joint_loss(forward_pass(model, batch), batch, cfg.loss_weight_lambda);
    });
    run("encoder_decoder",
        [&] { return joint_loss(forward_pass(model, batch), batch, cfg.loss_weight_lambda); },
        model.parameters());
  }
  return out;
}

template std::vector<GradCheckCase> gradcheck_suite<float>(std::uint64_t, double);
template std::vector<GradCheckCase> gradcheck_suite<double>(std::uint64_t, double);

}  // namespace asbd
