#include "asbd/ops.hpp"

#include "asbd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace asbd {

namespace {

template <typename Scalar>
using ArrayOf = typename Tensor<Scalar>::Array;

template <typename Scalar>
using MatrixOf = typename Tensor<Scalar>::Matrix;

template <typename Scalar>
using Map = Eigen::Map<MatrixOf<Scalar>>;

template <typename Scalar>
using ConstMap = Eigen::Map<const MatrixOf<Scalar>>;

template <typename Scalar>
bool should_record(std::initializer_list<const Tensor<Scalar>*> inputs) {
  if (Tape<Scalar>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<Scalar>* t) { return t->requires_grad(); });
}

template <typename Scalar>
Tensor<Scalar> make_output(const char* op, Shape shape, ArrayOf<Scalar> values, bool record) {
  if (!values.allFinite()) throw NumericError(std::string(op) + ": non-finite value in output");
  return Tensor<Scalar>(std::move(shape), std::move(values), record);
}

template <typename Scalar>
void record(const char* op, const Tensor<Scalar>& out, const std::vector<Tensor<Scalar>>& inputs,
            typename Tape<Scalar>::BackwardFn fn) {
  Tape<Scalar>::active()->record(op, out, inputs, std::move(fn));
}

int normalize_axis(int axis, int rank, const Shape& shape) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw IndexError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  return a;
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  Index outer = 1;
  Index extent = 1;
  Index inner = 1;
};

AxisSplit split_at(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Scalar>
ArrayOf<Scalar> permute_values(const ArrayOf<Scalar>& in, const Shape& in_shape, const std::vector<int>& axes) {
  const std::size_t r = in_shape.size();
  std::vector<Index> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<Index> stride_for_out(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[static_cast<std::size_t>(axes[i])];
    stride_for_out[i] = in_strides[static_cast<std::size_t>(axes[i])];
  }
  ArrayOf<Scalar> out(in.size());
  std::vector<Index> counter(r, 0);
  Index src = 0;
  for (Index dst = 0; dst < in.size(); ++dst) {
    out[dst] = in[src];
    for (std::size_t i = r; i-- > 0;) {
      ++counter[i];
      src += stride_for_out[i];
      if (counter[i] < out_shape[i]) break;
      src -= stride_for_out[i] * out_shape[i];
      counter[i] = 0;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- matmul

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const int ra = a.rank();
  const int rb = b.rank();
  const auto mismatch = [&] {
    return DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  };
  if (ra < 2 || rb < 2 || ra != rb) throw mismatch();
  for (int i = 0; i < ra - 2; ++i) {
    if (a.shape()[static_cast<std::size_t>(i)] != b.shape()[static_cast<std::size_t>(i)]) throw mismatch();
  }
  const Index m = a.dim(-2);
  const Index k = a.dim(-1);
  const Index n = b.dim(-1);
  if (b.dim(-2) != k) throw mismatch();
  const Index batch = a.size() / (m * k);

  Shape out_shape = a.shape();
  out_shape.back() = n;
  ArrayOf<Scalar> c(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    Map<Scalar>(c.data() + i * m * n, m, n).noalias() =
        ConstMap<Scalar>(a.values().data() + i * m * k, m, k) * ConstMap<Scalar>(b.values().data() + i * k * n, k, n);
  }
  const bool rec = should_record<Scalar>({&a, &b});
  Tensor<Scalar> out = make_output<Scalar>("matmul", std::move(out_shape), std::move(c), rec);
  if (rec) {
    record<Scalar>("matmul", out, {a, b}, [a, b, batch, m, k, n](const ArrayOf<Scalar>& g) {
      if (a.requires_grad()) {
        ArrayOf<Scalar> da(a.size());
        for (Index i = 0; i < batch; ++i) {
          Map<Scalar>(da.data() + i * m * k, m, k).noalias() =
              ConstMap<Scalar>(g.data() + i * m * n, m, n) *
              ConstMap<Scalar>(b.values().data() + i * k * n, k, n).transpose();
        }
        accumulate_grad(a, da);
      }
      if (b.requires_grad()) {
        ArrayOf<Scalar> db(b.size());
        for (Index i = 0; i < batch; ++i) {
          Map<Scalar>(db.data() + i * k * n, k, n).noalias() =
              ConstMap<Scalar>(a.values().data() + i * m * k, m, k).transpose() *
              ConstMap<Scalar>(g.data() + i * m * n, m, n);
        }
        accumulate_grad(b, db);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- layout

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  std::vector<int> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expected(static_cast<std::size_t>(r));
  std::iota(expected.begin(), expected.end(), 0);
  if (sorted != expected) throw IndexError("permute axes are not a permutation of " + shape_str(x.shape()));

  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(axes[i])];
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("permute", out_shape, permute_values<Scalar>(x.values(), x.shape(), axes), rec);
  if (rec) {
    std::vector<int> inverse(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i) inverse[static_cast<std::size_t>(axes[i])] = i;
    record<Scalar>("permute", out, {x}, [x, inverse, out_shape](const ArrayOf<Scalar>& g) {
      accumulate_grad(x, permute_values<Scalar>(g, out_shape, inverse));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  const int r = x.rank();
  if (r < 2) throw DimensionError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<int> axes(static_cast<std::size_t>(r));
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[static_cast<std::size_t>(r - 1)], axes[static_cast<std::size_t>(r - 2)]);
  return permute(x, axes);
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("reshape", std::move(shape), x.values(), rec);
  if (rec) {
    record<Scalar>("reshape", out, {x}, [x](const ArrayOf<Scalar>& g) { accumulate_grad(x, g); });
  }
  return out;
}

// ---------------------------------------------------------------- elementwise

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) + " + " + shape_str(b.shape()));
  }
  const bool rec = should_record<Scalar>({&a, &b});
  Tensor<Scalar> out = make_output<Scalar>("add", a.shape(), a.values() + b.values(), rec);
  if (rec) {
    record<Scalar>("add", out, {a, b}, [a, b](const ArrayOf<Scalar>& g) {
      accumulate_grad(a, g);
      accumulate_grad(b, g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add_broadcast(const Tensor<Scalar>& x, const Tensor<Scalar>& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.rbegin(), ys.rend(), xs.rbegin())) {
    throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a trailing shape of " + shape_str(xs));
  }
  const Index block = y.size();
  const Index reps = x.size() / block;
  ArrayOf<Scalar> v(x.size());
  Map<Scalar>(v.data(), reps, block) = ConstMap<Scalar>(x.values().data(), reps, block).rowwise() +
                                       ConstMap<Scalar>(y.values().data(), 1, block).row(0);
  const bool rec = should_record<Scalar>({&x, &y});
  Tensor<Scalar> out = make_output<Scalar>("add_broadcast", xs, std::move(v), rec);
  if (rec) {
    record<Scalar>("add_broadcast", out, {x, y}, [x, y, reps, block](const ArrayOf<Scalar>& g) {
      accumulate_grad(x, g);
      if (y.requires_grad()) {
        ArrayOf<Scalar> dy(block);
        Map<Scalar>(dy.data(), 1, block) = ConstMap<Scalar>(g.data(), reps, block).colwise().sum();
        accumulate_grad(y, dy);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  const bool rec = should_record<Scalar>({&a, &b});
  Tensor<Scalar> out = make_output<Scalar>("mul", a.shape(), a.values() * b.values(), rec);
  if (rec) {
    record<Scalar>("mul", out, {a, b}, [a, b](const ArrayOf<Scalar>& g) {
      if (a.requires_grad()) accumulate_grad(a, ArrayOf<Scalar>(g * b.values()));
      if (b.requires_grad()) accumulate_grad(b, ArrayOf<Scalar>(g * a.values()));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("scale", x.shape(), x.values() * factor, rec);
  if (rec) {
    record<Scalar>("scale", out, {x},
                   [x, factor](const ArrayOf<Scalar>& g) { accumulate_grad(x, ArrayOf<Scalar>(g * factor)); });
  }
  return out;
}

namespace {

thread_local double relu_margin_value = std::numeric_limits<double>::infinity();

}  // namespace

void reset_relu_margin() { relu_margin_value = std::numeric_limits<double>::infinity(); }
double relu_margin() { return relu_margin_value; }

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  if (x.size() > 0) relu_margin_value = std::min(relu_margin_value, static_cast<double>(x.values().abs().minCoeff()));
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("relu", x.shape(), x.values().max(Scalar(0)), rec);
  if (rec) {
    record<Scalar>("relu", out, {x}, [x](const ArrayOf<Scalar>& g) {
      accumulate_grad(x, ArrayOf<Scalar>((x.values() > Scalar(0)).select(g, Scalar(0))));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  ArrayOf<Scalar> v(1);
  v[0] = x.values().sum();
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("sum", Shape{}, std::move(v), rec);
  if (rec) {
    record<Scalar>("sum", out, {x},
                   [x](const ArrayOf<Scalar>& g) { accumulate_grad(x, ArrayOf<Scalar>::Constant(x.size(), g[0])); });
  }
  return out;
}

// ---------------------------------------------------------------- softmax family

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, int axis) {
  const int a = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_at(x.shape(), a);
  const auto& in = x.values();
  ArrayOf<Scalar> y(x.size());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      Scalar mx = in[base];
      for (Index e = 1; e < s.extent; ++e) mx = std::max(mx, in[base + e * s.inner]);
      Scalar total = 0;
      for (Index e = 0; e < s.extent; ++e) {
        const Scalar ex = std::exp(in[base + e * s.inner] - mx);
        y[base + e * s.inner] = ex;
        total += ex;
      }
      for (Index e = 0; e < s.extent; ++e) y[base + e * s.inner] /= total;
    }
  }
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("softmax", x.shape(), std::move(y), rec);
  if (rec) {
    record<Scalar>("softmax", out, {x}, [x, out, s](const ArrayOf<Scalar>& g) {
      const auto& yv = out.values();
      ArrayOf<Scalar> dx(yv.size());
      for (Index o = 0; o < s.outer; ++o) {
        for (Index i = 0; i < s.inner; ++i) {
          const Index base = o * s.extent * s.inner + i;
          Scalar dot = 0;
          for (Index e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * yv[base + e * s.inner];
          for (Index e = 0; e < s.extent; ++e) {
            const Index p = base + e * s.inner;
            dx[p] = yv[p] * (g[p] - dot);
          }
        }
      }
      accumulate_grad(x, dx);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& x, int axis) {
  const int a = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_at(x.shape(), a);
  const auto& in = x.values();
  ArrayOf<Scalar> y(x.size());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.extent * s.inner + i;
      Scalar mx = in[base];
      for (Index e = 1; e < s.extent; ++e) mx = std::max(mx, in[base + e * s.inner]);
      Scalar total = 0;
      for (Index e = 0; e < s.extent; ++e) total += std::exp(in[base + e * s.inner] - mx);
      const Scalar log_z = mx + std::log(total);
      for (Index e = 0; e < s.extent; ++e) y[base + e * s.inner] = in[base + e * s.inner] - log_z;
    }
  }
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("log_softmax", x.shape(), std::move(y), rec);
  if (rec) {
    record<Scalar>("log_softmax", out, {x}, [x, out, s](const ArrayOf<Scalar>& g) {
      const auto& yv = out.values();
      ArrayOf<Scalar> dx(yv.size());
      for (Index o = 0; o < s.outer; ++o) {
        for (Index i = 0; i < s.inner; ++i) {
          const Index base = o * s.extent * s.inner + i;
          Scalar gsum = 0;
          for (Index e = 0; e < s.extent; ++e) gsum += g[base + e * s.inner];
          for (Index e = 0; e < s.extent; ++e) {
            const Index p = base + e * s.inner;
            dx[p] = g[p] - std::exp(yv[p]) * gsum;
          }
        }
      }
      accumulate_grad(x, dx);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& scores, const AttentionMask& mask) {
  if (scores.rank() != 4 || scores.dim(0) != mask.batch() || scores.dim(2) != mask.queries() ||
      scores.dim(3) != mask.keys()) {
    throw DimensionError("masked_softmax: scores " + shape_str(scores.shape()) + " incompatible with mask (" +
                         std::to_string(mask.batch()) + ",*," + std::to_string(mask.queries()) + "," +
                         std::to_string(mask.keys()) + ")");
  }
  if (!mask.every_row_attends()) throw ContractError("attention mask has a query row with no allowed key");
  const Index batch = scores.dim(0);
  const Index heads = scores.dim(1);
  const Index tq = scores.dim(2);
  const Index tk = scores.dim(3);
  const auto& in = scores.values();
  ArrayOf<Scalar> y = ArrayOf<Scalar>::Zero(scores.size());
  for (Index b = 0; b < batch; ++b) {
    const auto& plane = mask.plane(b);
    for (Index h = 0; h < heads; ++h) {
      for (Index q = 0; q < tq; ++q) {
        const Index base = ((b * heads + h) * tq + q) * tk;
        Scalar mx = -std::numeric_limits<Scalar>::infinity();
        for (Index k = 0; k < tk; ++k) {
          if (plane(q, k)) mx = std::max(mx, in[base + k]);
        }
        Scalar total = 0;
        for (Index k = 0; k < tk; ++k) {
          if (!plane(q, k)) continue;
          const Scalar ex = std::exp(in[base + k] - mx);
          y[base + k] = ex;
          total += ex;
        }
        for (Index k = 0; k < tk; ++k) y[base + k] /= total;
      }
    }
  }
  const bool rec = should_record<Scalar>({&scores});
  Tensor<Scalar> out = make_output<Scalar>("masked_softmax", scores.shape(), std::move(y), rec);
  if (rec) {
    record<Scalar>("masked_softmax", out, {scores}, [scores, out, tk](const ArrayOf<Scalar>& g) {
      const auto& yv = out.values();
      const Index rows = yv.size() / tk;
      ArrayOf<Scalar> dx(yv.size());
      for (Index r = 0; r < rows; ++r) {
        const auto yr = yv.segment(r * tk, tk);
        const auto gr = g.segment(r * tk, tk);
        const Scalar dot = (yr * gr).sum();
        dx.segment(r * tk, tk) = yr * (gr - dot);
      }
      accumulate_grad(scores, dx);
    });
  }
  return out;
}

// ---------------------------------------------------------------- layer_norm

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps) {
  if (!(eps > Scalar(0))) throw ConfigError("layer_norm eps must be positive");
  const Index d = x.dim(-1);
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: x " + shape_str(x.shape()) + " with gamma " + shape_str(gamma.shape()) +
                         " and beta " + shape_str(beta.shape()));
  }
  const Index rows = x.size() / d;
  const ConstMap<Scalar> xm(x.values().data(), rows, d);
  MatrixOf<Scalar> xhat(rows, d);
  Eigen::Array<Scalar, Eigen::Dynamic, 1> rstd(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = xm.row(r).mean();
    const auto centered = (xm.row(r).array() - mu).eval();
    const Scalar var = centered.square().mean();
    rstd[r] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (centered * rstd[r]).matrix();
  }
  ArrayOf<Scalar> y(x.size());
  Map<Scalar>(y.data(), rows, d) =
      ((xhat.array().rowwise() * gamma.values().transpose()).rowwise() + beta.values().transpose()).matrix();
  const bool rec = should_record<Scalar>({&x, &gamma, &beta});
  Tensor<Scalar> out = make_output<Scalar>("layer_norm", x.shape(), std::move(y), rec);
  if (rec) {
    record<Scalar>("layer_norm", out, {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), rstd, rows, d](const ArrayOf<Scalar>& g) {
                     const ConstMap<Scalar> gm(g.data(), rows, d);
                     if (gamma.requires_grad()) {
                       ArrayOf<Scalar> dg = (gm.array() * xhat.array()).colwise().sum().transpose();
                       accumulate_grad(gamma, dg);
                     }
                     if (beta.requires_grad()) {
                       ArrayOf<Scalar> db = gm.array().colwise().sum().transpose();
                       accumulate_grad(beta, db);
                     }
                     if (x.requires_grad()) {
                       ArrayOf<Scalar> dx(rows * d);
                       Map<Scalar> dxm(dx.data(), rows, d);
                       for (Index r = 0; r < rows; ++r) {
                         const auto dxhat = (gm.row(r).array() * gamma.values().transpose()).eval();
                         const Scalar mean_d = dxhat.mean();
                         const Scalar mean_dx = (dxhat * xhat.row(r).array()).mean();
                         dxm.row(r) = (rstd[r] * (dxhat - mean_d - xhat.row(r).array() * mean_dx)).matrix();
                       }
                       accumulate_grad(x, dx);
                     }
                   });
  }
  return out;
}

// ---------------------------------------------------------------- embedding

namespace {

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& table, std::vector<int> ids, Shape out_shape) {
  if (table.rank() != 2) throw DimensionError("embedding table must be [V,d], got " + shape_str(table.shape()));
  const Index vocab = table.dim(0);
  const Index d = table.dim(1);
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw IndexError("embedding id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  const Index n = static_cast<Index>(ids.size());
  ArrayOf<Scalar> v(n * d);
  const ConstMap<Scalar> tm(table.values().data(), vocab, d);
  Map<Scalar> vm(v.data(), n, d);
  for (Index i = 0; i < n; ++i) vm.row(i) = tm.row(ids[static_cast<std::size_t>(i)]);
  const bool rec = should_record<Scalar>({&table});
  Tensor<Scalar> out = make_output<Scalar>("embedding", std::move(out_shape), std::move(v), rec);
  if (rec) {
    record<Scalar>("embedding", out, {table}, [table, ids = std::move(ids), vocab, d](const ArrayOf<Scalar>& g) {
      ArrayOf<Scalar> dt = ArrayOf<Scalar>::Zero(vocab * d);
      Map<Scalar> dm(dt.data(), vocab, d);
      const ConstMap<Scalar> gm(g.data(), static_cast<Index>(ids.size()), d);
      for (std::size_t i = 0; i < ids.size(); ++i) dm.row(ids[i]) += gm.row(static_cast<Index>(i));
      accumulate_grad(table, dt);
    });
  }
  return out;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, const TokenMatrix& ids) {
  if (ids.size() == 0) throw DimensionError("embedding_lookup: empty id matrix");
  std::vector<int> flat(ids.data(), ids.data() + ids.size());
  return gather_rows(table, std::move(flat), Shape{ids.rows(), ids.cols(), table.dim(-1)});
}

template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const int> ids) {
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  return gather_rows(table, std::vector<int>(ids.begin(), ids.end()),
                     Shape{static_cast<Index>(ids.size()), table.dim(-1)});
}

// ---------------------------------------------------------------- cross_entropy

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets, int ignore_id) {
  const Index vocab = logits.dim(-1);
  const Index rows = logits.size() / vocab;
  if (static_cast<Index>(targets.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " logit rows but " +
                         std::to_string(targets.size()) + " targets");
  }
  const ConstMap<Scalar> lm(logits.values().data(), rows, vocab);
  MatrixOf<Scalar> probs(rows, vocab);
  Index count = 0;
  Scalar total = 0;
  for (Index r = 0; r < rows; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_id) continue;
    if (t < 0 || t >= vocab) {
      throw IndexError("cross_entropy target " + std::to_string(t) + " outside [0, " + std::to_string(vocab) + ")");
    }
    const Scalar mx = lm.row(r).maxCoeff();
    const auto shifted = (lm.row(r).array() - mx).eval();
    const Scalar log_z = std::log(shifted.exp().sum());
    probs.row(r) = (shifted - log_z).exp().matrix();
    total += log_z - shifted[t];
    ++count;
  }
  ArrayOf<Scalar> v(1);
  v[0] = count > 0 ? total / Scalar(count) : Scalar(0);
  const bool rec = should_record<Scalar>({&logits});
  Tensor<Scalar> out = make_output<Scalar>("cross_entropy", Shape{}, std::move(v), rec);
  if (rec) {
    std::vector<int> tgt(targets.begin(), targets.end());
    record<Scalar>("cross_entropy", out, {logits},
                   [logits, tgt = std::move(tgt), probs = std::move(probs), count, rows, vocab,
                    ignore_id](const ArrayOf<Scalar>& g) {
                     ArrayOf<Scalar> dl = ArrayOf<Scalar>::Zero(rows * vocab);
                     if (count > 0) {
                       Map<Scalar> dm(dl.data(), rows, vocab);
                       const Scalar w = g[0] / Scalar(count);
                       for (Index r = 0; r < rows; ++r) {
                         const int t = tgt[static_cast<std::size_t>(r)];
                         if (t == ignore_id) continue;
                         dm.row(r) = probs.row(r) * w;
                         dm(r, t) -= w;
                       }
                     }
                     accumulate_grad(logits, dl);
                   });
  }
  return out;
}

// ---------------------------------------------------------------- dropout

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  ArrayOf<Scalar> keep(x.size());
  for (Index i = 0; i < x.size(); ++i) keep[i] = rng.uniform() < rate ? Scalar(0) : keep_scale;
  const bool rec = should_record<Scalar>({&x});
  Tensor<Scalar> out = make_output<Scalar>("dropout", x.shape(), x.values() * keep, rec);
  if (rec) {
    record<Scalar>("dropout", out, {x},
                   [x, keep](const ArrayOf<Scalar>& g) { accumulate_grad(x, ArrayOf<Scalar>(g * keep)); });
  }
  return out;
}

#define ASBD_INSTANTIATE_OPS(S)                                                                        \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                              \
  template Tensor<S> transpose(const Tensor<S>&);                                                     \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> add_broadcast(const Tensor<S>&, const Tensor<S>&);                               \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                         \
  template Tensor<S> scale(const Tensor<S>&, S);                                                      \
  template Tensor<S> relu(const Tensor<S>&);                                                          \
  template Tensor<S> sum(const Tensor<S>&);                                                           \
  template Tensor<S> softmax(const Tensor<S>&, int);                                                  \
  template Tensor<S> log_softmax(const Tensor<S>&, int);                                              \
  template Tensor<S> masked_softmax(const Tensor<S>&, const AttentionMask&);                          \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);             \
  template Tensor<S> embedding_lookup(const Tensor<S>&, const TokenMatrix&);                          \
  template Tensor<S> embedding_lookup(const Tensor<S>&, std::span<const int>);                        \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>, int);                      \
  template Tensor<S> dropout(const Tensor<S>&, double, Rng&);

ASBD_INSTANTIATE_OPS(float)
ASBD_INSTANTIATE_OPS(double)

#undef ASBD_INSTANTIATE_OPS

}  // namespace asbd
