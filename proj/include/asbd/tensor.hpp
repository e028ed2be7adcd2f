#ifndef ASBD_TENSOR_HPP
#define ASBD_TENSOR_HPP

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace asbd {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

std::string shape_str(const Shape& shape);
Index shape_size(const Shape& shape);

// Row-major [batch, time] token ids.
using TokenMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tape;

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> value;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> grad;  // empty until backward touches it
  bool requires_grad = false;
  std::optional<std::size_t> id;
  const void* tape = nullptr;
};

}  // namespace detail

// Dense row-major n-d array with an optional gradient. Copies share the
// underlying node, so a Tensor behaves like a handle onto one value.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  Tensor(Shape shape, Array values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  // Negative axes count from the end.
  Index dim(int axis) const;
  Index size() const { return node_->value.size(); }

  const Array& values() const { return node_->value; }
  // Direct write access for initializers and optimizers. Never call while a
  // live tape still needs this tensor's value for backward.
  Array& mutable_values() { return node_->value; }

  Scalar item() const;
  Scalar at(std::initializer_list<Index> index) const;

  // View as [size / last_dim, last_dim].
  ConstMatrixMap matrix() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  std::optional<std::size_t> node_id() const { return node_->id; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Zeros when no gradient has been written.
  Array grad() const;
  void zero_grad();

  // Fresh leaf with copied values and no gradient.
  Tensor detach() const;

  const std::shared_ptr<detail::Node<Scalar>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<Scalar>> node) : node_(std::move(node)) {}
  friend class Tape<Scalar>;

  std::shared_ptr<detail::Node<Scalar>> node_;
};

// Records primitive ops in execution order and replays them backwards.
// Ops record only while a TapeScope has made the tape active on this thread
// and at least one input requires a gradient.
template <typename Scalar>
class Tape {
 public:
  using Array = typename Tensor<Scalar>::Array;
  using BackwardFn = std::function<void(const Array& grad_output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  // Gradients of every node on the tape are reset, then propagated from
  // `loss` in exact reverse recording order. A tape may run backward once;
  // reset() makes it reusable.
  void backward(const Tensor<Scalar>& loss);

  void reset();
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  const char* op_name(std::size_t id) const { return entries_.at(id).op; }

  void record(const char* op, const Tensor<Scalar>& output, const std::vector<Tensor<Scalar>>& inputs,
              BackwardFn backward);

  static Tape* active();

 private:
  template <typename>
  friend class TapeScope;

  struct Entry {
    const char* op;
    std::shared_ptr<detail::Node<Scalar>> output;
    std::vector<std::shared_ptr<detail::Node<Scalar>>> inputs;
    BackwardFn backward;
  };

  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Makes `tape` the recording target on this thread for the scope's lifetime.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

// Adds `delta` into the gradient of `t` (allocating it on first use).
template <typename Scalar>
void accumulate_grad(const Tensor<Scalar>& t, const typename Tensor<Scalar>::Array& delta);

// Test hook: negate the gradient flowing out of every op named `op` during
// backward. Empty string disables it.
void set_gradient_sign_flip(std::string op);
const std::string& gradient_sign_flip();

// A model's trainable tensors in canonical order, named for diagnostics.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;
};

template <typename Scalar>
using ParameterList = std::vector<Parameter<Scalar>>;

template <typename Scalar>
Index parameter_count(const ParameterList<Scalar>& params) {
  Index n = 0;
  for (const auto& p : params) n += p.tensor.size();
  return n;
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;
extern template class TapeScope<float>;
extern template class TapeScope<double>;

}  // namespace asbd

#endif  // ASBD_TENSOR_HPP
