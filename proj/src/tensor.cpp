#include "asbd/tensor.hpp"

#include "asbd/errors.hpp"

#include <sstream>

namespace asbd {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

namespace {

std::string& sign_flip_op() {
  static std::string op;
  return op;
}

template <typename Scalar>
Tape<Scalar>*& active_tape() {
  static thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}

}  // namespace

void set_gradient_sign_flip(std::string op) { sign_flip_op() = std::move(op); }
const std::string& gradient_sign_flip() { return sign_flip_op(); }

// ---------------------------------------------------------------- Tensor

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values, bool requires_grad)
    : node_(std::make_shared<detail::Node<Scalar>>()) {
  const Index n = shape_size(shape);
  if (values.size() != n) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return constant(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value, bool requires_grad) {
  const Index n = shape_size(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_values(Shape shape, std::initializer_list<Scalar> values, bool requires_grad) {
  Array data(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) data[i++] = v;
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw IndexError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape()));
  }
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> index) const {
  if (static_cast<int>(index.size()) != rank()) throw IndexError("index rank mismatch for " + shape_str(shape()));
  Index offset = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= node_->shape[axis]) throw IndexError("index out of range for " + shape_str(shape()));
    offset = offset * node_->shape[axis] + i;
    ++axis;
  }
  return node_->value[offset];
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix() const {
  const Index cols = node_->shape.empty() ? 1 : node_->shape.back();
  return ConstMatrixMap(node_->value.data(), size() / cols, cols);
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

template <typename Scalar>
typename Tensor<Scalar>::Array Tensor<Scalar>::grad() const {
  if (has_grad()) return node_->grad;
  return Array::Zero(size());
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  node_->grad.setZero(size());
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename Scalar>
void accumulate_grad(const Tensor<Scalar>& t, const typename Tensor<Scalar>::Array& delta) {
  auto& node = *t.node();
  if (!node.requires_grad) return;
  if (node.grad.size() != node.value.size()) node.grad.setZero(node.value.size());
  node.grad += delta;
}

// ---------------------------------------------------------------- Tape

template <typename Scalar>
Tape<Scalar>::~Tape() {
  if (active_tape<Scalar>() == this) active_tape<Scalar>() = nullptr;
  reset();
}

template <typename Scalar>
Tape<Scalar>* Tape<Scalar>::active() {
  return active_tape<Scalar>();
}

template <typename Scalar>
void Tape<Scalar>::record(const char* op, const Tensor<Scalar>& output, const std::vector<Tensor<Scalar>>& inputs,
                          BackwardFn backward) {
  if (consumed_) throw ContractError("cannot record on a tape after backward; call reset()");
  Entry entry{op, output.node(), {}, std::move(backward)};
  entry.inputs.reserve(inputs.size());
  for (const auto& in : inputs) entry.inputs.push_back(in.node());
  output.node()->id = entries_.size();
  output.node()->tape = this;
  entries_.push_back(std::move(entry));
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (consumed_) throw ContractError("backward called twice on the same tape");
  consumed_ = true;

  for (auto& e : entries_) {
    for (auto& in : e.inputs) {
      if (in->requires_grad) in->grad.setZero(in->value.size());
    }
    e.output->grad.setZero(e.output->value.size());
  }

  const auto& loss_node = loss.node();
  if (loss_node->tape != this || !loss_node->id) return;  // constant graph: leaf grads stay zero

  loss_node->grad.setConstant(1, Scalar(1));
  const std::string& flip = gradient_sign_flip();
  for (std::size_t k = *loss_node->id + 1; k-- > 0;) {
    Entry& e = entries_[k];
    if (!flip.empty() && flip == e.op) {
      const Array negated = -e.output->grad;
      e.backward(negated);
    } else {
      e.backward(e.output->grad);
    }
  }
}

template <typename Scalar>
void Tape<Scalar>::reset() {
  for (auto& e : entries_) {
    e.output->tape = nullptr;
    e.output->id.reset();
  }
  entries_.clear();
  consumed_ = false;
}

template <typename Scalar>
TapeScope<Scalar>::TapeScope(Tape<Scalar>& tape) : previous_(active_tape<Scalar>()) {
  active_tape<Scalar>() = &tape;
}

template <typename Scalar>
TapeScope<Scalar>::~TapeScope() {
  active_tape<Scalar>() = previous_;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template class TapeScope<float>;
template class TapeScope<double>;
template void accumulate_grad<float>(const Tensor<float>&, const Tensor<float>::Array&);
template void accumulate_grad<double>(const Tensor<double>&, const Tensor<double>::Array&);

}  // namespace asbd
