#include "gstvla/autodiff/tensor.hpp"

#include <sstream>

namespace gstvla::ad {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double fill, bool requires_grad) {
  std::vector<double> v(numel_of(shape), fill);
  return from(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (values.size() != numel_of(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ShapeError("at(r, c) needs a rank-2 tensor, got " + shape_str(shape()));
  return node_->value[r * node_->shape[1] + c];
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(const NodePtr& node) {
  nodes_.push_back(node);
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw TapeError("backward: undefined loss tensor");
  if (loss.numel() != 1) throw TapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  if (consumed_) throw TapeError("backward: tape already consumed; call reset() before a second backward");
  if (nodes_.empty() || !loss.requires_grad()) {
    throw TapeError("backward: loss is not connected to any tensor requiring a gradient");
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.empty() || !n.backward) continue;
    n.backward(n);
  }
  consumed_ = true;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

NoGradGuard::NoGradGuard() : previous_(Tape::current().recording_) { Tape::current().recording_ = false; }

NoGradGuard::~NoGradGuard() { Tape::current().recording_ = previous_; }

void backward(const Tensor& loss) { Tape::current().backward(loss); }

Tensor make_op(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> inputs, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  n->op = op;
  Tape& tape = Tape::current();
  bool needs = false;
  if (tape.recording()) {
    for (const auto& t : inputs) {
      if (t.requires_grad()) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node_ptr());
    n->backward = std::move(fn);
    tape.record(n);
  }
  return Tensor(std::move(n));
}

}  // namespace gstvla::ad
