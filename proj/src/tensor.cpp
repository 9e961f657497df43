#include "kplab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "kplab/tape.hpp"

namespace kplab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::InvalidDistribution: return "InvalidDistribution";
    case ErrorKind::NotScalar: return "NotScalar";
    case ErrorKind::NoTape: return "NoTape";
    case ErrorKind::MissingGradient: return "MissingGradient";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DuplicateEdge: return "DuplicateEdge";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::MissingImageRecord: return "MissingImageRecord";
    case ErrorKind::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::NoLabeledJoints: return "NoLabeledJoints";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::from(std::vector<double> data, Shape shape) {
  if (shape.empty() && data.size() == 1) {
    shape = {1};
  }
  for (auto e : shape)
    if (e == 0) throw Error(ErrorKind::ShapeMismatch, "zero extent in shape " + shape_str(shape));
  if (shape.empty() || shape_numel(shape) != data.size())
    throw Error(ErrorKind::ShapeMismatch, "shape " + shape_str(shape) + " does not hold " +
                                              std::to_string(data.size()) + " values");
  if (!all_finite(data)) throw Error(ErrorKind::NonFinite, "tensor data contains NaN or infinity");
  return wrap(std::move(data), std::move(shape));
}

Tensor Tensor::wrap(std::vector<double> data, Shape shape) {
  return Tensor(std::make_shared<std::vector<double>>(std::move(data)), std::move(shape));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  if (n == 0) throw Error(ErrorKind::ShapeMismatch, "zero extent in shape " + shape_str(shape));
  return wrap(std::vector<double>(n, value), std::move(shape));
}

Tensor Tensor::scalar(double value) { return from({value}, {1}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw Error(ErrorKind::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  return shape_[axis];
}

std::span<const double> Tensor::data() const noexcept {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

std::span<double> Tensor::mutable_data() {
  if (!data_) return {};
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return {data_->data(), data_->size()};
}

double Tensor::item() const {
  if (numel() != 1) throw Error(ErrorKind::NotScalar, "item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2 || r >= shape_[0] || c >= shape_[1])
    throw Error(ErrorKind::IndexOutOfRange, "at(" + std::to_string(r) + "," + std::to_string(c) + ") on " +
                                                shape_str(shape_));
  return (*data_)[r * shape_[1] + c];
}

Tensor Tensor::detach() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw Error(ErrorKind::ShapeMismatch, "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  Tensor t = detach();
  t.shape_ = std::move(shape);
  return t;
}

// ---------------------------------------------------------------------------
// Tape

Tensor Tape::watch(const Tensor& t) {
  if (!t.defined()) throw Error(ErrorKind::InvalidArgument, "watch() on undefined tensor");
  Tensor out = t.detach();
  nodes_.push_back(Node{{}, {}, t.shape()});
  out.tape_ = this;
  out.node_ = nodes_.size() - 1;
  return out;
}

Tensor Tape::record(Tensor value, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  Tape* tape = nullptr;
  for (const Tensor* in : inputs) {
    if (!in->tape_) continue;
    if (tape && tape != in->tape_)
      throw Error(ErrorKind::InvalidArgument, "op inputs belong to different tapes");
    tape = in->tape_;
  }
  if (!tape) return value;
  Node node;
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs)
    node.inputs.push_back(in->tape_ ? static_cast<std::ptrdiff_t>(in->node_) : -1);
  node.fn = std::move(fn);
  node.shape = value.shape();
  tape->nodes_.push_back(std::move(node));
  value.tape_ = tape;
  value.node_ = tape->nodes_.size() - 1;
  return value;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (loss.tape_ != this) throw Error(ErrorKind::NoTape, "loss is not recorded on this tape");
  if (loss.numel() != 1) throw Error(ErrorKind::NotScalar, "loss of shape " + shape_str(loss.shape()));

  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  g.shapes_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) g.shapes_[i] = nodes_[i].shape;
  g.grads_[loss.node_] = {1.0};

  std::vector<std::span<double>> grad_in;
  for (std::size_t idx = loss.node_ + 1; idx-- > 0;) {
    const Node& node = nodes_[idx];
    if (g.grads_[idx].empty() || !node.fn) continue;
    grad_in.assign(node.inputs.size(), std::span<double>{});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto in = node.inputs[k];
      if (in < 0) continue;
      auto& buf = g.grads_[static_cast<std::size_t>(in)];
      if (buf.empty()) buf.assign(shape_numel(nodes_[static_cast<std::size_t>(in)].shape), 0.0);
      grad_in[k] = std::span<double>(buf);
    }
    node.fn(g.grads_[idx], grad_in);
  }
  return g;
}

bool Gradients::has(const Tensor& t) const {
  return t.tape() == tape_ && t.node() < grads_.size() && !grads_[t.node()].empty();
}

Tensor Gradients::of(const Tensor& t) const {
  if (!has(t)) throw Error(ErrorKind::MissingGradient, "tensor is not reachable from the loss");
  return Tensor::wrap(grads_[t.node()], shapes_[t.node()]);
}

Gradients backward(const Tensor& loss) {
  if (!loss.tape()) throw Error(ErrorKind::NoTape, "loss was not computed under a tape");
  return loss.tape()->backward(loss);
}

}  // namespace kplab
