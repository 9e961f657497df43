#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "kplab/tensor.hpp"

namespace kplab {

class Gradients;

// Append-only record of one forward pass. Node order is execution order, so
// a reverse sweep is a valid topological traversal.
class Tape {
 public:
  // grad_in[i] is empty when input i is untracked; otherwise it is the
  // accumulation buffer for that input's gradient.
  using BackwardFn =
      std::function<void(std::span<const double> grad_out, std::span<const std::span<double>> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  // Leaf node sharing t's values. Gradients for it are reported by backward().
  Tensor watch(const Tensor& t);

  // Registers an op output. Returns `value` unchanged when no input is
  // tracked, so untracked computation never allocates tape state.
  static Tensor record(Tensor value, std::initializer_list<const Tensor*> inputs, BackwardFn fn);

  Gradients backward(const Tensor& loss) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::ptrdiff_t> inputs;  // -1 for untracked inputs
    BackwardFn fn;                       // empty for leaves
    Shape shape;
  };
  std::vector<Node> nodes_;

  friend class Gradients;
};

// Result of one backward sweep: gradient buffers keyed by tape node.
class Gradients {
 public:
  bool has(const Tensor& t) const;
  // Throws MissingGradient when t is not reachable from the loss.
  Tensor of(const Tensor& t) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
  std::vector<Shape> shapes_;
};

// Free-function spelling of Tape::backward; throws NoTape for untracked loss.
Gradients backward(const Tensor& loss);

}  // namespace kplab
