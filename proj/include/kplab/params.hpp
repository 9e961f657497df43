#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kplab/tape.hpp"
#include "kplab/tensor.hpp"

namespace kplab {

// Ordered, named parameter tensors. Order is insertion order and defines the
// checkpoint layout and the optimizer's iteration order.
class ParamSet {
 public:
  void add(std::string name, Tensor value);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);

  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t scalar_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }

  // Copy with every tensor watched on `tape`.
  ParamSet watched(Tape& tape) const;
  // FNV-1a over names, shapes and the raw bytes of every value.
  std::uint64_t hash() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

using GradMap = std::map<std::string, Tensor>;

// Gradients of a watched ParamSet, keyed by parameter name. Unreached
// parameters get zero gradients when `zero_fill` is set, and are omitted
// otherwise.
GradMap collect_grads(const Gradients& grads, const ParamSet& watched, bool zero_fill = true);

// Accumulates `src` into `dst` (dst += scale * src), creating entries as needed.
void accumulate(GradMap& dst, const GradMap& src, double scale = 1.0);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam. Moment buffers are created zeroed on first sight of a
// parameter name.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamConfig config = {});

  // Throws MissingGradient if any parameter lacks a gradient.
  void step(ParamSet& params, const GradMap& grads);

  const AdamConfig& config() const noexcept { return config_; }
  std::uint64_t step_count() const noexcept { return step_count_; }
  void set_learning_rate(double lr);

 private:
  AdamConfig config_;
  std::uint64_t step_count_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 1469598103934665603ull);

}  // namespace kplab
