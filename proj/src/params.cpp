#include "kplab/params.hpp"

#include <cmath>

namespace kplab {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
  auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

void ParamSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw Error(ErrorKind::InvalidArgument, "duplicate parameter " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(std::move(name), std::move(value));
}

bool ParamSet::contains(const std::string& name) const { return index_.count(name) > 0; }

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "unknown parameter " + name);
  return entries_[it->second].second;
}

Tensor& ParamSet::get_mut(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::InvalidArgument, "unknown parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

ParamSet ParamSet::watched(Tape& tape) const {
  ParamSet out;
  out.index_ = index_;
  out.entries_.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.entries_.emplace_back(name, tape.watch(t));
  return out;
}

std::uint64_t ParamSet::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& [name, t] : entries_) {
    h = fnv1a(name.data(), name.size(), h);
    for (auto e : t.shape()) {
      const std::uint64_t e64 = e;
      h = fnv1a(&e64, sizeof e64, h);
    }
    h = fnv1a(t.ptr(), t.numel() * sizeof(double), h);
  }
  return h;
}

GradMap collect_grads(const Gradients& grads, const ParamSet& watched, bool zero_fill) {
  GradMap out;
  for (const auto& [name, t] : watched.entries()) {
    if (grads.has(t))
      out.emplace(name, grads.of(t));
    else if (zero_fill)
      out.emplace(name, Tensor::zeros(t.shape()));
  }
  return out;
}

void accumulate(GradMap& dst, const GradMap& src, double scale) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      std::vector<double> v(g.data().begin(), g.data().end());
      for (auto& x : v) x *= scale;
      dst.emplace(name, Tensor::wrap(std::move(v), g.shape()));
      continue;
    }
    if (it->second.shape() != g.shape())
      throw Error(ErrorKind::ShapeMismatch, "gradient shape mismatch for " + name);
    auto d = it->second.mutable_data();
    auto s = g.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
  }
}

AdamOptimizer::AdamOptimizer(AdamConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning rate must be positive");
}

void AdamOptimizer::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "learning rate must be positive");
  config_.learning_rate = lr;
}

void AdamOptimizer::step(ParamSet& params, const GradMap& grads) {
  for (const auto& [name, t] : params.entries()) {
    auto it = grads.find(name);
    if (it == grads.end()) throw Error(ErrorKind::MissingGradient, "no gradient for parameter " + name);
    if (it->second.shape() != t.shape())
      throw Error(ErrorKind::ShapeMismatch, "gradient shape mismatch for " + name);
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& [name, param] : params.entries()) {
    auto g = grads.at(name).data();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    auto p = param.mutable_data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

}  // namespace kplab
