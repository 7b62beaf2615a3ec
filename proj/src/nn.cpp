#include "latentlab/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "latentlab/ops.hpp"

namespace latentlab {

Tensor ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  entries_.emplace_back(std::move(name), value);
  return value;
}

Tensor ParameterStore::normal(std::string name, Shape shape, double stddev, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  return add(std::move(name), Tensor::from_vector(std::move(shape), rng.normal_vector(n, stddev)));
}

Tensor ParameterStore::zeros(std::string name, Shape shape) {
  return add(std::move(name), Tensor::zeros(std::move(shape)));
}

Tensor ParameterStore::ones(std::string name, Shape shape) {
  return add(std::move(name), Tensor::full(std::move(shape), 1.0));
}

const Tensor* ParameterStore::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return &t;
  return nullptr;
}

Tensor& ParameterStore::at(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter: " + name);
}

const Tensor& ParameterStore::at(const std::string& name) const {
  if (const Tensor* t = find(name)) return *t;
  throw std::out_of_range("unknown parameter: " + name);
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParameterStore::set_requires_grad(const std::function<bool(const std::string&)>& pred) {
  for (auto& [name, t] : entries_) t.set_requires_grad(pred(name));
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t.to_vector());
  return out;
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, double stddev) {
  if (stddev < 0.0) stddev = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = stddev == 0.0 ? store.zeros(name + ".w", {in, out})
                           : store.normal(name + ".w", {in, out}, stddev, rng);
  l.bias = store.zeros(name + ".b", {out});
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t width) {
  return LayerNorm{store.ones(name + ".g", {width}), store.zeros(name + ".b", {width})};
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  return add(mul(layer_norm_last(x), gain), bias);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  std::vector<double> mask(x.numel());
  const double keep = 1.0 - rate;
  for (auto& m : mask) m = rng.uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor::from_vector(x.shape(), std::move(mask)));
}

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw DataError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string optimizer_name(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

void Optimizer::step(ParameterStore& params) {
  ++t_;
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
  }
  const double lr = config_.learning_rate;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t idx = 0;
  for (auto& [name, p] : params) {
    const std::size_t i = idx++;
    if (!p.requires_grad() || !p.has_grad()) continue;
    auto w = p.mutable_values();
    auto g = p.grad();
    if (config_.kind == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
      continue;
    }
    auto& m = m_[i];
    auto& v = v_[i];
    if (m.size() != w.size()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.epsilon);
    }
  }
}

}  // namespace latentlab
