#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "latentlab/random.hpp"
#include "latentlab/tensor.hpp"

namespace latentlab {

// Ordered, named collection of leaf tensors. Names are checkpoint keys.
class ParameterStore {
 public:
  Tensor add(std::string name, Tensor value);
  Tensor normal(std::string name, Shape shape, double stddev, Rng& rng);
  Tensor zeros(std::string name, Shape shape);
  Tensor ones(std::string name, Shape shape);

  const Tensor* find(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  void set_requires_grad(const std::function<bool(const std::string&)>& pred);
  // Deep copy of all values (for freeze/bitwise comparisons).
  std::vector<std::vector<double>> snapshot() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, double stddev = -1.0);
  Tensor operator()(const Tensor& x) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const;
};

// Multiplies by an inverted-dropout mask drawn from rng.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(const std::string& name);
std::string optimizer_name(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Updates every parameter that currently requires grad and holds a gradient.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}
  void step(ParameterStore& params);
  const OptimizerConfig& config() const { return config_; }

 private:
  OptimizerConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace latentlab
