#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "latentlab/nn.hpp"
#include "latentlab/random.hpp"
#include "latentlab/tensor.hpp"

namespace latentlab {

// Subnetwork m(x_b) -> (log s, t): two-layer perceptron with tanh hidden units.
struct CouplingNet {
  Linear hidden;  // (d/2) -> d
  Linear output;  // d -> d (log s | t), or d -> d/2 (t only) when additive
  bool additive = false;
  double dropout = 0.0;

  // Returns (log_s, t), each (N, d/2). log_s is zero for additive couplings.
  std::pair<Tensor, Tensor> operator()(const Tensor& x_b, Rng* dropout_rng = nullptr) const;
};

struct FlowOutput {
  Tensor value;   // (N, d)
  Tensor logdet;  // (N, 1)
};

// y_b = x_b, y_a = exp(log s) * x_a + t; logdet = sum log s.
FlowOutput coupling_forward(const Tensor& x, const CouplingNet& net, Rng* dropout_rng = nullptr);
// x_b = y_b, x_a = (y_a - t) / exp(log s).
Tensor coupling_inverse(const Tensor& y, const CouplingNet& net);

struct ActNorm {
  Tensor log_scale;  // (d)
  Tensor bias;       // (d)
  bool initialized = false;

  FlowOutput forward(const Tensor& x) const;
  Tensor inverse(const Tensor& y) const;
  // Sets scale/bias so `batch` maps to zero mean and unit variance per dimension.
  void initialize(const Tensor& batch);
};

// Applies the permutation to the last axis; inverse_permutation undoes it.
std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm);

struct FlowBlock {
  ActNorm actnorm;
  CouplingNet coupling;
  std::vector<std::size_t> permutation;
  std::vector<std::size_t> inverse;

  FlowOutput forward(const Tensor& x, Rng* dropout_rng = nullptr) const;
  Tensor backward_map(const Tensor& y) const;
};

struct FlowConfig {
  std::size_t dim = 4;
  std::size_t depth = 20;
  bool additive = false;
  double dropout = 0.0;  // 0.5 reproduces the reference subnetwork; off for determinism
  // Scale of the coupling output-layer initialization, relative to 1/sqrt(dim).
  double coupling_init = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Ordered ActNorm -> coupling -> permutation blocks with exact inverse.
class FlowStack {
 public:
  explicit FlowStack(FlowConfig config);

  const FlowConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t depth() const { return blocks_.size(); }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  FlowBlock& block(std::size_t i) { return blocks_.at(i); }
  const FlowBlock& block(std::size_t i) const { return blocks_.at(i); }

  // x: (N, d) or (d). Returns z and per-row total logdet.
  FlowOutput forward(const Tensor& x, Rng* dropout_rng = nullptr) const;
  Tensor inverse(const Tensor& z) const;

  bool actnorm_initialized() const;
  // Data-dependent initialization of every block, propagating the batch forward.
  void initialize_actnorm(const Tensor& batch);
  // Marks ActNorm state as initialized (after loading a checkpoint).
  void mark_initialized();

 private:
  FlowConfig config_;
  ParameterStore params_;
  std::vector<FlowBlock> blocks_;
};

// mean_rows( 0.5 ||T(x)||^2 - log|det J_T(x)| )
Tensor inn_nll_loss(const FlowStack& stack, const Tensor& batch);

}  // namespace latentlab
