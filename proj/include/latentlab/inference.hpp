#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentlab/nn.hpp"
#include "latentlab/vae.hpp"

namespace latentlab {

struct Triple {
  std::string premise1;
  std::string premise2;
  std::string conclusion;
};

// premise1<TAB>premise2<TAB>conclusion, one per line.
std::vector<Triple> read_triples(const std::string& path);
void write_triples(const std::string& path, std::span<const Triple> triples);

// tanh MLP: 2L -> 2L -> 2L -> L.
class InferenceHead {
 public:
  InferenceHead(std::size_t latent_dim, std::uint64_t seed, bool zero_final = false);

  std::size_t latent_dim() const { return latent_dim_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  Tensor operator()(const Tensor& z1, const Tensor& z2) const;

 private:
  std::size_t latent_dim_;
  ParameterStore params_;
  Linear l1_, l2_, l3_;
};

// Deterministic: premises are encoded by their posterior means.
Tensor infer_conclusion_latent(const VaeModel& model, const InferenceHead& head,
                               const std::string& premise1, const std::string& premise2);

// Only the mu/log_var projections and the head are updated.
bool is_inference_trainable(const std::string& vae_param_name);

struct InferenceTrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  OptimizerConfig optimizer{OptimizerKind::kAdam, 1e-3};
  double latent_weight = 1.0;
  double decode_weight = 1.0;
  std::uint64_t seed = 0;
};

struct InferenceLoss {
  Tensor total;
  double decode = 0.0;  // mean per-token CE of the conclusion
  double latent = 0.0;  // MSE(z_c, mu_conclusion)
};

InferenceLoss inference_loss(const VaeModel& model, const InferenceHead& head,
                             std::span<const Triple> batch, const InferenceTrainConfig& config);

// Mean over triples of MSE(z_c, mu_conclusion), no gradients.
double latent_mse(const VaeModel& model, const InferenceHead& head, std::span<const Triple> triples);

// Returns the mean training loss per epoch.
std::vector<double> train_inference(VaeModel& model, InferenceHead& head, std::span<const Triple> triples,
                                    const InferenceTrainConfig& config);

std::string generate_conclusion(const VaeModel& model, const InferenceHead& head,
                                const std::string& premise1, const std::string& premise2);

// exp(mean per-token CE) of the gold conclusions, computed as a geometric mean
// of inverse probabilities.
double perplexity(const VaeModel& model, const InferenceHead& head, std::span<const Triple> triples);

}  // namespace latentlab
