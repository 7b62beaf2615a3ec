#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latentlab/nn.hpp"
#include "latentlab/tensor.hpp"

namespace latentlab {

// K code vectors of dimension D with commitment weight.
struct Codebook {
  Tensor entries;  // (K, D)
  double commitment = 0.25;

  std::size_t size() const { return entries.dim(0); }
  std::size_t dim() const { return entries.dim(1); }
  void validate() const;

  // Seeded standard normal scaled by 0.1.
  static Codebook random(std::size_t size, std::size_t dim, double commitment, Rng& rng);
};

// argmin_j ||e - z_j||, lowest index on ties.
std::size_t nearest_code(const Codebook& codebook, std::span<const double> e);

struct Quantized {
  Tensor z_q;                        // same shape as the input
  std::vector<std::size_t> indices;  // one per row
};

// Straight-through quantization of e, shape (D) or (N, D):
// forward value is the code, backward passes the gradient to e unchanged.
Quantized quantize(const Codebook& codebook, const Tensor& e);

struct VqTerms {
  Tensor codebook;    // mean_rows ||sg[e] - z_k||^2
  Tensor commitment;  // commitment * mean_rows ||e - sg[z_k]||^2
};

VqTerms vq_loss(const Tensor& e, const Codebook& codebook, std::span<const std::size_t> indices);

// Small autoencoder with a vector-quantized bottleneck, used to exercise the
// objective end to end: x -> encoder -> quantize -> decoder -> x.
struct VqAutoencoderConfig {
  std::size_t input_dim = 2;
  std::size_t code_dim = 2;
  std::size_t codebook_size = 4;
  double commitment = 0.25;
  // When false the encoder is the identity (input_dim must equal code_dim).
  bool train_encoder = false;
  OptimizerConfig optimizer{OptimizerKind::kAdam, 1e-2};
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
};

class VqAutoencoder {
 public:
  explicit VqAutoencoder(VqAutoencoderConfig config);

  Tensor encode(const Tensor& x) const;
  const Codebook& codebook() const { return codebook_; }
  ParameterStore& params() { return params_; }

  struct Loss {
    Tensor total;
    double reconstruction = 0.0;
    double codebook = 0.0;
    double commitment = 0.0;
  };
  Loss loss(const Tensor& x) const;
  // Full-batch training; returns per-epoch total loss.
  std::vector<double> train(const Tensor& data);

 private:
  VqAutoencoderConfig config_;
  ParameterStore params_;
  Linear encoder_, decoder_;
  Codebook codebook_;
};

}  // namespace latentlab
