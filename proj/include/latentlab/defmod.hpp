#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "latentlab/flow.hpp"
#include "latentlab/nn.hpp"
#include "latentlab/vae.hpp"

namespace latentlab {

// concat(w, w, w)
std::vector<double> triple_embed(std::span<const double> w);
// Mean of the three equal-width thirds of v.
std::vector<double> untriple(std::span<const double> v);
// Row-wise tripling of an (N, d) tensor -> (N, 3d).
Tensor triple_rows(const Tensor& w);

// 0.5 * sum_d (z_d - mu_d)^2 / var_d with z = T(words), averaged over rows.
Tensor forward_defmod_loss(const FlowStack& stack, const Tensor& words, const Tensor& mu,
                           const Tensor& var);
// MSE between T^-1(latents) and words.
Tensor reverse_defmod_loss(const FlowStack& stack, const Tensor& latents, const Tensor& words);

struct DefmodPair {
  std::string word;
  std::vector<double> embedding;
  std::string definition;
};

// JSON lines {word, embedding:[...], definition:"..."}.
std::vector<DefmodPair> read_defmod_pairs(const std::string& path);
void write_defmod_pairs(const std::string& path, std::span<const DefmodPair> pairs);

enum class InnDirection { kForward, kReverse };
InnDirection parse_direction(const std::string& name);
std::string direction_name(InnDirection direction);

// Frozen-encoder targets: tripled word embeddings and the definition posteriors.
struct DefmodBatch {
  Tensor words;  // (N, 3d)
  Tensor mu;     // (N, latent)
  Tensor var;    // (N, latent)
};

DefmodBatch prepare_defmod_batch(const VaeModel& vae, std::span<const DefmodPair> pairs);

struct InnTrainConfig {
  InnDirection direction = InnDirection::kForward;
  std::size_t epochs = 100;
  std::size_t batch_size = 0;  // 0 = full batch
  OptimizerConfig optimizer{OptimizerKind::kAdam, 5e-4};
  std::uint64_t seed = 0;
};

struct InnTrainResult {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // full-batch loss after each epoch
};

double defmod_loss_value(const FlowStack& stack, const DefmodBatch& batch, InnDirection direction);

// Trains the stack only; the VAE is read without gradients.
InnTrainResult train_inn(FlowStack& stack, const VaeModel& vae, std::span<const DefmodPair> pairs,
                         const InnTrainConfig& config);

}  // namespace latentlab
