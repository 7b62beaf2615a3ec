#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latentlab/nn.hpp"
#include "latentlab/random.hpp"
#include "latentlab/tensor.hpp"
#include "latentlab/text.hpp"

namespace latentlab {

enum class Bottleneck { kGaussian, kVq };
enum class BetaMode { kCyclical, kConstant };

struct VaeConfig {
  std::size_t latent_dim = 32;
  std::size_t embed_dim = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t head_dim = 16;
  std::size_t ffn_dim = 64;
  std::size_t max_len = 24;
  std::size_t vocab_size = 0;

  BetaMode beta_mode = BetaMode::kCyclical;
  double beta_constant = 1.0;
  std::size_t beta_cycles = 4;
  double ramp_fraction = 0.5;
  double kl_threshold = 1.0;

  OptimizerConfig optimizer{};
  std::size_t epochs = 30;
  std::size_t batch_size = 8;

  // Freezes decoder layers; the decoder token embedding and output head stay
  // trainable for the first `head_train_epochs` epochs only.
  bool freeze_decoder_hidden = false;
  std::size_t head_train_epochs = 1;

  // Separate key and value memory vectors instead of one shared vector per head.
  bool separate_kv = false;

  Bottleneck bottleneck = Bottleneck::kGaussian;
  std::size_t codebook_size = 16;
  double commitment = 0.25;

  std::uint64_t seed = 0;

  void validate() const;
};

// Diagonal Gaussian q(z|x). Both tensors have shape (latent_dim).
struct GaussianPosterior {
  Tensor mu;
  Tensor log_var;
};

inline constexpr double kLogVarMin = -20.0;
inline constexpr double kLogVarMax = 20.0;

// Latent-derived key/value slots, shape (layers, heads, 2, head_dim).
struct MemoryBank {
  Tensor values;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;

  Tensor key(std::size_t layer, std::size_t head) const;    // (1, head_dim)
  Tensor value(std::size_t layer, std::size_t head) const;  // (1, head_dim)
};

struct DecodeTrace {
  // Row-stochastic attention weights per (layer, head), shape (n, keys).
  std::vector<Tensor> attention;
};

class VaeModel {
 public:
  VaeModel(VaeConfig config, Vocab vocab);

  const VaeConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  GaussianPosterior encode(std::span<const std::size_t> ids) const;
  MemoryBank memory_project(const Tensor& z) const;
  // Logits (n, vocab) for each input position; memory may be null (no injection).
  Tensor decode_teacher_forced(std::span<const std::size_t> ids, const MemoryBank* memory,
                               DecodeTrace* trace = nullptr) const;
  // Greedy decoding from BOS until EOS or max_len generated tokens (EOS included if produced).
  TokenIds generate(const Tensor& z, std::size_t max_len) const;

  // Input token embedding table (vocab, embed_dim) of the encoder.
  const Tensor& input_embeddings() const { return enc_tok_; }
  const Tensor& codebook() const { return codebook_; }

  // Decoder per-layer parameters (and positional/final-norm state).
  static bool is_decoder_hidden(const std::string& name);
  static bool is_decoder_embed_or_head(const std::string& name);

 private:
  struct Block {
    LayerNorm ln1, ln2;
    Tensor wq, wk, wv, wo;
    Linear ff1, ff2;
  };

  Block make_block(const std::string& prefix, Rng& rng);
  Tensor attention(const Block& b, const Tensor& x, bool causal, const MemoryBank* memory,
                   std::size_t layer, DecodeTrace* trace) const;
  Tensor block_forward(const Block& b, const Tensor& x, bool causal, const MemoryBank* memory,
                       std::size_t layer, DecodeTrace* trace) const;

  VaeConfig config_;
  Vocab vocab_;
  ParameterStore params_;

  Tensor enc_tok_, enc_pos_;
  std::vector<Block> enc_blocks_;
  LayerNorm enc_ln_;
  Linear mu_proj_, logvar_proj_;
  Linear memory_proj_;
  Tensor dec_tok_, dec_pos_;
  std::vector<Block> dec_blocks_;
  LayerNorm dec_ln_;
  Linear head_;
  Tensor codebook_;
};

Tensor reparameterize(const GaussianPosterior& posterior, Rng& rng);
// Sum_i 0.5 (mu^2 + sigma^2 - 1 - log sigma^2), scalar.
Tensor kl_diag_gaussian(const GaussianPosterior& posterior);
// beta * max(lambda, kl).
Tensor thresholded_kl(const Tensor& kl, double beta, double lambda);
double beta_schedule(std::size_t step, std::size_t total_steps, std::size_t cycles,
                     double ramp_fraction);

struct VaeLoss {
  Tensor total;
  double ce = 0.0;  // mean per-token cross-entropy
  double kl = 0.0;  // raw batch-mean KL (0 for the VQ bottleneck)
  Tensor kl_tensor;
  double codebook = 0.0;
  double commitment = 0.0;
};

// Teacher-forced reconstruction loss plus beta * max(lambda, KL) (or the VQ terms).
VaeLoss vae_loss(const VaeModel& model, std::span<const TokenIds> batch, double beta,
                 double lambda, Rng& rng);

// Mean per-token cross-entropy of `ids` decoded under memory_project(z).
Tensor reconstruction_ce(const VaeModel& model, std::span<const std::size_t> ids, const Tensor& z);

// Deterministic latent used for evaluation: mu, or the selected code under VQ.
Tensor posterior_mean(const VaeModel& model, std::span<const std::size_t> ids);

struct EpochStats {
  std::size_t epoch = 0;
  double total = 0.0;
  double ce = 0.0;
  double kl = 0.0;
  double beta = 0.0;
};

using VaeStepObserver = std::function<void(std::size_t step, const VaeModel& model)>;

// Trains in place; observer runs after backward, before the parameter update.
std::vector<EpochStats> train_vae(VaeModel& model, std::span<const TokenIds> corpus,
                                  const VaeStepObserver& observer = {});

}  // namespace latentlab
