#include "latentlab/vq.hpp"

#include <cmath>
#include <limits>

#include "latentlab/ops.hpp"

namespace latentlab {

void Codebook::validate() const {
  if (!entries.defined() || entries.ndim() != 2) throw ShapeError("codebook: entries must be (K, D)");
  if (size() < 2) throw DataError("codebook: needs K >= 2 entries");
  if (commitment < 0.0) throw DataError("codebook: commitment weight must be >= 0");
  for (double v : entries.values())
    if (!std::isfinite(v)) throw NumericError("codebook: non-finite entry");
}

Codebook Codebook::random(std::size_t size, std::size_t dim, double commitment, Rng& rng) {
  Codebook cb;
  cb.entries = Tensor::from_vector({size, dim}, rng.normal_vector(size * dim, 0.1));
  cb.commitment = commitment;
  cb.validate();
  return cb;
}

std::size_t nearest_code(const Codebook& codebook, std::span<const double> e) {
  const std::size_t k = codebook.size(), d = codebook.dim();
  if (e.size() != d) {
    throw ShapeError("nearest_code: vector of length " + std::to_string(e.size()) +
                     " vs codebook " + shape_str(codebook.entries.shape()));
  }
  auto z = codebook.entries.values();
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < k; ++j) {
    double dist = 0.0;
    for (std::size_t i = 0; i < d; ++i) dist += (e[i] - z[j * d + i]) * (e[i] - z[j * d + i]);
    if (dist < best_dist) {
      best_dist = dist;
      best = j;
    }
  }
  return best;
}

Quantized quantize(const Codebook& codebook, const Tensor& e) {
  const std::size_t d = codebook.dim();
  if (e.numel() % d != 0 || (e.ndim() == 2 && e.dim(1) != d) || e.ndim() > 2) {
    throw ShapeError("quantize: input " + shape_str(e.shape()) + " vs codebook " +
                     shape_str(codebook.entries.shape()));
  }
  const std::size_t rows = e.numel() / d;
  Quantized q;
  auto values = e.values();
  for (std::size_t r = 0; r < rows; ++r)
    q.indices.push_back(nearest_code(codebook, values.subspan(r * d, d)));
  Tensor codes = reshape(embedding(codebook.entries, q.indices), e.shape());
  // e + sg[z_k - e]: value z_k, gradient identity to e, none to the codebook.
  q.z_q = add(e, stop_gradient(sub(codes, e)));
  return q;
}

VqTerms vq_loss(const Tensor& e, const Codebook& codebook, std::span<const std::size_t> indices) {
  const std::size_t d = codebook.dim();
  const std::size_t rows = e.numel() / d;
  if (indices.size() != rows) throw ShapeError("vq_loss: one index per row required");
  Tensor flat = reshape(e, {rows, d});
  Tensor codes = embedding(codebook.entries, indices);
  const double inv_rows = 1.0 / static_cast<double>(rows);
  VqTerms out;
  out.codebook = scale(sum(square(sub(stop_gradient(flat), codes))), inv_rows);
  out.commitment =
      scale(sum(square(sub(flat, stop_gradient(codes)))), codebook.commitment * inv_rows);
  return out;
}

VqAutoencoder::VqAutoencoder(VqAutoencoderConfig config) : config_(config) {
  if (!config_.train_encoder && config_.input_dim != config_.code_dim)
    throw DataError("vq autoencoder: identity encoder needs input_dim == code_dim");
  Rng rng(config_.seed);
  if (config_.train_encoder)
    encoder_ = Linear::create(params_, "vq.encoder", config_.input_dim, config_.code_dim, rng);
  decoder_ = Linear::create(params_, "vq.decoder", config_.code_dim, config_.input_dim, rng);
  codebook_ = Codebook::random(config_.codebook_size, config_.code_dim, config_.commitment, rng);
  codebook_.entries = params_.add("vq.codebook", codebook_.entries);
}

Tensor VqAutoencoder::encode(const Tensor& x) const {
  return config_.train_encoder ? encoder_(x) : x;
}

VqAutoencoder::Loss VqAutoencoder::loss(const Tensor& x) const {
  Tensor e = encode(x);
  Quantized q = quantize(codebook_, e);
  VqTerms terms = vq_loss(e, codebook_, q.indices);
  Tensor recon = mean(square(sub(decoder_(q.z_q), x)));
  Loss out;
  out.reconstruction = recon.item();
  out.codebook = terms.codebook.item();
  out.commitment = terms.commitment.item();
  out.total = add(add(recon, terms.codebook), terms.commitment);
  return out;
}

std::vector<double> VqAutoencoder::train(const Tensor& data) {
  Optimizer opt(config_.optimizer);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < config_.epochs; ++epoch) {
    params_.zero_grad();
    Loss l = loss(data);
    if (!std::isfinite(l.total.item())) throw NumericError("vq autoencoder: non-finite loss");
    l.total.backward();
    opt.step(params_);
    history.push_back(l.total.item());
  }
  return history;
}

}  // namespace latentlab
