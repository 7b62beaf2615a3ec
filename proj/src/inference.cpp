#include "latentlab/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "latentlab/ops.hpp"

namespace latentlab {

std::vector<Triple> read_triples(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<Triple> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    out.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), line.substr(t2 + 1)});
  }
  if (out.empty()) throw DataError(path + ": no triples");
  return out;
}

void write_triples(const std::string& path, std::span<const Triple> triples) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& t : triples) out << t.premise1 << '\t' << t.premise2 << '\t' << t.conclusion << '\n';
}

InferenceHead::InferenceHead(std::size_t latent_dim, std::uint64_t seed, bool zero_final)
    : latent_dim_(latent_dim) {
  if (latent_dim == 0) throw DataError("inference head: latent_dim must be positive");
  Rng rng(seed);
  const std::size_t w = 2 * latent_dim;
  l1_ = Linear::create(params_, "head.l1", w, w, rng);
  l2_ = Linear::create(params_, "head.l2", w, w, rng);
  l3_ = Linear::create(params_, "head.l3", w, latent_dim, rng, zero_final ? 0.0 : -1.0);
}

Tensor InferenceHead::operator()(const Tensor& z1, const Tensor& z2) const {
  if (z1.numel() != latent_dim_ || z2.numel() != latent_dim_) {
    throw ShapeError("inference head: premises " + shape_str(z1.shape()) + " and " + shape_str(z2.shape()) +
                     " vs latent_dim " + std::to_string(latent_dim_));
  }
  Tensor x = concat({reshape(z1, {1, latent_dim_}), reshape(z2, {1, latent_dim_})}, 1);
  Tensor h = tanh(l2_(tanh(l1_(x))));
  return reshape(l3_(h), {latent_dim_});
}

Tensor infer_conclusion_latent(const VaeModel& model, const InferenceHead& head,
                               const std::string& premise1, const std::string& premise2) {
  NoGradGuard no_grad;
  const Tensor z1 = posterior_mean(model, model.vocab().encode(premise1));
  const Tensor z2 = posterior_mean(model, model.vocab().encode(premise2));
  return head(z1, z2).detach();
}

bool is_inference_trainable(const std::string& name) {
  return name.rfind("latent.mu.", 0) == 0 || name.rfind("latent.logvar.", 0) == 0;
}

InferenceLoss inference_loss(const VaeModel& model, const InferenceHead& head,
                             std::span<const Triple> batch, const InferenceTrainConfig& config) {
  if (batch.empty()) throw DataError("inference: empty batch");
  const Vocab& vocab = model.vocab();
  std::vector<Tensor> ce_terms, latent_terms;
  std::size_t tokens = 0;
  for (const auto& t : batch) {
    const TokenIds p1 = vocab.encode(t.premise1), p2 = vocab.encode(t.premise2);
    const TokenIds c = vocab.encode(t.conclusion);
    Tensor zc = head(model.encode(p1).mu, model.encode(p2).mu);
    Tensor target = stop_gradient(model.encode(c).mu);
    const std::size_t n = c.size() - 1;
    ce_terms.push_back(scale(reconstruction_ce(model, c, zc), static_cast<double>(n)));
    latent_terms.push_back(mean(square(sub(zc, target))));
    tokens += n;
  }
  auto total_of = [](const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
  };
  Tensor ce = scale(total_of(ce_terms), 1.0 / static_cast<double>(tokens));
  Tensor lat = scale(total_of(latent_terms), 1.0 / static_cast<double>(batch.size()));
  InferenceLoss out;
  out.decode = ce.item();
  out.latent = lat.item();
  out.total = add(scale(ce, config.decode_weight), scale(lat, config.latent_weight));
  return out;
}

double latent_mse(const VaeModel& model, const InferenceHead& head, std::span<const Triple> triples) {
  if (triples.empty()) throw DataError("latent_mse: no triples");
  NoGradGuard no_grad;
  double total = 0.0;
  for (const auto& t : triples) {
    Tensor zc = infer_conclusion_latent(model, head, t.premise1, t.premise2);
    Tensor target = posterior_mean(model, model.vocab().encode(t.conclusion));
    total += mean(square(sub(zc, target))).item();
  }
  return total / static_cast<double>(triples.size());
}

std::vector<double> train_inference(VaeModel& model, InferenceHead& head, std::span<const Triple> triples,
                                    const InferenceTrainConfig& config) {
  if (triples.empty()) throw DataError("train_inference: no triples");
  if (head.latent_dim() != model.config().latent_dim)
    throw ShapeError("train_inference: head latent_dim does not match the model");
  if (config.batch_size == 0) throw DataError("train_inference: batch_size must be positive");
  ParameterStore& vae_params = model.params();
  vae_params.set_requires_grad(is_inference_trainable);
  Optimizer vae_opt(config.optimizer), head_opt(config.optimizer);
  Rng rng(config.seed);
  std::vector<std::size_t> order(triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> history;
  try {
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
      rng.shuffle(order);
      double epoch_total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        std::vector<Triple> batch;
        for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i)
          batch.push_back(triples[order[i]]);
        vae_params.zero_grad();
        head.params().zero_grad();
        InferenceLoss loss = inference_loss(model, head, batch, config);
        const double total = loss.total.item();
        if (!std::isfinite(total))
          throw NumericError("train_inference: non-finite loss at epoch " + std::to_string(epoch));
        loss.total.backward();
        vae_opt.step(vae_params);
        head_opt.step(head.params());
        epoch_total += total * static_cast<double>(batch.size());
      }
      history.push_back(epoch_total / static_cast<double>(triples.size()));
    }
  } catch (...) {
    vae_params.set_requires_grad([](const std::string&) { return true; });
    throw;
  }
  vae_params.set_requires_grad([](const std::string&) { return true; });
  vae_params.zero_grad();
  head.params().zero_grad();
  return history;
}

std::string generate_conclusion(const VaeModel& model, const InferenceHead& head,
                                const std::string& premise1, const std::string& premise2) {
  Tensor zc = infer_conclusion_latent(model, head, premise1, premise2);
  return model.vocab().decode(model.generate(zc, model.config().max_len));
}

double perplexity(const VaeModel& model, const InferenceHead& head, std::span<const Triple> triples) {
  if (triples.empty()) throw DataError("perplexity: no triples");
  NoGradGuard no_grad;
  // 1/p = sum_j exp(l_j - l_target); the geometric mean is taken relative to the
  // first token so equal inverse probabilities come back unchanged.
  std::vector<double> log_inv;
  double first_inv = 0.0;
  for (const auto& t : triples) {
    const TokenIds c = model.vocab().encode(t.conclusion);
    Tensor zc = infer_conclusion_latent(model, head, t.premise1, t.premise2);
    const MemoryBank bank = model.memory_project(zc);
    Tensor logits = model.decode_teacher_forced(std::span(c).first(c.size() - 1), &bank);
    const std::size_t v = logits.dim(1);
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
      auto row = logits.values().subspan(i * v, v);
      const double target = row[c[i + 1]];
      const double top = *std::max_element(row.begin(), row.end());
      double direct = 0.0, shifted = 0.0;
      for (double l : row) {
        direct += std::exp(l - target);
        shifted += std::exp(l - top);
      }
      if (log_inv.empty()) first_inv = direct;
      log_inv.push_back(top - target + std::log(shifted));
    }
  }
  double mean_offset = 0.0;
  for (double l : log_inv) mean_offset += l - log_inv.front();
  mean_offset /= static_cast<double>(log_inv.size());
  if (std::isfinite(first_inv)) return first_inv * std::exp(mean_offset);
  return std::exp(log_inv.front() + mean_offset);
}

}  // namespace latentlab
