#include "latentlab/vae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "latentlab/ops.hpp"
#include "latentlab/vq.hpp"

namespace latentlab {

namespace {

constexpr double kMaskedScore = -1e30;

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

// Additive mask (n, slots + n): memory slots always visible, tokens causal.
Tensor attention_mask(std::size_t n, std::size_t slots, bool causal) {
  std::vector<double> m(n * (n + slots), 0.0);
  if (causal) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) m[i * (n + slots) + slots + j] = kMaskedScore;
  }
  return Tensor::from_vector({n, n + slots}, std::move(m));
}

}  // namespace

void VaeConfig::validate() const {
  auto fail = [](const std::string& msg) { throw DataError("vae config: " + msg); };
  if (latent_dim == 0 || embed_dim == 0 || n_layers == 0 || n_heads == 0 || head_dim == 0 ||
      ffn_dim == 0 || max_len == 0)
    fail("dimensions must be positive");
  if (embed_dim != n_heads * head_dim) fail("embed_dim must equal n_heads * head_dim");
  if (kl_threshold < 0.0) fail("kl_threshold must be >= 0");
  if (beta_mode == BetaMode::kCyclical && beta_cycles < 1) fail("beta_cycles must be >= 1");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 1.0)) fail("ramp_fraction must be in (0, 1]");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(optimizer.learning_rate > 0.0)) fail("learning_rate must be positive");
  if (bottleneck == Bottleneck::kVq && codebook_size < 2) fail("codebook_size must be >= 2");
  if (commitment < 0.0) fail("commitment must be >= 0");
}

Tensor MemoryBank::key(std::size_t layer, std::size_t head) const {
  return slice(reshape(values, {layers * heads * 2, head_dim}), 0, (layer * heads + head) * 2, 1);
}

Tensor MemoryBank::value(std::size_t layer, std::size_t head) const {
  return slice(reshape(values, {layers * heads * 2, head_dim}), 0, (layer * heads + head) * 2 + 1, 1);
}

VaeModel::Block VaeModel::make_block(const std::string& prefix, Rng& rng) {
  const std::size_t e = config_.embed_dim;
  const double s = 1.0 / std::sqrt(static_cast<double>(e));
  Block b;
  b.ln1 = LayerNorm::create(params_, prefix + ".ln1", e);
  b.wq = params_.normal(prefix + ".attn.wq", {e, e}, s, rng);
  b.wk = params_.normal(prefix + ".attn.wk", {e, e}, s, rng);
  b.wv = params_.normal(prefix + ".attn.wv", {e, e}, s, rng);
  b.wo = params_.normal(prefix + ".attn.wo", {e, e}, s, rng);
  b.ln2 = LayerNorm::create(params_, prefix + ".ln2", e);
  b.ff1 = Linear::create(params_, prefix + ".ff1", e, config_.ffn_dim, rng);
  b.ff2 = Linear::create(params_, prefix + ".ff2", config_.ffn_dim, e, rng);
  return b;
}

VaeModel::VaeModel(VaeConfig config, Vocab vocab) : config_(config), vocab_(std::move(vocab)) {
  if (config_.vocab_size == 0) config_.vocab_size = vocab_.size();
  if (config_.vocab_size != vocab_.size()) {
    throw DataError("vae config: vocab_size " + std::to_string(config_.vocab_size) +
                    " does not match vocabulary of " + std::to_string(vocab_.size()));
  }
  config_.validate();

  Rng rng(config_.seed);
  const std::size_t e = config_.embed_dim, v = config_.vocab_size, z = config_.latent_dim;
  const std::size_t slots = config_.n_layers * config_.n_heads * config_.head_dim;

  enc_tok_ = params_.normal("enc.tok_emb", {v, e}, 0.3, rng);
  enc_pos_ = params_.normal("enc.pos_emb", {config_.max_len, e}, 0.1, rng);
  for (std::size_t l = 0; l < config_.n_layers; ++l)
    enc_blocks_.push_back(make_block("enc.layers." + std::to_string(l), rng));
  enc_ln_ = LayerNorm::create(params_, "enc.ln_f", e);
  mu_proj_ = Linear::create(params_, "latent.mu", e, z, rng);
  logvar_proj_ = Linear::create(params_, "latent.logvar", e, z, rng, 0.01);
  memory_proj_ = Linear::create(params_, "memory", z, config_.separate_kv ? 2 * slots : slots, rng);

  dec_tok_ = params_.normal("dec.tok_emb", {v, e}, 0.3, rng);
  dec_pos_ = params_.normal("dec.pos_emb", {config_.max_len, e}, 0.1, rng);
  for (std::size_t l = 0; l < config_.n_layers; ++l)
    dec_blocks_.push_back(make_block("dec.layers." + std::to_string(l), rng));
  dec_ln_ = LayerNorm::create(params_, "dec.ln_f", e);
  head_ = Linear::create(params_, "dec.head", e, v, rng);

  if (config_.bottleneck == Bottleneck::kVq) {
    codebook_ = params_.add("vq.codebook", Codebook::random(config_.codebook_size, z,
                                                            config_.commitment, rng).entries);
  }
}

bool VaeModel::is_decoder_hidden(const std::string& name) {
  return starts_with(name, "dec.layers.") || starts_with(name, "dec.pos_emb") ||
         starts_with(name, "dec.ln_f");
}

bool VaeModel::is_decoder_embed_or_head(const std::string& name) {
  return starts_with(name, "dec.tok_emb") || starts_with(name, "dec.head.");
}

Tensor VaeModel::attention(const Block& b, const Tensor& x, bool causal, const MemoryBank* memory,
                           std::size_t layer, DecodeTrace* trace) const {
  const std::size_t n = x.dim(0), d = config_.head_dim;
  const std::size_t slots = memory ? 1 : 0;
  const Tensor q_all = matmul(x, b.wq);
  const Tensor k_all = matmul(x, b.wk);
  const Tensor v_all = matmul(x, b.wv);
  const Tensor mask = attention_mask(n, slots, causal);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<Tensor> heads;
  heads.reserve(config_.n_heads);
  for (std::size_t h = 0; h < config_.n_heads; ++h) {
    Tensor q = slice(q_all, 1, h * d, d);
    Tensor k = slice(k_all, 1, h * d, d);
    Tensor v = slice(v_all, 1, h * d, d);
    if (memory) {
      k = concat({memory->key(layer, h), k}, 0);
      v = concat({memory->value(layer, h), v}, 0);
    }
    Tensor scores = add(scale(matmul(q, transpose(k)), inv_sqrt_d), mask);
    Tensor weights = softmax_last(scores);
    if (trace) trace->attention.push_back(weights);
    heads.push_back(matmul(weights, v));
  }
  return matmul(concat(heads, 1), b.wo);
}

Tensor VaeModel::block_forward(const Block& b, const Tensor& x, bool causal,
                               const MemoryBank* memory, std::size_t layer,
                               DecodeTrace* trace) const {
  Tensor h = add(x, attention(b, b.ln1(x), causal, memory, layer, trace));
  return add(h, b.ff2(tanh(b.ff1(b.ln2(h)))));
}

GaussianPosterior VaeModel::encode(std::span<const std::size_t> ids) const {
  if (ids.empty()) throw DataError("encode: empty token sequence");
  if (ids.size() > config_.max_len) {
    throw DataError("encode: sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                    std::to_string(config_.max_len));
  }
  const std::size_t n = ids.size();
  Tensor x = add(embedding(enc_tok_, ids), slice(enc_pos_, 0, 0, n));
  for (std::size_t l = 0; l < enc_blocks_.size(); ++l)
    x = block_forward(enc_blocks_[l], x, false, nullptr, l, nullptr);
  Tensor pooled = reshape(mean_rows(enc_ln_(x)), {1, config_.embed_dim});
  GaussianPosterior post;
  post.mu = reshape(mu_proj_(pooled), {config_.latent_dim});
  post.log_var = clamp(reshape(logvar_proj_(pooled), {config_.latent_dim}), kLogVarMin, kLogVarMax);
  return post;
}

MemoryBank VaeModel::memory_project(const Tensor& z) const {
  if (z.numel() != config_.latent_dim) {
    throw ShapeError("memory_project: latent of shape " + shape_str(z.shape()) +
                     " does not match latent_dim " + std::to_string(config_.latent_dim));
  }
  const std::size_t layers = config_.n_layers, heads = config_.n_heads, d = config_.head_dim;
  Tensor projected = memory_proj_(reshape(z, {1, config_.latent_dim}));
  MemoryBank bank;
  bank.layers = layers;
  bank.heads = heads;
  bank.head_dim = d;
  if (config_.separate_kv) {
    bank.values = reshape(projected, {layers, heads, 2, d});
  } else {
    Tensor shared = reshape(projected, {layers * heads, 1, d});
    bank.values = reshape(concat({shared, shared}, 1), {layers, heads, 2, d});
  }
  return bank;
}

Tensor VaeModel::decode_teacher_forced(std::span<const std::size_t> ids, const MemoryBank* memory,
                                       DecodeTrace* trace) const {
  if (ids.empty()) throw DataError("decode: empty token sequence");
  if (ids.size() > config_.max_len) {
    throw DataError("decode: sequence length " + std::to_string(ids.size()) + " exceeds max_len " +
                    std::to_string(config_.max_len));
  }
  if (memory && (memory->layers != config_.n_layers || memory->heads != config_.n_heads ||
                 memory->head_dim != config_.head_dim)) {
    throw ShapeError("decode: memory bank shape " + shape_str(memory->values.shape()) +
                     " does not match the model");
  }
  const std::size_t n = ids.size();
  Tensor x = add(embedding(dec_tok_, ids), slice(dec_pos_, 0, 0, n));
  for (std::size_t l = 0; l < dec_blocks_.size(); ++l)
    x = block_forward(dec_blocks_[l], x, true, memory, l, trace);
  return head_(dec_ln_(x));
}

TokenIds VaeModel::generate(const Tensor& z, std::size_t max_len) const {
  NoGradGuard no_grad;
  const MemoryBank bank = memory_project(z);
  TokenIds input{Vocab::kBos};
  TokenIds out;
  // Content is capped so BOS + content + EOS still fits the encoder.
  while (out.size() < max_len && input.size() + 1 < config_.max_len) {
    Tensor logits = decode_teacher_forced(input, &bank);
    const std::size_t v = logits.dim(1);
    auto last = logits.values().subspan((logits.dim(0) - 1) * v, v);
    const std::size_t next =
        static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
    out.push_back(next);
    if (next == Vocab::kEos) break;
    input.push_back(next);
  }
  return out;
}

Tensor reparameterize(const GaussianPosterior& posterior, Rng& rng) {
  const std::size_t n = posterior.mu.numel();
  Tensor eps = Tensor::from_vector(posterior.mu.shape(), rng.normal_vector(n));
  return add(posterior.mu, mul(exp(scale(posterior.log_var, 0.5)), eps));
}

Tensor kl_diag_gaussian(const GaussianPosterior& posterior) {
  // 0.5 * sum(mu^2 + exp(lv) - 1 - lv)
  Tensor terms = sub(add(square(posterior.mu), exp(posterior.log_var)), posterior.log_var);
  return scale(add_scalar(sum(terms), -static_cast<double>(posterior.mu.numel())), 0.5);
}

Tensor thresholded_kl(const Tensor& kl, double beta, double lambda) {
  return scale(maximum(kl, lambda), beta);
}

double beta_schedule(std::size_t step, std::size_t total_steps, std::size_t cycles,
                     double ramp_fraction) {
  if (cycles < 1) throw std::invalid_argument("beta_schedule: cycles must be >= 1");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 1.0))
    throw std::invalid_argument("beta_schedule: ramp_fraction must be in (0, 1]");
  if (total_steps == 0) throw std::invalid_argument("beta_schedule: total_steps must be positive");
  if (step >= total_steps) step = total_steps - 1;
  // Cycle c covers [ceil(c T / K), ceil((c + 1) T / K)), so every cycle starts at exactly 0.
  const std::size_t c = step * cycles / total_steps;
  const std::size_t start = (c * total_steps + cycles - 1) / cycles;
  const std::size_t next = ((c + 1) * total_steps + cycles - 1) / cycles;
  const double phase = static_cast<double>(step - start) / static_cast<double>(next - start);
  return std::min(1.0, phase / ramp_fraction);
}

Tensor reconstruction_ce(const VaeModel& model, std::span<const std::size_t> ids, const Tensor& z) {
  if (ids.size() < 2) throw DataError("reconstruction: sequence needs at least BOS and EOS");
  const MemoryBank bank = model.memory_project(z);
  Tensor logits = model.decode_teacher_forced(ids.first(ids.size() - 1), &bank);
  return cross_entropy(logits, ids.subspan(1));
}

Tensor posterior_mean(const VaeModel& model, std::span<const std::size_t> ids) {
  NoGradGuard no_grad;
  Tensor mu = model.encode(ids).mu;
  if (model.config().bottleneck == Bottleneck::kVq) {
    const Codebook cb{model.codebook(), model.config().commitment};
    return quantize(cb, mu).z_q.detach();
  }
  return mu.detach();
}

VaeLoss vae_loss(const VaeModel& model, std::span<const TokenIds> batch, double beta,
                 double lambda, Rng& rng) {
  if (batch.empty()) throw DataError("vae_loss: empty batch");
  const bool vq = model.config().bottleneck == Bottleneck::kVq;
  std::vector<Tensor> ce_terms, kl_terms, cb_terms, commit_terms;
  std::size_t tokens = 0;
  for (const auto& ids : batch) {
    GaussianPosterior post = model.encode(ids);
    Tensor z;
    if (vq) {
      const Codebook cb{model.codebook(), model.config().commitment};
      Tensor e = reshape(post.mu, {1, post.mu.numel()});
      Quantized q = quantize(cb, e);
      VqTerms terms = vq_loss(e, cb, q.indices);
      cb_terms.push_back(terms.codebook);
      commit_terms.push_back(terms.commitment);
      z = reshape(q.z_q, {post.mu.numel()});
    } else {
      z = reparameterize(post, rng);
      kl_terms.push_back(kl_diag_gaussian(post));
    }
    const std::size_t n = ids.size() - 1;
    ce_terms.push_back(scale(reconstruction_ce(model, ids, z), static_cast<double>(n)));
    tokens += n;
  }
  auto total_of = [](const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return acc;
  };
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  VaeLoss out;
  Tensor ce = scale(total_of(ce_terms), 1.0 / static_cast<double>(tokens));
  out.ce = ce.item();
  if (vq) {
    Tensor cb = scale(total_of(cb_terms), inv_batch);
    Tensor commit = scale(total_of(commit_terms), inv_batch);
    out.codebook = cb.item();
    out.commitment = commit.item();
    out.kl_tensor = Tensor::scalar(0.0);
    out.total = add(add(ce, cb), commit);
  } else {
    out.kl_tensor = scale(total_of(kl_terms), inv_batch);
    out.kl = out.kl_tensor.item();
    out.total = add(ce, thresholded_kl(out.kl_tensor, beta, lambda));
  }
  return out;
}

std::vector<EpochStats> train_vae(VaeModel& model, std::span<const TokenIds> corpus,
                                  const VaeStepObserver& observer) {
  if (corpus.empty()) throw DataError("train_vae: empty corpus");
  const VaeConfig& cfg = model.config();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Optimizer opt(cfg.optimizer);
  const std::size_t batches = (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = std::max<std::size_t>(1, cfg.epochs * batches);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochStats> history;
  std::size_t step = 0;
  ParameterStore& params = model.params();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool head_trainable = epoch < cfg.head_train_epochs;
    params.set_requires_grad([&](const std::string& name) {
      if (!cfg.freeze_decoder_hidden) return true;
      if (VaeModel::is_decoder_hidden(name)) return false;
      if (VaeModel::is_decoder_embed_or_head(name)) return head_trainable;
      return true;
    });
    rng.shuffle(order);
    EpochStats stats;
    stats.epoch = epoch;
    double beta_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<TokenIds> batch;
      for (std::size_t i = b * cfg.batch_size; i < std::min(corpus.size(), (b + 1) * cfg.batch_size); ++i)
        batch.push_back(corpus[order[i]]);
      const double beta = cfg.beta_mode == BetaMode::kConstant
                              ? cfg.beta_constant
                              : beta_schedule(step, total_steps, cfg.beta_cycles, cfg.ramp_fraction);
      params.zero_grad();
      VaeLoss loss = vae_loss(model, batch, beta, cfg.kl_threshold, rng);
      const double total = loss.total.item();
      if (!std::isfinite(total)) {
        std::ostringstream os;
        os << "train_vae: non-finite loss at epoch " << epoch << " step " << step
           << " (ce=" << loss.ce << ", kl=" << loss.kl << ", beta=" << beta << ")";
        throw NumericError(os.str());
      }
      loss.total.backward();
      if (observer) observer(step, model);
      opt.step(params);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(corpus.size());
      stats.total += w * total;
      stats.ce += w * loss.ce;
      stats.kl += w * loss.kl;
      beta_sum += beta;
      ++step;
    }
    stats.beta = beta_sum / static_cast<double>(batches);
    history.push_back(stats);
  }
  params.set_requires_grad([](const std::string&) { return true; });
  params.zero_grad();
  return history;
}

}  // namespace latentlab
