#include "latentlab/defmod.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "latentlab/ops.hpp"

namespace latentlab {

std::vector<double> triple_embed(std::span<const double> w) {
  std::vector<double> out;
  out.reserve(3 * w.size());
  for (int k = 0; k < 3; ++k) out.insert(out.end(), w.begin(), w.end());
  return out;
}

std::vector<double> untriple(std::span<const double> v) {
  if (v.size() % 3 != 0)
    throw ShapeError("untriple: length " + std::to_string(v.size()) + " is not divisible by 3");
  const std::size_t d = v.size() / 3;
  std::vector<double> out(d);
  // Offsets from the first copy keep identical copies exact.
  for (std::size_t i = 0; i < d; ++i) out[i] = v[i] + ((v[d + i] - v[i]) + (v[2 * d + i] - v[i])) / 3.0;
  return out;
}

Tensor triple_rows(const Tensor& w) {
  if (w.ndim() != 2) throw ShapeError("triple_rows: expected (N, d), got " + shape_str(w.shape()));
  return concat({w, w, w}, 1);
}

Tensor forward_defmod_loss(const FlowStack& stack, const Tensor& words, const Tensor& mu,
                           const Tensor& var) {
  for (double v : var.values())
    if (!(v > 0.0)) throw DataError("forward_defmod_loss: variance entries must be positive");
  FlowOutput out = stack.forward(words);
  if (out.value.shape() != mu.shape() || mu.shape() != var.shape()) {
    throw ShapeError("forward_defmod_loss: flow output " + shape_str(out.value.shape()) + ", mu " +
                     shape_str(mu.shape()) + ", var " + shape_str(var.shape()));
  }
  std::vector<double> inv(var.numel());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / var.values()[i];
  Tensor precision = Tensor::from_vector(var.shape(), std::move(inv));
  Tensor per_row = sum_last(mul(square(sub(out.value, mu)), precision));
  return scale(mean(per_row), 0.5);
}

Tensor reverse_defmod_loss(const FlowStack& stack, const Tensor& latents, const Tensor& words) {
  Tensor pred = stack.inverse(latents);
  if (pred.shape() != words.shape()) {
    throw ShapeError("reverse_defmod_loss: prediction " + shape_str(pred.shape()) + " vs target " +
                     shape_str(words.shape()));
  }
  return mean(square(sub(pred, words)));
}

std::vector<DefmodPair> read_defmod_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<DefmodPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      DefmodPair p;
      p.word = j.at("word").get<std::string>();
      p.embedding = j.at("embedding").get<std::vector<double>>();
      p.definition = j.at("definition").get<std::string>();
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (pairs.empty()) throw DataError(path + ": no pairs");
  for (const auto& p : pairs)
    if (p.embedding.size() != pairs.front().embedding.size())
      throw DataError(path + ": embeddings have inconsistent widths");
  return pairs;
}

void write_defmod_pairs(const std::string& path, std::span<const DefmodPair> pairs) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& p : pairs) {
    nlohmann::json j{{"word", p.word}, {"embedding", p.embedding}, {"definition", p.definition}};
    out << j.dump() << '\n';
  }
}

InnDirection parse_direction(const std::string& name) {
  if (name == "forward") return InnDirection::kForward;
  if (name == "reverse") return InnDirection::kReverse;
  throw DataError("unknown direction '" + name + "' (expected forward or reverse)");
}

std::string direction_name(InnDirection direction) {
  return direction == InnDirection::kForward ? "forward" : "reverse";
}

DefmodBatch prepare_defmod_batch(const VaeModel& vae, std::span<const DefmodPair> pairs) {
  if (pairs.empty()) throw DataError("defmod: no pairs");
  NoGradGuard no_grad;
  const std::size_t n = pairs.size(), wd = pairs.front().embedding.size();
  const std::size_t latent = vae.config().latent_dim;
  if (3 * wd != latent) {
    throw ShapeError("defmod: tripled embedding width " + std::to_string(3 * wd) +
                     " does not match latent_dim " + std::to_string(latent));
  }
  std::vector<double> words, mu, var;
  for (const auto& p : pairs) {
    if (p.embedding.size() != wd) throw DataError("defmod: inconsistent embedding widths");
    auto t = triple_embed(p.embedding);
    words.insert(words.end(), t.begin(), t.end());
    GaussianPosterior post = vae.encode(vae.vocab().encode(p.definition));
    for (std::size_t i = 0; i < latent; ++i) {
      mu.push_back(post.mu.values()[i]);
      var.push_back(std::exp(post.log_var.values()[i]));
    }
  }
  DefmodBatch b;
  b.words = Tensor::from_vector({n, 3 * wd}, std::move(words));
  b.mu = Tensor::from_vector({n, latent}, std::move(mu));
  b.var = Tensor::from_vector({n, latent}, std::move(var));
  return b;
}

namespace {

Tensor defmod_loss(const FlowStack& stack, const DefmodBatch& b, InnDirection direction) {
  return direction == InnDirection::kForward ? forward_defmod_loss(stack, b.words, b.mu, b.var)
                                             : reverse_defmod_loss(stack, b.mu, b.words);
}

DefmodBatch rows_of(const DefmodBatch& b, std::span<const std::size_t> idx) {
  auto pick = [&](const Tensor& t) {
    const std::size_t w = t.dim(1);
    std::vector<double> out;
    for (auto i : idx) out.insert(out.end(), t.values().begin() + i * w, t.values().begin() + (i + 1) * w);
    return Tensor::from_vector({idx.size(), w}, std::move(out));
  };
  return DefmodBatch{pick(b.words), pick(b.mu), pick(b.var)};
}

}  // namespace

double defmod_loss_value(const FlowStack& stack, const DefmodBatch& batch, InnDirection direction) {
  NoGradGuard no_grad;
  return defmod_loss(stack, batch, direction).item();
}

InnTrainResult train_inn(FlowStack& stack, const VaeModel& vae, std::span<const DefmodPair> pairs,
                         const InnTrainConfig& config) {
  const DefmodBatch all = prepare_defmod_batch(vae, pairs);
  if (!stack.actnorm_initialized()) stack.initialize_actnorm(all.words);

  Rng rng(config.seed);
  Optimizer opt(config.optimizer);
  const std::size_t n = pairs.size();
  const std::size_t bs = config.batch_size == 0 ? n : std::min(n, config.batch_size);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  InnTrainResult result;
  result.initial_loss = defmod_loss_value(stack, all, config.direction);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (bs < n) rng.shuffle(order);
    for (std::size_t start = 0; start < n; start += bs) {
      std::span<const std::size_t> idx(order.data() + start, std::min(bs, n - start));
      const DefmodBatch batch = bs == n ? all : rows_of(all, idx);
      stack.params().zero_grad();
      Tensor loss = defmod_loss(stack, batch, config.direction);
      if (!std::isfinite(loss.item()))
        throw NumericError("train_inn: non-finite loss at epoch " + std::to_string(epoch));
      loss.backward();
      opt.step(stack.params());
    }
    result.epoch_loss.push_back(defmod_loss_value(stack, all, config.direction));
  }
  stack.params().zero_grad();
  return result;
}

}  // namespace latentlab
