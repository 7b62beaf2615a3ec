// Acceptance suite: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "latentlab/defmod.hpp"
#include "latentlab/eval.hpp"
#include "latentlab/flow.hpp"
#include "latentlab/geometry.hpp"
#include "latentlab/gradcheck.hpp"
#include "latentlab/inference.hpp"
#include "latentlab/metrics.hpp"
#include "latentlab/ops.hpp"
#include "latentlab/transport.hpp"
#include "latentlab/vae.hpp"
#include "latentlab/vq.hpp"
#include "oracles.hpp"

using namespace latentlab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects failed sub-checks and a compact measurement summary.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_.push_back(what);
    }
  }
  void note(const std::string& key, double value) {
    std::ostringstream os;
    os << key << '=' << value;
    notes_.push_back(os.str());
  }
  Outcome outcome() const {
    Outcome o;
    o.pass = pass_;
    for (const auto& n : notes_) o.detail += (o.detail.empty() ? "" : " ") + n;
    for (const auto& f : failures_) o.detail += " [failed: " + f + "]";
    return o;
  }

 private:
  bool pass_ = true;
  std::vector<std::string> notes_, failures_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_vector(shape, std::move(v));
}

// Relative error per coordinate with a max(1e-12, |fd|) denominator. Gradients
// smaller than kResolvable cannot be measured to relative 1e-6 by any
// double-precision difference quotient; those are held to an absolute bound.
constexpr double kResolvable = 1e-6;

struct GradAgreement {
  double max_rel = 0.0;           // two-point stencil, eps = 1e-6, every coordinate
  double max_rel_resolved = 0.0;  // five-point stencil, |fd| >= kResolvable
  double max_abs_small = 0.0;     // five-point stencil, |fd| < kResolvable

  void merge(const GradAgreement& o) {
    max_rel = std::max(max_rel, o.max_rel);
    max_rel_resolved = std::max(max_rel_resolved, o.max_rel_resolved);
    max_abs_small = std::max(max_abs_small, o.max_abs_small);
  }
};

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(numeric));
}

void accumulate(GradAgreement& g, double analytic, double two_point, double five_point) {
  g.max_rel = std::max(g.max_rel, rel_err(analytic, two_point));
  if (std::abs(five_point) >= kResolvable)
    g.max_rel_resolved = std::max(g.max_rel_resolved, rel_err(analytic, five_point));
  else
    g.max_abs_small = std::max(g.max_abs_small, std::abs(analytic - five_point));
}

GradAgreement compare_gradients(const ScalarFn& f, const Tensor& x) {
  Tensor leaf = Tensor::from_vector(x.shape(), x.to_vector(), true);
  f(leaf).backward();
  const auto two = numeric_gradient(f, x, 1e-6);
  const auto five = oracle::five_point_gradient(
      [&](const std::vector<double>& v) {
        NoGradGuard ng;
        return f(Tensor::from_vector(x.shape(), v)).item();
      },
      x.to_vector());
  GradAgreement g;
  for (std::size_t i = 0; i < two.size(); ++i) accumulate(g, leaf.has_grad() ? leaf.grad()[i] : 0.0, two[i], five[i]);
  return g;
}

VaeConfig desk_config(std::uint64_t seed) {
  VaeConfig c;
  c.latent_dim = 32;
  c.embed_dim = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.head_dim = 16;
  c.ffn_dim = 64;
  c.max_len = 16;
  c.seed = seed;
  return c;
}

VaeConfig small_config(std::size_t latent, std::uint64_t seed) {
  VaeConfig c;
  c.latent_dim = latent;
  c.embed_dim = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.head_dim = 8;
  c.ffn_dim = 32;
  c.max_len = 12;
  c.seed = seed;
  return c;
}

LabeledCorpus grammar_corpus(std::vector<std::size_t> sizes, std::uint64_t seed) {
  return generate_synthetic_corpus(GrammarSpec::with_slot_sizes(sizes), seed);
}

// ---------------------------------------------------------------------------

Outcome ac1_autodiff() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  Rng rng(101);
  GradAgreement graphs;
  for (int g = 0; g < 25; ++g) {
    const std::size_t n = 1 + rng.below(8), k = 1 + rng.below(8), m = 2 + rng.below(7);
    Tensor x = random_tensor({n, k}, rng);
    Tensor w = random_tensor({k, m}, rng);
    Tensor u = random_tensor({m, m}, rng);
    std::vector<std::size_t> targets(n);
    for (auto& t : targets) t = rng.below(m);
    const int shape = g % 5;
    auto graph = [&, shape](const Tensor& a, const Tensor& b) {
      Tensor h = matmul(a, b);
      switch (shape) {
        case 0: return cross_entropy(h, targets);
        case 1: return cross_entropy(layer_norm_last(h), targets);
        case 2: return sum(mul(softmax_last(h), matmul(tanh(h), u)));
        case 3: return add(cross_entropy(matmul(layer_norm_last(h), u), targets), mean(softmax_last(h)));
        default: return mean(square(softmax_last(matmul(exp(scale(h, 0.3)), u))));
      }
    };
    for (int which = 0; which < 2; ++which) {
      graphs.merge(which == 0 ? compare_gradients([&](const Tensor& t) { return graph(t, w); }, x)
                              : compare_gradients([&](const Tensor& t) { return graph(x, t); }, w));
    }
  }
  c.note("graph_rel_err_eps1e-6", graphs.max_rel);
  c.note("graph_rel_err", graphs.max_rel_resolved);
  c.note("graph_abs_err_tiny_grads", graphs.max_abs_small);
  c.expect(graphs.max_rel_resolved <= 1e-6, "composite graphs relative <= 1e-6");
  c.expect(graphs.max_abs_small <= 1e-9, "tiny gradients absolute <= 1e-9");

  // Full VAE loss on a 2-sentence batch, every parameter coordinate.
  std::vector<std::string> lines{"the cat sat", "a dog ran far"};
  VaeConfig vc = small_config(4, 7);
  vc.embed_dim = 8;
  vc.head_dim = 4;
  vc.ffn_dim = 8;
  VaeModel model(vc, Vocab::build(lines));
  auto batch = encode_corpus(model.vocab(), lines);
  auto loss_value = [&]() {
    Rng r(3);
    return vae_loss(model, batch, 0.7, 0.0, r).total;
  };
  model.params().zero_grad();
  loss_value().backward();
  GradAgreement vae;
  const double eps = 1e-6;
  for (auto& [name, p] : model.params()) {
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
      const double saved = v[i];
      auto at = [&](double offset) {
        NoGradGuard ng;
        v[i] = saved + offset;
        return loss_value().item();
      };
      const double two_point = (at(eps) - at(-eps)) / (2.0 * eps);
      const double five_point = oracle::five_point_gradient(
          [&](const std::vector<double>& xi) { return at(xi[0] - saved); }, {saved})[0];
      v[i] = saved;
      accumulate(vae, analytic, two_point, five_point);
    }
  }
  c.note("vae_rel_err_eps1e-6", vae.max_rel);
  c.note("vae_rel_err", vae.max_rel_resolved);
  c.note("vae_abs_err_tiny_grads", vae.max_abs_small);
  c.expect(vae.max_rel_resolved <= 1e-4, "vae loss relative <= 1e-4");
  c.expect(vae.max_abs_small <= 1e-9, "vae tiny gradients absolute <= 1e-9");
  const double secs = seconds_since(t0);
  c.note("seconds", secs);
  c.expect(secs < 30.0, "runtime < 30 s");
  return c.outcome();
}

// Moves every parameter off its initial value by a fan-in scaled amount.
void perturb(FlowStack& stack, Rng& rng) {
  for (auto& [name, t] : stack.params()) {
    const double step = t.ndim() == 2 ? 0.3 / std::sqrt(static_cast<double>(t.dim(0))) : 0.05;
    auto v = t.mutable_values();
    for (auto& x : v) x += step * rng.normal();
  }
}

Outcome ac2_flow() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  Rng rng(202);
  double worst_roundtrip = 0.0, worst_logdet = 0.0;
  for (int s = 0; s < 100; ++s) {
    FlowConfig fc;
    fc.dim = 2 * (1 + rng.below(32));
    fc.depth = 1 + rng.below(20);
    fc.additive = rng.below(4) == 0;
    fc.seed = 1000 + s;
    fc.coupling_init = rng.uniform(0.1, 1.0);
    FlowStack stack(fc);
    const std::size_t rows = 3;
    Tensor x = random_tensor({rows, fc.dim}, rng);
    stack.initialize_actnorm(random_tensor({16, fc.dim}, rng, -3.0, 3.0));
    perturb(stack, rng);
    Tensor back = stack.inverse(stack.forward(x).value);
    for (std::size_t i = 0; i < x.numel(); ++i)
      worst_roundtrip = std::max(worst_roundtrip, std::abs(back.values()[i] - x.values()[i]));
  }
  for (int s = 0; s < 30; ++s) {
    FlowConfig fc;
    fc.dim = 2 * (1 + rng.below(3));
    fc.depth = 1 + rng.below(20);
    fc.seed = 5000 + s;
    fc.coupling_init = rng.uniform(0.1, 1.0);
    FlowStack stack(fc);
    stack.initialize_actnorm(random_tensor({16, fc.dim}, rng, -3.0, 3.0));
    perturb(stack, rng);
    const std::size_t d = fc.dim;
    std::vector<double> x0(d);
    for (auto& v : x0) v = rng.uniform(-2.0, 2.0);
    auto f = [&](const std::vector<double>& v) { return stack.forward(Tensor::from_vector({1, d}, v)).value.to_vector(); };
    const double numeric = oracle::log_abs_det(oracle::numeric_jacobian(f, x0), d);
    const double analytic = stack.forward(Tensor::from_vector({1, d}, x0)).logdet.item();
    worst_logdet = std::max(worst_logdet, std::abs(numeric - analytic));
  }
  c.note("roundtrip_err", worst_roundtrip);
  c.note("logdet_err", worst_logdet);
  c.expect(worst_roundtrip <= 1e-9, "roundtrip <= 1e-9");
  c.expect(worst_logdet <= 1e-5, "logdet within 1e-5");
  const double secs = seconds_since(t0);
  c.note("seconds", secs);
  c.expect(secs < 60.0, "runtime < 60 s");
  return c.outcome();
}

Outcome ac3_elbo() {
  Check c;
  Rng rng(303);
  int schedules = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t cycles = 1 + rng.below(8);
    const std::size_t total = cycles + rng.below(2000);
    const double ramp = 0.05 + 0.95 * rng.uniform();
    for (std::size_t k = 0; k < cycles; ++k) {
      const std::size_t start = (k * total + cycles - 1) / cycles;
      const std::size_t next = ((k + 1) * total + cycles - 1) / cycles;
      if (next == start) continue;
      const double len = static_cast<double>(next - start);
      const std::size_t ramp_end = start + static_cast<std::size_t>(std::ceil(ramp * len));
      c.expect(beta_schedule(start, total, cycles, ramp) == 0.0, "beta is 0 at cycle start");
      if (ramp_end < next) c.expect(beta_schedule(ramp_end, total, cycles, ramp) == 1.0, "beta is 1 at ramp end");
      c.expect(beta_schedule(next - 1, total, cycles, ramp) <= 1.0, "beta <= 1");
    }
    ++schedules;
  }
  c.note("schedules", schedules);

  // d total / d KL through the threshold, both in isolation and inside the VAE loss.
  int below = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const double kl = rng.uniform(0.0, 0.999);
    Tensor k = Tensor::scalar(kl, true);
    thresholded_kl(k, rng.uniform(0.01, 1.0), 1.0).backward();
    c.expect(k.has_grad() ? k.grad()[0] == 0.0 : true, "gradient is 0 below lambda");
    Tensor above = Tensor::scalar(1.0 + rng.uniform(0.01, 5.0), true);
    const double beta = rng.uniform(0.01, 1.0);
    thresholded_kl(above, beta, 1.0).backward();
    c.expect(above.grad()[0] == beta, "gradient is beta above lambda");
    ++below;
  }
  std::vector<std::string> lines{"the cat sat", "a dog ran"};
  VaeModel model(small_config(4, 9), Vocab::build(lines));
  auto batch = encode_corpus(model.vocab(), lines);
  Rng r(1);
  VaeLoss loss = vae_loss(model, batch, 1.0, 1.0, r);
  c.note("vae_kl", loss.kl);
  if (loss.kl < 1.0) {
    // Below the threshold the KL projections receive no gradient from the KL term;
    // compare against a loss with beta = 0.
    model.params().zero_grad();
    loss.total.backward();
    const auto with_beta = model.params().at("latent.logvar.w").grad();
    std::vector<double> g1(with_beta.begin(), with_beta.end());
    model.params().zero_grad();
    Rng r2(1);
    vae_loss(model, batch, 0.0, 1.0, r2).total.backward();
    const auto without = model.params().at("latent.logvar.w").grad();
    c.expect(std::equal(g1.begin(), g1.end(), without.begin()), "vae loss KL gradient is 0 below lambda");
  }
  return c.outcome();
}

Outcome ac4_reconstruction() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  LabeledCorpus corpus = grammar_corpus({5, 5, 2}, 4);
  VaeConfig vc = desk_config(4);
  vc.beta_mode = BetaMode::kConstant;
  vc.beta_constant = 0.0;
  vc.epochs = 40;
  vc.batch_size = 10;
  vc.optimizer.learning_rate = 2e-3;
  VaeModel model(vc, Vocab::build(corpus.sentences));
  auto ids = encode_corpus(model.vocab(), corpus.sentences);
  train_vae(model, ids);
  const double bleu = reconstruction_report(model, corpus.sentences).bleu;
  c.note("sentences", static_cast<double>(corpus.sentences.size()));
  c.note("bleu", bleu);
  c.expect(corpus.sentences.size() == 50, "50-sentence corpus");
  c.expect(bleu >= 0.95, "BLEU >= 0.95");
  const double secs = seconds_since(t0);
  c.note("seconds", secs);
  c.expect(secs < 300.0, "within 5 minutes");

  VaeConfig cyc = desk_config(5);
  cyc.beta_mode = BetaMode::kCyclical;
  cyc.kl_threshold = 1.0;
  cyc.epochs = 20;
  cyc.batch_size = 10;
  cyc.optimizer.learning_rate = 2e-3;
  VaeModel cm(cyc, Vocab::build(corpus.sentences));
  auto stats = train_vae(cm, ids);
  c.note("cyclical_final_kl", stats.back().kl);
  c.expect(stats.back().kl > 0.0, "cyclical run keeps KL > 0");
  return c.outcome();
}

Outcome ac5_memory() {
  Check c;
  std::vector<std::string> lines{"the cat sat on the mat", "a dog ran in the park"};
  VaeModel model(desk_config(6), Vocab::build(lines));
  auto ids = model.vocab().encode(lines[0]);
  std::span<const std::size_t> input(ids.data(), ids.size() - 1);
  Rng rng(505);
  double min_logit_diff = 1e9, min_grad = 1e9;
  for (int p = 0; p < 20; ++p) {
    Tensor z1 = Tensor::from_vector({32}, rng.normal_vector(32));
    Tensor z2 = Tensor::from_vector({32}, rng.normal_vector(32));
    MemoryBank b1 = model.memory_project(z1), b2 = model.memory_project(z2);
    Tensor l1 = model.decode_teacher_forced(input, &b1), l2 = model.decode_teacher_forced(input, &b2);
    double diff = 0.0;
    for (std::size_t i = 0; i < l1.numel(); ++i) diff = std::max(diff, std::abs(l1.values()[i] - l2.values()[i]));
    min_logit_diff = std::min(min_logit_diff, diff);
    auto g = numeric_gradient([&](const Tensor& z) { return reconstruction_ce(model, ids, z); }, z1, 1e-6);
    double gmax = 0.0;
    for (double v : g) gmax = std::max(gmax, std::abs(v));
    min_grad = std::min(min_grad, gmax);
  }
  c.note("min_max_logit_diff", min_logit_diff);
  c.note("min_max_fd_grad", min_grad);
  c.expect(min_logit_diff > 1e-6, "logits differ");
  c.expect(min_grad > 0.0, "finite-difference gradient nonzero");
  return c.outcome();
}

EmbeddingBag random_bag(Rng& rng, std::size_t dim) {
  EmbeddingBag b;
  const std::size_t n = 1 + rng.below(4);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    b.points.push_back(rng.normal_vector(dim));
    b.weights.push_back(0.05 + rng.uniform());
    total += b.weights.back();
  }
  for (auto& w : b.weights) w /= total;
  return b;
}

Outcome ac6_emd() {
  Check c;
  Rng rng(606);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t dim = 1 + rng.below(4);
    EmbeddingBag a = random_bag(rng, dim), b = random_bag(rng, dim);
    std::vector<double> cost;
    for (const auto& p : a.points)
      for (const auto& q : b.points) cost.push_back(euclidean(p, q));
    worst = std::max(worst, std::abs(emd(a, b) - oracle::transport_by_vertices(cost, a.weights, b.weights)));
  }
  c.note("max_err_vs_enumeration", worst);
  c.expect(worst <= 1e-9, "matches enumeration within 1e-9");
  double asym = 0.0, self = 0.0, triangle_slack = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t dim = 1 + rng.below(4);
    EmbeddingBag a = random_bag(rng, dim), b = random_bag(rng, dim), d = random_bag(rng, dim);
    asym = std::max(asym, std::abs(emd(a, b) - emd(b, a)));
    self = std::max(self, emd(a, a));
    triangle_slack = std::max(triangle_slack, emd(a, d) - emd(a, b) - emd(b, d));
  }
  c.note("max_asymmetry", asym);
  c.note("max_self_distance", self);
  c.note("max_triangle_excess", triangle_slack);
  c.expect(asym <= 1e-12, "symmetry");
  c.expect(self <= 1e-12, "identity");
  c.expect(triangle_slack <= 1e-12, "triangle inequality");
  return c.outcome();
}

Outcome ac7_is() {
  Check c;
  Rng rng(707);
  const std::size_t vocab = 40, width = 3;
  std::vector<double> base(vocab * width, 0.0);
  for (std::size_t i = Vocab::kReserved; i < vocab; ++i)
    for (std::size_t k = 0; k < width; ++k) base[i * width + k] = rng.normal();
  double worst_two = 0.0, worst_line = 0.0, max_detour = 0.0;
  for (int t = 0; t < 50; ++t) {
    Tensor emb = Tensor::from_vector({vocab, width}, base);
    std::vector<TokenIds> two{{Vocab::kReserved + rng.below(10), Vocab::kReserved + 10 + rng.below(10)},
                              {Vocab::kReserved + 20 + rng.below(10)}};
    worst_two = std::max(worst_two, std::abs(interpolation_smoothness(two, emb) - 1.0));

    // Equal-spaced collinear single-token sentences along a random direction.
    const std::size_t steps = 2 + rng.below(8);
    std::vector<double> line = base;
    std::vector<double> origin = rng.normal_vector(width), dir = rng.normal_vector(width);
    const double spacing = rng.uniform(0.1, 2.0);
    std::vector<TokenIds> path;
    for (std::size_t s = 0; s <= steps; ++s) {
      const std::size_t tok = Vocab::kReserved + s;
      for (std::size_t k = 0; k < width; ++k) line[tok * width + k] = origin[k] + spacing * s * dir[k];
      path.push_back({tok});
    }
    Tensor line_emb = Tensor::from_vector({vocab, width}, line);
    worst_line = std::max(worst_line, std::abs(interpolation_smoothness(path, line_emb) - 1.0));

    // Move one interior point off the segment.
    const std::size_t moved = Vocab::kReserved + 1 + rng.below(steps - 1);
    std::vector<double> off = rng.normal_vector(width);
    for (std::size_t k = 0; k < width; ++k) line[moved * width + k] += 0.5 * off[k];
    Tensor detour_emb = Tensor::from_vector({vocab, width}, line);
    max_detour = std::max(max_detour, interpolation_smoothness(path, detour_emb));
  }
  c.note("two_point_err", worst_two);
  c.note("collinear_err", worst_line);
  c.note("max_detour_is", max_detour);
  c.expect(worst_two == 0.0, "two-point paths exactly 1");
  c.expect(worst_line <= 1e-9, "collinear paths 1 +- 1e-9");
  c.expect(max_detour < 1.0, "detours < 1");
  return c.outcome();
}

FactorDataset factor_data(std::size_t n, bool copy, std::uint64_t seed) {
  Rng rng(seed);
  FactorDataset d;
  d.rows = n;
  d.dims = 3;
  d.n_factors = 3;
  d.cardinalities = {5, 4, 6};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < 3; ++k) d.factors.push_back(static_cast<int>(rng.below(d.cardinalities[k])));
    for (std::size_t k = 0; k < 3; ++k)
      d.representations.push_back(copy ? d.factors[i * 3 + k] + 0.05 * rng.normal() : rng.normal());
  }
  return d;
}

Outcome ac8_disentanglement() {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  MetricsConfig mc;
  mc.seed = 8;
  FactorDataset copy = factor_data(5000, true, 81);
  const double m = mig(copy, mc);
  const double mod = modularity(copy, mc);
  const double zmv = z_min_var_error(copy, mc);
  const DciScores d = dci(copy, mc);
  FactorDataset indep = factor_data(5000, false, 82);
  const double m0 = mig(indep, mc);
  const double zmv0 = z_min_var_error(indep, mc);
  c.note("copy_mig", m);
  c.note("copy_modularity", mod);
  c.note("copy_zmv_err", zmv);
  c.note("copy_dci_d", d.disentanglement);
  c.note("indep_mig", m0);
  c.note("indep_zmv_err", zmv0);
  c.expect(m >= 0.9, "MIG >= 0.9");
  c.expect(mod >= 0.9, "modularity >= 0.9");
  c.expect(zmv <= 0.02, "z-min-var <= 0.02");
  c.expect(d.disentanglement >= 0.9, "DCI D >= 0.9");
  c.expect(m0 <= 0.05, "independent MIG <= 0.05");
  c.expect(zmv0 >= 0.6, "independent z-min-var >= 0.6");
  const double secs = seconds_since(t0);
  c.note("seconds", secs);
  c.expect(secs < 120.0, "runtime < 2 minutes");
  return c.outcome();
}

Outcome ac9_vq() {
  Check c;
  Rng rng(909);
  Codebook cb = Codebook::random(6, 3, 0.25, rng);
  // Straight-through: d loss(z_q) / d e equals d loss / d z_q, checked numerically at z_q.
  Tensor w = Tensor::from_vector({2, 3}, rng.normal_vector(6));
  auto downstream = [&](const Tensor& z) { return sum(mul(tanh(z), w)); };
  Tensor e = Tensor::from_vector({2, 3}, rng.normal_vector(6, 0.1), true);
  Quantized q = quantize(cb, e);
  downstream(q.z_q).backward();
  Tensor codes = Tensor::from_vector({2, 3}, q.z_q.to_vector());
  auto fd = numeric_gradient(downstream, codes, 1e-6);
  double st_err = 0.0;
  for (std::size_t i = 0; i < fd.size(); ++i) st_err = std::max(st_err, std::abs(e.grad()[i] - fd[i]));
  c.note("straight_through_err", st_err);
  c.expect(st_err <= 1e-8, "straight-through gradient matches finite differences");
  // And exactly the upstream gradient.
  Tensor zq_leaf = Tensor::from_vector({2, 3}, q.z_q.to_vector(), true);
  downstream(zq_leaf).backward();
  bool exact = true;
  for (std::size_t i = 0; i < 6; ++i) exact = exact && e.grad()[i] == zq_leaf.grad()[i];
  c.expect(exact, "straight-through gradient is the identity");

  Tensor on_code = Tensor::from_vector({1, 3}, std::vector<double>(cb.entries.values().begin() + 6,
                                                                    cb.entries.values().begin() + 9));
  Quantized q2 = quantize(cb, on_code);
  VqTerms terms = vq_loss(on_code, cb, q2.indices);
  c.expect(terms.codebook.item() == 0.0 && terms.commitment.item() == 0.0, "both terms 0 on a code");

  VqAutoencoderConfig ac;
  ac.codebook_size = 2;
  ac.epochs = 300;
  ac.seed = 9;
  VqAutoencoder ae(ac);
  std::vector<double> data;
  const double means[2][2] = {{1.0, 0.5}, {-1.0, -0.8}};
  for (int i = 0; i < 200; ++i)
    for (int k = 0; k < 2; ++k) data.push_back(means[i % 2][k] + 0.05 * rng.normal());
  ae.train(Tensor::from_vector({200, 2}, data));
  double cm[2][2] = {{0, 0}, {0, 0}};
  for (int i = 0; i < 200; ++i)
    for (int k = 0; k < 2; ++k) cm[i % 2][k] += data[i * 2 + k] / 100.0;
  auto entries = ae.codebook().entries.to_vector();
  double worst = 0.0;
  for (int m = 0; m < 2; ++m) {
    double best = 1e9;
    for (int k = 0; k < 2; ++k) best = std::min(best, std::hypot(entries[k * 2] - cm[m][0], entries[k * 2 + 1] - cm[m][1]));
    worst = std::max(worst, best);
  }
  c.note("max_code_to_mean", worst);
  c.expect(worst <= 0.1, "codes within 0.1 of cluster means");
  return c.outcome();
}

std::vector<DefmodPair> defmod_pairs(const LabeledCorpus& corpus, std::size_t n, std::size_t width, Rng& rng) {
  // Embedding = fixed random projection of the factor vector plus small noise.
  const std::size_t f = corpus.factor_count();
  std::vector<double> proj = rng.normal_vector(f * width);
  std::vector<DefmodPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    DefmodPair p;
    p.word = "w" + std::to_string(i);
    p.definition = corpus.sentences[i];
    p.embedding.assign(width, 0.0);
    for (std::size_t j = 0; j < width; ++j) {
      for (std::size_t k = 0; k < f; ++k) p.embedding[j] += proj[k * width + j] * corpus.factors[i][k];
      p.embedding[j] += 0.01 * rng.normal();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Outcome ac10_defmod() {
  Check c;
  Rng rng(1010);
  LabeledCorpus corpus = grammar_corpus({5, 5, 4}, 10);
  VaeModel vae(small_config(6, 10), Vocab::build(corpus.sentences));
  std::vector<DefmodPair> pairs = defmod_pairs(corpus, 100, 2, rng);
  const auto frozen = vae.params().snapshot();

  FlowConfig fc;
  fc.dim = 6;
  fc.depth = 4;
  fc.seed = 10;
  FlowStack fwd(fc);
  InnTrainConfig tc;
  tc.epochs = 60;
  tc.optimizer.learning_rate = 1e-3;
  InnTrainResult fr = train_inn(fwd, vae, pairs, tc);
  bool decreasing = fr.epoch_loss.front() < fr.initial_loss;
  for (std::size_t i = 1; i < fr.epoch_loss.size(); ++i) decreasing = decreasing && fr.epoch_loss[i] < fr.epoch_loss[i - 1];
  c.note("forward_initial", fr.initial_loss);
  c.note("forward_final", fr.epoch_loss.back());
  c.expect(decreasing, "forward loss strictly decreasing");

  FlowStack rev(fc);
  tc.direction = InnDirection::kReverse;
  tc.epochs = 300;
  tc.optimizer.learning_rate = 5e-3;
  InnTrainResult rr = train_inn(rev, vae, pairs, tc);
  c.note("reverse_initial", rr.initial_loss);
  c.note("reverse_final", rr.epoch_loss.back());
  c.expect(rr.epoch_loss.back() <= 0.5 * rr.initial_loss, "reverse MSE halved");
  c.expect(vae.params().snapshot() == frozen, "VAE untouched");

  bool exact = true;
  for (const auto& p : pairs) exact = exact && untriple(triple_embed(p.embedding)) == p.embedding;
  c.expect(exact, "triple/untriple exact");
  return c.outcome();
}

Outcome ac11_inference() {
  Check c;
  LabeledCorpus corpus = grammar_corpus({6, 6, 7}, 11);
  VaeConfig vc = small_config(8, 11);
  vc.epochs = 5;
  VaeModel model(vc, Vocab::build(corpus.sentences));
  train_vae(model, encode_corpus(model.vocab(), corpus.sentences));

  Rng rng(1111);
  auto triple_at = [&](std::size_t i) {
    const std::size_t j = rng.below(corpus.sentences.size());
    return Triple{corpus.sentences[i], corpus.sentences[j], corpus.sentences[i]};
  };
  std::vector<Triple> train, held;
  for (std::size_t i = 0; i < 200; ++i) train.push_back(triple_at(i));
  for (std::size_t i = 200; i < 250; ++i) held.push_back(triple_at(i));

  InferenceHead head(vc.latent_dim, 11);
  const double before = latent_mse(model, head, held);
  std::vector<std::pair<std::string, std::vector<double>>> frozen;
  for (const auto& [name, t] : model.params())
    if (!is_inference_trainable(name)) frozen.emplace_back(name, t.to_vector());
  InferenceTrainConfig tc;
  tc.epochs = 40;
  tc.optimizer.learning_rate = 3e-3;
  train_inference(model, head, train, tc);
  const double after = latent_mse(model, head, held);
  c.note("heldout_mse_before", before);
  c.note("heldout_mse_after", after);
  c.expect(after <= 0.5 * before, "held-out latent MSE halved");
  bool unchanged = true;
  for (const auto& [name, v] : frozen) unchanged = unchanged && model.params().at(name).to_vector() == v;
  c.expect(unchanged, "frozen parameters bitwise unchanged");

  for (const char* name : {"dec.head.w", "dec.head.b"}) {
    auto v = model.params().at(name).mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
  }
  const double ppl = perplexity(model, head, held);
  c.note("uniform_ppl", ppl);
  c.note("vocab", static_cast<double>(model.vocab().size()));
  c.expect(ppl == static_cast<double>(model.vocab().size()), "uniform perplexity == V");
  return c.outcome();
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() == "run.log") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    files[fs::relative(entry.path(), dir).string()] = os.str();
  }
  return files;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) out += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return out + "'";
}

Outcome ac12_determinism(const std::string& cli) {
  Check c;
  if (cli.empty() || !fs::exists(cli)) {
    c.expect(false, "CLI binary path not given");
    return c.outcome();
  }
  const fs::path root = fs::temp_directory_path() / ("latentlab_ac12_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root / "data");
  const fs::path data = root / "data";
  const std::string gen_args = "--slots 3,3,2 --template '{0} {1} {2}'";
  // Each run works inside its own directory with relative paths, so echoed
  // arguments are identical between the two runs.
  const std::string exe = fs::absolute(cli).string();
  auto exec = [&](const std::string& sub, const std::string& args, const fs::path& cwd) {
    fs::create_directories(cwd);
    const std::string cmd = "cd " + shell_quote(cwd.string()) + " && " + shell_quote(exe) + " " + sub + " " +
                            args + " --seed 12 --out-dir " + sub + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    c.expect(rc == 0, sub + " exited with " + std::to_string(rc));
    return rc == 0;
  };
  if (!exec("gen-corpus", gen_args, data)) {
    fs::remove_all(root);
    return c.outcome();
  }
  const auto sentences = read_lines((data / "gen-corpus" / "corpus.txt").string());
  {
    std::vector<DefmodPair> pairs;
    std::vector<Triple> triples;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      const double x = static_cast<double>(i);
      pairs.push_back({"w" + std::to_string(i), {std::sin(x), std::cos(x)}, sentences[i]});
      triples.push_back({sentences[i], sentences[(i + 1) % sentences.size()], sentences[i]});
    }
    write_defmod_pairs((data / "pairs.jsonl").string(), pairs);
    write_triples((data / "triples.tsv").string(), triples);
    std::ofstream sts(data / "sts.tsv");
    for (std::size_t i = 0; i < 6; ++i) sts << sentences[i] << '\t' << sentences[i + 6] << '\t' << (i * 7 % 5) << '\n';
    std::ofstream path(data / "path.txt");
    for (std::size_t i = 0; i < 4; ++i) path << sentences[i] << '\n';
  }
  const std::string s0 = shell_quote(sentences[0]), s1 = shell_quote(sentences[1]), s2 = shell_quote(sentences[2]);

  const std::vector<std::pair<std::string, std::string>> steps{
      {"gen-corpus", gen_args},
      {"train-vae", "--corpus gen-corpus/corpus.txt --epochs 3 --latent-dim 6 --layers 1 --heads 2 --head-dim 4"},
      {"encode", "--ckpt train-vae/model.json --input gen-corpus/factors.tsv"},
      {"decode", "--ckpt train-vae/model.json --latents encode/latents.tsv"},
      {"reconstruct", "--ckpt train-vae/model.json --input gen-corpus/corpus.txt"},
      {"interpolate", "--ckpt train-vae/model.json --source " + s0 + " --target " + s1 + " --step 0.25"},
      {"traverse", "--ckpt train-vae/model.json --source " + s0 + " --radius 0.5 --count 4"},
      {"arith", "--ckpt train-vae/model.json --a " + s0 + " --b " + s1 + " --c " + s2},
      {"is-metric", "--ckpt train-vae/model.json --path ../data/path.txt"},
      {"train-inn", "--ckpt train-vae/model.json --pairs ../data/pairs.jsonl --epochs 3 --depth 2"},
      {"defmod", "--ckpt train-vae/model.json --flow train-inn/flow.json --pairs ../data/pairs.jsonl"},
      {"train-inference", "--ckpt train-vae/model.json --triples ../data/triples.tsv --epochs 2"},
      {"metrics", "--input gen-corpus/factors.tsv --ckpt train-vae/model.json"},
      {"eval", "--ckpt train-vae/model.json --input gen-corpus/corpus.txt --sts ../data/sts.tsv --per-sentence"},
  };
  auto run_all = [&](const fs::path& run) {
    for (const auto& [sub, args] : steps)
      if (!exec(sub, args, run)) return false;
    return true;
  };

  if (run_all(root / "a") && run_all(root / "b")) {
    auto a = read_tree(root / "a"), b = read_tree(root / "b");
    std::size_t compared = 0;
    for (const auto& [name, content] : a) {
      auto it = b.find(name);
      const bool same = it != b.end() && it->second == content;
      c.expect(same, name + " differs");
      ++compared;
    }
    c.expect(a.size() == b.size(), "same file set");
    c.note("files_compared", static_cast<double>(compared));
    c.note("subcommands", static_cast<double>(steps.size()));
  }
  fs::remove_all(root);
  return c.outcome();
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1 autodiff soundness", ac1_autodiff},
      {"AC2 flow bijectivity", ac2_flow},
      {"AC3 ELBO mechanics", ac3_elbo},
      {"AC4 desk-scale reconstruction", ac4_reconstruction},
      {"AC5 memory injection efficacy", ac5_memory},
      {"AC6 EMD/WMD exactness", ac6_emd},
      {"AC7 IS metric", ac7_is},
      {"AC8 disentanglement oracle suite", ac8_disentanglement},
      {"AC9 VQ contract", ac9_vq},
      {"AC10 defmod pipeline", ac10_defmod},
      {"AC11 inference mapper", ac11_inference},
      {"AC12 CLI determinism", [&] { return ac12_determinism(cli); }},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " | " << o.detail << std::endl;
  }
  std::cout << (12 - failed) << "/12 criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
