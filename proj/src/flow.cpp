#include "latentlab/flow.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "latentlab/ops.hpp"

namespace latentlab {

namespace {

Tensor as_rows(const Tensor& x, std::size_t dim, const char* op) {
  if (x.ndim() == 1 && x.dim(0) == dim) return reshape(x, {1, dim});
  if (x.ndim() == 2 && x.dim(1) == dim) return x;
  throw ShapeError(std::string(op) + ": input " + shape_str(x.shape()) + " does not match flow dimension " +
                   std::to_string(dim));
}

std::size_t half_dim(const Tensor& x, const char* op) {
  if (x.ndim() != 2) throw ShapeError(std::string(op) + ": expected (N, d), got " + shape_str(x.shape()));
  const std::size_t d = x.dim(1);
  if (d % 2 != 0)
    throw ShapeError(std::string(op) + ": coupling needs an even dimension, got " + std::to_string(d));
  return d / 2;
}

}  // namespace

std::pair<Tensor, Tensor> CouplingNet::operator()(const Tensor& x_b, Rng* dropout_rng) const {
  Tensor h = tanh(hidden(x_b));
  if (dropout > 0.0 && dropout_rng) h = latentlab::dropout(h, dropout, *dropout_rng);
  Tensor out = output(h);
  const std::size_t half = x_b.dim(1);
  if (additive) return {Tensor::zeros({x_b.dim(0), half}), out};
  return {slice(out, 1, 0, half), slice(out, 1, half, half)};
}

FlowOutput coupling_forward(const Tensor& x, const CouplingNet& net, Rng* dropout_rng) {
  const std::size_t half = half_dim(x, "coupling_forward");
  Tensor x_a = slice(x, 1, 0, half);
  Tensor x_b = slice(x, 1, half, half);
  auto [log_s, t] = net(x_b, dropout_rng);
  Tensor y_a = net.additive ? add(x_a, t) : add(mul(exp(log_s), x_a), t);
  FlowOutput out;
  out.value = concat({y_a, x_b}, 1);
  out.logdet = sum_last(log_s);
  return out;
}

Tensor coupling_inverse(const Tensor& y, const CouplingNet& net) {
  const std::size_t half = half_dim(y, "coupling_inverse");
  Tensor y_a = slice(y, 1, 0, half);
  Tensor y_b = slice(y, 1, half, half);
  auto [log_s, t] = net(y_b, nullptr);
  Tensor x_a = net.additive ? sub(y_a, t) : mul(sub(y_a, t), exp(neg(log_s)));
  return concat({x_a, y_b}, 1);
}

FlowOutput ActNorm::forward(const Tensor& x) const {
  FlowOutput out;
  out.value = add(mul(x, exp(log_scale)), bias);
  Tensor total = reshape(sum(log_scale), {1, 1});
  // Same contribution for every row.
  out.logdet = matmul(Tensor::full({x.dim(0), 1}, 1.0), total);
  return out;
}

Tensor ActNorm::inverse(const Tensor& y) const {
  return mul(sub(y, bias), exp(neg(log_scale)));
}

void ActNorm::initialize(const Tensor& batch) {
  if (batch.ndim() != 2 || batch.dim(0) < 2)
    throw DataError("actnorm_init: batch needs at least 2 rows, got " + shape_str(batch.shape()));
  const std::size_t n = batch.dim(0), d = batch.dim(1);
  if (d != log_scale.numel()) throw ShapeError("actnorm_init: batch width does not match layer");
  auto x = batch.values();
  auto ls = log_scale.mutable_values();
  auto b = bias.mutable_values();
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += x[i * d + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[i * d + j] - mu) * (x[i * d + j] - mu);
    var /= static_cast<double>(n);
    if (!(var > 0.0))
      throw DataError("actnorm_init: dimension " + std::to_string(j) + " has zero variance");
    const double inv_std = 1.0 / std::sqrt(var);
    ls[j] = std::log(inv_std);
    b[j] = -mu * inv_std;
  }
  initialized = true;
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size(), perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size() || inv[perm[i]] != perm.size())
      throw DataError("permutation is not a bijection");
    inv[perm[i]] = i;
  }
  return inv;
}

FlowOutput FlowBlock::forward(const Tensor& x, Rng* dropout_rng) const {
  FlowOutput a = actnorm.forward(x);
  FlowOutput c = coupling_forward(a.value, coupling, dropout_rng);
  FlowOutput out;
  out.value = gather_last(c.value, permutation);
  out.logdet = add(a.logdet, c.logdet);
  return out;
}

Tensor FlowBlock::backward_map(const Tensor& y) const {
  return actnorm.inverse(coupling_inverse(gather_last(y, inverse), coupling));
}

void FlowConfig::validate() const {
  if (dim < 2 || dim % 2 != 0) throw DataError("flow config: dim must be even and >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw DataError("flow config: dropout must be in [0, 1)");
  if (coupling_init < 0.0) throw DataError("flow config: coupling_init must be >= 0");
}

FlowStack::FlowStack(FlowConfig config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.dim, half = d / 2;
  for (std::size_t b = 0; b < config_.depth; ++b) {
    const std::string p = "flow.blocks." + std::to_string(b);
    FlowBlock block;
    block.actnorm.log_scale = params_.zeros(p + ".actnorm.log_scale", {d});
    block.actnorm.bias = params_.zeros(p + ".actnorm.bias", {d});
    block.coupling.hidden = Linear::create(params_, p + ".coupling.hidden", half, d, rng);
    const double out_std = config_.coupling_init / std::sqrt(static_cast<double>(d));
    block.coupling.output = Linear::create(params_, p + ".coupling.output", d,
                                           config_.additive ? half : d, rng, out_std);
    block.coupling.additive = config_.additive;
    block.coupling.dropout = config_.dropout;
    block.permutation.resize(d);
    std::iota(block.permutation.begin(), block.permutation.end(), 0);
    rng.shuffle(block.permutation);
    block.inverse = inverse_permutation(block.permutation);
    blocks_.push_back(std::move(block));
  }
}

FlowOutput FlowStack::forward(const Tensor& x, Rng* dropout_rng) const {
  Tensor h = as_rows(x, config_.dim, "stack_forward");
  FlowOutput out;
  out.logdet = Tensor::zeros({h.dim(0), 1});
  for (const auto& b : blocks_) {
    FlowOutput step = b.forward(h, dropout_rng);
    h = step.value;
    out.logdet = add(out.logdet, step.logdet);
  }
  out.value = h;
  return out;
}

Tensor FlowStack::inverse(const Tensor& z) const {
  Tensor h = as_rows(z, config_.dim, "stack_inverse");
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) h = it->backward_map(h);
  return h;
}

bool FlowStack::actnorm_initialized() const {
  for (const auto& b : blocks_)
    if (!b.actnorm.initialized) return false;
  return true;
}

void FlowStack::initialize_actnorm(const Tensor& batch) {
  NoGradGuard no_grad;
  Tensor h = as_rows(batch, config_.dim, "actnorm_init");
  for (auto& b : blocks_) {
    b.actnorm.initialize(h);
    h = b.forward(h).value;
  }
}

void FlowStack::mark_initialized() {
  for (auto& b : blocks_) b.actnorm.initialized = true;
}

Tensor inn_nll_loss(const FlowStack& stack, const Tensor& batch) {
  FlowOutput out = stack.forward(batch);
  Tensor energy = scale(sum_last(square(out.value)), 0.5);
  return mean(sub(energy, out.logdet));
}

}  // namespace latentlab
