#include "latentlab/geometry.hpp"

#include <cmath>
#include <map>

#include "latentlab/transport.hpp"

namespace latentlab {

namespace {

void require_same_dim(const char* op, std::size_t a, std::size_t b) {
  if (a != b)
    throw ShapeError(std::string(op) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
}

EmbeddingBag token_bag(std::span<const std::size_t> ids, const Tensor& embeddings) {
  const TokenIds tokens = strip_specials(ids);
  if (tokens.empty()) throw DataError("wmd: sentence is empty after removing special tokens");
  if (embeddings.ndim() != 2) throw ShapeError("wmd: embeddings must be (vocab, width)");
  const std::size_t width = embeddings.dim(1);
  std::map<std::size_t, std::size_t> counts;
  for (auto t : tokens) {
    if (t >= embeddings.dim(0)) throw DataError("wmd: token id outside the embedding table");
    ++counts[t];
  }
  EmbeddingBag bag;
  auto table = embeddings.values();
  for (const auto& [id, c] : counts) {
    bag.points.emplace_back(table.begin() + static_cast<std::ptrdiff_t>(id * width),
                            table.begin() + static_cast<std::ptrdiff_t>((id + 1) * width));
    bag.weights.push_back(static_cast<double>(c) / static_cast<double>(tokens.size()));
  }
  return bag;
}

}  // namespace

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

InterpolationPath interpolate(std::span<const double> z1, std::span<const double> z2, double step) {
  require_same_dim("interpolate", z1.size(), z2.size());
  if (!(step > 0.0 && step <= 1.0)) throw DataError("interpolate: step must be in (0, 1]");
  const auto segments = static_cast<std::size_t>(std::ceil(1.0 / step - 1e-9));
  InterpolationPath path;
  for (std::size_t k = 0; k <= segments; ++k) {
    const double t = k == segments ? 1.0 : static_cast<double>(k) * step;
    Latent z(z1.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = z1[i] * (1.0 - t) + z2[i] * t;
    path.t.push_back(t);
    path.latents.push_back(std::move(z));
  }
  return path;
}

std::vector<Latent> traverse(std::span<const double> z, double radius, std::size_t count, Rng& rng) {
  if (!(radius >= 0.0)) throw DataError("traverse: radius must be >= 0");
  const std::size_t d = z.size();
  std::vector<Latent> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    std::vector<double> dir = rng.normal_vector(d);
    double norm = l2_norm(dir);
    while (norm == 0.0) {
      dir = rng.normal_vector(d);
      norm = l2_norm(dir);
    }
    double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
    Latent p(d);
    for (;;) {
      for (std::size_t i = 0; i < d; ++i) p[i] = z[i] + r * dir[i] / norm;
      std::vector<double> diff(d);
      for (std::size_t i = 0; i < d; ++i) diff[i] = p[i] - z[i];
      if (l2_norm(diff) <= radius) break;
      r *= 1.0 - 1e-12;  // rounding pushed the sample past the boundary
    }
    out.push_back(std::move(p));
  }
  return out;
}

Latent latent_arithmetic(std::span<const double> za, std::span<const double> zb,
                         std::span<const double> zc) {
  require_same_dim("latent_arithmetic", za.size(), zb.size());
  require_same_dim("latent_arithmetic", za.size(), zc.size());
  Latent out(za.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = za[i] - zb[i] + zc[i];
  return out;
}

double wmd_sentence(std::span<const std::size_t> s1, std::span<const std::size_t> s2,
                    const Tensor& embeddings) {
  return emd(token_bag(s1, embeddings), token_bag(s2, embeddings));
}

double interpolation_smoothness(std::span<const TokenIds> path, const Tensor& embeddings) {
  if (path.size() < 2) throw DataError("interpolation_smoothness: path needs at least 2 sentences");
  for (const auto& s : path)
    if (strip_specials(s).empty()) throw DataError("interpolation_smoothness: empty sentence on path");
  const double ideal = wmd_sentence(path.front(), path.back(), embeddings);
  double actual = 0.0;
  for (std::size_t t = 0; t + 1 < path.size(); ++t) {
    if (strip_specials(path[t]) == strip_specials(path[t + 1])) continue;
    actual += wmd_sentence(path[t], path[t + 1], embeddings);
  }
  if (actual == 0.0) return 1.0;
  return ideal / actual;
}

}  // namespace latentlab
