#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "latentlab/random.hpp"
#include "latentlab/tensor.hpp"
#include "latentlab/text.hpp"

namespace latentlab {

using Latent = std::vector<double>;

struct InterpolationPath {
  std::vector<double> t;
  std::vector<Latent> latents;
  std::vector<std::string> sentences;  // filled by the caller after decoding
};

// z_t = z1 (1 - t) + z2 t for t = 0, step, ..., 1 (both endpoints exact).
InterpolationPath interpolate(std::span<const double> z1, std::span<const double> z2, double step);

// Samples uniformly inside the L2 ball of `radius` around z.
std::vector<Latent> traverse(std::span<const double> z, double radius, std::size_t count, Rng& rng);

// za - zb + zc
Latent latent_arithmetic(std::span<const double> za, std::span<const double> zb,
                         std::span<const double> zc);

// Word Mover's Distance between two token sequences (specials stripped) using
// rows of `embeddings` (vocab, width). Repeated tokens accumulate weight.
double wmd_sentence(std::span<const std::size_t> s1, std::span<const std::size_t> s2,
                    const Tensor& embeddings);

// delta(s_0, s_T) / sum_t delta(s_t, s_t+1) with delta = WMD; 1 when the path never moves.
double interpolation_smoothness(std::span<const TokenIds> path, const Tensor& embeddings);

double l2_norm(std::span<const double> v);

}  // namespace latentlab
