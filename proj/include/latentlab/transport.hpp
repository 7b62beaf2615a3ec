#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace latentlab {

// Weighted point set; weights are nonnegative and sum to 1.
struct EmbeddingBag {
  std::vector<std::vector<double>> points;
  std::vector<double> weights;

  static constexpr std::size_t kMaxPoints = 32;

  static EmbeddingBag uniform(std::vector<std::vector<double>> points);
  std::size_t dim() const { return points.empty() ? 0 : points.front().size(); }
  void validate() const;
};

double euclidean(std::span<const double> a, std::span<const double> b);

// Exact minimum-cost transport between two marginals under a dense cost matrix
// (row-major, supply.size() x demand.size()). Successive shortest paths.
double min_cost_transport(std::span<const double> cost, std::span<const double> supply,
                          std::span<const double> demand);

// min over permutations p of mean_i cost[i, p(i)] for an n x n matrix, n <= 8.
double exhaustive_assignment(std::span<const double> cost, std::size_t n);

// Exact earth mover's distance with Euclidean ground metric.
double emd(const EmbeddingBag& a, const EmbeddingBag& b);

}  // namespace latentlab
