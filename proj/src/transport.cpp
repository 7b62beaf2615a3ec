#include "latentlab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "latentlab/tensor.hpp"

namespace latentlab {

namespace {

constexpr double kWeightTolerance = 1e-9;
constexpr double kFlowEpsilon = 1e-15;

bool uniform_weights(const std::vector<double>& w) {
  for (double v : w)
    if (std::abs(v - w.front()) > 1e-15) return false;
  return true;
}

}  // namespace

EmbeddingBag EmbeddingBag::uniform(std::vector<std::vector<double>> points) {
  EmbeddingBag bag;
  const double w = points.empty() ? 0.0 : 1.0 / static_cast<double>(points.size());
  bag.weights.assign(points.size(), w);
  bag.points = std::move(points);
  return bag;
}

void EmbeddingBag::validate() const {
  if (points.empty()) throw DataError("embedding bag: no points");
  if (points.size() > kMaxPoints)
    throw DataError("embedding bag: " + std::to_string(points.size()) + " points exceeds " +
                    std::to_string(kMaxPoints));
  if (weights.size() != points.size()) throw DataError("embedding bag: weights/points length mismatch");
  for (const auto& p : points)
    if (p.size() != points.front().size()) throw DataError("embedding bag: ragged point dimensions");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DataError("embedding bag: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DataError("embedding bag: weights do not sum to 1");
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

double min_cost_transport(std::span<const double> cost, std::span<const double> supply,
                          std::span<const double> demand) {
  const std::size_t n = supply.size(), m = demand.size();
  if (cost.size() != n * m) throw ShapeError("min_cost_transport: cost matrix size mismatch");
  const double target = std::min(std::accumulate(supply.begin(), supply.end(), 0.0),
                                 std::accumulate(demand.begin(), demand.end(), 0.0));
  // Node layout: 0 = source, 1..n = supply, n+1..n+m = demand, n+m+1 = sink.
  const std::size_t nodes = n + m + 2, src = 0, sink = n + m + 1;
  std::vector<double> out_flow(n, 0.0), in_flow(m, 0.0), flow(n * m, 0.0);
  double shipped = 0.0;
  const double inf = std::numeric_limits<double>::infinity();

  while (shipped < target - kFlowEpsilon) {
    // Bellman-Ford over the residual graph (no negative cycles by optimality).
    std::vector<double> dist(nodes, inf);
    std::vector<std::ptrdiff_t> prev(nodes, -1);
    dist[src] = 0.0;
    for (std::size_t iter = 0; iter + 1 < nodes; ++iter) {
      bool changed = false;
      auto relax = [&](std::size_t u, std::size_t v, double c) {
        if (dist[u] < inf && dist[u] + c < dist[v] - 1e-15) {
          dist[v] = dist[u] + c;
          prev[v] = static_cast<std::ptrdiff_t>(u);
          changed = true;
        }
      };
      for (std::size_t i = 0; i < n; ++i) {
        if (supply[i] - out_flow[i] > kFlowEpsilon) relax(src, 1 + i, 0.0);
        if (out_flow[i] > kFlowEpsilon) relax(1 + i, src, 0.0);
        for (std::size_t j = 0; j < m; ++j) {
          relax(1 + i, 1 + n + j, cost[i * m + j]);
          if (flow[i * m + j] > kFlowEpsilon) relax(1 + n + j, 1 + i, -cost[i * m + j]);
        }
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (demand[j] - in_flow[j] > kFlowEpsilon) relax(1 + n + j, sink, 0.0);
        if (in_flow[j] > kFlowEpsilon) relax(sink, 1 + n + j, 0.0);
      }
      if (!changed) break;
    }
    if (dist[sink] == inf) break;

    // Bottleneck along the path.
    double push = target - shipped;
    for (std::size_t v = sink; v != src; v = static_cast<std::size_t>(prev[v])) {
      const std::size_t u = static_cast<std::size_t>(prev[v]);
      double residual = inf;
      if (u == src) residual = supply[v - 1] - out_flow[v - 1];
      else if (v == src) residual = out_flow[u - 1];
      else if (v == sink) residual = demand[u - 1 - n] - in_flow[u - 1 - n];
      else if (u == sink) residual = in_flow[v - 1 - n];
      else if (u <= n && v > n) residual = inf;
      else residual = flow[(v - 1) * m + (u - 1 - n)];
      push = std::min(push, residual);
    }
    for (std::size_t v = sink; v != src; v = static_cast<std::size_t>(prev[v])) {
      const std::size_t u = static_cast<std::size_t>(prev[v]);
      if (u == src) out_flow[v - 1] += push;
      else if (v == src) out_flow[u - 1] -= push;
      else if (v == sink) in_flow[u - 1 - n] += push;
      else if (u == sink) in_flow[v - 1 - n] -= push;
      else if (u <= n && v > n) flow[(u - 1) * m + (v - 1 - n)] += push;
      else flow[(v - 1) * m + (u - 1 - n)] -= push;
    }
    shipped += push;
  }

  double total = 0.0;
  for (std::size_t k = 0; k < n * m; ++k) total += flow[k] * cost[k];
  return total;
}

double exhaustive_assignment(std::span<const double> cost, std::size_t n) {
  if (n == 0 || n > 8 || cost.size() != n * n)
    throw ShapeError("exhaustive_assignment: needs an n x n cost matrix with 1 <= n <= 8");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i) c += cost[i * n + perm[i]];
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

double emd(const EmbeddingBag& a, const EmbeddingBag& b) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim())
    throw DataError("emd: point dimensions differ (" + std::to_string(a.dim()) + " vs " +
                    std::to_string(b.dim()) + ")");
  const double sa = std::accumulate(a.weights.begin(), a.weights.end(), 0.0);
  const double sb = std::accumulate(b.weights.begin(), b.weights.end(), 0.0);
  if (std::abs(sa - sb) > kWeightTolerance) throw DataError("emd: bag weight sums differ");

  const std::size_t n = a.points.size(), m = b.points.size();
  std::vector<double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) cost[i * m + j] = euclidean(a.points[i], b.points[j]);

  if (n == m && n <= 8 && uniform_weights(a.weights) && uniform_weights(b.weights))
    return exhaustive_assignment(cost, n);
  return min_cost_transport(cost, a.weights, b.weights);
}

}  // namespace latentlab
