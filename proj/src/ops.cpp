#include "latentlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace latentlab {

namespace {

using detail::Node;

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const char* op, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return sa;
  if (b.numel() == 1 || is_suffix(sb, sa)) return sa;
  if (a.numel() == 1 || is_suffix(sa, sb)) return sb;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(sa) + " and " + shape_str(sb) +
                   " do not broadcast");
}

std::size_t last_extent(const Tensor& a, const char* op) {
  if (a.ndim() == 0) throw ShapeError(std::string(op) + ": needs at least one axis, got ()");
  return a.shape().back();
}

void require_2d(const Tensor& a, const char* op) {
  if (a.ndim() != 2)
    throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(a.shape()));
}

template <typename F, typename DF>
Tensor unary(const Tensor& a, const char* op, F f, DF df) {
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return Tensor::make(a.shape(), std::move(out), op, {a}, [df](Node& n) {
    Node& in = *n.inputs[0];
    for (std::size_t i = 0; i < n.value.size(); ++i)
      in.grad[i] += n.grad[i] * df(in.value[i], n.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("add", a, b);
  const std::size_t n = shape_numel(shape), na = a.numel(), nb = b.numel();
  auto x = a.values(), y = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i % na] + y[i % nb];
  return Tensor::make(std::move(shape), std::move(out), "add", {a, b}, [na, nb](Node& node) {
    Node& ia = *node.inputs[0];
    Node& ib = *node.inputs[1];
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (ia.requires_grad) ia.grad[i % na] += node.grad[i];
      if (ib.requires_grad) ib.grad[i % nb] += node.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("sub", a, b);
  const std::size_t n = shape_numel(shape), na = a.numel(), nb = b.numel();
  auto x = a.values(), y = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i % na] - y[i % nb];
  return Tensor::make(std::move(shape), std::move(out), "sub", {a, b}, [na, nb](Node& node) {
    Node& ia = *node.inputs[0];
    Node& ib = *node.inputs[1];
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (ia.requires_grad) ia.grad[i % na] += node.grad[i];
      if (ib.requires_grad) ib.grad[i % nb] -= node.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape shape = broadcast_shape("mul", a, b);
  const std::size_t n = shape_numel(shape), na = a.numel(), nb = b.numel();
  auto x = a.values(), y = b.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i % na] * y[i % nb];
  return Tensor::make(std::move(shape), std::move(out), "mul", {a, b}, [na, nb](Node& node) {
    Node& ia = *node.inputs[0];
    Node& ib = *node.inputs[1];
    for (std::size_t i = 0; i < node.grad.size(); ++i) {
      if (ia.requires_grad) ia.grad[i % na] += node.grad[i] * ib.value[i % nb];
      if (ib.requires_grad) ib.grad[i % nb] += node.grad[i] * ia.value[i % na];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double x) { return x + value; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " are not (n, k) x (k, m)");
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto x = a.values(), y = b.values();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      const double* yrow = &y[p * m];
      double* orow = &out[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += xv * yrow[j];
    }
  return Tensor::make({n, m}, std::move(out), "matmul", {a, b}, [n, k, m](Node& node) {
    Node& ia = *node.inputs[0];
    Node& ib = *node.inputs[1];
    const auto& g = node.grad;
    if (ia.requires_grad) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * ib.value[p * m + j];
          ia.grad[i * k + p] += acc;
        }
    }
    if (ib.requires_grad) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = ia.value[i * k + p];
          if (xv == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) ib.grad[p * m + j] += xv * g[i * m + j];
        }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto x = a.values();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return Tensor::make({c, r}, std::move(out), "transpose", {a}, [r, c](Node& node) {
    Node& in = *node.inputs[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += node.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  for (auto d : shape)
    if (d == 0) throw ShapeError("reshape: zero extent in " + shape_str(shape));
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make(std::move(shape), std::move(out), "reshape", {a}, [](Node& node) {
    Node& in = *node.inputs[0];
    for (std::size_t i = 0; i < node.grad.size(); ++i) in.grad[i] += node.grad[i];
  });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor maximum(const Tensor& a, double floor) {
  return unary(
      a, "maximum", [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      a, "clamp", [lo, hi](double x) { return std::min(hi, std::max(lo, x)); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return Tensor::make({}, {acc}, "sum", {a}, [](Node& node) {
    Node& in = *node.inputs[0];
    for (auto& g : in.grad) g += node.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  return Tensor::make({}, {acc / n}, "mean", {a}, [n](Node& node) {
    Node& in = *node.inputs[0];
    for (auto& g : in.grad) g += node.grad[0] / n;
  });
}

Tensor sum_last(const Tensor& a) {
  const std::size_t m = last_extent(a, "sum_last");
  const std::size_t rows = a.numel() / m;
  auto x = a.values();
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r] += x[r * m + j];
  Shape shape = a.shape();
  shape.back() = 1;
  return Tensor::make(std::move(shape), std::move(out), "sum_last", {a}, [m, rows](Node& node) {
    Node& in = *node.inputs[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) in.grad[r * m + j] += node.grad[r];
  });
}

Tensor mean_last(const Tensor& a) {
  return scale(sum_last(a), 1.0 / static_cast<double>(last_extent(a, "mean_last")));
}

Tensor mean_rows(const Tensor& a) {
  require_2d(a, "mean_rows");
  const std::size_t n = a.dim(0), m = a.dim(1);
  auto x = a.values();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j] += x[i * m + j];
  for (auto& v : out) v /= static_cast<double>(n);
  return Tensor::make({m}, std::move(out), "mean_rows", {a}, [n, m](Node& node) {
    Node& in = *node.inputs[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        in.grad[i * m + j] += node.grad[j] / static_cast<double>(n);
  });
}

Tensor softmax_last(const Tensor& a) {
  const std::size_t m = last_extent(a, "softmax_last");
  const std::size_t rows = a.numel() / m;
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &x[r * m];
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (out[r * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] /= z;
  }
  return Tensor::make(a.shape(), std::move(out), "softmax_last", {a}, [m, rows](Node& node) {
    Node& in = *node.inputs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &node.value[r * m];
      const double* g = &node.grad[r * m];
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < m; ++j) in.grad[r * m + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor log_softmax_last(const Tensor& a) {
  const std::size_t m = last_extent(a, "log_softmax_last");
  const std::size_t rows = a.numel() / m;
  auto x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &x[r * m];
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = row[j] - lse;
  }
  return Tensor::make(a.shape(), std::move(out), "log_softmax_last", {a}, [m, rows](Node& node) {
    Node& in = *node.inputs[0];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = &node.value[r * m];
      const double* g = &node.grad[r * m];
      double gsum = 0.0;
      for (std::size_t j = 0; j < m; ++j) gsum += g[j];
      for (std::size_t j = 0; j < m; ++j) in.grad[r * m + j] += g[j] - std::exp(y[j]) * gsum;
    }
  });
}

Tensor layer_norm_last(const Tensor& a, double eps) {
  const std::size_t m = last_extent(a, "layer_norm_last");
  const std::size_t rows = a.numel() / m;
  auto x = a.values();
  std::vector<double> out(x.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &x[r * m];
    double mu = 0.0;
    for (std::size_t j = 0; j < m; ++j) mu += row[j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(m);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = (row[j] - mu) * inv_std[r];
  }
  return Tensor::make(a.shape(), std::move(out), "layer_norm_last", {a},
                      [m, rows, inv_std = std::move(inv_std)](Node& node) {
                        Node& in = *node.inputs[0];
                        const double dm = static_cast<double>(m);
                        for (std::size_t r = 0; r < rows; ++r) {
                          const double* y = &node.value[r * m];
                          const double* g = &node.grad[r * m];
                          double gmean = 0.0, gy = 0.0;
                          for (std::size_t j = 0; j < m; ++j) {
                            gmean += g[j];
                            gy += g[j] * y[j];
                          }
                          gmean /= dm;
                          gy /= dm;
                          for (std::size_t j = 0; j < m; ++j)
                            in.grad[r * m + j] += inv_std[r] * (g[j] - gmean - y[j] * gy);
                        }
                      });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  require_2d(table, "embedding");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  auto t = table.values();
  std::vector<double> out(ids.size() * width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(ids[i]) + " out of range for table " +
                       shape_str(table.shape()));
    }
    std::copy_n(&t[ids[i] * width], width, &out[i * width]);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return Tensor::make({ids.size(), width}, std::move(out), "embedding", {table},
                      [idx = std::move(idx), width](Node& node) {
                        Node& in = *node.inputs[0];
                        for (std::size_t i = 0; i < idx.size(); ++i)
                          for (std::size_t j = 0; j < width; ++j)
                            in.grad[idx[i] * width + j] += node.grad[i * width + j];
                      });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size())
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                       " disagree off axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const std::size_t total = out_shape[axis];
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto x = parts[p].values();
    const std::size_t block = extents[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&x[o * block], block, &out[(o * total + offset) * inner]);
    offset += extents[p];
  }
  return Tensor::make(std::move(out_shape), std::move(out), "concat", parts,
                      [extents = std::move(extents), outer, inner, total](Node& node) {
                        std::size_t off = 0;
                        for (std::size_t p = 0; p < extents.size(); ++p) {
                          Node& in = *node.inputs[p];
                          const std::size_t block = extents[p] * inner;
                          if (in.requires_grad) {
                            for (std::size_t o = 0; o < outer; ++o)
                              for (std::size_t i = 0; i < block; ++i)
                                in.grad[o * block + i] += node.grad[(o * total + off) * inner + i];
                          }
                          off += extents[p];
                        }
                      });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t extent = s[axis];
  Shape out_shape = s;
  out_shape[axis] = length;
  auto x = a.values();
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(&x[(o * extent + start) * inner], length * inner, &out[o * length * inner]);
  return Tensor::make(std::move(out_shape), std::move(out), "slice", {a},
                      [outer, inner, extent, start, length](Node& node) {
                        Node& in = *node.inputs[0];
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < length * inner; ++i)
                            in.grad[(o * extent + start) * inner + i] +=
                                node.grad[o * length * inner + i];
                      });
}

Tensor gather_last(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t m = last_extent(a, "gather_last");
  for (auto i : index)
    if (i >= m)
      throw ShapeError("gather_last: index " + std::to_string(i) + " out of range for " +
                       shape_str(a.shape()));
  const std::size_t rows = a.numel() / m, k = index.size();
  auto x = a.values();
  std::vector<double> out(rows * k);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x[r * m + index[j]];
  Shape shape = a.shape();
  shape.back() = k;
  std::vector<std::size_t> idx(index.begin(), index.end());
  return Tensor::make(std::move(shape), std::move(out), "gather_last", {a},
                      [idx = std::move(idx), rows, m](Node& node) {
                        Node& in = *node.inputs[0];
                        const std::size_t k = idx.size();
                        for (std::size_t r = 0; r < rows; ++r)
                          for (std::size_t j = 0; j < k; ++j)
                            in.grad[r * m + idx[j]] += node.grad[r * k + j];
                      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_2d(logits, "cross_entropy");
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  auto x = logits.values();
  std::vector<double> probs(n * v);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= v) throw ShapeError("cross_entropy: target out of range");
    const double* row = &x[r * v];
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (probs[r * v + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
    total += -(row[targets[r]] - mx - std::log(z));
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return Tensor::make({}, {total / static_cast<double>(n)}, "cross_entropy", {logits},
                      [probs = std::move(probs), tgt = std::move(tgt), n, v](Node& node) {
                        Node& in = *node.inputs[0];
                        const double g = node.grad[0] / static_cast<double>(n);
                        for (std::size_t r = 0; r < n; ++r)
                          for (std::size_t j = 0; j < v; ++j)
                            in.grad[r * v + j] +=
                                g * (probs[r * v + j] - (j == tgt[r] ? 1.0 : 0.0));
                      });
}

Tensor stop_gradient(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make(a.shape(), std::move(out), "stop_gradient", {}, nullptr);
}

}  // namespace latentlab
