#include "latentlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "latentlab/random.hpp"
#include "latentlab/tensor.hpp"

namespace latentlab {

std::vector<double> FactorDataset::rep_column(std::size_t j) const {
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = rep(i, j);
  return out;
}

std::vector<int> FactorDataset::factor_column(std::size_t k) const {
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = factor(i, k);
  return out;
}

void FactorDataset::validate() const {
  if (rows == 0) throw DataError("factor dataset: no rows");
  if (dims == 0) throw DataError("factor dataset: no representation dimensions");
  if (n_factors == 0) throw DataError("factor dataset: no factors");
  if (representations.size() != rows * dims) throw ShapeError("factor dataset: representation size mismatch");
  if (factors.size() != rows * n_factors) throw ShapeError("factor dataset: factor size mismatch");
  if (cardinalities.size() != n_factors) throw ShapeError("factor dataset: one cardinality per factor required");
  for (double v : representations)
    if (!std::isfinite(v)) throw NumericError("factor dataset: non-finite representation value");
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < n_factors; ++k) {
      const int f = factor(i, k);
      if (f < 0 || f >= cardinalities[k])
        throw DataError("factor dataset: factor " + std::to_string(k) + " value " + std::to_string(f) +
                        " outside [0, " + std::to_string(cardinalities[k]) + ")");
    }
}

void FactorDataset::infer_cardinalities() {
  cardinalities.assign(n_factors, 0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t k = 0; k < n_factors; ++k)
      cardinalities[k] = std::max(cardinalities[k], factor(i, k) + 1);
}

std::vector<int> discretize(std::span<const double> column, std::size_t bins) {
  if (column.empty()) throw DataError("discretize: empty column");
  if (bins < 1) throw DataError("discretize: bins must be >= 1");
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> distinct = sorted;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<int> codes(column.size());
  if (distinct.size() <= bins) {
    for (std::size_t i = 0; i < column.size(); ++i)
      codes[i] = static_cast<int>(std::lower_bound(distinct.begin(), distinct.end(), column[i]) - distinct.begin());
    return codes;
  }
  const std::size_t n = sorted.size();
  std::vector<double> edges;
  for (std::size_t b = 1; b < bins; ++b) edges.push_back(sorted[b * n / bins]);
  for (std::size_t i = 0; i < column.size(); ++i)
    codes[i] = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), column[i]) - edges.begin());
  return codes;
}

namespace {

std::size_t code_range(std::span<const int> x) {
  int hi = 0;
  for (int v : x) {
    if (v < 0) throw DataError("discrete column has a negative code");
    hi = std::max(hi, v);
  }
  return static_cast<std::size_t>(hi) + 1;
}

}  // namespace

double discrete_entropy(std::span<const int> x) {
  if (x.empty()) throw DataError("entropy: empty column");
  std::vector<std::size_t> counts(code_range(x), 0);
  for (int v : x) ++counts[v];
  const double n = static_cast<double>(x.size());
  double h = 0.0;
  for (auto c : counts)
    if (c > 0) h -= (c / n) * std::log(c / n);
  return h;
}

double discrete_mutual_information(std::span<const int> x, std::span<const int> y) {
  if (x.empty() || y.empty()) throw DataError("mutual information: empty column");
  if (x.size() != y.size()) throw ShapeError("mutual information: columns differ in length");
  const std::size_t nx = code_range(x), ny = code_range(y);
  std::vector<std::size_t> joint(nx * ny, 0), px(nx, 0), py(ny, 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    ++joint[x[i] * ny + y[i]];
    ++px[x[i]];
    ++py[y[i]];
  }
  const double n = static_cast<double>(x.size());
  double mi = 0.0;
  for (std::size_t a = 0; a < nx; ++a)
    for (std::size_t b = 0; b < ny; ++b) {
      const auto c = joint[a * ny + b];
      if (c == 0) continue;
      mi += (c / n) * std::log(c * n / (static_cast<double>(px[a]) * static_cast<double>(py[b])));
    }
  return std::max(0.0, mi);
}

namespace {

// Runs body(i) for i in [0, n) on up to `threads` workers; each index is
// handled by exactly one worker so results do not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) body(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<double> mutual_information_matrix(const FactorDataset& data, const MetricsConfig& config) {
  data.validate();
  std::vector<std::vector<int>> codes(data.dims), facs(data.n_factors);
  parallel_for(data.dims, config.threads, [&](std::size_t j) {
    auto col = data.rep_column(j);
    codes[j] = discretize(col, config.bins);
  });
  for (std::size_t k = 0; k < data.n_factors; ++k) facs[k] = data.factor_column(k);
  std::vector<double> mi(data.dims * data.n_factors);
  parallel_for(mi.size(), config.threads, [&](std::size_t c) {
    mi[c] = discrete_mutual_information(codes[c / data.n_factors], facs[c % data.n_factors]);
  });
  return mi;
}

double mig(const FactorDataset& data, const MetricsConfig& config) {
  data.validate();
  if (data.dims < 2) throw DataError("mig: needs at least 2 representation dimensions");
  const auto mi = mutual_information_matrix(data, config);
  double total = 0.0;
  for (std::size_t k = 0; k < data.n_factors; ++k) {
    const double h = discrete_entropy(data.factor_column(k));
    if (!(h > 0.0)) throw DataError("mig: factor " + std::to_string(k) + " is constant");
    std::vector<double> col(data.dims);
    for (std::size_t j = 0; j < data.dims; ++j) col[j] = mi[j * data.n_factors + k];
    std::partial_sort(col.begin(), col.begin() + 2, col.end(), std::greater<>());
    total += (col[0] - col[1]) / h;
  }
  return total / static_cast<double>(data.n_factors);
}

double z_min_var_error(const FactorDataset& data, const MetricsConfig& config) {
  data.validate();
  if (config.zmv_trials < 2 || config.zmv_batch < 2)
    throw DataError("z-min-var: needs at least 2 trials and batch size 2");
  const std::size_t n = data.rows, d = data.dims, f = data.n_factors;

  std::vector<double> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += data.rep(i, j);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var += (data.rep(i, j) - mean) * (data.rep(i, j) - mean);
    var /= static_cast<double>(n);
    if (!(var > 0.0)) throw DataError("z-min-var: dimension " + std::to_string(j) + " has zero std");
    inv_std[j] = 1.0 / std::sqrt(var);
  }

  // Rows grouped by (factor, value).
  std::vector<std::map<int, std::vector<std::size_t>>> groups(f);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < f; ++k) groups[k][data.factor(i, k)].push_back(i);
  for (std::size_t k = 0; k < f; ++k)
    for (const auto& [v, rows] : groups[k])
      if (rows.size() < 2)
        throw DataError("z-min-var: factor " + std::to_string(k) + " value " + std::to_string(v) +
                        " has fewer than 2 rows");

  Rng rng(config.seed);
  std::vector<std::size_t> votes(config.zmv_trials), labels(config.zmv_trials);
  std::vector<double> sum(d), sq(d);
  for (std::size_t t = 0; t < config.zmv_trials; ++t) {
    const std::size_t k = rng.below(f);
    const int v = data.factor(rng.below(n), k);
    const auto& pool = groups[k].at(v);
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(sq.begin(), sq.end(), 0.0);
    for (std::size_t b = 0; b < config.zmv_batch; ++b) {
      const std::size_t r = pool[rng.below(pool.size())];
      for (std::size_t j = 0; j < d; ++j) {
        const double z = data.rep(r, j) * inv_std[j];
        sum[j] += z;
        sq[j] += z * z;
      }
    }
    const double m = static_cast<double>(config.zmv_batch);
    std::size_t best = 0;
    double best_var = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < d; ++j) {
      const double mean = sum[j] / m;
      const double var = std::max(0.0, sq[j] / m - mean * mean);
      if (var < best_var) {
        best_var = var;
        best = j;
      }
    }
    votes[t] = best;
    labels[t] = k;
  }

  std::size_t n_train = static_cast<std::size_t>(std::floor(config.zmv_train_fraction * config.zmv_trials));
  n_train = std::clamp<std::size_t>(n_train, 1, config.zmv_trials - 1);
  std::vector<std::vector<std::size_t>> counts(d, std::vector<std::size_t>(f, 0));
  std::vector<std::size_t> label_counts(f, 0);
  for (std::size_t t = 0; t < n_train; ++t) {
    ++counts[votes[t]][labels[t]];
    ++label_counts[labels[t]];
  }
  const std::size_t fallback =
      std::max_element(label_counts.begin(), label_counts.end()) - label_counts.begin();
  std::vector<std::size_t> predict(d, fallback);
  for (std::size_t j = 0; j < d; ++j) {
    const auto& c = counts[j];
    if (std::accumulate(c.begin(), c.end(), std::size_t{0}) == 0) continue;
    predict[j] = std::max_element(c.begin(), c.end()) - c.begin();
  }
  std::size_t wrong = 0;
  for (std::size_t t = n_train; t < config.zmv_trials; ++t)
    if (predict[votes[t]] != labels[t]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(config.zmv_trials - n_train);
}

double modularity_from_mi(std::span<const double> mi, std::size_t dims, std::size_t n_factors) {
  if (n_factors < 2) throw DataError("modularity: needs at least 2 factors");
  if (mi.size() != dims * n_factors) throw ShapeError("modularity: MI matrix size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < dims; ++i) {
    auto row = mi.subspan(i * n_factors, n_factors);
    const std::size_t best = std::max_element(row.begin(), row.end()) - row.begin();
    const double theta = row[best];
    if (!(theta > 0.0)) continue;
    double dev = 0.0;
    for (std::size_t k = 0; k < n_factors; ++k)
      if (k != best) dev += row[k] * row[k];
    dev /= theta * theta * static_cast<double>(n_factors - 1);
    total += 1.0 - dev;
  }
  return total / static_cast<double>(dims);
}

double modularity(const FactorDataset& data, const MetricsConfig& config) {
  data.validate();
  if (data.n_factors < 2) throw DataError("modularity: needs at least 2 factors");
  return modularity_from_mi(mutual_information_matrix(data, config), data.dims, data.n_factors);
}

namespace {

double normalized_entropy(std::span<const double> p, std::size_t base) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h / std::log(static_cast<double>(base));
}

void check_importance(std::span<const double> importance, std::size_t dims, std::size_t n_factors) {
  if (importance.size() != dims * n_factors) throw ShapeError("dci: importance matrix size mismatch");
  double total = 0.0;
  for (double v : importance) {
    if (!std::isfinite(v) || v < 0.0) throw NumericError("dci: importance entries must be finite and >= 0");
    total += v;
  }
  if (!(total > 0.0)) throw NumericError("dci: importance matrix is all zero");
}

}  // namespace

double dci_disentanglement(std::span<const double> importance, std::size_t dims, std::size_t n_factors) {
  if (n_factors < 2) throw DataError("dci: needs at least 2 factors");
  check_importance(importance, dims, n_factors);
  const double total = std::accumulate(importance.begin(), importance.end(), 0.0);
  double d = 0.0;
  std::vector<double> p(n_factors);
  for (std::size_t i = 0; i < dims; ++i) {
    auto row = importance.subspan(i * n_factors, n_factors);
    const double rs = std::accumulate(row.begin(), row.end(), 0.0);
    if (!(rs > 0.0)) continue;
    for (std::size_t k = 0; k < n_factors; ++k) p[k] = row[k] / rs;
    d += (rs / total) * (1.0 - normalized_entropy(p, n_factors));
  }
  return d;
}

std::vector<double> dci_completeness(std::span<const double> importance, std::size_t dims,
                                     std::size_t n_factors) {
  check_importance(importance, dims, n_factors);
  std::vector<double> c(n_factors, 0.0);
  if (dims < 2) {
    std::fill(c.begin(), c.end(), 1.0);
    return c;
  }
  std::vector<double> p(dims);
  for (std::size_t k = 0; k < n_factors; ++k) {
    double cs = 0.0;
    for (std::size_t i = 0; i < dims; ++i) cs += importance[i * n_factors + k];
    if (!(cs > 0.0)) continue;
    for (std::size_t i = 0; i < dims; ++i) p[i] = importance[i * n_factors + k] / cs;
    c[k] = 1.0 - normalized_entropy(p, dims);
  }
  return c;
}

std::vector<double> lasso_fit(std::span<const double> x, std::span<const double> y, std::size_t n,
                              std::size_t d, double alpha, std::size_t iterations) {
  if (x.size() != n * d || y.size() != n) throw ShapeError("lasso: input size mismatch");
  std::vector<double> w(d, 0.0), resid(y.begin(), y.end()), col_sq(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) col_sq[j] += x[i * d + j] * x[i * d + j];
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t it = 0; it < iterations; ++it) {
    double max_change = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      if (col_sq[j] == 0.0) continue;
      double rho = 0.0;
      for (std::size_t i = 0; i < n; ++i) rho += x[i * d + j] * (resid[i] + x[i * d + j] * w[j]);
      rho *= inv_n;
      const double a = col_sq[j] * inv_n;
      const double next = (rho > alpha ? rho - alpha : rho < -alpha ? rho + alpha : 0.0) / a;
      const double delta = next - w[j];
      if (delta != 0.0) {
        for (std::size_t i = 0; i < n; ++i) resid[i] -= x[i * d + j] * delta;
        w[j] = next;
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    if (max_change < 1e-12) break;
  }
  return w;
}

DciScores dci(const FactorDataset& data, const MetricsConfig& config) {
  data.validate();
  if (data.n_factors < 2) throw DataError("dci: needs at least 2 factors");
  const std::size_t n = data.rows, d = data.dims, f = data.n_factors;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(config.seed);
  rng.shuffle(order);
  std::size_t n_train = static_cast<std::size_t>(std::floor(config.dci_train_fraction * n));
  if (n_train < 2 || n - n_train < 2) throw DataError("dci: too few rows for a train/test split");

  // Standardize with training statistics.
  auto stats = [&](auto value) {
    double mean = 0.0, var = 0.0;
    for (std::size_t t = 0; t < n_train; ++t) mean += value(order[t]);
    mean /= static_cast<double>(n_train);
    for (std::size_t t = 0; t < n_train; ++t) var += (value(order[t]) - mean) * (value(order[t]) - mean);
    var /= static_cast<double>(n_train);
    return std::pair{mean, std::sqrt(var)};
  };
  std::vector<double> x_mean(d), x_std(d);
  for (std::size_t j = 0; j < d; ++j)
    std::tie(x_mean[j], x_std[j]) = stats([&](std::size_t i) { return data.rep(i, j); });
  auto x_at = [&](std::size_t i, std::size_t j) {
    return x_std[j] > 0.0 ? (data.rep(i, j) - x_mean[j]) / x_std[j] : 0.0;
  };
  std::vector<double> x_train(n_train * d);
  for (std::size_t t = 0; t < n_train; ++t)
    for (std::size_t j = 0; j < d; ++j) x_train[t * d + j] = x_at(order[t], j);

  DciScores out;
  out.importance.assign(d * f, 0.0);
  out.informativeness.assign(f, 0.0);
  parallel_for(f, config.threads, [&](std::size_t k) {
    auto [y_mean, y_std] = stats([&](std::size_t i) { return static_cast<double>(data.factor(i, k)); });
    if (!(y_std > 0.0)) throw DataError("dci: factor " + std::to_string(k) + " is constant on the training split");
    std::vector<double> y(n_train);
    for (std::size_t t = 0; t < n_train; ++t) y[t] = (data.factor(order[t], k) - y_mean) / y_std;
    const auto w = lasso_fit(x_train, y, n_train, d, config.lasso_alpha, config.lasso_iterations);
    for (std::size_t j = 0; j < d; ++j) out.importance[j * f + k] = std::abs(w[j]);
    double se = 0.0, tmean = 0.0, tvar = 0.0;
    const std::size_t n_test = n - n_train;
    for (std::size_t t = n_train; t < n; ++t) tmean += (data.factor(order[t], k) - y_mean) / y_std;
    tmean /= static_cast<double>(n_test);
    for (std::size_t t = n_train; t < n; ++t) {
      const double target = (data.factor(order[t], k) - y_mean) / y_std;
      double pred = 0.0;
      for (std::size_t j = 0; j < d; ++j) pred += w[j] * x_at(order[t], j);
      se += (target - pred) * (target - pred);
      tvar += (target - tmean) * (target - tmean);
    }
    if (!(tvar > 0.0)) throw DataError("dci: factor " + std::to_string(k) + " is constant on the test split");
    out.informativeness[k] = se / tvar;
  });
  out.disentanglement = dci_disentanglement(out.importance, d, f);
  out.completeness = dci_completeness(out.importance, d, f);
  return out;
}

nlohmann::json metrics_report(const FactorDataset& data, const MetricsConfig& config) {
  data.validate();
  const auto mi = mutual_information_matrix(data, config);
  nlohmann::json report;
  report["rows"] = data.rows;
  report["dims"] = data.dims;
  report["factors"] = data.n_factors;
  report["mig"] = mig(data, config);
  report["z_min_var_error"] = z_min_var_error(data, config);
  if (data.n_factors >= 2) {
    report["modularity"] = modularity_from_mi(mi, data.dims, data.n_factors);
    const DciScores s = dci(data, config);
    report["dci"] = {{"D", s.disentanglement}, {"C", s.completeness}, {"I", s.informativeness}};
  } else {
    report["modularity"] = nullptr;
    report["dci"] = nullptr;
  }
  report["config"] = {{"bins", config.bins},
                      {"zmv_trials", config.zmv_trials},
                      {"zmv_batch", config.zmv_batch},
                      {"zmv_train_fraction", config.zmv_train_fraction},
                      {"lasso_alpha", config.lasso_alpha},
                      {"lasso_iterations", config.lasso_iterations},
                      {"dci_train_fraction", config.dci_train_fraction},
                      {"seed", config.seed}};
  return report;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("LATENTLAB_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw DataError(std::string("LATENTLAB_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

namespace {

FactorDataset read_jsonl_dataset(std::istream& in, const std::string& path) {
  FactorDataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> rep;
    std::vector<int> fac;
    try {
      auto j = nlohmann::json::parse(line);
      rep = j.at("representation").get<std::vector<double>>();
      fac = j.at("factors").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (data.rows == 0) {
      data.dims = rep.size();
      data.n_factors = fac.size();
    } else if (rep.size() != data.dims || fac.size() != data.n_factors) {
      throw DataError(path + ":" + std::to_string(lineno) + ": inconsistent record width");
    }
    data.representations.insert(data.representations.end(), rep.begin(), rep.end());
    data.factors.insert(data.factors.end(), fac.begin(), fac.end());
    ++data.rows;
  }
  return data;
}

FactorDataset read_tsv_dataset(std::istream& in, const std::string& path) {
  auto split = [](const std::string& s) {
    std::vector<std::string> cols;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    return cols;
  };
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  std::vector<std::size_t> zcols, fcols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!header[c].empty() && header[c][0] == 'z') zcols.push_back(c);
    if (!header[c].empty() && header[c][0] == 'f') fcols.push_back(c);
  }
  if (zcols.empty() || fcols.empty())
    throw DataError(path + ": header needs z* representation and f* factor columns");
  FactorDataset data;
  data.dims = zcols.size();
  data.n_factors = fcols.size();
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split(line);
    if (cols.size() != header.size())
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(header.size()) + " columns");
    try {
      for (auto c : zcols) {
        std::size_t used = 0;
        data.representations.push_back(std::stod(cols[c], &used));
        if (used != cols[c].size()) throw std::invalid_argument("trailing");
      }
      for (auto c : fcols) {
        std::size_t used = 0;
        data.factors.push_back(std::stoi(cols[c], &used));
        if (used != cols[c].size()) throw std::invalid_argument("trailing");
      }
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed number");
    }
    ++data.rows;
  }
  return data;
}

}  // namespace

FactorDataset read_factor_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  const int first = (in >> std::ws).peek();
  FactorDataset data = first == '{' ? read_jsonl_dataset(in, path) : read_tsv_dataset(in, path);
  if (data.rows == 0) throw DataError(path + ": no records");
  data.infer_cardinalities();
  data.validate();
  return data;
}

}  // namespace latentlab
