#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace latentlab {

// N x d representations with N x F integer factors, row-major.
struct FactorDataset {
  std::size_t rows = 0;
  std::size_t dims = 0;
  std::size_t n_factors = 0;
  std::vector<double> representations;
  std::vector<int> factors;
  std::vector<int> cardinalities;

  double rep(std::size_t i, std::size_t j) const { return representations[i * dims + j]; }
  int factor(std::size_t i, std::size_t k) const { return factors[i * n_factors + k]; }
  std::vector<double> rep_column(std::size_t j) const;
  std::vector<int> factor_column(std::size_t k) const;

  void validate() const;
  // Cardinality of each factor taken as max value + 1.
  void infer_cardinalities();
};

// Equal-frequency bin codes in [0, bins). Columns with at most `bins` distinct
// values keep one bin per value.
std::vector<int> discretize(std::span<const double> column, std::size_t bins);

// Natural-log entropy of a discrete column.
double discrete_entropy(std::span<const int> x);
// Plug-in mutual information from the joint histogram, in nats.
double discrete_mutual_information(std::span<const int> x, std::span<const int> y);

struct MetricsConfig {
  std::size_t bins = 20;
  std::size_t zmv_trials = 500;
  std::size_t zmv_batch = 64;
  double zmv_train_fraction = 0.8;
  double lasso_alpha = 0.01;
  std::size_t lasso_iterations = 1000;
  double dci_train_fraction = 0.8;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

// d x F matrix of I(z_j; v_k), row-major.
std::vector<double> mutual_information_matrix(const FactorDataset& data, const MetricsConfig& config);

double mig(const FactorDataset& data, const MetricsConfig& config = {});
double z_min_var_error(const FactorDataset& data, const MetricsConfig& config = {});
double modularity(const FactorDataset& data, const MetricsConfig& config = {});
// Modularity score from a d x F MI matrix.
double modularity_from_mi(std::span<const double> mi, std::size_t dims, std::size_t n_factors);

struct DciScores {
  double disentanglement = 0.0;
  std::vector<double> completeness;     // per factor
  std::vector<double> informativeness;  // held-out normalized MSE per factor
  std::vector<double> importance;       // d x F
};

// D and C from a d x F nonnegative importance matrix.
double dci_disentanglement(std::span<const double> importance, std::size_t dims, std::size_t n_factors);
std::vector<double> dci_completeness(std::span<const double> importance, std::size_t dims,
                                     std::size_t n_factors);
DciScores dci(const FactorDataset& data, const MetricsConfig& config = {});

// Coordinate-descent lasso on standardized columns; returns weights in the
// standardized space. x is n x d row-major.
std::vector<double> lasso_fit(std::span<const double> x, std::span<const double> y, std::size_t n,
                              std::size_t d, double alpha, std::size_t iterations);

nlohmann::json metrics_report(const FactorDataset& data, const MetricsConfig& config);

// Thread count from LATENTLAB_THREADS (default 1).
std::size_t threads_from_env();

// Reads "z*"/"f*" columns from a TSV with a header, or JSON lines
// {representation:[...], factors:[...]}.
FactorDataset read_factor_dataset(const std::string& path);

}  // namespace latentlab
