#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "latentlab/vae.hpp"

namespace latentlab {

// Sentence BLEU without smoothing; n is capped at the candidate length.
double bleu(std::span<const std::string> candidate, std::span<const std::string> reference,
            std::size_t max_n = 4);
double bleu(const std::string& candidate, const std::string& reference, std::size_t max_n = 4);

double cosine(std::span<const double> a, std::span<const double> b);

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> xs);
double spearman(std::span<const double> xs, std::span<const double> ys);

// Fraction of non-gold embeddings whose cosine with `predicted` exceeds the gold cosine.
double ranking_metric(std::span<const double> predicted, std::size_t gold_index,
                      std::span<const std::vector<double>> golds);

struct SentenceEval {
  std::string source;
  std::string reconstruction;
  double bleu = 0.0;
  double cosine = 0.0;
  double ce = 0.0;
};

struct EvalReport {
  std::size_t count = 0;
  double bleu = 0.0;  // sentence-averaged
  double cosine = 0.0;
  double ce = 0.0;
  std::optional<double> spearman;
  std::optional<double> ranking;
  std::vector<SentenceEval> sentences;

  nlohmann::json to_json() const;
};

EvalReport reconstruction_report(const VaeModel& model, std::span<const std::string> corpus);

// "source,reconstruction,bleu,cosine,ce" rows with quoted text fields.
void write_per_sentence_csv(const std::string& path, const EvalReport& report);

}  // namespace latentlab
