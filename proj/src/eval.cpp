#include "latentlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "latentlab/ops.hpp"

namespace latentlab {

double bleu(std::span<const std::string> candidate, std::span<const std::string> reference,
            std::size_t max_n) {
  if (reference.empty()) throw DataError("bleu: empty reference");
  if (candidate.empty()) return 0.0;
  const std::size_t top = std::min(max_n, candidate.size());
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= top; ++n) {
    std::map<std::vector<std::string>, std::size_t> ref_counts, cand_counts;
    for (std::size_t i = 0; i + n <= reference.size(); ++i)
      ++ref_counts[{reference.begin() + i, reference.begin() + i + n}];
    for (std::size_t i = 0; i + n <= candidate.size(); ++i)
      ++cand_counts[{candidate.begin() + i, candidate.begin() + i + n}];
    std::size_t clipped = 0, total = 0;
    for (const auto& [gram, c] : cand_counts) {
      total += c;
      auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) clipped += std::min(c, it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(total));
  }
  const double ratio = static_cast<double>(reference.size()) / static_cast<double>(candidate.size());
  const double bp = std::exp(std::min(0.0, 1.0 - ratio));
  return bp * std::exp(log_sum / static_cast<double>(top));
}

double bleu(const std::string& candidate, const std::string& reference, std::size_t max_n) {
  const auto c = tokenize(candidate), r = tokenize(reference);
  return bleu(c, r, max_n);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw DataError("cosine: zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw ShapeError("spearman: length mismatch");
  if (xs.size() < 2) throw DataError("spearman: needs at least 2 points");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("spearman: constant sequence");
  return sxy / std::sqrt(sxx * syy);
}

double ranking_metric(std::span<const double> predicted, std::size_t gold_index,
                      std::span<const std::vector<double>> golds) {
  if (golds.size() < 2) throw DataError("ranking: needs at least 2 gold embeddings");
  if (gold_index >= golds.size()) throw DataError("ranking: gold index out of range");
  const double ref = cosine(predicted, golds[gold_index]);
  std::size_t above = 0;
  for (std::size_t i = 0; i < golds.size(); ++i)
    if (i != gold_index && cosine(predicted, golds[i]) > ref) ++above;
  return static_cast<double>(above) / static_cast<double>(golds.size() - 1);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j{{"count", count}, {"bleu", bleu}, {"bleu_kind", "sentence-averaged"},
                   {"cosine", cosine}, {"ce", ce}};
  j["spearman"] = spearman ? nlohmann::json(*spearman) : nlohmann::json(nullptr);
  j["ranking"] = ranking ? nlohmann::json(*ranking) : nlohmann::json(nullptr);
  return j;
}

EvalReport reconstruction_report(const VaeModel& model, std::span<const std::string> corpus) {
  if (corpus.empty()) throw DataError("reconstruction report: empty corpus");
  NoGradGuard no_grad;
  EvalReport report;
  for (const auto& sentence : corpus) {
    const TokenIds ids = model.vocab().encode(sentence);
    const Tensor z = posterior_mean(model, ids);
    SentenceEval s;
    s.source = sentence;
    s.reconstruction = model.vocab().decode(model.generate(z, model.config().max_len));
    s.bleu = bleu(s.reconstruction, model.vocab().decode(ids));
    s.ce = reconstruction_ce(model, ids, z).item();
    if (tokenize(s.reconstruction).empty()) {
      s.cosine = 0.0;
    } else {
      const Tensor z_rec = posterior_mean(model, model.vocab().encode(s.reconstruction));
      s.cosine = cosine(z.values(), z_rec.values());
    }
    report.bleu += s.bleu;
    report.cosine += s.cosine;
    report.ce += s.ce;
    report.sentences.push_back(std::move(s));
  }
  report.count = corpus.size();
  const double n = static_cast<double>(report.count);
  report.bleu /= n;
  report.cosine /= n;
  report.ce /= n;
  return report;
}

void write_per_sentence_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  out << "source,reconstruction,bleu,cosine,ce\n";
  out.precision(17);
  for (const auto& s : report.sentences)
    out << quote(s.source) << ',' << quote(s.reconstruction) << ',' << s.bleu << ',' << s.cosine << ','
        << s.ce << '\n';
}

}  // namespace latentlab
