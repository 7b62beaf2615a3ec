#include <gtest/gtest.h>

#include <cmath>

#include "latentlab/eval.hpp"

using namespace latentlab;

TEST(Bleu, KnownValues) {
  EXPECT_DOUBLE_EQ(bleu("the cat sat on the mat", "the cat sat on the mat"), 1.0);
  EXPECT_EQ(bleu("dog runs", "the cat sat"), 0.0);
  EXPECT_NEAR(bleu("the cat sat", "the cat sat on the mat"), std::exp(-1.0), 1e-12);
  EXPECT_EQ(bleu("", "a b"), 0.0);
  EXPECT_THROW(bleu("a", ""), DataError);
}

TEST(Bleu, ClippingAndNoSmoothing) {
  // p1 = 2/4 clipped ("the" appears twice in the reference), p2 = 0.
  EXPECT_EQ(bleu("the the the the", "the cat the mat"), 0.0);
  const double one_gram_only = bleu("the the the the", "the cat the mat", 1);
  EXPECT_DOUBLE_EQ(one_gram_only, 0.5);
}

TEST(Cosine, Values) {
  std::vector<double> a{1, 0}, b{1, 1}, c{0, 3}, z{0, 0};
  EXPECT_DOUBLE_EQ(cosine(a, a), 1.0);
  EXPECT_EQ(cosine(a, c), 0.0);
  EXPECT_NEAR(cosine(a, b), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(cosine(a, z), DataError);
}

TEST(Spearman, Values) {
  std::vector<double> x{1, 2, 3}, y{1, 3, 2}, r{3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(x, x), 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, r), -1.0);
  EXPECT_NEAR(spearman(x, y), 0.5, 1e-15);
  std::vector<double> t{1, 1, 2, 3}, u{2, 2, 5, 9};
  EXPECT_NEAR(spearman(t, u), 1.0, 1e-15);
  std::vector<double> flat{4, 4, 4};
  EXPECT_THROW(spearman(x, flat), DataError);
  std::vector<double> exps{std::exp(1.0), std::exp(3.0), std::exp(2.0)};
  EXPECT_DOUBLE_EQ(spearman(x, exps), spearman(x, y));
}

TEST(Ranking, Values) {
  // Unit vectors at chosen angles from the prediction: cos = 0.5, 0.9, 0.2.
  auto at = [](double c) { return std::vector<double>{c, std::sqrt(1.0 - c * c)}; };
  std::vector<double> pred{1.0, 0.0};
  std::vector<std::vector<double>> golds{at(0.5), at(0.9), at(0.2)};
  EXPECT_DOUBLE_EQ(ranking_metric(pred, 0, golds), 0.5);
  EXPECT_DOUBLE_EQ(ranking_metric(pred, 1, golds), 0.0);
  EXPECT_DOUBLE_EQ(ranking_metric(pred, 2, golds), 1.0);
  std::vector<double> scaled{7.0, 0.0};
  EXPECT_DOUBLE_EQ(ranking_metric(scaled, 0, golds), 0.5);
}

TEST(ReconstructionReport, CountsAndRanges) {
  std::vector<std::string> corpus{"a b", "b a c"};
  VaeConfig c;
  c.latent_dim = 4;
  c.embed_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.head_dim = 4;
  c.ffn_dim = 8;
  c.max_len = 8;
  VaeModel m(c, Vocab::build(corpus));
  EvalReport r = reconstruction_report(m, corpus);
  EXPECT_EQ(r.count, 2u);
  EXPECT_EQ(r.sentences.size(), 2u);
  EXPECT_GE(r.bleu, 0.0);
  EXPECT_LE(r.bleu, 1.0);
  EXPECT_TRUE(std::isfinite(r.ce));
  std::vector<std::string> empty;
  EXPECT_THROW(reconstruction_report(m, empty), DataError);
}
