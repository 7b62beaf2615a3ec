#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "latentlab/checkpoint.hpp"

using namespace latentlab;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("latentlab_" + name)).string();
}

VaeModel small_model() {
  VaeConfig c;
  c.latent_dim = 4;
  c.embed_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.head_dim = 4;
  c.ffn_dim = 8;
  c.max_len = 8;
  c.seed = 11;
  std::vector<std::string> lines{"x y z"};
  return VaeModel(c, Vocab::build(lines));
}

}  // namespace

TEST(Base64, RoundTripAllLengths) {
  for (std::size_t n = 0; n < 10; ++n) {
    std::vector<std::uint8_t> bytes;
    for (std::size_t i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(i * 37 + 250));
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
  std::vector<std::uint8_t> man{'M', 'a', 'n'};
  EXPECT_EQ(base64_encode(man), "TWFu");
  EXPECT_THROW(base64_decode("abc"), DataError);
  EXPECT_THROW(base64_decode("ab!d"), DataError);
}

TEST(Base64, DoublesBitwise) {
  std::vector<double> v{0.1, -0.0, 1e-308, 3.141592653589793, -2.5e300};
  auto back = decode_doubles(encode_doubles(v));
  ASSERT_EQ(back.size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(v[i]));
}

TEST(Checkpoint, VaeRoundTripIsBitwise) {
  VaeModel m = small_model();
  const auto path = temp_path("vae.json");
  save_vae(path, m);
  VaeModel back = load_vae(path);
  EXPECT_EQ(back.params().snapshot(), m.params().snapshot());
  EXPECT_EQ(back.vocab().tokens(), m.vocab().tokens());
  EXPECT_EQ(to_json(back.config()), to_json(m.config()));
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedFileFails) {
  VaeModel m = small_model();
  const auto path = temp_path("trunc.json");
  save_vae(path, m);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  EXPECT_THROW(load_vae(path), DataError);
  std::filesystem::remove(path);
}

TEST(Checkpoint, VersionAndShapeMismatch) {
  VaeModel m = small_model();
  const auto path = temp_path("bad.json");
  save_vae(path, m);
  auto j = read_json_file(path);
  j["format_version"] = 99;
  write_json_file(path, j);
  EXPECT_THROW(load_vae(path), DataError);

  j = read_json_file(path);
  j["format_version"] = kCheckpointVersion;
  j["params"]["dec.head.b"]["shape"] = {3};
  write_json_file(path, j);
  try {
    load_vae(path);
    FAIL() << "expected a shape error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("dec.head.b"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, FailedLoadLeavesStoreUntouched) {
  VaeModel m = small_model();
  auto j = params_to_json(m.params());
  j.erase("dec.head.w");
  VaeModel target = small_model();
  auto v = target.params().at("enc.tok_emb").mutable_values();
  v[0] = 42.0;
  const auto before = target.params().snapshot();
  EXPECT_THROW(params_from_json(target.params(), j), DataError);
  EXPECT_EQ(target.params().snapshot(), before);
}

TEST(Checkpoint, FlowAndHeadRoundTrip) {
  FlowConfig fc;
  fc.dim = 4;
  fc.depth = 3;
  fc.seed = 2;
  FlowStack s(fc);
  s.initialize_actnorm(Tensor::from_vector({3, 4}, {1, 2, 3, 4, 2, 0, 1, 5, 0, 1, 2, 3}));
  const auto fpath = temp_path("flow.json");
  save_flow(fpath, s);
  FlowStack back = load_flow(fpath);
  EXPECT_EQ(back.params().snapshot(), s.params().snapshot());
  EXPECT_TRUE(back.actnorm_initialized());
  std::filesystem::remove(fpath);

  InferenceHead h(4, 9);
  const auto hpath = temp_path("head.json");
  save_inference_head(hpath, h);
  EXPECT_EQ(load_inference_head(hpath).params().snapshot(), h.params().snapshot());
  std::filesystem::remove(hpath);
}

TEST(Config, UnknownAndMistypedFieldsNamed) {
  nlohmann::json j{{"latent_dimm", 3}};
  try {
    vae_config_from_json(j);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("vae.latent_dimm"), std::string::npos);
  }
  nlohmann::json k{{"epochs", "ten"}};
  try {
    vae_config_from_json(k);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("vae.epochs"), std::string::npos);
  }
  nlohmann::json ok{{"latent_dim", 7}, {"optimizer", {{"kind", "sgd"}}}};
  VaeConfig c = vae_config_from_json(ok);
  EXPECT_EQ(c.latent_dim, 7u);
  EXPECT_EQ(c.optimizer.kind, OptimizerKind::kSgd);
}
