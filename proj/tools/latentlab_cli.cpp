#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latentlab/checkpoint.hpp"
#include "latentlab/defmod.hpp"
#include "latentlab/eval.hpp"
#include "latentlab/flow.hpp"
#include "latentlab/geometry.hpp"
#include "latentlab/inference.hpp"
#include "latentlab/metrics.hpp"
#include "latentlab/ops.hpp"
#include "latentlab/text.hpp"
#include "latentlab/vae.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latentlab;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON config file");
  cmd->add_option("--out-dir", c.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config)");
}

class Run {
 public:
  Run(std::string command, const Common& common, const std::vector<std::string>& argv)
      : command_(std::move(command)), out_dir_(common.out_dir), argv_(argv) {
    if (!common.config_path.empty()) {
      config_ = read_json_file(common.config_path);
      if (!config_.is_object()) throw DataError(common.config_path + ": config must be a JSON object");
    } else {
      config_ = json::object();
    }
    if (config_.contains("seed") && !config_.at("seed").is_number_unsigned())
      throw DataError("seed: expected a non-negative integer");
    seed_ = common.seed ? *common.seed : config_.value("seed", std::uint64_t{0});
    seed_from_flag_ = common.seed.has_value();
    fs::create_directories(out_dir_);
  }

  std::uint64_t seed() const { return seed_; }

  // Section of the config with the run seed filled in (or forced by --seed).
  json& section(const std::string& name) {
    if (!config_.contains(name)) config_[name] = json::object();
    json& s = config_[name];
    if (!s.is_object()) throw DataError(name + ": expected a JSON object");
    return s;
  }

  json& seeded_section(const std::string& name) {
    json& s = section(name);
    if (seed_from_flag_ || !s.contains("seed")) s["seed"] = seed_;
    return s;
  }

  std::string path(const std::string& file) const { return (fs::path(out_dir_) / file).string(); }

  void echo(const std::string& key, json value) { resolved_[key] = std::move(value); }

  void finish() {
    json top{{"command", command_}, {"seed", seed_}, {"resolved", resolved_}};
    write_json_file(path("config.json"), top);
    std::ofstream log(path("run.log"), std::ios::app);
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[64];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    log << stamp << " latentlab";
    for (const auto& a : argv_) log << ' ' << a;
    log << '\n';
  }

 private:
  std::string command_;
  std::string out_dir_;
  std::vector<std::string> argv_;
  json config_;
  json resolved_ = json::object();
  std::uint64_t seed_ = 0;
  bool seed_from_flag_ = false;
};

template <typename T>
void override_field(json& section, const char* key, const std::optional<T>& value) {
  if (value) section[key] = *value;
}

LabeledCorpus read_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string first;
  std::getline(in, first);
  if (!first.empty() && first.back() == '\r') first.pop_back();
  if (first == "sentence" || first.rfind("sentence\t", 0) == 0) return read_factor_tsv(path);
  LabeledCorpus c;
  c.sentences = read_lines(path);
  if (c.sentences.empty()) throw DataError(path + ": empty corpus");
  return c;
}

void write_jsonl(const std::string& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& r : records) out << r.dump() << '\n';
}

Tensor latent_of(const VaeModel& model, const std::string& sentence) {
  return posterior_mean(model, model.vocab().encode(sentence));
}

std::string decode_latent(const VaeModel& model, std::span<const double> z) {
  Tensor t = Tensor::from_vector({z.size()}, std::vector<double>(z.begin(), z.end()));
  return model.vocab().decode(model.generate(t, model.config().max_len));
}


// ---- subcommands ----

struct GenCorpusArgs {
  std::vector<std::size_t> slots;
  std::optional<std::string> template_text;
};

void cmd_gen_corpus(Run& run, const GenCorpusArgs& a) {
  json& s = run.seeded_section("corpus");
  if (!a.slots.empty()) s["slots"] = a.slots;
  override_field(s, "template", a.template_text);
  if (!s.contains("slots")) throw DataError("corpus.slots: required (e.g. --slots 4,3,2)");
  std::vector<std::size_t> slots;
  std::string tmpl;
  try {
    slots = s.at("slots").get<std::vector<std::size_t>>();
    tmpl = s.value("template", std::string{});
  } catch (const json::exception&) {
    throw DataError("corpus.slots: expected a list of positive integers");
  }
  for (const auto& [k, _] : s.items())
    if (k != "slots" && k != "template" && k != "seed") throw DataError("corpus." + k + ": unknown field");
  const std::uint64_t seed = s.at("seed").get<std::uint64_t>();
  GrammarSpec spec = GrammarSpec::with_slot_sizes(slots, tmpl);
  LabeledCorpus corpus = generate_synthetic_corpus(spec, seed);
  write_lines(run.path("corpus.txt"), corpus.sentences);
  write_factor_tsv(run.path("factors.tsv"), corpus);
  run.echo("corpus", {{"slots", slots}, {"template", tmpl}, {"seed", seed}});
  std::cout << "wrote " << corpus.sentences.size() << " sentences to " << run.path("corpus.txt") << '\n';
}

struct TrainVaeArgs {
  std::string corpus;
  std::optional<std::size_t> epochs, latent_dim, batch_size, layers, heads, head_dim, min_count;
  std::optional<double> lr, kl_threshold, beta;
  std::optional<std::string> beta_mode, bottleneck;
};

void cmd_train_vae(Run& run, const TrainVaeArgs& a) {
  json& s = run.seeded_section("vae");
  override_field(s, "epochs", a.epochs);
  override_field(s, "latent_dim", a.latent_dim);
  override_field(s, "batch_size", a.batch_size);
  override_field(s, "n_layers", a.layers);
  override_field(s, "n_heads", a.heads);
  override_field(s, "head_dim", a.head_dim);
  override_field(s, "kl_threshold", a.kl_threshold);
  override_field(s, "beta_constant", a.beta);
  override_field(s, "beta_mode", a.beta_mode);
  override_field(s, "bottleneck", a.bottleneck);
  if (a.lr) {
    if (!s.contains("optimizer")) s["optimizer"] = json::object();
    s["optimizer"]["learning_rate"] = *a.lr;
  }
  if (a.heads || a.head_dim) {
    if (!s.contains("embed_dim")) {
      const std::size_t h = a.heads.value_or(VaeConfig{}.n_heads), d = a.head_dim.value_or(VaeConfig{}.head_dim);
      s["embed_dim"] = h * d;
    }
  }
  VaeConfig cfg = vae_config_from_json(s, VaeConfig{}, "vae");
  const LabeledCorpus corpus = read_corpus(a.corpus);
  Vocab vocab = Vocab::build(corpus.sentences, a.min_count.value_or(1));
  cfg.vocab_size = vocab.size();
  VaeModel model(cfg, vocab);
  const auto data = encode_corpus(model.vocab(), corpus.sentences);
  const auto history = train_vae(model, data);
  std::vector<json> rows;
  for (const auto& h : history)
    rows.push_back({{"epoch", h.epoch}, {"loss", h.total}, {"ce", h.ce}, {"kl", h.kl}, {"beta", h.beta}});
  write_jsonl(run.path("history.jsonl"), rows);
  save_vae(run.path("model.json"), model);
  run.echo("vae", to_json(model.config()));
  run.echo("corpus", a.corpus);
  if (!history.empty())
    std::cout << "final epoch: loss " << history.back().total << " ce " << history.back().ce << " kl "
              << history.back().kl << '\n';
}

void cmd_encode(Run& run, const std::string& ckpt, const std::string& input) {
  const VaeModel model = load_vae(ckpt);
  const LabeledCorpus corpus = read_corpus(input);
  std::ofstream out(run.path("latents.tsv"), std::ios::binary);
  if (!out) throw DataError("cannot write latents.tsv");
  out << "sentence";
  for (std::size_t j = 0; j < model.config().latent_dim; ++j) out << "\tz" << j;
  for (std::size_t k = 0; k < corpus.factor_count(); ++k) out << "\tf" << k;
  out << '\n';
  for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
    const Tensor z = latent_of(model, corpus.sentences[i]);
    out << corpus.sentences[i];
    for (double v : z.values()) out << '\t' << fmt(v);
    if (!corpus.factors.empty())
      for (int f : corpus.factors[i]) out << '\t' << f;
    out << '\n';
  }
  run.echo("ckpt", ckpt);
  run.echo("input", input);
}

std::vector<std::vector<double>> read_latent_tsv(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) header.push_back(c);
  }
  std::vector<std::size_t> zcols;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (!header[c].empty() && header[c][0] == 'z') zcols.push_back(c);
  if (zcols.size() != dim)
    throw DataError(path + ": found " + std::to_string(zcols.size()) + " z columns, model latent_dim is " +
                    std::to_string(dim));
  std::vector<std::vector<double>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
    if (cols.size() != header.size()) throw DataError(path + ":" + std::to_string(lineno) + ": column count");
    std::vector<double> z;
    for (auto col : zcols) {
      try {
        z.push_back(std::stod(cols[col]));
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": malformed number '" + cols[col] + "'");
      }
    }
    out.push_back(std::move(z));
  }
  return out;
}

void cmd_decode(Run& run, const std::string& ckpt, const std::string& latents) {
  const VaeModel model = load_vae(ckpt);
  std::vector<std::string> lines;
  for (const auto& z : read_latent_tsv(latents, model.config().latent_dim)) lines.push_back(decode_latent(model, z));
  std::ofstream out(run.path("decoded.txt"), std::ios::binary);
  for (const auto& l : lines) out << l << '\n';
  run.echo("ckpt", ckpt);
  run.echo("latents", latents);
}

void cmd_reconstruct(Run& run, const std::string& ckpt, const std::string& input) {
  const VaeModel model = load_vae(ckpt);
  const LabeledCorpus corpus = read_corpus(input);
  std::ofstream out(run.path("reconstructions.tsv"), std::ios::binary);
  out << "source\treconstruction\tbleu\n";
  double total = 0.0;
  for (const auto& s : corpus.sentences) {
    const std::string rec = decode_latent(model, latent_of(model, s).values());
    const double b = bleu(rec, model.vocab().decode(model.vocab().encode(s)));
    total += b;
    out << s << '\t' << rec << '\t' << fmt(b) << '\n';
  }
  std::cout << "mean bleu " << total / static_cast<double>(corpus.sentences.size()) << '\n';
  run.echo("ckpt", ckpt);
  run.echo("input", input);
}

double path_is(const VaeModel& model, const std::vector<std::string>& sentences) {
  std::vector<TokenIds> ids;
  for (const auto& s : sentences) ids.push_back(model.vocab().encode(s));
  return interpolation_smoothness(ids, model.input_embeddings());
}

void cmd_interpolate(Run& run, const std::string& ckpt, const std::string& source, const std::string& target,
                     std::optional<double> step_flag) {
  json& g = run.section("geometry");
  override_field(g, "step", step_flag);
  const double step = g.value("step", 0.1);
  const VaeModel model = load_vae(ckpt);
  const Tensor z1 = latent_of(model, source), z2 = latent_of(model, target);
  InterpolationPath path = interpolate(z1.values(), z2.values(), step);
  for (const auto& z : path.latents) path.sentences.push_back(decode_latent(model, z));
  const double is = path_is(model, path.sentences);
  std::vector<json> rows;
  for (std::size_t i = 0; i < path.t.size(); ++i)
    rows.push_back({{"t", path.t[i]}, {"latent_norm", l2_norm(path.latents[i])}, {"sentence", path.sentences[i]}});
  rows.back()["IS"] = is;
  write_jsonl(run.path("path.jsonl"), rows);
  run.echo("geometry", {{"step", step}});
  run.echo("ckpt", ckpt);
  run.echo("source", source);
  run.echo("target", target);
  std::cout << "IS " << is << '\n';
}

void cmd_traverse(Run& run, const std::string& ckpt, const std::string& source, std::optional<double> radius_flag,
                  std::optional<std::size_t> count_flag) {
  json& g = run.seeded_section("geometry");
  override_field(g, "radius", radius_flag);
  override_field(g, "count", count_flag);
  const double radius = g.value("radius", 1.0);
  const std::size_t count = g.value("count", std::size_t{10});
  const std::uint64_t seed = g.at("seed").get<std::uint64_t>();
  const VaeModel model = load_vae(ckpt);
  const Tensor z = latent_of(model, source);
  Rng rng(seed);
  std::vector<json> rows;
  std::size_t i = 0;
  for (const auto& zp : traverse(z.values(), radius, count, rng)) {
    std::vector<double> diff(zp.size());
    for (std::size_t k = 0; k < zp.size(); ++k) diff[k] = zp[k] - z.values()[k];
    rows.push_back({{"index", i++}, {"distance", l2_norm(diff)}, {"sentence", decode_latent(model, zp)}});
  }
  write_jsonl(run.path("traverse.jsonl"), rows);
  run.echo("geometry", {{"radius", radius}, {"count", count}, {"seed", seed}});
  run.echo("ckpt", ckpt);
  run.echo("source", source);
}

void cmd_arith(Run& run, const std::string& ckpt, const std::string& a, const std::string& b, const std::string& c) {
  const VaeModel model = load_vae(ckpt);
  const Latent z = latent_arithmetic(latent_of(model, a).values(), latent_of(model, b).values(),
                                     latent_of(model, c).values());
  json out{{"a", a}, {"b", b}, {"c", c}, {"latent", z}, {"sentence", decode_latent(model, z)}};
  write_json_file(run.path("arith.json"), out);
  run.echo("ckpt", ckpt);
  std::cout << out["sentence"].get<std::string>() << '\n';
}

void cmd_is_metric(Run& run, const std::string& ckpt, const std::string& path_file) {
  const VaeModel model = load_vae(ckpt);
  const auto sentences = read_lines(path_file);
  const double is = path_is(model, sentences);
  write_json_file(run.path("is.json"), {{"IS", is}, {"path_length", sentences.size()}});
  run.echo("ckpt", ckpt);
  run.echo("path", path_file);
  std::cout << "IS " << is << '\n';
}

struct TrainInnArgs {
  std::string ckpt, pairs;
  std::optional<std::string> direction;
  std::optional<std::size_t> epochs, depth;
  std::optional<double> lr;
};

void cmd_train_inn(Run& run, const TrainInnArgs& a) {
  const VaeModel model = load_vae(a.ckpt);
  json& inn = run.seeded_section("inn");
  override_field(inn, "direction", a.direction);
  override_field(inn, "epochs", a.epochs);
  if (a.lr) {
    if (!inn.contains("optimizer")) inn["optimizer"] = json::object();
    inn["optimizer"]["learning_rate"] = *a.lr;
  }
  json& fl = run.seeded_section("flow");
  override_field(fl, "depth", a.depth);
  if (!fl.contains("dim")) fl["dim"] = model.config().latent_dim;
  const InnTrainConfig icfg = inn_config_from_json(inn, InnTrainConfig{}, "inn");
  const FlowConfig fcfg = flow_config_from_json(fl, FlowConfig{}, "flow");
  if (fcfg.dim != model.config().latent_dim) throw DataError("flow.dim: must equal the VAE latent_dim");
  const auto pairs = read_defmod_pairs(a.pairs);
  FlowStack stack(fcfg);
  const InnTrainResult result = train_inn(stack, model, pairs, icfg);
  std::vector<json> rows{{{"epoch", -1}, {"loss", result.initial_loss}}};
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) rows.push_back({{"epoch", e}, {"loss", result.epoch_loss[e]}});
  write_jsonl(run.path("history.jsonl"), rows);
  save_flow(run.path("flow.json"), stack);
  run.echo("inn", to_json(icfg));
  run.echo("flow", to_json(fcfg));
  run.echo("ckpt", a.ckpt);
  run.echo("pairs", a.pairs);
  std::cout << direction_name(icfg.direction) << " loss " << result.initial_loss << " -> "
            << (result.epoch_loss.empty() ? result.initial_loss : result.epoch_loss.back()) << '\n';
}

void cmd_defmod(Run& run, const std::string& ckpt, const std::string& flow_path, const std::string& pairs_path,
                const std::string& direction_name_str) {
  const VaeModel model = load_vae(ckpt);
  const FlowStack stack = load_flow(flow_path);
  const auto pairs = read_defmod_pairs(pairs_path);
  const InnDirection dir = parse_direction(direction_name_str);
  NoGradGuard no_grad;
  std::vector<json> rows;
  json summary{{"direction", direction_name(dir)}, {"count", pairs.size()}};
  if (dir == InnDirection::kForward) {
    double total = 0.0;
    for (const auto& p : pairs) {
      const auto w = triple_embed(p.embedding);
      const Tensor z = stack.forward(Tensor::from_vector({w.size()}, w)).value;
      const std::string def = decode_latent(model, z.values());
      const double b = bleu(def, model.vocab().decode(model.vocab().encode(p.definition)));
      total += b;
      rows.push_back({{"word", p.word}, {"definition", def}, {"bleu", b}});
    }
    summary["bleu"] = total / static_cast<double>(pairs.size());
  } else {
    std::vector<std::vector<double>> preds, golds;
    for (const auto& p : pairs) {
      const Tensor mu = latent_of(model, p.definition);
      const Tensor x = stack.inverse(mu);
      preds.push_back(untriple(x.values()));
      golds.push_back(p.embedding);
    }
    double cos_total = 0.0, rank_total = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double c = cosine(preds[i], golds[i]);
      const double r = golds.size() >= 2 ? ranking_metric(preds[i], i, golds) : 0.0;
      cos_total += c;
      rank_total += r;
      rows.push_back({{"word", pairs[i].word}, {"embedding", preds[i]}, {"cosine", c}, {"ranking", r}});
    }
    summary["cosine"] = cos_total / static_cast<double>(pairs.size());
    summary["ranking"] = rank_total / static_cast<double>(pairs.size());
  }
  write_jsonl(run.path("predictions.jsonl"), rows);
  write_json_file(run.path("defmod.json"), summary);
  run.echo("ckpt", ckpt);
  run.echo("flow", flow_path);
  run.echo("pairs", pairs_path);
  run.echo("direction", direction_name(dir));
}

struct TrainInferenceArgs {
  std::string ckpt, triples;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  bool zero_init = false;
};

void cmd_train_inference(Run& run, const TrainInferenceArgs& a) {
  VaeModel model = load_vae(a.ckpt);
  json& s = run.seeded_section("inference");
  override_field(s, "epochs", a.epochs);
  if (a.lr) {
    if (!s.contains("optimizer")) s["optimizer"] = json::object();
    s["optimizer"]["learning_rate"] = *a.lr;
  }
  const InferenceTrainConfig cfg = inference_config_from_json(s, InferenceTrainConfig{}, "inference");
  const auto triples = read_triples(a.triples);
  InferenceHead head(model.config().latent_dim, cfg.seed, a.zero_init);
  const double before = latent_mse(model, head, triples);
  const auto history = train_inference(model, head, triples, cfg);
  std::vector<json> rows;
  for (std::size_t e = 0; e < history.size(); ++e) rows.push_back({{"epoch", e}, {"loss", history[e]}});
  write_jsonl(run.path("history.jsonl"), rows);
  std::vector<json> conclusions;
  for (const auto& t : triples)
    conclusions.push_back({{"premise1", t.premise1}, {"premise2", t.premise2},
                           {"conclusion", generate_conclusion(model, head, t.premise1, t.premise2)}});
  write_jsonl(run.path("conclusions.jsonl"), conclusions);
  json report{{"latent_mse_before", before},
              {"latent_mse_after", latent_mse(model, head, triples)},
              {"perplexity", perplexity(model, head, triples)},
              {"count", triples.size()}};
  write_json_file(run.path("inference.json"), report);
  save_inference_head(run.path("head.json"), head);
  save_vae(run.path("model.json"), model);
  run.echo("inference", to_json(cfg));
  run.echo("ckpt", a.ckpt);
  run.echo("triples", a.triples);
  run.echo("zero_init", a.zero_init);
}

void cmd_metrics(Run& run, const std::string& input, const std::string& ckpt, std::optional<std::size_t> bins) {
  json& s = run.seeded_section("metrics");
  override_field(s, "bins", bins);
  MetricsConfig cfg = metrics_config_from_json(s, MetricsConfig{}, "metrics");
  cfg.threads = threads_from_env();
  FactorDataset data;
  if (!ckpt.empty()) {
    const VaeModel model = load_vae(ckpt);
    const LabeledCorpus corpus = read_factor_tsv(input);
    if (corpus.factors.empty()) throw DataError(input + ": factor columns required");
    data.rows = corpus.sentences.size();
    data.dims = model.config().latent_dim;
    data.n_factors = corpus.factor_count();
    for (std::size_t i = 0; i < data.rows; ++i) {
      const Tensor z = latent_of(model, corpus.sentences[i]);
      data.representations.insert(data.representations.end(), z.values().begin(), z.values().end());
      data.factors.insert(data.factors.end(), corpus.factors[i].begin(), corpus.factors[i].end());
    }
    data.infer_cardinalities();
    run.echo("ckpt", ckpt);
  } else {
    data = read_factor_dataset(input);
  }
  write_json_file(run.path("metrics.json"), metrics_report(data, cfg));
  run.echo("metrics", to_json(cfg));
  run.echo("input", input);
}

void cmd_eval(Run& run, const std::string& ckpt, const std::string& input, const std::string& sts,
              bool per_sentence) {
  const VaeModel model = load_vae(ckpt);
  const LabeledCorpus corpus = read_corpus(input);
  EvalReport report = reconstruction_report(model, corpus.sentences);
  if (!sts.empty()) {
    // s1<TAB>s2<TAB>gold score
    std::ifstream in(sts);
    if (!in) throw DataError("cannot open '" + sts + "'");
    std::vector<double> gold, pred;
    std::vector<std::vector<double>> a_lat, b_lat;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto t1 = line.find('\t');
      const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
      if (t2 == std::string::npos) throw DataError(sts + ":" + std::to_string(lineno) + ": expected 3 fields");
      try {
        gold.push_back(std::stod(line.substr(t2 + 1)));
      } catch (const std::exception&) {
        throw DataError(sts + ":" + std::to_string(lineno) + ": malformed score");
      }
      a_lat.push_back(latent_of(model, line.substr(0, t1)).to_vector());
      b_lat.push_back(latent_of(model, line.substr(t1 + 1, t2 - t1 - 1)).to_vector());
      pred.push_back(cosine(a_lat.back(), b_lat.back()));
    }
    report.spearman = spearman(pred, gold);
    if (b_lat.size() >= 2) {
      double r = 0.0;
      for (std::size_t i = 0; i < a_lat.size(); ++i) r += ranking_metric(a_lat[i], i, b_lat);
      report.ranking = r / static_cast<double>(a_lat.size());
    }
    run.echo("sts", sts);
  }
  write_json_file(run.path("eval.json"), report.to_json());
  if (per_sentence) write_per_sentence_csv(run.path("per_sentence.csv"), report);
  run.echo("ckpt", ckpt);
  run.echo("input", input);
  std::cout << "bleu " << report.bleu << " cosine " << report.cosine << " ce " << report.ce << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentlab: sentence VAE latent-space toolkit"};
  app.require_subcommand(1);
  std::vector<std::string> args(argv + 1, argv + argc);

  Common common;
  auto* gen = app.add_subcommand("gen-corpus", "Generate a factor-labeled synthetic corpus");
  GenCorpusArgs gen_args;
  gen->add_option("--slots", gen_args.slots, "Choices per slot, e.g. 4,3,2")->delimiter(',');
  gen->add_option("--template", gen_args.template_text, "Sentence template with {i} placeholders");

  auto* tv = app.add_subcommand("train-vae", "Train a sentence VAE");
  TrainVaeArgs tv_args;
  tv->add_option("--corpus", tv_args.corpus, "Corpus (lines or factor TSV)")->required();
  tv->add_option("--epochs", tv_args.epochs);
  tv->add_option("--latent-dim", tv_args.latent_dim);
  tv->add_option("--batch-size", tv_args.batch_size);
  tv->add_option("--layers", tv_args.layers);
  tv->add_option("--heads", tv_args.heads);
  tv->add_option("--head-dim", tv_args.head_dim);
  tv->add_option("--min-count", tv_args.min_count);
  tv->add_option("--lr", tv_args.lr);
  tv->add_option("--kl-threshold", tv_args.kl_threshold);
  tv->add_option("--beta", tv_args.beta, "Constant beta (with --beta-mode constant)");
  tv->add_option("--beta-mode", tv_args.beta_mode)->check(CLI::IsMember({"cyclical", "constant"}));
  tv->add_option("--bottleneck", tv_args.bottleneck)->check(CLI::IsMember({"gaussian", "vq"}));

  std::string ckpt, input, latents, source, target, a_text, b_text, c_text, path_file, flow_path, pairs, sts;
  std::string direction = "forward";
  std::optional<double> step, radius;
  std::optional<std::size_t> count, bins;
  bool per_sentence = false;

  auto* enc = app.add_subcommand("encode", "Encode sentences to posterior means");
  enc->add_option("--ckpt", ckpt)->required();
  enc->add_option("--input", input)->required();

  auto* dec = app.add_subcommand("decode", "Greedy-decode latents from a TSV");
  dec->add_option("--ckpt", ckpt)->required();
  dec->add_option("--latents", latents)->required();

  auto* rec = app.add_subcommand("reconstruct", "Encode then decode each sentence");
  rec->add_option("--ckpt", ckpt)->required();
  rec->add_option("--input", input)->required();

  auto* interp = app.add_subcommand("interpolate", "Decode a linear latent path");
  interp->add_option("--ckpt", ckpt)->required();
  interp->add_option("--source", source)->required();
  interp->add_option("--target", target)->required();
  interp->add_option("--step", step);

  auto* trav = app.add_subcommand("traverse", "Decode samples from a latent ball");
  trav->add_option("--ckpt", ckpt)->required();
  trav->add_option("--source", source)->required();
  trav->add_option("--radius", radius);
  trav->add_option("--count", count);

  auto* arith = app.add_subcommand("arith", "Decode z(a) - z(b) + z(c)");
  arith->add_option("--ckpt", ckpt)->required();
  arith->add_option("--a", a_text)->required();
  arith->add_option("--b", b_text)->required();
  arith->add_option("--c", c_text)->required();

  auto* ism = app.add_subcommand("is-metric", "Interpolation smoothness of a sentence path");
  ism->add_option("--ckpt", ckpt)->required();
  ism->add_option("--path", path_file, "One sentence per line")->required();

  auto* tinn = app.add_subcommand("train-inn", "Train a flow between word embeddings and latents");
  TrainInnArgs tinn_args;
  tinn->add_option("--ckpt", tinn_args.ckpt)->required();
  tinn->add_option("--pairs", tinn_args.pairs)->required();
  tinn->add_option("--direction", tinn_args.direction)->check(CLI::IsMember({"forward", "reverse"}));
  tinn->add_option("--epochs", tinn_args.epochs);
  tinn->add_option("--depth", tinn_args.depth);
  tinn->add_option("--lr", tinn_args.lr);

  auto* dm = app.add_subcommand("defmod", "Definition modelling with a trained flow");
  dm->add_option("--ckpt", ckpt)->required();
  dm->add_option("--flow", flow_path)->required();
  dm->add_option("--pairs", pairs)->required();
  dm->add_option("--direction", direction)->check(CLI::IsMember({"forward", "reverse"}));

  auto* tinf = app.add_subcommand("train-inference", "Train the premise-to-conclusion head");
  TrainInferenceArgs tinf_args;
  tinf->add_option("--ckpt", tinf_args.ckpt)->required();
  tinf->add_option("--triples", tinf_args.triples)->required();
  tinf->add_option("--epochs", tinf_args.epochs);
  tinf->add_option("--lr", tinf_args.lr);
  tinf->add_flag("--zero-init", tinf_args.zero_init, "Zero-initialize the head output layer");

  auto* met = app.add_subcommand("metrics", "Disentanglement metrics");
  met->add_option("--input", input, "z*/f* TSV, JSON lines, or sentence TSV with --ckpt")->required();
  met->add_option("--ckpt", ckpt, "Encode sentences of a factor TSV with this model");
  met->add_option("--bins", bins);

  auto* ev = app.add_subcommand("eval", "Reconstruction report");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--input", input)->required();
  ev->add_option("--sts", sts, "s1<TAB>s2<TAB>score pairs for Spearman and ranking");
  ev->add_flag("--per-sentence", per_sentence, "Also write per_sentence.csv");

  for (auto* sub : app.get_subcommands({})) add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto* cmd = app.get_subcommands().front();
    Run run(cmd->get_name(), common, args);
    if (cmd == gen) cmd_gen_corpus(run, gen_args);
    else if (cmd == tv) cmd_train_vae(run, tv_args);
    else if (cmd == enc) cmd_encode(run, ckpt, input);
    else if (cmd == dec) cmd_decode(run, ckpt, latents);
    else if (cmd == rec) cmd_reconstruct(run, ckpt, input);
    else if (cmd == interp) cmd_interpolate(run, ckpt, source, target, step);
    else if (cmd == trav) cmd_traverse(run, ckpt, source, radius, count);
    else if (cmd == arith) cmd_arith(run, ckpt, a_text, b_text, c_text);
    else if (cmd == ism) cmd_is_metric(run, ckpt, path_file);
    else if (cmd == tinn) cmd_train_inn(run, tinn_args);
    else if (cmd == dm) cmd_defmod(run, ckpt, flow_path, pairs, direction);
    else if (cmd == tinf) cmd_train_inference(run, tinf_args);
    else if (cmd == met) cmd_metrics(run, input, ckpt, bins);
    else if (cmd == ev) cmd_eval(run, ckpt, input, sts, per_sentence);
    run.finish();
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
