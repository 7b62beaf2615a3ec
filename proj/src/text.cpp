#include "latentlab/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "latentlab/random.hpp"
#include "latentlab/tensor.hpp"

namespace latentlab {

namespace {

const std::vector<std::string> kSpecials = {"<pad>", "<unk>", "<bos>", "<eos>"};

// Word pools for generated grammars; slot i draws from pool i % size.
const std::vector<std::vector<std::string>> kPools = {
    {"animal", "plant", "rock", "river", "cloud", "metal", "star", "tree", "bird", "fish",
     "moon", "seed"},
    {"contains", "needs", "produces", "absorbs", "reflects", "releases", "stores", "requires",
     "conducts", "uses", "loses", "gains"},
    {"water", "light", "heat", "energy", "oxygen", "sound", "carbon", "salt", "sugar", "ice",
     "air", "soil"},
    {"slowly", "quickly", "daily", "rarely", "often", "always", "seldom", "mostly", "partly",
     "fully", "early", "late"},
    {"outside", "inside", "nearby", "underground", "overhead", "offshore", "uphill", "indoors",
     "outdoors", "downstream", "upstream", "abroad"},
    {"today", "tonight", "yearly", "weekly", "hourly", "monthly", "nightly", "annually",
     "briefly", "lately", "forever", "once"},
};

// Template pieces: literal tokens or slot references.
struct TemplatePiece {
  bool is_slot = false;
  std::size_t slot = 0;
  std::string literal;
};

std::vector<TemplatePiece> parse_template(const GrammarSpec& spec) {
  std::vector<TemplatePiece> pieces;
  if (spec.template_text.empty()) {
    for (std::size_t i = 0; i < spec.slots.size(); ++i) pieces.push_back({true, i, {}});
    return pieces;
  }
  for (const auto& tok : tokenize(spec.template_text)) {
    if (tok.size() >= 3 && tok.front() == '{' && tok.back() == '}') {
      const std::string inner = tok.substr(1, tok.size() - 2);
      if (!inner.empty() && std::all_of(inner.begin(), inner.end(), ::isdigit)) {
        pieces.push_back({true, static_cast<std::size_t>(std::stoul(inner)), {}});
        continue;
      }
    }
    pieces.push_back({false, 0, tok});
  }
  return pieces;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

Vocab::Vocab() : tokens_(kSpecials) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

Vocab Vocab::build(std::span<const std::string> lines, std::size_t min_count) {
  if (lines.empty()) throw DataError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : lines)
    for (auto& tok : tokenize(line)) ++counts[tok];
  std::vector<std::string> tokens = kSpecials;
  for (const auto& [tok, c] : counts) {
    if (c < min_count) continue;
    if (std::find(kSpecials.begin(), kSpecials.end(), tok) != kSpecials.end()) continue;
    tokens.push_back(tok);
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < kReserved || !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin()))
    throw DataError("vocab: first four tokens must be <pad> <unk> <bos> <eos>");
  Vocab v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second)
      throw DataError("vocab: duplicate token '" + v.tokens_[i] + "'");
  }
  return v;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= tokens_.size()) throw DataError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

TokenIds Vocab::encode(std::string_view text) const {
  TokenIds ids{kBos};
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  ids.push_back(kEos);
  return ids;
}

std::string Vocab::decode(std::span<const std::size_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

TokenIds strip_specials(std::span<const std::size_t> ids) {
  TokenIds out;
  for (auto id : ids)
    if (id != Vocab::kPad && id != Vocab::kBos && id != Vocab::kEos) out.push_back(id);
  return out;
}

void GrammarSpec::validate() const {
  if (slots.empty()) throw DataError("grammar: no slots");
  for (const auto& s : slots) {
    if (s.choices.size() < 2) throw DataError("grammar: slot '" + s.name + "' needs >= 2 choices");
    for (const auto& c : s.choices)
      if (tokenize(c).size() != 1)
        throw DataError("grammar: choice '" + c + "' in slot '" + s.name + "' must be one token");
  }
  if (combinations() > kMaxSentences)
    throw DataError("grammar: cross product " + std::to_string(combinations()) + " exceeds cap " +
                    std::to_string(kMaxSentences));
  std::vector<int> uses(slots.size(), 0);
  for (const auto& p : parse_template(*this)) {
    if (!p.is_slot) continue;
    if (p.slot >= slots.size())
      throw DataError("grammar: template references missing slot {" + std::to_string(p.slot) + "}");
    ++uses[p.slot];
  }
  for (std::size_t i = 0; i < uses.size(); ++i)
    if (uses[i] != 1)
      throw DataError("grammar: slot {" + std::to_string(i) + "} must appear exactly once in template");
}

std::size_t GrammarSpec::combinations() const {
  std::size_t n = 1;
  for (const auto& s : slots) {
    n *= s.choices.size();
    if (n > kMaxSentences) return n;
  }
  return n;
}

GrammarSpec GrammarSpec::with_slot_sizes(std::span<const std::size_t> sizes,
                                         std::string template_text) {
  GrammarSpec spec;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto& pool = kPools[i % kPools.size()];
    if (sizes[i] > pool.size())
      throw DataError("grammar: slot " + std::to_string(i) + " size " + std::to_string(sizes[i]) +
                      " exceeds built-in pool of " + std::to_string(pool.size()));
    GrammarSlot slot;
    slot.name = "f" + std::to_string(i);
    const std::string suffix = i < kPools.size() ? "" : std::to_string(i / kPools.size());
    for (std::size_t c = 0; c < sizes[i]; ++c) slot.choices.push_back(pool[c] + suffix);
    spec.slots.push_back(std::move(slot));
  }
  spec.template_text = std::move(template_text);
  return spec;
}

void LabeledCorpus::validate() const {
  if (factors.empty()) return;
  if (factors.size() != sentences.size())
    throw DataError("corpus: " + std::to_string(factors.size()) + " factor rows for " +
                    std::to_string(sentences.size()) + " sentences");
  const std::size_t f = factors.front().size();
  for (const auto& row : factors)
    if (row.size() != f) throw DataError("corpus: inconsistent factor-vector lengths");
}

std::string render_sentence(const GrammarSpec& spec, std::span<const int> choice) {
  std::string out;
  for (const auto& p : parse_template(spec)) {
    if (!out.empty()) out += ' ';
    out += p.is_slot ? spec.slots.at(p.slot).choices.at(static_cast<std::size_t>(choice[p.slot]))
                     : p.literal;
  }
  return out;
}

std::optional<std::vector<int>> parse_factors(const GrammarSpec& spec, std::string_view sentence) {
  const auto pieces = parse_template(spec);
  const auto toks = tokenize(sentence);
  if (toks.size() != pieces.size()) return std::nullopt;
  std::vector<int> factors(spec.slots.size(), -1);
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (!pieces[i].is_slot) {
      if (toks[i] != pieces[i].literal) return std::nullopt;
      continue;
    }
    const auto& choices = spec.slots[pieces[i].slot].choices;
    auto it = std::find(choices.begin(), choices.end(), toks[i]);
    if (it == choices.end()) return std::nullopt;
    factors[pieces[i].slot] = static_cast<int>(it - choices.begin());
  }
  return factors;
}

LabeledCorpus generate_synthetic_corpus(const GrammarSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t total = spec.combinations();
  std::vector<std::vector<int>> rows;
  rows.reserve(total);
  std::vector<int> digit(spec.slots.size(), 0);
  for (std::size_t n = 0; n < total; ++n) {
    rows.push_back(digit);
    for (std::size_t i = spec.slots.size(); i-- > 0;) {
      if (++digit[i] < static_cast<int>(spec.slots[i].choices.size())) break;
      digit[i] = 0;
    }
  }
  Rng rng(seed);
  rng.shuffle(rows);
  LabeledCorpus corpus;
  for (auto& row : rows) corpus.sentences.push_back(render_sentence(spec, row));
  corpus.factors = std::move(rows);
  return corpus;
}

std::vector<TokenIds> encode_corpus(const Vocab& vocab, std::span<const std::string> sentences) {
  std::vector<TokenIds> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(vocab.encode(s));
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (tokenize(line).empty()) continue;
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
}

LabeledCorpus read_factor_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header");
  auto split = [](const std::string& s) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      auto tab = s.find('\t', start);
      cols.push_back(s.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return cols;
  };
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.empty() || header[0] != "sentence")
    throw DataError(path + ": header must start with 'sentence'");
  LabeledCorpus corpus;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split(line);
    if (cols.size() != header.size())
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " columns");
    corpus.sentences.push_back(cols[0]);
    std::vector<int> f;
    for (std::size_t i = 1; i < cols.size(); ++i) {
      try {
        std::size_t used = 0;
        f.push_back(std::stoi(cols[i], &used));
        if (used != cols[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": non-integer factor '" + cols[i] + "'");
      }
    }
    if (header.size() > 1) corpus.factors.push_back(std::move(f));
  }
  corpus.validate();
  return corpus;
}

void write_factor_tsv(const std::string& path, const LabeledCorpus& corpus) {
  corpus.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "sentence";
  for (std::size_t i = 0; i < corpus.factor_count(); ++i) out << "\tf" << i;
  out << '\n';
  for (std::size_t r = 0; r < corpus.sentences.size(); ++r) {
    out << corpus.sentences[r];
    if (!corpus.factors.empty())
      for (int v : corpus.factors[r]) out << '\t' << v;
    out << '\n';
  }
}

}  // namespace latentlab
