#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace latentlab {

std::vector<std::string> tokenize(std::string_view text);

using TokenIds = std::vector<std::size_t>;

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kBos = 2;
  static constexpr std::size_t kEos = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();
  // Whitespace-tokenized lines; tokens seen fewer than min_count times map to UNK.
  static Vocab build(std::span<const std::string> lines, std::size_t min_count = 1);
  // Rebuild from an id->token list (first four entries must be the specials).
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }

  // BOS + ids + EOS.
  TokenIds encode(std::string_view text) const;
  // Drops PAD/BOS/EOS, renders UNK as "<unk>", joins with single spaces.
  std::string decode(std::span<const std::size_t> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Ids with BOS/EOS/PAD removed.
TokenIds strip_specials(std::span<const std::size_t> ids);

struct GrammarSlot {
  std::string name;
  std::vector<std::string> choices;
};

// Ordered factor slots plus an optional template such as "{0} is a kind of {1}".
// An empty template joins the slots with single spaces.
struct GrammarSpec {
  std::vector<GrammarSlot> slots;
  std::string template_text;

  static constexpr std::size_t kMaxSentences = 100000;

  void validate() const;
  std::size_t combinations() const;
  // Built-in word pools, one slot per entry of `sizes`.
  static GrammarSpec with_slot_sizes(std::span<const std::size_t> sizes,
                                     std::string template_text = {});
};

struct LabeledCorpus {
  std::vector<std::string> sentences;
  std::vector<std::vector<int>> factors;  // empty, or one row per sentence

  std::size_t factor_count() const { return factors.empty() ? 0 : factors.front().size(); }
  void validate() const;
};

std::string render_sentence(const GrammarSpec& spec, std::span<const int> choice);
// Recovers the slot choice vector from a surface form, if it matches the grammar.
std::optional<std::vector<int>> parse_factors(const GrammarSpec& spec, std::string_view sentence);

// Full cross product of slot choices, shuffled deterministically by seed.
LabeledCorpus generate_synthetic_corpus(const GrammarSpec& spec, std::uint64_t seed);

std::vector<TokenIds> encode_corpus(const Vocab& vocab, std::span<const std::string> sentences);

// One sentence per line; blank lines skipped.
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, std::span<const std::string> lines);
// Header `sentence<TAB>f0<TAB>f1...`.
LabeledCorpus read_factor_tsv(const std::string& path);
void write_factor_tsv(const std::string& path, const LabeledCorpus& corpus);

}  // namespace latentlab
