#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sliceqa/tensor.hpp"

namespace sliceqa {

/// Inclusive token-index span.
struct Span {
  Index start = 0;
  Index end = 0;
  auto operator<=>(const Span&) const = default;
};

struct TokenSpan {
  std::string token;
  std::size_t begin = 0;  // char offsets into the original string
  std::size_t end = 0;
};

/// Lowercases, splits on whitespace, and peels leading/trailing punctuation
/// into separate tokens. Internal punctuation (don't, e-mail) is kept.
std::vector<std::string> tokenize(const std::string& text);
std::vector<TokenSpan> tokenize_with_offsets(const std::string& text);

/// Frozen token <-> id bijection with reserved PAD and UNK entries.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> id_to_token{"<pad>", "<unk>"};
  std::map<std::string, int> token_to_id;

  int size() const { return static_cast<int>(id_to_token.size()); }
  int id_of(const std::string& token) const;
  const std::string& token_of(int id) const;
  int add(const std::string& token);

  /// Most frequent tokens first (ties broken lexicographically), capped at
  /// max_size total entries including the reserved ids.
  static Vocab build(std::span<const std::vector<std::string>> docs, std::size_t max_size);
};

struct QAExample {
  std::string id;
  std::vector<std::string> question_words;
  std::vector<std::string> context_words;
  std::vector<int> question_tokens;  // filled by encode_examples
  std::vector<int> context_tokens;
  std::vector<Span> gold_spans;  // sorted, unique, non-empty
  std::string question_text;
  std::string context_text;
  std::vector<std::string> answer_texts;

  Index context_length() const { return static_cast<Index>(context_words.size()); }
  /// End token index of the earliest-ending gold span.
  Index answer_end() const;
  void validate() const;
};

struct LoadStats {
  std::size_t loaded = 0;
  std::size_t dropped = 0;  // answer spans that failed alignment
};

/// Smallest token range whose character extent covers
/// [answer_start, answer_start + answer_len).
std::optional<Span> align_char_span(std::span<const TokenSpan> offsets, std::size_t answer_start,
                                    std::size_t answer_len);

/// SQuAD v1 JSON (data -> paragraphs -> qas -> answers with answer_start
/// char offsets). Examples whose answers all fail alignment are dropped and
/// counted in stats.
std::vector<QAExample> load_squad_v1(const std::string& path, LoadStats* stats = nullptr);

/// One JSON object per line: {id, question, context, answers:[{text,
/// answer_start}]}. Shares the char-span alignment path with the SQuAD loader.
std::vector<QAExample> load_jsonl(const std::string& path, LoadStats* stats = nullptr);

struct SynthConfig {
  int vocab_size = 200;
  int num_examples = 1000;
  Index min_context_length = 24;
  Index max_context_length = 96;
  int pairs_per_context = 3;
  double distractor_rate = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Key-value retrieval contexts: K planted "key , value.." patterns among
/// filler tokens, question "key ?", gold span = that key's value tokens.
/// Pattern positions are uniform over the context. Deterministic per seed.
std::vector<QAExample> gen_synthetic(const SynthConfig& config);

void write_jsonl(const std::string& path, std::span<const QAExample> examples);

Vocab build_vocab(std::span<const QAExample> examples, std::size_t max_size);
void encode_examples(std::vector<QAExample>& examples, const Vocab& vocab);

}  // namespace sliceqa
