#include "sliceqa/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sliceqa {

namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
char to_lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

}  // namespace

std::vector<TokenSpan> tokenize_with_offsets(const std::string& text) {
  std::vector<TokenSpan> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto emit = [&](std::size_t begin, std::size_t end) {
    TokenSpan t;
    t.begin = begin;
    t.end = end;
    t.token.reserve(end - begin);
    for (std::size_t k = begin; k < end; ++k) t.token += to_lower(text[k]);
    out.push_back(std::move(t));
  };
  while (i < n) {
    while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= n) break;
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    // Peel leading and trailing punctuation into their own tokens; internal
    // punctuation (don't, e-mail) stays inside the word.
    std::size_t begin = i;
    std::size_t end = j;
    while (begin < end && is_punct(text[begin])) {
      emit(begin, begin + 1);
      ++begin;
    }
    std::size_t tail = end;
    while (tail > begin && is_punct(text[tail - 1])) --tail;
    if (begin < tail) emit(begin, tail);
    for (std::size_t k = tail; k < end; ++k) emit(k, k + 1);
    i = j;
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  for (auto& t : tokenize_with_offsets(text)) out.push_back(std::move(t.token));
  return out;
}

int Vocab::id_of(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id));
  return id_to_token[id];
}

int Vocab::add(const std::string& token) {
  auto it = token_to_id.find(token);
  if (it != token_to_id.end()) return it->second;
  int id = size();
  id_to_token.push_back(token);
  token_to_id.emplace(token, id);
  return id;
}

Vocab Vocab::build(std::span<const std::vector<std::string>> docs, std::size_t max_size) {
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : docs) {
    for (const auto& tok : doc) ++freq[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocab v;
  for (const auto& [tok, count] : ranked) {
    if (static_cast<std::size_t>(v.size()) >= max_size) break;
    v.add(tok);
  }
  return v;
}

Index QAExample::answer_end() const {
  if (gold_spans.empty()) throw std::logic_error("example " + id + ": no gold spans");
  Index best = gold_spans.front().end;
  for (const Span& s : gold_spans) best = std::min(best, s.end);
  return best;
}

void QAExample::validate() const {
  if (context_words.empty()) throw std::invalid_argument("example " + id + ": empty context");
  if (gold_spans.empty()) throw std::invalid_argument("example " + id + ": no gold spans");
  for (const Span& s : gold_spans) {
    if (s.start < 0 || s.start > s.end || s.end >= context_length()) {
      throw std::invalid_argument("example " + id + ": span out of range");
    }
  }
}

std::optional<Span> align_char_span(std::span<const TokenSpan> offsets, std::size_t answer_start,
                                    std::size_t answer_len) {
  std::size_t answer_stop = answer_start + answer_len;
  Index first = -1;
  Index last = -1;
  for (Index i = 0; i < static_cast<Index>(offsets.size()); ++i) {
    const TokenSpan& t = offsets[i];
    bool overlaps = t.begin < answer_stop && t.end > answer_start;
    if (overlaps) {
      if (first < 0) first = i;
      last = i;
    }
  }
  if (first < 0) return std::nullopt;
  if (offsets[first].begin > answer_start || offsets[last].end < answer_stop) return std::nullopt;
  return Span{first, last};
}

namespace {

using nlohmann::json;

struct RawAnswer {
  std::string text;
  std::size_t answer_start;
};

std::optional<QAExample> make_example(const std::string& id, const std::string& question,
                                      const std::string& context,
                                      const std::vector<RawAnswer>& answers, LoadStats* stats) {
  std::vector<TokenSpan> offsets = tokenize_with_offsets(context);
  QAExample ex;
  ex.id = id;
  ex.question_text = question;
  ex.context_text = context;
  ex.question_words = tokenize(question);
  for (const auto& t : offsets) ex.context_words.push_back(t.token);

  std::set<Span> spans;
  for (const RawAnswer& a : answers) {
    if (context.compare(a.answer_start, a.text.size(), a.text) != 0) continue;
    auto span = align_char_span(offsets, a.answer_start, a.text.size());
    if (!span) continue;
    spans.insert(*span);
    if (std::find(ex.answer_texts.begin(), ex.answer_texts.end(), a.text) ==
        ex.answer_texts.end()) {
      ex.answer_texts.push_back(a.text);
    }
  }
  if (spans.empty() || ex.context_words.empty() || ex.question_words.empty()) {
    if (stats) ++stats->dropped;
    return std::nullopt;
  }
  ex.gold_spans.assign(spans.begin(), spans.end());
  if (stats) ++stats->loaded;
  return ex;
}

json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return root;
}

}  // namespace

std::vector<QAExample> load_squad_v1(const std::string& path, LoadStats* stats) {
  json root = parse_file(path);
  std::vector<QAExample> out;
  try {
    for (const json& article : root.at("data")) {
      for (const json& paragraph : article.at("paragraphs")) {
        std::string context = paragraph.at("context").get<std::string>();
        for (const json& qa : paragraph.at("qas")) {
          std::vector<RawAnswer> answers;
          for (const json& ans : qa.at("answers")) {
            answers.push_back({ans.at("text").get<std::string>(),
                               ans.at("answer_start").get<std::size_t>()});
          }
          auto ex = make_example(qa.at("id").get<std::string>(),
                                 qa.at("question").get<std::string>(), context, answers, stats);
          if (ex) out.push_back(std::move(*ex));
        }
      }
    }
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return out;
}

std::vector<QAExample> load_jsonl(const std::string& path, LoadStats* stats) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<QAExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
      std::vector<RawAnswer> answers;
      for (const json& ans : obj.at("answers")) {
        answers.push_back(
            {ans.at("text").get<std::string>(), ans.at("answer_start").get<std::size_t>()});
      }
      auto ex = make_example(obj.at("id").get<std::string>(),
                             obj.at("question").get<std::string>(),
                             obj.at("context").get<std::string>(), answers, stats);
      if (ex) out.push_back(std::move(*ex));
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void SynthConfig::validate() const {
  if (vocab_size < 24) throw std::invalid_argument("synth config: vocab_size must be >= 24");
  if (num_examples < 1) throw std::invalid_argument("synth config: num_examples must be >= 1");
  if (min_context_length < 1 || max_context_length < min_context_length) {
    throw std::invalid_argument("synth config: bad context length range");
  }
  if (pairs_per_context < 1) throw std::invalid_argument("synth config: pairs_per_context >= 1");
  if (distractor_rate < 0.0 || distractor_rate > 1.0) {
    throw std::invalid_argument("synth config: distractor_rate in [0, 1]");
  }
  // Worst case: every pattern is "key , v v v".
  if (static_cast<Index>(pairs_per_context) * 5 > min_context_length) {
    throw std::invalid_argument("synth config: planted pairs do not fit the context range");
  }
}

std::vector<QAExample> gen_synthetic(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  int key_count = std::max(4, config.vocab_size * 3 / 10);
  int value_count = std::max(4, config.vocab_size * 3 / 10);
  int filler_count = config.vocab_size - key_count - value_count - 2;  // "," and "?"
  if (filler_count < 4) throw std::invalid_argument("synth config: vocab too small for word pools");
  auto key_word = [](int i) { return "key" + std::to_string(i); };
  auto value_word = [](int i) { return "val" + std::to_string(i); };
  auto filler_word = [](int i) { return "word" + std::to_string(i); };

  std::uniform_int_distribution<Index> len_dist(config.min_context_length,
                                                config.max_context_length);
  std::uniform_int_distribution<int> key_dist(0, key_count - 1);
  std::uniform_int_distribution<int> value_dist(0, value_count - 1);
  std::uniform_int_distribution<int> filler_dist(0, filler_count - 1);
  std::uniform_int_distribution<int> vlen_dist(1, 3);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  std::vector<QAExample> out;
  out.reserve(config.num_examples);
  for (int n = 0; n < config.num_examples; ++n) {
    Index length = len_dist(rng);
    int pairs = config.pairs_per_context;

    std::vector<int> vlens(pairs);
    std::vector<Index> sizes(pairs);
    for (int k = 0; k < pairs; ++k) {
      vlens[k] = vlen_dist(rng);
      sizes[k] = 2 + vlens[k];
    }

    // Uniform non-overlapping placement by rejection.
    std::vector<Index> starts(pairs);
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      for (int k = 0; k < pairs; ++k) {
        std::uniform_int_distribution<Index> pos(0, length - sizes[k]);
        starts[k] = pos(rng);
      }
      placed = true;
      for (int a = 0; a < pairs && placed; ++a) {
        for (int b = a + 1; b < pairs && placed; ++b) {
          Index lo = std::max(starts[a], starts[b]);
          Index hi = std::min(starts[a] + sizes[a], starts[b] + sizes[b]);
          if (lo < hi) placed = false;
        }
      }
    }
    if (!placed) {
      throw std::runtime_error("gen_synthetic: could not place pairs in context of length " +
                               std::to_string(length));
    }

    std::vector<int> keys(pairs);
    std::set<int> used;
    for (int k = 0; k < pairs; ++k) {
      int key = key_dist(rng);
      while (used.count(key)) key = key_dist(rng);
      used.insert(key);
      keys[k] = key;
    }

    std::vector<std::string> words(length);
    for (int k = 0; k < pairs; ++k) {
      Index p = starts[k];
      words[p] = key_word(keys[k]);
      words[p + 1] = ",";
      for (int v = 0; v < vlens[k]; ++v) words[p + 2 + v] = value_word(value_dist(rng));
    }
    for (Index i = 0; i < length; ++i) {
      if (!words[i].empty()) continue;
      words[i] = coin(rng) < config.distractor_rate ? value_word(value_dist(rng))
                                                    : filler_word(filler_dist(rng));
    }

    std::uniform_int_distribution<int> pick(0, pairs - 1);
    int asked = pick(rng);
    Span gold{starts[asked] + 2, starts[asked] + 1 + vlens[asked]};

    QAExample ex;
    ex.id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(n);
    ex.context_words = words;
    ex.question_words = {key_word(keys[asked]), "?"};
    ex.gold_spans = {gold};

    std::string context_text;
    std::vector<std::size_t> word_begin(length);
    for (Index i = 0; i < length; ++i) {
      if (i) context_text += ' ';
      word_begin[i] = context_text.size();
      context_text += words[i];
    }
    ex.context_text = std::move(context_text);
    ex.question_text = ex.question_words[0] + " ?";
    std::string answer;
    for (Index i = gold.start; i <= gold.end; ++i) {
      if (!answer.empty()) answer += ' ';
      answer += words[i];
    }
    ex.answer_texts = {answer};
    ex.validate();
    out.push_back(std::move(ex));
  }
  return out;
}

void write_jsonl(const std::string& path, std::span<const QAExample> examples) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write " + path);
  for (const QAExample& ex : examples) {
    // Context words are space-joined in context_text, so span char offsets
    // are reconstructible from word lengths.
    std::vector<std::size_t> word_begin(ex.context_words.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < ex.context_words.size(); ++i) {
      word_begin[i] = pos;
      pos += ex.context_words[i].size() + 1;
    }
    json answers = json::array();
    for (const Span& span : ex.gold_spans) {
      std::string text;
      for (Index i = span.start; i <= span.end; ++i) {
        if (!text.empty()) text += ' ';
        text += ex.context_words[i];
      }
      answers.push_back({{"text", text}, {"answer_start", word_begin[span.start]}});
    }
    json obj{{"id", ex.id},
             {"question", ex.question_text},
             {"context", ex.context_text},
             {"answers", answers}};
    outf << obj.dump() << '\n';
  }
}

Vocab build_vocab(std::span<const QAExample> examples, std::size_t max_size) {
  std::vector<std::vector<std::string>> docs;
  docs.reserve(examples.size() * 2);
  for (const QAExample& ex : examples) {
    docs.push_back(ex.question_words);
    docs.push_back(ex.context_words);
  }
  return Vocab::build(docs, max_size);
}

void encode_examples(std::vector<QAExample>& examples, const Vocab& vocab) {
  for (QAExample& ex : examples) {
    ex.question_tokens.clear();
    ex.context_tokens.clear();
    for (const auto& w : ex.question_words) ex.question_tokens.push_back(vocab.id_of(w));
    for (const auto& w : ex.context_words) ex.context_tokens.push_back(vocab.id_of(w));
  }
}

}  // namespace sliceqa
