#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sliceqa/data.hpp"
#include "sliceqa/stopping.hpp"

namespace sliceqa {

/// Lowercase, strip punctuation, strip the articles a/an/the, collapse
/// whitespace (the SQuAD v1 evaluator convention).
std::string normalize_answer(const std::string& s);

/// Token-bag F1 between prediction and the best-matching gold answer.
/// Empty vs empty scores 1, empty vs non-empty scores 0.
double text_f1(const std::string& prediction, std::span<const std::string> golds);
bool exact_match(const std::string& prediction, std::span<const std::string> golds);

struct Greediness {
  double extra_ratio = 0.0;  // (L_max - answer_end) / L_c
  double read_ratio = 0.0;   // L_max / L_c
  bool early_commit = false;  // prediction settled before reaching the answer
};
Greediness greediness_metrics(Index l_max, Index answer_end, Index l_c);

/// (F_e / F_c) * (L_c / L_e); nullopt when F_c == 0 (undefined).
std::optional<double> efficiency(double f_early, double f_full, double tokens_full,
                                 double tokens_early);

struct PrefixCurve {
  std::vector<Index> prefix_lengths;
  std::vector<double> f1;
  Index l_max = 0;  // smallest prefix attaining the curve's maximum
  double best_f1 = 0.0;
};

/// Text prediction for a given context prefix length.
using PrefixPredictor = std::function<std::string(Index prefix_len)>;

/// Evaluates prefixes stride, 2*stride, ..., L_c (the last point is always
/// L_c) and returns the F1-vs-prefix curve with its earliest maximum.
PrefixCurve oracle_best_stop(const PrefixPredictor& predict,
                             std::span<const std::string> golds, Index context_length,
                             Index stride);

struct ExampleRecord {
  std::string id;
  Index l_c = 0;
  Index l_e = 0;
  Index l_max = 0;
  Index answer_end = 0;
  double f1_full = 0.0;
  double f1_early = 0.0;
  int em_full = 0;
  double extra_ratio = 0.0;
  double oracle_read_ratio = 0.0;
  bool early_commit = false;
  Index stop_slice = 0;
  bool stopped_early = false;
  std::string pred_full;
  std::string pred_early;
};

struct LengthBucket {
  Index lo = 0;
  Index hi = 0;
  double mean_read_ratio = 0.0;
  std::size_t count = 0;
};

struct EvalReport {
  std::vector<ExampleRecord> examples;
  double f_full = 0.0;   // F_c
  double f_early = 0.0;  // F_e
  double em = 0.0;
  double mean_read_ratio = 0.0;  // mean of L_e / L_c
  double saving = 0.0;           // 1 - sum(L_e) / sum(L_c)
  std::optional<double> efficiency_value;
  Index bucket_width = 1;
  std::vector<std::size_t> hist_le;    // consumed-length histogram (early stop)
  std::vector<std::size_t> hist_lmax;  // best-stopping histogram
  std::vector<std::size_t> hist_lc;    // full-length histogram
  std::vector<LengthBucket> read_ratio_by_length;
  std::size_t dropped_examples = 0;
};

/// Aggregates per-example records: means, histograms bucketed by
/// bucket_width tokens, and the read-ratio-vs-context-length table.
EvalReport consumption_report(std::vector<ExampleRecord> records, Index bucket_width);

void write_report_csv(const EvalReport& report, const std::string& path);
void write_report_json(const EvalReport& report, const std::string& path);
/// Reads back the aggregate portion of a summary written by
/// write_report_json (per-example rows live only in the CSV).
EvalReport read_report_json(const std::string& path);

}  // namespace sliceqa
