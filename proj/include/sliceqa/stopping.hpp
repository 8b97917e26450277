#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sliceqa/slicing.hpp"

namespace sliceqa {

struct StopConfig {
  int dist_threshold = 16;      // tokens; >= 2 so the scale floor ln(dist) > 0
  double stop_threshold = 0.5;  // cumulative-probability threshold
  int head_hidden_dim = 32;

  void validate() const;
};

/// Per-slice stopping supervision for one example.
struct StopSupervision {
  std::vector<double> predicted;   // stop probabilities, in [0, 1]
  std::vector<int> gold;           // 0/1; monotone non-decreasing
  std::vector<double> extra;       // scaling factors, strictly positive
  std::vector<Index> length_read;  // strictly increasing
  Index answer_end = 0;
};

/// label_i = 1 iff the gold answer end lies strictly inside the prefix read
/// through slice i.
std::vector<int> gold_stop_labels(Index answer_end, std::span<const Boundary> boundaries);

/// ln(max(dist_threshold, |length_read - answer_end|)).
double extra_length(Index length_read, Index answer_end, int dist_threshold);
std::vector<double> extra_lengths(std::span<const Boundary> boundaries, Index answer_end,
                                  int dist_threshold);

/// sum_i (predicted_i - gold_i)^2 * extra_i, evaluated on plain numbers.
double stop_loss_value(const StopSupervision& sup);

/// Same sum as a differentiable node over per-slice probability vars.
Var stop_loss(Tape& tape, std::span<const Var> slice_probs, std::span<const int> gold,
              std::span<const double> extra);

/// Marginal negative log-likelihood per head over the gold spans:
/// -log sum_starts p_start - log sum_ends p_end, with duplicate start or end
/// positions counted once. Spans must lie inside the logits' support.
Var answer_loss(Tape& tape, Var start_logits, Var end_logits, std::span<const Span> spans);

/// answer + stop when the answer is visible at the chosen stopping point,
/// otherwise stop alone (the answer term contributes no gradient).
Var total_loss(Tape& tape, std::optional<Var> answer, Var stop, bool answer_visible);

struct StopDecision {
  std::vector<double> probs;
  std::vector<double> cumulative;
  Index stop_slice = 0;  // 0-based slice index
  Index tokens_consumed = 0;
  bool threshold_reached = false;
};

/// Stops at the first slice whose cumulative probability reaches the
/// threshold; reads everything when the threshold is never reached.
StopDecision infer_stop(std::span<const double> probs, double threshold,
                        std::span<const Boundary> boundaries);

}  // namespace sliceqa
