#pragma once

#include <span>
#include <string>
#include <vector>

#include "sliceqa/data.hpp"
#include "sliceqa/model.hpp"

namespace sliceqa {

enum class SliceMode { SlicedPrediction, GlobalPrediction, StepTransfer };

std::string to_string(SliceMode mode);
SliceMode slice_mode_from_string(const std::string& name);

/// Half-open token range of one slice.
struct Boundary {
  Index begin = 0;
  Index end = 0;
  Index length() const { return end - begin; }
  bool operator==(const Boundary&) const = default;
};

/// ceil(context_length / slice_size) contiguous ranges tiling [0, L_c);
/// every slice has length slice_size except possibly the last.
std::vector<Boundary> partition(Index context_length, Index slice_size);

struct SliceSpec {
  Index slice_size = 0;
  SliceMode mode = SliceMode::SlicedPrediction;
  std::vector<Boundary> boundaries;

  static SliceSpec make(Index context_length, Index slice_size, SliceMode mode);
  Index num_slices() const { return static_cast<Index>(boundaries.size()); }
  /// Tokens seen once slices 1..upto have been processed.
  Index length_read(Index upto) const { return boundaries[upto - 1].end; }
};

/// Outputs of one incremental run over the first `upto` slices. Aggregated
/// logits and probabilities cover exactly the seen prefix; start/end heads
/// are normalized independently over it.
struct SliceRun {
  std::vector<EncodedWindow> per_slice;
  std::vector<SpanLogits> per_slice_logits;  // sliced and step-transfer modes
  Var start_logits;  // [1 x L_seen]
  Var end_logits;
  Var start_probs;
  Var end_probs;
  std::vector<Var> stop_probs;  // per slice, when the model has a stop head
  Index tokens_seen = 0;

  std::vector<double> stop_prob_values() const;
  /// Distribution over the full context with exactly zero probability on
  /// positions beyond the seen prefix.
  Eigen::VectorXd full_start_probs(Index context_length) const;
  Eigen::VectorXd full_end_probs(Index context_length) const;
};

SliceRun run_sliced(QaModel& model, Tape& tape, const QAExample& example, const SliceSpec& spec,
                    Index upto_slice);
SliceRun run_global(QaModel& model, Tape& tape, const QAExample& example, const SliceSpec& spec,
                    Index upto_slice);
SliceRun run_step_transfer(QaModel& model, Tape& tape, const QAExample& example,
                           const SliceSpec& spec, Index upto_slice);
/// Dispatch on spec.mode.
SliceRun run_mode(QaModel& model, Tape& tape, const QAExample& example, const SliceSpec& spec,
                  Index upto_slice);

struct PrefixLogits {
  Var start;  // [1 x tokens]
  Var end;
  Index tokens = 0;
};

/// Aggregated logits over the first `upto` slices of an existing full run.
/// Sliced and step-transfer modes concatenate the stored per-slice logits;
/// global mode re-runs the shared prediction layer over the prefix.
PrefixLogits prefix_logits(QaModel& model, Tape& tape, const SliceRun& run,
                           const SliceSpec& spec, Index upto);

struct DecodedSpan {
  Span span;
  double score = 0.0;
  std::string text;
};

/// Best span by p_start * p_end over s <= e < s + max_span_len.
DecodedSpan decode_span(const SliceRun& run, const QAExample& example, Index max_span_len);
DecodedSpan decode_probs(Var start_probs, Var end_probs, const QAExample& example,
                         Index max_span_len);

}  // namespace sliceqa
