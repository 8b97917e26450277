#include "sliceqa/slicing.hpp"

#include <stdexcept>

namespace sliceqa {

std::string to_string(SliceMode mode) {
  switch (mode) {
    case SliceMode::SlicedPrediction: return "sliced";
    case SliceMode::GlobalPrediction: return "global";
    case SliceMode::StepTransfer: return "step_transfer";
  }
  return "?";
}

SliceMode slice_mode_from_string(const std::string& name) {
  if (name == "sliced") return SliceMode::SlicedPrediction;
  if (name == "global") return SliceMode::GlobalPrediction;
  if (name == "step_transfer") return SliceMode::StepTransfer;
  throw std::invalid_argument("unknown slice mode: " + name +
                              " (expected sliced|global|step_transfer)");
}

std::vector<Boundary> partition(Index context_length, Index slice_size) {
  if (slice_size <= 0) {
    throw std::invalid_argument("partition: slice_size must be positive, got " +
                                std::to_string(slice_size));
  }
  if (context_length < 1) {
    throw std::invalid_argument("partition: context_length must be >= 1");
  }
  std::vector<Boundary> out;
  for (Index begin = 0; begin < context_length; begin += slice_size) {
    out.push_back({begin, std::min(begin + slice_size, context_length)});
  }
  return out;
}

SliceSpec SliceSpec::make(Index context_length, Index slice_size, SliceMode mode) {
  SliceSpec spec;
  spec.slice_size = slice_size;
  spec.mode = mode;
  spec.boundaries = partition(context_length, slice_size);
  return spec;
}

std::vector<double> SliceRun::stop_prob_values() const {
  std::vector<double> out;
  out.reserve(stop_probs.size());
  for (Var v : stop_probs) out.push_back(v.tape->scalar_value(v));
  return out;
}

namespace {

Eigen::VectorXd pad_to_full(Var probs, Index tokens_seen, Index context_length) {
  Eigen::VectorXd full = Eigen::VectorXd::Zero(context_length);
  full.head(tokens_seen) = probs.tape->values(probs.id);
  return full;
}

void check_upto(const SliceSpec& spec, Index upto_slice) {
  if (upto_slice < 1 || upto_slice > spec.num_slices()) {
    throw std::invalid_argument("run: upto_slice " + std::to_string(upto_slice) +
                                " outside 1.." + std::to_string(spec.num_slices()));
  }
}

std::span<const int> slice_tokens(const QAExample& example, const Boundary& b) {
  return std::span<const int>(example.context_tokens).subspan(b.begin, b.length());
}

void aggregate_per_slice(SliceRun& run) {
  std::vector<Var> starts;
  std::vector<Var> ends;
  for (const SpanLogits& logits : run.per_slice_logits) {
    starts.push_back(logits.start);
    ends.push_back(logits.end);
  }
  run.start_logits = concat(std::span<const Var>(starts), 1);
  run.end_logits = concat(std::span<const Var>(ends), 1);
  run.start_probs = softmax(run.start_logits);
  run.end_probs = softmax(run.end_logits);
}

}  // namespace

Eigen::VectorXd SliceRun::full_start_probs(Index context_length) const {
  return pad_to_full(start_probs, tokens_seen, context_length);
}

Eigen::VectorXd SliceRun::full_end_probs(Index context_length) const {
  return pad_to_full(end_probs, tokens_seen, context_length);
}

SliceRun run_sliced(QaModel& model, Tape& tape, const QAExample& example, const SliceSpec& spec,
                    Index upto_slice) {
  check_upto(spec, upto_slice);
  EncodedQuestion q = model.encode_question(tape, example.question_tokens);
  SliceRun run;
  for (Index k = 0; k < upto_slice; ++k) {
    EncodedWindow window = model.encode_window(tape, slice_tokens(example, spec.boundaries[k]), q);
    run.per_slice_logits.push_back(model.span_logits(tape, window.token_reprs));
    if (model.features().stop_head) {
      run.stop_probs.push_back(model.stop_probability(tape, window.token_reprs));
    }
    run.tokens_seen += window.length;
    run.per_slice.push_back(std::move(window));
  }
  aggregate_per_slice(run);
  return run;
}

SliceRun run_global(QaModel& model, Tape& tape, const QAExample& example, const SliceSpec& spec,
                    Index upto_slice) {
  check_upto(spec, upto_slice);
  EncodedQuestion q = model.encode_question(tape, example.question_tokens);
  SliceRun run;
  std::vector<Var> reprs;
  for (Index k = 0; k < upto_slice; ++k) {
    EncodedWindow window = model.encode_window(tape, slice_tokens(example, spec.boundaries[k]), q);
    reprs.push_back(window.token_reprs);
    if (model.features().stop_head) {
      run.stop_probs.push_back(model.stop_probability(tape, window.token_reprs));
    }
    run.tokens_seen += window.length;
    run.per_slice.push_back(std::move(window));
  }
  // The prediction layer is shared across slices: it reads the concatenation
  // of the seen slices' representations. Positions beyond the prefix carry
  // zero probability by construction (see full_*_probs).
  Var joined = upto_slice == 1 ? reprs[0] : concat(std::span<const Var>(reprs), 0);
  SpanLogits logits = model.span_logits(tape, joined);
  run.start_logits = logits.start;
  run.end_logits = logits.end;
  run.start_probs = softmax(run.start_logits);
  run.end_probs = softmax(run.end_logits);
  return run;
}

SliceRun run_step_transfer(QaModel& model, Tape& tape, const QAExample& example,
                           const SliceSpec& spec, Index upto_slice) {
  check_upto(spec, upto_slice);
  EncodedQuestion q = model.encode_question(tape, example.question_tokens);
  SliceRun run;
  std::optional<TransferInit> carried;
  for (Index k = 0; k < upto_slice; ++k) {
    EncodedWindow window =
        model.encode_window(tape, slice_tokens(example, spec.boundaries[k]), q, carried);
    run.per_slice_logits.push_back(model.span_logits(tape, window.token_reprs));
    if (model.features().stop_head) {
      run.stop_probs.push_back(model.stop_probability(tape, window.token_reprs));
    }
    run.tokens_seen += window.length;
    carried = model.transfer_from(tape, window);
    run.per_slice.push_back(std::move(window));
  }
  aggregate_per_slice(run);
  return run;
}

SliceRun run_mode(QaModel& model, Tape& tape, const QAExample& example, const SliceSpec& spec,
                  Index upto_slice) {
  switch (spec.mode) {
    case SliceMode::SlicedPrediction: return run_sliced(model, tape, example, spec, upto_slice);
    case SliceMode::GlobalPrediction: return run_global(model, tape, example, spec, upto_slice);
    case SliceMode::StepTransfer:
      return run_step_transfer(model, tape, example, spec, upto_slice);
  }
  throw std::logic_error("run_mode: bad mode");
}

PrefixLogits prefix_logits(QaModel& model, Tape& tape, const SliceRun& run,
                           const SliceSpec& spec, Index upto) {
  check_upto(spec, upto);
  PrefixLogits out;
  out.tokens = spec.length_read(upto);
  if (spec.mode == SliceMode::GlobalPrediction) {
    std::vector<Var> reprs;
    for (Index k = 0; k < upto; ++k) reprs.push_back(run.per_slice[k].token_reprs);
    Var joined = upto == 1 ? reprs[0] : concat(std::span<const Var>(reprs), 0);
    SpanLogits logits = model.span_logits(tape, joined);
    out.start = logits.start;
    out.end = logits.end;
    return out;
  }
  if (upto == static_cast<Index>(run.per_slice_logits.size())) {
    out.start = run.start_logits;
    out.end = run.end_logits;
    return out;
  }
  std::vector<Var> starts;
  std::vector<Var> ends;
  for (Index k = 0; k < upto; ++k) {
    starts.push_back(run.per_slice_logits[k].start);
    ends.push_back(run.per_slice_logits[k].end);
  }
  out.start = concat(std::span<const Var>(starts), 1);
  out.end = concat(std::span<const Var>(ends), 1);
  return out;
}

DecodedSpan decode_span(const SliceRun& run, const QAExample& example, Index max_span_len) {
  return decode_probs(run.start_probs, run.end_probs, example, max_span_len);
}

DecodedSpan decode_probs(Var start_probs, Var end_probs, const QAExample& example,
                         Index max_span_len) {
  const Eigen::VectorXd& ps = start_probs.tape->values(start_probs.id);
  const Eigen::VectorXd& pe = end_probs.tape->values(end_probs.id);
  Index length = ps.size();
  DecodedSpan best;
  best.score = -1.0;
  for (Index s = 0; s < length; ++s) {
    Index last = std::min(length - 1, s + max_span_len - 1);
    for (Index e = s; e <= last; ++e) {
      double score = ps[s] * pe[e];
      if (score > best.score) {
        best.score = score;
        best.span = {s, e};
      }
    }
  }
  std::string text;
  for (Index i = best.span.start; i <= best.span.end; ++i) {
    if (!text.empty()) text += ' ';
    text += example.context_words[i];
  }
  best.text = std::move(text);
  return best;
}

}  // namespace sliceqa
