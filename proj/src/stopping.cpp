#include "sliceqa/stopping.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace sliceqa {

void StopConfig::validate() const {
  if (dist_threshold < 2) {
    throw std::invalid_argument("stop config: dist_threshold must be >= 2");
  }
  if (!(stop_threshold > 0.0)) {
    throw std::invalid_argument("stop config: stop_threshold must be > 0");
  }
  if (head_hidden_dim < 1) {
    throw std::invalid_argument("stop config: head_hidden_dim must be >= 1");
  }
}

std::vector<int> gold_stop_labels(Index answer_end, std::span<const Boundary> boundaries) {
  if (boundaries.empty()) throw std::invalid_argument("gold_stop_labels: no slices");
  Index context_length = boundaries.back().end;
  if (answer_end < 0 || answer_end >= context_length) {
    throw std::out_of_range("gold_stop_labels: answer_end " + std::to_string(answer_end) +
                            " outside context of length " + std::to_string(context_length));
  }
  std::vector<int> labels;
  labels.reserve(boundaries.size());
  for (const Boundary& b : boundaries) labels.push_back(answer_end < b.end ? 1 : 0);
  return labels;
}

double extra_length(Index length_read, Index answer_end, int dist_threshold) {
  if (length_read < 0 || answer_end < 0) {
    throw std::invalid_argument("extra_length: inputs must be non-negative");
  }
  if (dist_threshold < 2) {
    throw std::invalid_argument("extra_length: dist_threshold must be >= 2");
  }
  double dist = static_cast<double>(std::abs(length_read - answer_end));
  return std::log(std::max(static_cast<double>(dist_threshold), dist));
}

std::vector<double> extra_lengths(std::span<const Boundary> boundaries, Index answer_end,
                                  int dist_threshold) {
  std::vector<double> out;
  out.reserve(boundaries.size());
  for (const Boundary& b : boundaries) out.push_back(extra_length(b.end, answer_end, dist_threshold));
  return out;
}

double stop_loss_value(const StopSupervision& sup) {
  if (sup.predicted.size() != sup.gold.size() || sup.gold.size() != sup.extra.size()) {
    throw std::invalid_argument("stop_loss: misaligned supervision sequences");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < sup.predicted.size(); ++i) {
    double diff = sup.predicted[i] - static_cast<double>(sup.gold[i]);
    total += diff * diff * sup.extra[i];
  }
  return total;
}

Var stop_loss(Tape& tape, std::span<const Var> slice_probs, std::span<const int> gold,
              std::span<const double> extra) {
  if (slice_probs.size() != gold.size() || gold.size() != extra.size()) {
    throw std::invalid_argument("stop_loss: misaligned supervision sequences");
  }
  if (slice_probs.empty()) throw std::invalid_argument("stop_loss: no slices");
  std::vector<Var> terms;
  terms.reserve(slice_probs.size());
  for (std::size_t i = 0; i < slice_probs.size(); ++i) {
    Var diff = sub(slice_probs[i], tape.constant(Tensor::scalar(gold[i])));
    terms.push_back(scale(square(diff), extra[i]));
  }
  return add_all(terms);
}

namespace {

/// Stable log-sum-exp of selected logit positions; the max shift is a
/// constant, so the gradient is exactly the softmax restriction.
Var log_sum_exp_at(Tape& tape, Var logits, const std::set<Index>& positions) {
  const Eigen::VectorXd& vals = logits.tape->values(logits.id);
  double mx = -std::numeric_limits<double>::infinity();
  for (Index p : positions) mx = std::max(mx, vals[p]);
  std::vector<Var> picks;
  picks.reserve(positions.size());
  for (Index p : positions) picks.push_back(slice(logits, 1, p, p + 1));
  Var gathered = picks.size() == 1 ? picks[0] : concat(std::span<const Var>(picks), 1);
  Var shifted = sub(gathered, gathered.tape->constant_full(gathered.shape(), mx));
  return add(log(sum(exp(shifted))), tape.constant(Tensor::scalar(mx)));
}

Var nll_head(Tape& tape, Var logits, const std::set<Index>& gold_positions) {
  std::set<Index> all;
  for (Index i = 0; i < logits.cols(); ++i) all.insert(i);
  return sub(log_sum_exp_at(tape, logits, all), log_sum_exp_at(tape, logits, gold_positions));
}

}  // namespace

Var answer_loss(Tape& tape, Var start_logits, Var end_logits, std::span<const Span> spans) {
  if (spans.empty()) {
    throw std::invalid_argument("answer_loss: no gold spans within support");
  }
  Index support = start_logits.cols();
  std::set<Index> starts;
  std::set<Index> ends;
  for (const Span& s : spans) {
    if (s.start < 0 || s.end < s.start || s.end >= support) {
      throw std::out_of_range("answer_loss: span outside support of length " +
                              std::to_string(support));
    }
    starts.insert(s.start);
    ends.insert(s.end);
  }
  return add(nll_head(tape, start_logits, starts), nll_head(tape, end_logits, ends));
}

Var total_loss(Tape& tape, std::optional<Var> answer, Var stop, bool answer_visible) {
  (void)tape;
  if (!answer_visible) return stop;
  if (!answer) throw std::logic_error("total_loss: answer marked visible but no answer loss given");
  return add(*answer, stop);
}

StopDecision infer_stop(std::span<const double> probs, double threshold,
                        std::span<const Boundary> boundaries) {
  if (probs.size() != boundaries.size()) {
    throw std::invalid_argument("infer_stop: probs and boundaries misaligned");
  }
  if (probs.empty()) throw std::invalid_argument("infer_stop: no slices");
  StopDecision d;
  d.probs.assign(probs.begin(), probs.end());
  d.cumulative.resize(probs.size());
  double running = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] < 0.0 || probs[i] > 1.0) {
      throw std::invalid_argument("infer_stop: probability outside [0, 1]");
    }
    running += probs[i];
    d.cumulative[i] = running;
  }
  d.stop_slice = static_cast<Index>(probs.size()) - 1;
  d.threshold_reached = false;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (d.cumulative[i] >= threshold) {
      d.stop_slice = static_cast<Index>(i);
      d.threshold_reached = true;
      break;
    }
  }
  d.tokens_consumed = boundaries[d.stop_slice].end;
  return d;
}

}  // namespace sliceqa
