#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sliceqa/layers.hpp"

namespace sliceqa {

struct EncodedQuestion {
  Var reprs;  // [Lq x D*h]
};

/// Per-window encoder outputs. token_reprs carries the last-layer
/// representations the prediction and stopping heads read from.
struct EncodedWindow {
  Var token_reprs;       // [l x D*h]
  Var attention_output;  // [l x 4*(e + D*h)]
  Var modeling_output;   // [l x D*h]
  std::vector<Var> ctx_finals;       // per direction [1 x h]
  std::vector<Var> modeling_finals;  // per direction [1 x h]
  MatrixRM c2q_weights;  // [l x Lq], empty when attention is disabled
  Index length = 0;
};

/// Predicted initial recurrent states for the next slice; each receiving
/// layer's vector feeds both of its directions.
struct TransferInit {
  Var ctx_init;
  Var modeling_init;
};

struct ModelFeatures {
  bool stop_head = false;
  bool step_transfer = false;
  int stop_head_hidden_dim = 32;
};

/// The layer stack over one contiguous token window: embedding, recurrent
/// contextualization, bidirectional attention flow, recurrent modeling,
/// self-attention, span head, plus the optional stopping head and
/// slice-to-slice transfer networks.
class QaModel {
 public:
  QaModel(const LayerConfig& cfg, ModelFeatures features, std::uint64_t seed);

  EncodedQuestion encode_question(Tape& tape, std::span<const int> question);
  EncodedWindow encode_window(Tape& tape, std::span<const int> tokens, const EncodedQuestion& q,
                              const std::optional<TransferInit>& init = std::nullopt);
  SpanLogits span_logits(Tape& tape, Var reprs);

  /// sigmoid(W2.relu(W1.mean(reprs) + b1) + b2); requires the stop head.
  Var stop_probability(Tape& tape, Var slice_reprs);

  /// Transfer nets applied to a slice's pooled representations:
  /// attention-output mean feeds the contextualization init, modeling-output
  /// mean feeds the modeling init.
  TransferInit transfer_from(Tape& tape, const EncodedWindow& window);

  /// Unsliced reference path: encode the whole context, run the span head.
  SpanLogits answer_logits(Tape& tape, std::span<const int> question,
                           std::span<const int> context);

  std::vector<NamedParam> named_parameters();
  void zero_grads();
  const LayerConfig& config() const { return cfg_; }
  const ModelFeatures& features() const { return features_; }
  SelfAttention& self_attention() { return self_att_; }

 private:
  LayerConfig cfg_;
  ModelFeatures features_;
  Embedding embed_;
  GruEncoder ctx_rnn_;  // shared between question and context
  BidafAttention bidaf_;
  GruEncoder modeling_rnn_;
  SelfAttention self_att_;
  SpanHead head_;
  std::optional<StopHead> stop_head_;
  std::optional<TransferNet> ctx_transfer_;
  std::optional<TransferNet> modeling_transfer_;
};

}  // namespace sliceqa
