#include "sliceqa/model.hpp"

#include <stdexcept>

namespace sliceqa {

QaModel::QaModel(const LayerConfig& cfg, ModelFeatures features, std::uint64_t seed)
    : cfg_(cfg), features_(features) {
  cfg_.validate();
  ParamInit init(seed);
  bool bidir = cfg_.directionality == Directionality::Bidirectional;
  int d = cfg_.repr_dim();

  embed_ = Embedding(cfg_.vocab_size, cfg_.embed_dim, "embed", init);
  ctx_rnn_ = GruEncoder(cfg_.embed_dim, cfg_.hidden_dim, bidir, "ctx_rnn", init);
  // Attention reads [embedding ; contextual states]: trained-from-scratch
  // embeddings carry the word-identity signal directly.
  int att_dim = cfg_.embed_dim + d;
  bidaf_ = BidafAttention(att_dim, "bidaf", init);
  modeling_rnn_ = GruEncoder(4 * att_dim, cfg_.hidden_dim, bidir, "modeling_rnn", init);
  self_att_ = SelfAttention(d, "self_att", init);
  head_ = SpanHead(d, cfg_.hidden_dim, bidir, "head", init);
  if (features_.stop_head) {
    stop_head_ = StopHead(d, features_.stop_head_hidden_dim, "stop_head", init);
  }
  if (features_.step_transfer) {
    ctx_transfer_ =
        TransferNet(4 * att_dim, cfg_.hidden_dim, cfg_.hidden_dim, "ctx_transfer", init);
    modeling_transfer_ =
        TransferNet(d, cfg_.hidden_dim, cfg_.hidden_dim, "modeling_transfer", init);
  }
}

EncodedQuestion QaModel::encode_question(Tape& tape, std::span<const int> question) {
  if (question.empty()) throw std::invalid_argument("model: question is empty");
  Var emb = embed_.forward(tape, question);
  Var states = ctx_rnn_.forward(tape, emb).states;
  return {concat({emb, states}, 1)};
}

EncodedWindow QaModel::encode_window(Tape& tape, std::span<const int> tokens,
                                     const EncodedQuestion& q,
                                     const std::optional<TransferInit>& init) {
  EncodedWindow out;
  out.length = static_cast<Index>(tokens.size());
  Var emb = embed_.forward(tape, tokens);
  RecurrentOut ctx =
      ctx_rnn_.forward(tape, emb, init ? std::optional<Var>(init->ctx_init) : std::nullopt);
  out.ctx_finals = ctx.finals;
  Var ctx_reprs = concat({emb, ctx.states}, 1);

  Var att;
  if (cfg_.attention_enabled) {
    BidafOut bidaf_out = bidaf_.forward(tape, ctx_reprs, q.reprs, cfg_.directionality);
    att = bidaf_out.output;
    out.c2q_weights = std::move(bidaf_out.c2q_weights);
  } else {
    att = concat({ctx_reprs, ctx_reprs, ctx_reprs, ctx_reprs}, 1);
  }
  out.attention_output = att;

  RecurrentOut mod = modeling_rnn_.forward(
      tape, att, init ? std::optional<Var>(init->modeling_init) : std::nullopt);
  out.modeling_output = mod.states;
  out.modeling_finals = mod.finals;

  out.token_reprs = cfg_.self_attention_enabled
                        ? self_att_.forward(tape, mod.states, cfg_.directionality).output
                        : mod.states;
  return out;
}

SpanLogits QaModel::span_logits(Tape& tape, Var reprs) { return head_.forward(tape, reprs); }

Var QaModel::stop_probability(Tape& tape, Var slice_reprs) {
  if (!stop_head_) throw std::logic_error("model: stop head not enabled");
  return stop_head_->forward(tape, slice_reprs);
}

TransferInit QaModel::transfer_from(Tape& tape, const EncodedWindow& window) {
  if (!ctx_transfer_ || !modeling_transfer_) {
    throw std::logic_error("model: step transfer not enabled");
  }
  TransferInit init;
  init.ctx_init = ctx_transfer_->forward(tape, mean_rows(tape, window.attention_output));
  init.modeling_init = modeling_transfer_->forward(tape, mean_rows(tape, window.modeling_output));
  return init;
}

SpanLogits QaModel::answer_logits(Tape& tape, std::span<const int> question,
                                  std::span<const int> context) {
  EncodedQuestion q = encode_question(tape, question);
  EncodedWindow window = encode_window(tape, context, q);
  return span_logits(tape, window.token_reprs);
}

std::vector<NamedParam> QaModel::named_parameters() {
  std::vector<NamedParam> out;
  embed_.collect("embed", out);
  ctx_rnn_.collect("ctx_rnn", out);
  bidaf_.collect("bidaf", out);
  modeling_rnn_.collect("modeling_rnn", out);
  self_att_.collect("self_att", out);
  head_.collect("head", out);
  if (stop_head_) stop_head_->collect("stop_head", out);
  if (ctx_transfer_) ctx_transfer_->collect("ctx_transfer", out);
  if (modeling_transfer_) modeling_transfer_->collect("modeling_transfer", out);
  return out;
}

void QaModel::zero_grads() {
  for (auto& [name, tensor] : named_parameters()) tensor->zero_grad();
}

}  // namespace sliceqa
