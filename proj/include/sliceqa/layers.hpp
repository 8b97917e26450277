#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sliceqa/tensor.hpp"

namespace sliceqa {

enum class Directionality { Bidirectional, UnidirectionalPastOnly };

struct LayerConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  int hidden_dim = 32;
  bool attention_enabled = true;
  bool self_attention_enabled = true;
  Directionality directionality = Directionality::Bidirectional;

  int num_directions() const {
    return directionality == Directionality::Bidirectional ? 2 : 1;
  }
  /// Width of encoder outputs: num_directions * hidden_dim.
  int repr_dim() const { return num_directions() * hidden_dim; }
  void validate() const;
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

std::uint64_t fnv1a64(std::string_view s);

/// Deterministic per-parameter initialization: the stream for a parameter
/// depends only on (seed, name), so shared layers get identical initial
/// values across model variants that add or remove other parameters.
class ParamInit {
 public:
  explicit ParamInit(std::uint64_t seed) : seed_(seed) {}
  Tensor glorot(const std::string& name, Index rows, Index cols);
  Tensor uniform(const std::string& name, Index rows, Index cols, double limit);
  static Tensor zeros(Index rows, Index cols) { return Tensor::zeros({rows, cols}); }

 private:
  std::uint64_t seed_;
};

/// Mean over rows: [L x d] -> [1 x d].
Var mean_rows(Tape& tape, Var x);
/// Repeat a [1 x d] row n times into [n x d].
Var broadcast_row(Tape& tape, Var row, Index n);
/// Column vector of per-row maxima of a rank-2 var ([m x n] -> [m x 1]).
/// Gradient flows to the argmax entry of each row.
Var row_max(Tape& tape, Var x);

/// Trainable token embedding table; rows are gathered per token id.
struct Embedding {
  Tensor table;  // [vocab x dim]

  Embedding() = default;
  Embedding(int vocab, int dim, const std::string& name, ParamInit& init);
  /// [L x dim]; throws on ids outside the table.
  Var forward(Tape& tape, std::span<const int> token_ids);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

/// Gated recurrent cell: update/reset gates plus tanh candidate.
struct GruCell {
  Tensor w_gates;  // [in x 2h]
  Tensor u_gates;  // [h x 2h]
  Tensor b_gates;  // [1 x 2h]
  Tensor w_cand;   // [in x h]
  Tensor u_cand;   // [h x h]
  Tensor b_cand;   // [1 x h]
  int input_dim = 0;
  int hidden_dim = 0;

  GruCell() = default;
  GruCell(int in_dim, int hid_dim, const std::string& name, ParamInit& init);
  /// Input projections for the whole window at once: ([L x 2h], [L x h]).
  std::pair<Var, Var> input_proj(Tape& tape, Var inputs);
  /// One recursion step from precomputed projection rows ([1 x 2h], [1 x h]).
  Var step(Tape& tape, Var x_gates, Var x_cand, Var h_prev);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct RecurrentOut {
  Var states;               // [L x D*h]
  std::vector<Var> finals;  // one [1 x h] per direction (forward first)
};

/// Runs a gated recurrent cell over the rows of an input window, in one or
/// both directions. Initial states default to learned per-direction vectors
/// and can be overridden (the override feeds both directions).
struct GruEncoder {
  GruCell fwd;
  GruCell bwd;
  Tensor init_fwd;  // [1 x h]
  Tensor init_bwd;
  bool bidirectional = true;

  GruEncoder() = default;
  GruEncoder(int in_dim, int hid_dim, bool bidir, const std::string& name, ParamInit& init);
  RecurrentOut forward(Tape& tape, Var inputs, std::optional<Var> init_override = std::nullopt);
  int out_dim() const { return (bidirectional ? 2 : 1) * fwd.hidden_dim; }
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

/// Trilinear similarity s(a_i, b_j) = w_a.a_i + w_b.b_j + w_p.(a_i o b_j).
struct TrilinearSimilarity {
  Tensor w_a;     // [d x 1]
  Tensor w_b;     // [d x 1]
  Tensor w_prod;  // [1 x d]

  TrilinearSimilarity() = default;
  TrilinearSimilarity(int dim, const std::string& name, ParamInit& init);
  Var matrix(Tape& tape, Var rows_a, Var rows_b);  // [m x n]
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct BidafOut {
  Var output;            // [L x 4d]
  MatrixRM c2q_weights;  // [L x Lq] context-to-query attention (diagnostic copy)
};

/// Bidirectional attention flow between a context window and the question.
/// Output row i is [c_i ; a_i ; c_i o a_i ; c_i o b_i] with context-to-query
/// attention a and query-to-context attention b. In unidirectional mode the
/// query-to-context summary only pools over rows <= i.
struct BidafAttention {
  TrilinearSimilarity sim;

  BidafAttention() = default;
  BidafAttention(int dim, const std::string& name, ParamInit& init);
  BidafOut forward(Tape& tape, Var context, Var question, Directionality dir);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct SelfAttentionOut {
  Var output;        // [L x d]
  MatrixRM weights;  // [L x L], zero where masked (diagnostic copy)
};

/// Context-to-context attention with the diagonal masked out; unidirectional
/// mode additionally masks j > i. Rows whose attention support is empty pass
/// their own input through as the attended vector. A single-row input is the
/// documented degenerate case and is returned unchanged, skipping the
/// projection entirely.
struct SelfAttention {
  TrilinearSimilarity sim;
  Tensor w_proj;  // [2d x d]
  Tensor b_proj;  // [1 x d]

  SelfAttention() = default;
  SelfAttention(int dim, const std::string& name, ParamInit& init);
  SelfAttentionOut forward(Tape& tape, Var m, Directionality dir);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

struct SpanLogits {
  Var start;  // [1 x L]
  Var end;    // [1 x L]
};

/// Span prediction head. Start logits are a linear map of the input
/// representations; end logits come from one more recurrent pass over the
/// input concatenated with the start-probability-weighted summary row.
struct SpanHead {
  Tensor w_start;  // [d x 1]
  Tensor b_start;  // [1 x 1]
  GruEncoder end_rnn;
  Tensor w_end;  // [D*h x 1]
  Tensor b_end;  // [1 x 1]

  SpanHead() = default;
  SpanHead(int in_dim, int hid_dim, bool bidir, const std::string& name, ParamInit& init);
  SpanLogits forward(Tape& tape, Var reprs);
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

/// Two-layer fully connected stopping classifier with relu hidden units and
/// a sigmoid output; reads the mean of a slice's last-layer representations.
struct StopHead {
  Tensor w1;  // [d x k]
  Tensor b1;  // [1 x k]
  Tensor w2;  // [k x 1]
  Tensor b2;  // [1 x 1]

  StopHead() = default;
  StopHead(int in_dim, int hid_dim, const std::string& name, ParamInit& init);
  Var forward(Tape& tape, Var slice_reprs);  // [1 x 1] in (0, 1)
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

/// One-hidden-layer network that maps a pooled slice summary to the initial
/// recurrent state handed to the next slice.
struct TransferNet {
  Tensor w1;  // [in x hid]
  Tensor b1;  // [1 x hid]
  Tensor w2;  // [hid x h]
  Tensor b2;  // [1 x h]

  TransferNet() = default;
  TransferNet(int in_dim, int hid_dim, int out_dim, const std::string& name, ParamInit& init);
  Var forward(Tape& tape, Var pooled);  // [1 x h]
  void collect(const std::string& prefix, std::vector<NamedParam>& out);
};

}  // namespace sliceqa
