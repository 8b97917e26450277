#include "sliceqa/layers.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace sliceqa {

void LayerConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("layer config: vocab_size must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("layer config: embed_dim must be >= 1");
  if (hidden_dim < 1) throw std::invalid_argument("layer config: hidden_dim must be >= 1");
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

Tensor ParamInit::uniform(const std::string& name, Index rows, Index cols, double limit) {
  std::mt19937_64 rng(seed_ ^ fnv1a64(name));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t = Tensor::zeros({rows, cols});
  for (Index i = 0; i < t.numel(); ++i) t.values[i] = dist(rng);
  return t;
}

Tensor ParamInit::glorot(const std::string& name, Index rows, Index cols) {
  double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform(name, rows, cols, limit);
}

Var mean_rows(Tape& tape, Var x) {
  Index n = x.rows();
  if (n == 0) throw std::invalid_argument("mean_rows: empty input");
  Var ones = tape.constant_full({1, n}, 1.0 / static_cast<double>(n));
  return matmul(ones, x);
}

Var broadcast_row(Tape& tape, Var row, Index n) {
  return matmul(tape.constant_full({n, 1}, 1.0), row);
}

Var row_max(Tape& tape, Var x) {
  ConstMatMap vals = tape.mat(x.id);
  Index m = vals.rows();
  std::vector<Var> picks;
  picks.reserve(m);
  for (Index r = 0; r < m; ++r) {
    Index best = 0;
    vals.row(r).maxCoeff(&best);
    picks.push_back(slice(slice(x, 0, r, r + 1), 1, best, best + 1));
  }
  return concat(std::span<const Var>(picks), 0);
}

Embedding::Embedding(int vocab, int dim, const std::string& name, ParamInit& init)
    : table(init.uniform(name + ".table", vocab, dim, 1.0)) {}

Var Embedding::forward(Tape& tape, std::span<const int> token_ids) {
  Index vocab = table.rows();
  if (token_ids.empty()) {
    return tape.constant(Tensor::zeros({0, table.cols()}));
  }
  Var tab = tape.leaf(table);
  std::vector<Var> rows;
  rows.reserve(token_ids.size());
  for (int id : token_ids) {
    if (id < 0 || id >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
    rows.push_back(slice(tab, 0, id, id + 1));
  }
  return concat(std::span<const Var>(rows), 0);
}

void Embedding::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".table", &table});
}

GruCell::GruCell(int in_dim, int hid_dim, const std::string& name, ParamInit& init)
    : w_gates(init.glorot(name + ".w_gates", in_dim, 2 * hid_dim)),
      u_gates(init.glorot(name + ".u_gates", hid_dim, 2 * hid_dim)),
      b_gates(ParamInit::zeros(1, 2 * hid_dim)),
      w_cand(init.glorot(name + ".w_cand", in_dim, hid_dim)),
      u_cand(init.glorot(name + ".u_cand", hid_dim, hid_dim)),
      b_cand(ParamInit::zeros(1, hid_dim)),
      input_dim(in_dim),
      hidden_dim(hid_dim) {}

std::pair<Var, Var> GruCell::input_proj(Tape& tape, Var inputs) {
  Var xg = matmul(inputs, tape.leaf(w_gates));
  Var xc = matmul(inputs, tape.leaf(w_cand));
  return {xg, xc};
}

Var GruCell::step(Tape& tape, Var x_gates, Var x_cand, Var h_prev) {
  Var gates = sigmoid(add(add(x_gates, matmul(h_prev, tape.leaf(u_gates))), tape.leaf(b_gates)));
  Var z = slice(gates, 1, 0, hidden_dim);
  Var r = slice(gates, 1, hidden_dim, 2 * hidden_dim);
  Var cand =
      tanh(add(add(x_cand, matmul(mul(r, h_prev), tape.leaf(u_cand))), tape.leaf(b_cand)));
  // (1 - z) o h + z o cand, written as h + z o (cand - h).
  return add(h_prev, mul(z, sub(cand, h_prev)));
}

void GruCell::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w_gates", &w_gates});
  out.push_back({prefix + ".u_gates", &u_gates});
  out.push_back({prefix + ".b_gates", &b_gates});
  out.push_back({prefix + ".w_cand", &w_cand});
  out.push_back({prefix + ".u_cand", &u_cand});
  out.push_back({prefix + ".b_cand", &b_cand});
}

GruEncoder::GruEncoder(int in_dim, int hid_dim, bool bidir, const std::string& name,
                       ParamInit& init)
    : fwd(in_dim, hid_dim, name + ".fwd", init),
      init_fwd(ParamInit::zeros(1, hid_dim)),
      bidirectional(bidir) {
  if (bidir) {
    bwd = GruCell(in_dim, hid_dim, name + ".bwd", init);
    init_bwd = ParamInit::zeros(1, hid_dim);
  }
}

RecurrentOut GruEncoder::forward(Tape& tape, Var inputs, std::optional<Var> init_override) {
  Index len = inputs.rows();
  Var h0f = init_override ? *init_override : tape.leaf(init_fwd);
  Var h0b{};
  if (bidirectional) h0b = init_override ? *init_override : tape.leaf(init_bwd);

  if (len == 0) {
    RecurrentOut out;
    out.states = tape.constant(Tensor::zeros({0, out_dim()}));
    out.finals.push_back(h0f);
    if (bidirectional) out.finals.push_back(h0b);
    return out;
  }

  auto [xg_f, xc_f] = fwd.input_proj(tape, inputs);
  std::vector<Var> fwd_states(len);
  Var h = h0f;
  for (Index i = 0; i < len; ++i) {
    h = fwd.step(tape, slice(xg_f, 0, i, i + 1), slice(xc_f, 0, i, i + 1), h);
    fwd_states[i] = h;
  }
  Var fwd_final = h;
  Var fwd_mat = concat(std::span<const Var>(fwd_states), 0);

  RecurrentOut out;
  if (!bidirectional) {
    out.states = fwd_mat;
    out.finals = {fwd_final};
    return out;
  }

  auto [xg_b, xc_b] = bwd.input_proj(tape, inputs);
  std::vector<Var> bwd_states(len);
  Var hb = h0b;
  for (Index i = len - 1; i >= 0; --i) {
    hb = bwd.step(tape, slice(xg_b, 0, i, i + 1), slice(xc_b, 0, i, i + 1), hb);
    bwd_states[i] = hb;
  }
  Var bwd_mat = concat(std::span<const Var>(bwd_states), 0);
  out.states = concat({fwd_mat, bwd_mat}, 1);
  out.finals = {fwd_final, hb};
  return out;
}

void GruEncoder::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  fwd.collect(prefix + ".fwd", out);
  out.push_back({prefix + ".init_fwd", &init_fwd});
  if (bidirectional) {
    bwd.collect(prefix + ".bwd", out);
    out.push_back({prefix + ".init_bwd", &init_bwd});
  }
}

TrilinearSimilarity::TrilinearSimilarity(int dim, const std::string& name, ParamInit& init)
    : w_a(init.glorot(name + ".w_a", dim, 1)),
      w_b(init.glorot(name + ".w_b", dim, 1)),
      w_prod(init.glorot(name + ".w_prod", 1, dim)) {}

Var TrilinearSimilarity::matrix(Tape& tape, Var rows_a, Var rows_b) {
  Index m = rows_a.rows();
  Index n = rows_b.rows();
  Var term_a = matmul(matmul(rows_a, tape.leaf(w_a)), tape.constant_full({1, n}, 1.0));
  Var term_b = matmul(tape.constant_full({m, 1}, 1.0), transpose(matmul(rows_b, tape.leaf(w_b))));
  Var weighted = mul(rows_a, broadcast_row(tape, tape.leaf(w_prod), m));
  Var term_p = matmul(weighted, transpose(rows_b));
  return add(add(term_a, term_b), term_p);
}

void TrilinearSimilarity::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w_a", &w_a});
  out.push_back({prefix + ".w_b", &w_b});
  out.push_back({prefix + ".w_prod", &w_prod});
}

BidafAttention::BidafAttention(int dim, const std::string& name, ParamInit& init)
    : sim(dim, name + ".sim", init) {}

BidafOut BidafAttention::forward(Tape& tape, Var context, Var question, Directionality dir) {
  if (question.rows() < 1) {
    throw std::invalid_argument("bidaf: question is empty");
  }
  Index len = context.rows();
  Var s = sim.matrix(tape, context, question);
  Var probs = softmax(s);
  Var c2q = matmul(probs, question);  // [L x d]

  Var maxes = row_max(tape, s);  // [L x 1]
  Var q2c;
  if (dir == Directionality::Bidirectional) {
    Var weights = softmax(transpose(maxes));  // [1 x L]
    q2c = broadcast_row(tape, matmul(weights, context), len);
  } else {
    // Prefix-causal query-to-context: row i pools only over rows <= i.
    std::vector<Var> rows;
    rows.reserve(len);
    for (Index i = 0; i < len; ++i) {
      Var prefix = transpose(slice(maxes, 0, 0, i + 1));
      Var w = softmax(prefix);
      rows.push_back(matmul(w, slice(context, 0, 0, i + 1)));
    }
    q2c = concat(std::span<const Var>(rows), 0);
  }
  BidafOut out;
  out.c2q_weights = tape.mat(probs.id);
  out.output = concat({context, c2q, mul(context, c2q), mul(context, q2c)}, 1);
  return out;
}

void BidafAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  sim.collect(prefix + ".sim", out);
}

SelfAttention::SelfAttention(int dim, const std::string& name, ParamInit& init)
    : sim(dim, name + ".sim", init),
      w_proj(init.glorot(name + ".w_proj", 2 * dim, dim)),
      b_proj(ParamInit::zeros(1, dim)) {}

SelfAttentionOut SelfAttention::forward(Tape& tape, Var m, Directionality dir) {
  Index len = m.rows();
  SelfAttentionOut out;
  out.weights = MatrixRM::Zero(len, len);
  if (len == 1) {
    out.output = m;
    return out;
  }
  Var s = sim.matrix(tape, m, m);
  std::vector<Var> attended;
  attended.reserve(len);
  for (Index i = 0; i < len; ++i) {
    std::vector<std::uint8_t> mask(len, 1);
    mask[i] = 0;
    if (dir == Directionality::UnidirectionalPastOnly) {
      for (Index j = i + 1; j < len; ++j) mask[j] = 0;
    }
    bool any = false;
    for (auto v : mask) any = any || v;
    if (!any) {
      attended.push_back(slice(m, 0, i, i + 1));
      continue;
    }
    Var w = masked_softmax(slice(s, 0, i, i + 1), mask);
    out.weights.row(i) = tape.mat(w.id).row(0);
    attended.push_back(matmul(w, m));
  }
  Var att = concat(std::span<const Var>(attended), 0);
  Var joined = concat({m, att}, 1);
  out.output = add(matmul(joined, tape.leaf(w_proj)), broadcast_row(tape, tape.leaf(b_proj), len));
  return out;
}

void SelfAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  sim.collect(prefix + ".sim", out);
  out.push_back({prefix + ".w_proj", &w_proj});
  out.push_back({prefix + ".b_proj", &b_proj});
}

SpanHead::SpanHead(int in_dim, int hid_dim, bool bidir, const std::string& name, ParamInit& init)
    : w_start(init.glorot(name + ".w_start", in_dim, 1)),
      b_start(ParamInit::zeros(1, 1)),
      end_rnn(2 * in_dim, hid_dim, bidir, name + ".end_rnn", init),
      w_end(init.glorot(name + ".w_end", (bidir ? 2 : 1) * hid_dim, 1)),
      b_end(ParamInit::zeros(1, 1)) {}

SpanLogits SpanHead::forward(Tape& tape, Var reprs) {
  Index len = reprs.rows();
  if (len < 1) throw std::invalid_argument("span head: empty input");
  Var start_col =
      add(matmul(reprs, tape.leaf(w_start)), broadcast_row(tape, tape.leaf(b_start), len));
  Var start = transpose(start_col);  // [1 x L]

  Var p_start = softmax(start);
  Var summary = matmul(p_start, reprs);  // [1 x d]
  Var end_in = concat({reprs, broadcast_row(tape, summary, len)}, 1);
  Var end_states = end_rnn.forward(tape, end_in).states;
  Var end_col =
      add(matmul(end_states, tape.leaf(w_end)), broadcast_row(tape, tape.leaf(b_end), len));
  return {start, transpose(end_col)};
}

void SpanHead::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w_start", &w_start});
  out.push_back({prefix + ".b_start", &b_start});
  end_rnn.collect(prefix + ".end_rnn", out);
  out.push_back({prefix + ".w_end", &w_end});
  out.push_back({prefix + ".b_end", &b_end});
}

StopHead::StopHead(int in_dim, int hid_dim, const std::string& name, ParamInit& init)
    : w1(init.glorot(name + ".w1", in_dim, hid_dim)),
      b1(ParamInit::zeros(1, hid_dim)),
      w2(init.glorot(name + ".w2", hid_dim, 1)),
      b2(ParamInit::zeros(1, 1)) {}

Var StopHead::forward(Tape& tape, Var slice_reprs) {
  Var pooled = mean_rows(tape, slice_reprs);
  Var hidden = relu(add(matmul(pooled, tape.leaf(w1)), tape.leaf(b1)));
  return sigmoid(add(matmul(hidden, tape.leaf(w2)), tape.leaf(b2)));
}

void StopHead::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w1", &w1});
  out.push_back({prefix + ".b1", &b1});
  out.push_back({prefix + ".w2", &w2});
  out.push_back({prefix + ".b2", &b2});
}

TransferNet::TransferNet(int in_dim, int hid_dim, int out_dim, const std::string& name,
                         ParamInit& init)
    : w1(init.glorot(name + ".w1", in_dim, hid_dim)),
      b1(ParamInit::zeros(1, hid_dim)),
      w2(init.glorot(name + ".w2", hid_dim, out_dim)),
      b2(ParamInit::zeros(1, out_dim)) {}

Var TransferNet::forward(Tape& tape, Var pooled) {
  Var hidden = relu(add(matmul(pooled, tape.leaf(w1)), tape.leaf(b1)));
  return add(matmul(hidden, tape.leaf(w2)), tape.leaf(b2));
}

void TransferNet::collect(const std::string& prefix, std::vector<NamedParam>& out) {
  out.push_back({prefix + ".w1", &w1});
  out.push_back({prefix + ".b1", &b1});
  out.push_back({prefix + ".w2", &w2});
  out.push_back({prefix + ".b2", &b2});
}

}  // namespace sliceqa
