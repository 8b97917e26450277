#include "sliceqa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sliceqa {

namespace {

using nlohmann::json;

std::string directionality_name(Directionality d) {
  return d == Directionality::Bidirectional ? "bidirectional" : "unidirectional";
}

Directionality directionality_from(const std::string& name) {
  if (name == "bidirectional") return Directionality::Bidirectional;
  if (name == "unidirectional") return Directionality::UnidirectionalPastOnly;
  throw std::invalid_argument("unknown directionality: " + name);
}

json synth_to_json(const SynthConfig& s) {
  return json{{"vocab_size", s.vocab_size},
              {"num_examples", s.num_examples},
              {"min_context_length", s.min_context_length},
              {"max_context_length", s.max_context_length},
              {"pairs_per_context", s.pairs_per_context},
              {"distractor_rate", s.distractor_rate},
              {"seed", s.seed}};
}

SynthConfig synth_from_json(const json& j) {
  SynthConfig s;
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.num_examples = j.value("num_examples", s.num_examples);
  s.min_context_length = j.value("min_context_length", s.min_context_length);
  s.max_context_length = j.value("max_context_length", s.max_context_length);
  s.pairs_per_context = j.value("pairs_per_context", s.pairs_per_context);
  s.distractor_rate = j.value("distractor_rate", s.distractor_rate);
  s.seed = j.value("seed", s.seed);
  return s;
}

json config_to_json(const RunConfig& c) {
  json data{{"train_path", c.data.train_path},
            {"dev_path", c.data.dev_path},
            {"synth_dev_examples", c.data.synth_dev_examples}};
  if (c.data.synth) data["synthetic"] = synth_to_json(*c.data.synth);
  return json{
      {"data", data},
      {"layers",
       {{"vocab_size", c.layers.vocab_size},
        {"embed_dim", c.layers.embed_dim},
        {"hidden_dim", c.layers.hidden_dim},
        {"attention_enabled", c.layers.attention_enabled},
        {"self_attention_enabled", c.layers.self_attention_enabled},
        {"directionality", directionality_name(c.layers.directionality)}}},
      {"slice_size", c.slice_size},
      {"mode", to_string(c.mode)},
      {"stop",
       {{"dist_threshold", c.stop.dist_threshold},
        {"stop_threshold", c.stop.stop_threshold},
        {"head_hidden_dim", c.stop.head_hidden_dim}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"seed", c.train.seed}}},
      {"greedy_training", c.greedy_training},
      {"early_stopping", c.early_stopping},
      {"max_span_len", c.max_span_len},
      {"vocab_cap", c.vocab_cap},
      {"output_dir", c.output_dir}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  if (j.contains("data")) {
    const json& d = j["data"];
    c.data.train_path = d.value("train_path", "");
    c.data.dev_path = d.value("dev_path", "");
    c.data.synth_dev_examples = d.value("synth_dev_examples", c.data.synth_dev_examples);
    if (d.contains("synthetic")) c.data.synth = synth_from_json(d["synthetic"]);
  }
  if (j.contains("layers")) {
    const json& l = j["layers"];
    c.layers.vocab_size = l.value("vocab_size", c.layers.vocab_size);
    c.layers.embed_dim = l.value("embed_dim", c.layers.embed_dim);
    c.layers.hidden_dim = l.value("hidden_dim", c.layers.hidden_dim);
    c.layers.attention_enabled = l.value("attention_enabled", c.layers.attention_enabled);
    c.layers.self_attention_enabled =
        l.value("self_attention_enabled", c.layers.self_attention_enabled);
    c.layers.directionality =
        directionality_from(l.value("directionality", std::string("bidirectional")));
  }
  c.slice_size = j.value("slice_size", c.slice_size);
  c.mode = slice_mode_from_string(j.value("mode", std::string("sliced")));
  if (j.contains("stop")) {
    const json& s = j["stop"];
    c.stop.dist_threshold = s.value("dist_threshold", c.stop.dist_threshold);
    c.stop.stop_threshold = s.value("stop_threshold", c.stop.stop_threshold);
    c.stop.head_hidden_dim = s.value("head_hidden_dim", c.stop.head_hidden_dim);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.max_epochs = t.value("max_epochs", c.train.max_epochs);
    c.train.patience = t.value("patience", c.train.patience);
    c.train.seed = t.value("seed", c.train.seed);
  }
  c.greedy_training = j.value("greedy_training", c.greedy_training);
  c.early_stopping = j.value("early_stopping", c.early_stopping);
  c.max_span_len = j.value("max_span_len", c.max_span_len);
  c.vocab_cap = j.value("vocab_cap", c.vocab_cap);
  c.output_dir = j.value("output_dir", c.output_dir);
  return c;
}

ModelFeatures features_of(const RunConfig& c) {
  ModelFeatures f;
  f.stop_head = c.early_stopping;
  f.step_transfer = c.mode == SliceMode::StepTransfer;
  f.stop_head_hidden_dim = c.stop.head_hidden_dim;
  return f;
}

std::vector<QAExample> load_any(const std::string& path, LoadStats* stats) {
  if (path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl") {
    return load_jsonl(path, stats);
  }
  return load_squad_v1(path, stats);
}

std::string format_epoch_line(const EpochStats& e) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "epoch %d train_loss %.6f dev_f1 %.6f\n", e.epoch, e.train_loss,
                e.dev_f1);
  return buf;
}

}  // namespace

std::string RunConfig::to_json_text() const { return config_to_json(*this).dump(); }

RunConfig RunConfig::from_json_text(const std::string& text) {
  return config_from_json(json::parse(text));
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return config_from_json(j);
}

void save_run_config(const RunConfig& config, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config " + path);
  out << config_to_json(config).dump(2) << '\n';
}

PreparedData prepare_data(const RunConfig& config) {
  PreparedData data;
  if (config.data.synth) {
    SynthConfig train_cfg = *config.data.synth;
    data.train = gen_synthetic(train_cfg);
    SynthConfig dev_cfg = train_cfg;
    dev_cfg.num_examples = config.data.synth_dev_examples;
    dev_cfg.seed = train_cfg.seed ^ 0x9e3779b97f4a7c15ull;
    data.dev = gen_synthetic(dev_cfg);
    data.train_stats.loaded = data.train.size();
    data.dev_stats.loaded = data.dev.size();
  } else {
    if (config.data.train_path.empty() || config.data.dev_path.empty()) {
      throw std::invalid_argument("config: either synthetic data or train/dev paths required");
    }
    data.train = load_any(config.data.train_path, &data.train_stats);
    data.dev = load_any(config.data.dev_path, &data.dev_stats);
  }
  data.vocab = build_vocab(data.train, static_cast<std::size_t>(config.vocab_cap));
  encode_examples(data.train, data.vocab);
  encode_examples(data.dev, data.vocab);
  return data;
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {
constexpr char kMagic[8] = {'S', 'Q', 'A', 'C', 'K', 'P', 'T', '1'};
}

void Checkpoint::save(const std::string& path) const {
  json manifest;
  manifest["version"] = version;
  manifest["config"] = json::parse(config_json);
  manifest["vocab"] = vocab_tokens;
  manifest["epoch"] = epoch;
  json hist = json::array();
  for (const EpochStats& e : history) {
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_f1", e.dev_f1}});
  }
  manifest["history"] = hist;
  json tens = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    tens.push_back({{"name", name},
                    {"shape", tensor.shape},
                    {"offset", offset},
                    {"count", tensor.numel()}});
    offset += static_cast<std::uint64_t>(tensor.numel());
  }
  manifest["tensors"] = tens;

  std::string text = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, tensor] : tensors) {
    out.write(reinterpret_cast<const char*>(tensor.values.data()),
              static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write to checkpoint " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path + ": not a checkpoint file");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path + ": truncated manifest");
  json manifest = json::parse(text);

  Checkpoint ck;
  ck.version = manifest.at("version").get<std::uint32_t>();
  if (ck.version != 1) {
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(ck.version));
  }
  ck.config_json = manifest.at("config").dump();
  ck.vocab_tokens = manifest.at("vocab").get<std::vector<std::string>>();
  ck.epoch = manifest.at("epoch").get<int>();
  for (const json& e : manifest.at("history")) {
    ck.history.push_back(
        {e.at("epoch").get<int>(), e.at("train_loss").get<double>(), e.at("dev_f1").get<double>()});
  }
  for (const json& t : manifest.at("tensors")) {
    Shape shape = t.at("shape").get<Shape>();
    Index count = t.at("count").get<Index>();
    Tensor tensor = Tensor::zeros(shape);
    if (tensor.numel() != count) throw std::runtime_error(path + ": manifest shape mismatch");
    in.read(reinterpret_cast<char*>(tensor.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated tensor data");
    ck.tensors.emplace_back(t.at("name").get<std::string>(), std::move(tensor));
  }
  return ck;
}

Vocab Checkpoint::vocab() const {
  Vocab v;
  v.id_to_token.clear();
  v.token_to_id.clear();
  for (int i = 0; i < static_cast<int>(vocab_tokens.size()); ++i) {
    v.id_to_token.push_back(vocab_tokens[i]);
    v.token_to_id.emplace(vocab_tokens[i], i);
  }
  return v;
}

RunConfig Checkpoint::config() const { return RunConfig::from_json_text(config_json); }

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::attach(const std::vector<NamedParam>& params) {
  params_ = params;
  m_.clear();
  v_.clear();
  for (const NamedParam& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor->shape));
    v_.push_back(Tensor::zeros(p.tensor->shape));
  }
  t_ = 0;
}

void Adam::step(double grad_scale) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i].tensor;
    p.ensure_grad();
    Eigen::VectorXd g = p.grad * grad_scale;
    m_[i].values = beta1_ * m_[i].values + (1.0 - beta1_) * g;
    v_[i].values = beta2_ * v_[i].values + (1.0 - beta2_) * g.cwiseProduct(g);
    Eigen::VectorXd m_hat = m_[i].values / bc1;
    Eigen::VectorXd v_hat = v_[i].values / bc2;
    p.values -= lr_ * (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("adam.t", Tensor::scalar(static_cast<double>(t_)));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back("adam.m." + params_[i].name, m_[i]);
    out.emplace_back("adam.v." + params_[i].name, v_[i]);
  }
  return out;
}

void Adam::restore(const std::vector<std::pair<std::string, Tensor>>& state) {
  for (const auto& [name, tensor] : state) {
    if (name == "adam.t") {
      t_ = static_cast<long>(tensor.values[0]);
      continue;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (name == "adam.m." + params_[i].name) m_[i] = tensor;
      if (name == "adam.v." + params_[i].name) v_[i] = tensor;
    }
  }
}

// ---------------------------------------------------------------------------
// Loss assembly

ExampleLoss example_loss(QaModel& model, Tape& tape, const QAExample& example,
                         const RunConfig& config) {
  SliceSpec spec = SliceSpec::make(example.context_length(), config.slice_size, config.mode);
  Index slices = spec.num_slices();
  SliceRun run = run_mode(model, tape, example, spec, slices);

  ExampleLoss out;
  out.stop_slice = slices - 1;
  std::optional<Var> stop_term;
  Index considered_last = slices;
  if (config.early_stopping) {
    StopDecision decision =
        infer_stop(run.stop_prob_values(), config.stop.stop_threshold, spec.boundaries);
    out.stop_slice = decision.stop_slice;
    considered_last = decision.stop_slice + 1;
    std::vector<int> labels = gold_stop_labels(example.answer_end(), spec.boundaries);
    std::vector<double> extras =
        extra_lengths(spec.boundaries, example.answer_end(), config.stop.dist_threshold);
    stop_term = stop_loss(tape, run.stop_probs, labels, extras);
  }

  std::vector<Index> prefixes;
  if (config.greedy_training) {
    for (Index k = 1; k <= considered_last; ++k) prefixes.push_back(k);
  } else {
    prefixes.push_back(considered_last);
  }

  std::vector<Var> answer_terms;
  for (Index k : prefixes) {
    Index seen = spec.length_read(k);
    std::vector<Span> visible;
    for (const Span& s : example.gold_spans) {
      if (s.end < seen) visible.push_back(s);
    }
    if (visible.empty()) continue;
    PrefixLogits logits = prefix_logits(model, tape, run, spec, k);
    answer_terms.push_back(answer_loss(tape, logits.start, logits.end, visible));
  }
  out.answer_terms = static_cast<int>(answer_terms.size());
  out.answer_visible = !answer_terms.empty();

  std::optional<Var> answer_sum;
  if (!answer_terms.empty()) answer_sum = add_all(answer_terms);
  if (stop_term) {
    out.loss = total_loss(tape, answer_sum, *stop_term, out.answer_visible);
  } else if (answer_sum) {
    out.loss = *answer_sum;
  } else {
    out.loss = tape.constant(Tensor::scalar(0.0));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

TrainOutput train(const RunConfig& config, const PreparedData& data, std::ostream* progress) {
  if (data.train.empty()) throw std::invalid_argument("train: empty training set");
  RunConfig cfg = config;
  cfg.layers.vocab_size = data.vocab.size();
  cfg.stop.validate();

  QaModel model(cfg.layers, features_of(cfg), cfg.train.seed);
  std::vector<NamedParam> params = model.named_parameters();
  Adam adam(cfg.train.learning_rate);
  adam.attach(params);

  TrainOutput out;
  double best_f1 = -1.0;
  int epochs_since_best = 0;

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.train.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(cfg.train.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batch_id = 0;
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t batch_end = std::min(order.size(), i + static_cast<std::size_t>(cfg.train.batch_size));
      model.zero_grads();
      for (std::size_t k = i; k < batch_end; ++k) {
        const QAExample& example = data.train[order[k]];
        Tape tape;
        ExampleLoss el = example_loss(model, tape, example, cfg);
        double value = tape.scalar_value(el.loss);
        if (!std::isfinite(value)) {
          throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batch_id) + " (example " +
                                   example.id + ")");
        }
        loss_sum += value;
        tape.backward(el.loss);
      }
      adam.step(1.0 / static_cast<double>(batch_end - i));
      i = batch_end;
      ++batch_id;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(order.size());
    stats.dev_f1 = data.dev.empty() ? 0.0 : dev_f1(model, cfg, data.dev);
    out.history.push_back(stats);
    std::string line = format_epoch_line(stats);
    out.log += line;
    if (progress) (*progress) << line << std::flush;

    if (stats.dev_f1 > best_f1) {
      best_f1 = stats.dev_f1;
      epochs_since_best = 0;
      Checkpoint ck;
      ck.config_json = cfg.to_json_text();
      ck.vocab_tokens = data.vocab.id_to_token;
      for (const NamedParam& p : params) ck.tensors.emplace_back(p.name, *p.tensor);
      for (auto& kv : adam.state()) ck.tensors.push_back(std::move(kv));
      ck.epoch = epoch;
      ck.history = out.history;
      out.best = std::move(ck);
    } else {
      ++epochs_since_best;
      if (cfg.train.patience > 0 && epochs_since_best >= cfg.train.patience) break;
    }
  }
  return out;
}

QaModel model_from_checkpoint(const Checkpoint& checkpoint) {
  RunConfig cfg = checkpoint.config();
  QaModel model(cfg.layers, features_of(cfg), cfg.train.seed);
  std::vector<NamedParam> params = model.named_parameters();

  std::vector<std::string> missing;
  for (const NamedParam& p : params) {
    bool found = false;
    for (const auto& [name, tensor] : checkpoint.tensors) {
      if (name != p.name) continue;
      if (tensor.shape != p.tensor->shape) {
        throw std::runtime_error("checkpoint: tensor " + name + " has shape " +
                                 shape_str(tensor.shape) + ", model expects " +
                                 shape_str(p.tensor->shape));
      }
      p.tensor->values = tensor.values;
      found = true;
      break;
    }
    if (!found) missing.push_back(p.name);
  }
  if (!missing.empty()) {
    std::string names;
    for (const auto& n : missing) names += (names.empty() ? "" : ", ") + n;
    throw std::runtime_error("checkpoint: missing tensors: " + names);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

double dev_f1(QaModel& model, const RunConfig& config, const std::vector<QAExample>& dataset) {
  if (dataset.empty()) return 0.0;
  double total = 0.0;
  for (const QAExample& example : dataset) {
    SliceSpec spec = SliceSpec::make(example.context_length(), config.slice_size, config.mode);
    Tape tape;
    SliceRun run = run_mode(model, tape, example, spec, spec.num_slices());
    DecodedSpan pred = decode_span(run, example, config.max_span_len);
    total += text_f1(pred.text, example.answer_texts);
  }
  return total / static_cast<double>(dataset.size());
}

EvalReport evaluate(QaModel& model, const RunConfig& config,
                    const std::vector<QAExample>& dataset, const EvalOptions& options) {
  std::vector<ExampleRecord> records;
  records.reserve(dataset.size());
  for (const QAExample& example : dataset) {
    SliceSpec spec = SliceSpec::make(example.context_length(), config.slice_size, config.mode);
    Index slices = spec.num_slices();
    Tape tape;
    SliceRun run = run_mode(model, tape, example, spec, slices);
    DecodedSpan pred_full = decode_span(run, example, config.max_span_len);

    ExampleRecord rec;
    rec.id = example.id;
    rec.l_c = example.context_length();
    rec.answer_end = example.answer_end();
    rec.pred_full = pred_full.text;
    rec.f1_full = text_f1(pred_full.text, example.answer_texts);
    rec.em_full = exact_match(pred_full.text, example.answer_texts) ? 1 : 0;

    if (options.early_stopping) {
      double threshold = options.stop_threshold.value_or(config.stop.stop_threshold);
      StopDecision decision = infer_stop(run.stop_prob_values(), threshold, spec.boundaries);
      rec.stop_slice = decision.stop_slice;
      rec.stopped_early = decision.stop_slice + 1 < slices;
      rec.l_e = decision.tokens_consumed;
      if (rec.stopped_early) {
        PrefixLogits logits = prefix_logits(model, tape, run, spec, decision.stop_slice + 1);
        DecodedSpan pred =
            decode_probs(softmax(logits.start), softmax(logits.end), example, config.max_span_len);
        rec.pred_early = pred.text;
      } else {
        rec.pred_early = pred_full.text;
      }
      rec.f1_early = text_f1(rec.pred_early, example.answer_texts);
    } else {
      rec.stop_slice = slices - 1;
      rec.stopped_early = false;
      rec.l_e = example.context_length();
      rec.pred_early = pred_full.text;
      rec.f1_early = rec.f1_full;
    }

    if (options.with_oracle) {
      Index stride = options.oracle_stride > 0 ? options.oracle_stride : config.slice_size;
      PrefixPredictor predictor = [&](Index prefix_len) {
        Index upto = std::min(slices, (prefix_len + config.slice_size - 1) / config.slice_size);
        PrefixLogits logits = prefix_logits(model, tape, run, spec, upto);
        return decode_probs(softmax(logits.start), softmax(logits.end), example,
                            config.max_span_len)
            .text;
      };
      PrefixCurve curve =
          oracle_best_stop(predictor, example.answer_texts, example.context_length(), stride);
      rec.l_max = curve.l_max;
      Greediness g = greediness_metrics(rec.l_max, rec.answer_end, rec.l_c);
      rec.extra_ratio = g.extra_ratio;
      rec.oracle_read_ratio = g.read_ratio;
      rec.early_commit = g.early_commit;
    } else {
      rec.l_max = rec.l_c;
      rec.oracle_read_ratio = 1.0;
    }
    records.push_back(std::move(rec));
  }
  return consumption_report(std::move(records), std::max<Index>(1, config.slice_size));
}

double calibrate_stop_threshold(QaModel& model, const RunConfig& config,
                                const std::vector<QAExample>& dev_set,
                                std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("calibrate: empty grid");
  double best_threshold = grid[0];
  double best_eff = -1.0;
  for (double threshold : grid) {
    EvalOptions options;
    options.early_stopping = true;
    options.stop_threshold = threshold;
    options.with_oracle = false;
    EvalReport report = evaluate(model, config, dev_set, options);
    double eff = report.efficiency_value.value_or(0.0);
    if (eff > best_eff) {
      best_eff = eff;
      best_threshold = threshold;
    }
  }
  return best_threshold;
}

}  // namespace sliceqa
