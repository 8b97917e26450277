#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sliceqa/metrics.hpp"
#include "sliceqa/slicing.hpp"
#include "sliceqa/stopping.hpp"

namespace sliceqa {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 4;
  int max_epochs = 12;
  int patience = 0;  // 0 disables early exit on a flat dev curve
  std::uint64_t seed = 1;
};

/// Either file-backed (JSONL or SQuAD JSON, by extension) or generated.
struct DatasetSpec {
  std::string train_path;
  std::string dev_path;
  std::optional<SynthConfig> synth;
  int synth_dev_examples = 200;
};

struct RunConfig {
  DatasetSpec data;
  LayerConfig layers;
  Index slice_size = 16;
  SliceMode mode = SliceMode::SlicedPrediction;
  StopConfig stop;
  TrainConfig train;
  bool greedy_training = false;
  bool early_stopping = false;
  Index max_span_len = 8;
  int vocab_cap = 512;
  std::string output_dir = "runs/out";

  std::string to_json_text() const;
  static RunConfig from_json_text(const std::string& text);
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

struct PreparedData {
  std::vector<QAExample> train;
  std::vector<QAExample> dev;
  Vocab vocab;
  LoadStats train_stats;
  LoadStats dev_stats;
};

/// Loads or generates the datasets, builds the vocabulary on the training
/// split, and encodes both splits.
PreparedData prepare_data(const RunConfig& config);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_f1 = 0.0;
};

/// Versioned container of named float arrays plus a JSON manifest carrying
/// the config echo, the vocabulary, and the epoch history. save -> load ->
/// save is byte-identical.
struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_json;
  std::vector<std::string> vocab_tokens;
  std::vector<std::pair<std::string, Tensor>> tensors;
  int epoch = 0;
  std::vector<EpochStats> history;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
  Vocab vocab() const;
  RunConfig config() const;
};

/// Adam update rule over a fixed set of named parameters. Gradients are
/// consumed from each tensor's grad buffer and zeroed by the caller.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void attach(const std::vector<NamedParam>& params);
  /// One update from the currently accumulated grads, scaled by grad_scale
  /// (typically 1 / batch_size).
  void step(double grad_scale);

  std::vector<std::pair<std::string, Tensor>> state() const;  // moments + step count
  void restore(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<NamedParam> params_;
  std::vector<Tensor> m_, v_;
};

/// Loss for one example under the configured mode and flags. The model reads
/// the full context during training; with early stopping the answer
/// component covers only prefixes up to the (deterministically) chosen stop
/// and is dropped entirely when the answer is not yet visible there.
/// With greedy training the answer loss sums over every answer-visible
/// prefix; otherwise only the final considered prefix contributes.
struct ExampleLoss {
  Var loss;
  int answer_terms = 0;  // number of answer-loss terms added
  bool answer_visible = false;
  Index stop_slice = 0;  // chosen stop (0-based) when early stopping is on
};
ExampleLoss example_loss(QaModel& model, Tape& tape, const QAExample& example,
                         const RunConfig& config);

struct TrainOutput {
  Checkpoint best;
  std::vector<EpochStats> history;
  std::string log;  // timestamp-free, for reproducibility comparison
};

/// Mini-batch Adam training on the combined loss; deterministic given
/// (config, seed). Throws on divergence, naming the offending batch.
TrainOutput train(const RunConfig& config, const PreparedData& data,
                  std::ostream* progress = nullptr);

/// Rebuilds the model from a checkpoint; throws naming mismatched tensors.
QaModel model_from_checkpoint(const Checkpoint& checkpoint);

struct EvalOptions {
  bool early_stopping = false;
  std::optional<double> stop_threshold;  // overrides the config value
  bool with_oracle = true;
  Index oracle_stride = 0;  // 0 means slice_size
};

EvalReport evaluate(QaModel& model, const RunConfig& config,
                    const std::vector<QAExample>& dataset, const EvalOptions& options);

/// Mean full-read dev F1 (the quantity logged per epoch during training).
double dev_f1(QaModel& model, const RunConfig& config, const std::vector<QAExample>& dataset);

/// Grid search maximizing the efficiency metric on a validation split.
double calibrate_stop_threshold(QaModel& model, const RunConfig& config,
                                const std::vector<QAExample>& dev_set,
                                std::span<const double> grid);

}  // namespace sliceqa
