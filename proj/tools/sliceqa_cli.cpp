#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sliceqa/experiments.hpp"
#include "sliceqa/train.hpp"

namespace fs = std::filesystem;
using namespace sliceqa;

namespace {

struct ConfigOverrides {
  std::string config_path;
  std::string mode;
  long slice_size = -1;
  long seed = -1;
  long epochs = -1;
  long batch_size = -1;
  double learning_rate = -1.0;
  long patience = -1;
  int greedy = -1;         // -1 unset, 0/1 explicit
  int early_stopping = -1;
  int attention = -1;
  int self_attention = -1;
  std::string directionality;
  std::string output_dir;
  std::string train_path;
  std::string dev_path;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON file");
    cmd->add_option("--mode", mode, "sliced|global|step_transfer");
    cmd->add_option("--slice-size", slice_size, "tokens per slice");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--epochs", epochs, "max training epochs");
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--lr", learning_rate, "learning rate");
    cmd->add_option("--patience", patience, "epochs without dev improvement before stopping");
    cmd->add_flag("--greedy{1},--no-greedy{0}", greedy, "decode the answer at every slice");
    cmd->add_flag("--early-stopping{1},--no-early-stopping{0}", early_stopping,
                  "train the stopping head and stop reading at inference");
    cmd->add_flag("--attention{1},--no-attention{0}", attention);
    cmd->add_flag("--self-attention{1},--no-self-attention{0}", self_attention);
    cmd->add_option("--directionality", directionality, "bidirectional|unidirectional");
    cmd->add_option("--out", output_dir, "output directory");
    cmd->add_option("--train-data", train_path, "training set (JSONL or SQuAD JSON)");
    cmd->add_option("--dev-data", dev_path, "dev set (JSONL or SQuAD JSON)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    if (!mode.empty()) cfg.mode = slice_mode_from_string(mode);
    if (slice_size > 0) cfg.slice_size = slice_size;
    if (seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(seed);
    if (epochs > 0) cfg.train.max_epochs = static_cast<int>(epochs);
    if (batch_size > 0) cfg.train.batch_size = static_cast<int>(batch_size);
    if (learning_rate >= 0.0) cfg.train.learning_rate = learning_rate;
    if (patience >= 0) cfg.train.patience = static_cast<int>(patience);
    if (greedy >= 0) cfg.greedy_training = greedy != 0;
    if (early_stopping >= 0) cfg.early_stopping = early_stopping != 0;
    if (attention >= 0) cfg.layers.attention_enabled = attention != 0;
    if (self_attention >= 0) cfg.layers.self_attention_enabled = self_attention != 0;
    if (!directionality.empty()) {
      cfg.layers.directionality = directionality == "unidirectional"
                                      ? Directionality::UnidirectionalPastOnly
                                      : Directionality::Bidirectional;
    }
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (!train_path.empty()) {
      cfg.data.train_path = train_path;
      cfg.data.synth.reset();
    }
    if (!dev_path.empty()) cfg.data.dev_path = dev_path;
    return cfg;
  }
};

int cmd_gen_data(const SynthConfig& synth, int dev_examples, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<QAExample> train = gen_synthetic(synth);
  SynthConfig dev_cfg = synth;
  dev_cfg.num_examples = dev_examples;
  dev_cfg.seed = synth.seed ^ 0x9e3779b97f4a7c15ull;
  std::vector<QAExample> dev = gen_synthetic(dev_cfg);
  std::string train_path = (fs::path(out_dir) / "train.jsonl").string();
  std::string dev_path = (fs::path(out_dir) / "dev.jsonl").string();
  write_jsonl(train_path, train);
  write_jsonl(dev_path, dev);
  std::cout << "wrote " << train.size() << " train examples to " << train_path << "\n"
            << "wrote " << dev.size() << " dev examples to " << dev_path << "\n";
  return 0;
}

int cmd_train(const ConfigOverrides& overrides) {
  RunConfig cfg = overrides.resolve();
  fs::create_directories(cfg.output_dir);
  PreparedData data = prepare_data(cfg);
  std::cout << "train: " << data.train.size() << " examples (" << data.train_stats.dropped
            << " dropped), dev: " << data.dev.size() << " examples (" << data.dev_stats.dropped
            << " dropped), vocab " << data.vocab.size() << "\n";
  TrainOutput out = train(cfg, data, &std::cout);

  std::string ckpt_path = (fs::path(cfg.output_dir) / "best.ckpt").string();
  out.best.save(ckpt_path);
  std::ofstream log(fs::path(cfg.output_dir) / "train.log");
  log << out.log;
  RunConfig echo = out.best.config();
  save_run_config(echo, (fs::path(cfg.output_dir) / "config.json").string());
  std::cout << "best epoch " << out.best.epoch << " dev_f1 "
            << out.best.history.back().dev_f1 << "\nwrote " << ckpt_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& out_dir, int early_stopping, double threshold, bool calibrate) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  RunConfig cfg = ck.config();
  QaModel model = model_from_checkpoint(ck);
  Vocab vocab = ck.vocab();

  LoadStats stats;
  std::vector<QAExample> dataset;
  if (!data_path.empty()) {
    if (data_path.size() >= 6 && data_path.substr(data_path.size() - 6) == ".jsonl") {
      dataset = load_jsonl(data_path, &stats);
    } else {
      dataset = load_squad_v1(data_path, &stats);
    }
    encode_examples(dataset, vocab);
  } else {
    PreparedData data = prepare_data(cfg);
    dataset = std::move(data.dev);
    stats = data.dev_stats;
  }

  EvalOptions options;
  options.early_stopping = early_stopping >= 0 ? early_stopping != 0 : cfg.early_stopping;
  if (threshold > 0.0) options.stop_threshold = threshold;
  if (calibrate) {
    std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double best = calibrate_stop_threshold(model, cfg, dataset, grid);
    std::cout << "calibrated stop threshold: " << best << "\n";
    options.stop_threshold = best;
  }

  EvalReport report = evaluate(model, cfg, dataset, options);
  report.dropped_examples = stats.dropped;
  fs::create_directories(out_dir);
  write_report_csv(report, (fs::path(out_dir) / "eval.csv").string());
  write_report_json(report, (fs::path(out_dir) / "summary.json").string());
  write_consumption_histogram_svg(report, (fs::path(out_dir) / "consumed_length.svg").string());
  write_read_ratio_svg(report, (fs::path(out_dir) / "read_ratio.svg").string());
  std::cout << "examples " << report.examples.size() << " f1_full " << report.f_full
            << " f1_early " << report.f_early << " em " << report.em << " mean_read_ratio "
            << report.mean_read_ratio << " saving " << report.saving << "\n";
  return 0;
}

int cmd_sweep(const ConfigOverrides& overrides, const std::vector<long>& sizes,
              const std::vector<std::string>& modes, const std::vector<long>& seeds, int jobs) {
  RunConfig base = overrides.resolve();
  std::vector<Index> size_axis(sizes.begin(), sizes.end());
  std::vector<SliceMode> mode_axis;
  for (const auto& m : modes) mode_axis.push_back(slice_mode_from_string(m));
  std::vector<std::uint64_t> seed_axis(seeds.begin(), seeds.end());
  SweepResult result =
      sweep(base, size_axis, mode_axis, seed_axis, base.output_dir, &std::cout, jobs);
  std::cout << "wrote " << result.csv_path << " and " << result.plot_path << "\n";
  return 0;
}

int cmd_report(const std::string& summary_path, const std::string& out_dir) {
  EvalReport report = read_report_json(summary_path);
  fs::create_directories(out_dir);
  write_consumption_histogram_svg(report, (fs::path(out_dir) / "consumed_length.svg").string());
  write_read_ratio_svg(report, (fs::path(out_dir) / "read_ratio.svg").string());
  std::cout << "f1_full " << report.f_full << "\nf1_early " << report.f_early << "\nem "
            << report.em << "\nmean_read_ratio " << report.mean_read_ratio << "\nsaving "
            << report.saving << "\nefficiency ";
  if (report.efficiency_value) {
    std::cout << *report.efficiency_value << "\n";
  } else {
    std::cout << "undefined\n";
  }
  std::cout << "plots written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incremental sliced machine-reading engine"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic span-extraction dataset");
  SynthConfig synth;
  int dev_examples = 200;
  std::string gen_out = "data";
  gen->add_option("--vocab-size", synth.vocab_size);
  gen->add_option("--num-examples", synth.num_examples);
  gen->add_option("--min-len", synth.min_context_length);
  gen->add_option("--max-len", synth.max_context_length);
  gen->add_option("--pairs", synth.pairs_per_context);
  gen->add_option("--distractor-rate", synth.distractor_rate);
  gen->add_option("--seed", synth.seed);
  gen->add_option("--dev-examples", dev_examples);
  gen->add_option("--out", gen_out);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  ConfigOverrides train_overrides;
  train_overrides.add_to(tr);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path;
  std::string eval_data;
  std::string eval_out = "eval_out";
  int eval_es = -1;
  double eval_threshold = -1.0;
  bool calibrate = false;
  ev->add_option("--checkpoint", ckpt_path)->required();
  ev->add_option("--data", eval_data, "dataset path (defaults to the run's dev split)");
  ev->add_option("--out", eval_out);
  ev->add_flag("--early-stopping{1},--no-early-stopping{0}", eval_es);
  ev->add_option("--stop-threshold", eval_threshold);
  ev->add_flag("--calibrate-threshold", calibrate,
               "pick the threshold maximizing the efficiency metric");

  // sweep
  auto* sw = app.add_subcommand("sweep", "train/evaluate a slice-size x mode grid");
  ConfigOverrides sweep_overrides;
  sweep_overrides.add_to(sw);
  std::vector<long> sweep_sizes{1, 4, 16, 64};
  std::vector<std::string> sweep_modes{"sliced"};
  std::vector<long> sweep_seeds{1};
  int jobs = 1;
  sw->add_option("--sizes", sweep_sizes)->delimiter(',');
  sw->add_option("--modes", sweep_modes)->delimiter(',');
  sw->add_option("--seeds", sweep_seeds)->delimiter(',');
  sw->add_option("--jobs", jobs, "parallel cells (each cell stays deterministic)");

  // report
  auto* rp = app.add_subcommand("report", "re-emit plots and print a summary");
  std::string summary_path;
  std::string report_out = "report_out";
  rp->add_option("--summary", summary_path, "summary.json from eval")->required();
  rp->add_option("--out", report_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(synth, dev_examples, gen_out);
    if (tr->parsed()) return cmd_train(train_overrides);
    if (ev->parsed()) return cmd_eval(ckpt_path, eval_data, eval_out, eval_es, eval_threshold,
                                      calibrate);
    if (sw->parsed()) return cmd_sweep(sweep_overrides, sweep_sizes, sweep_modes, sweep_seeds,
                                       jobs);
    if (rp->parsed()) return cmd_report(summary_path, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
