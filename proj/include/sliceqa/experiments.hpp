#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sliceqa/train.hpp"

namespace sliceqa {

struct SweepCell {
  SliceMode mode = SliceMode::SlicedPrediction;
  Index slice_size = 0;
  std::uint64_t seed = 0;
  double dev_f1 = 0.0;
  double dev_f1_early = 0.0;      // equals dev_f1 when early stopping is off
  double mean_read_ratio = 1.0;
  int best_epoch = 0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::string csv_path;
  std::string plot_path;
};

/// Trains and evaluates one cell per (mode, slice_size, seed), sharing the
/// base config. Rows are flushed to the CSV as they finish, so partial
/// results survive an aborted sweep. jobs > 1 runs cells in worker threads;
/// each cell stays single-threaded and deterministic.
SweepResult sweep(const RunConfig& base, std::span<const Index> sizes,
                  std::span<const SliceMode> modes, std::span<const std::uint64_t> seeds,
                  const std::string& out_dir, std::ostream* progress = nullptr, int jobs = 1);

/// Mean dev F1 over the cells matching (mode, size).
double sweep_mean_f1(const SweepResult& result, SliceMode mode, Index size);

void write_f1_vs_size_svg(const SweepResult& result, const std::string& path);
void write_consumption_histogram_svg(const EvalReport& report, const std::string& path);
void write_read_ratio_svg(const EvalReport& report, const std::string& path);

}  // namespace sliceqa
