#include "sliceqa/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace sliceqa {

namespace {

namespace fs = std::filesystem;

struct CellTask {
  SliceMode mode;
  Index slice_size;
  std::uint64_t seed;
};

SweepCell run_cell(const RunConfig& base, const CellTask& task) {
  RunConfig cfg = base;
  cfg.mode = task.mode;
  cfg.slice_size = task.slice_size;
  cfg.train.seed = task.seed;

  PreparedData data = prepare_data(cfg);
  TrainOutput trained = train(cfg, data);
  QaModel model = model_from_checkpoint(trained.best);
  RunConfig best_cfg = trained.best.config();

  SweepCell cell;
  cell.mode = task.mode;
  cell.slice_size = task.slice_size;
  cell.seed = task.seed;
  cell.best_epoch = trained.best.epoch;
  cell.dev_f1 = trained.best.history.back().dev_f1;
  if (cfg.early_stopping) {
    EvalOptions options;
    options.early_stopping = true;
    options.with_oracle = false;
    EvalReport report = evaluate(model, best_cfg, data.dev, options);
    cell.dev_f1_early = report.f_early;
    cell.mean_read_ratio = report.mean_read_ratio;
  } else {
    cell.dev_f1_early = cell.dev_f1;
    cell.mean_read_ratio = 1.0;
  }
  return cell;
}

std::string cell_csv_row(const SweepCell& c) {
  std::ostringstream os;
  os << to_string(c.mode) << ',' << c.slice_size << ',' << c.seed << ',' << c.dev_f1 << ','
     << c.dev_f1_early << ',' << c.mean_read_ratio << ',' << c.best_epoch << '\n';
  return os.str();
}

// --- minimal SVG helpers ---------------------------------------------------

constexpr int kWidth = 640;
constexpr int kHeight = 400;
constexpr int kMarginLeft = 60;
constexpr int kMarginBottom = 40;
constexpr int kMarginTop = 30;
constexpr int kMarginRight = 20;

const char* series_color(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  return colors[i % 5];
}

double plot_x(double frac) { return kMarginLeft + frac * (kWidth - kMarginLeft - kMarginRight); }
double plot_y(double frac) {
  return kHeight - kMarginBottom - frac * (kHeight - kMarginBottom - kMarginTop);
}

void svg_header(std::ostream& out, const std::string& title) {
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='" << kHeight
      << "' viewBox='0 0 " << kWidth << ' ' << kHeight << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << kWidth / 2 << "' y='18' text-anchor='middle' font-size='14'>" << title
      << "</text>\n"
      << "<line x1='" << kMarginLeft << "' y1='" << kHeight - kMarginBottom << "' x2='"
      << kWidth - kMarginRight << "' y2='" << kHeight - kMarginBottom
      << "' stroke='black'/>\n"
      << "<line x1='" << kMarginLeft << "' y1='" << kHeight - kMarginBottom << "' x2='"
      << kMarginLeft << "' y2='" << kMarginTop << "' stroke='black'/>\n";
}

void axis_label_y(std::ostream& out, const std::string& label) {
  out << "<text x='14' y='" << kHeight / 2 << "' font-size='11' transform='rotate(-90 14 "
      << kHeight / 2 << ")' text-anchor='middle'>" << label << "</text>\n";
}

void axis_label_x(std::ostream& out, const std::string& label) {
  out << "<text x='" << (kMarginLeft + kWidth - kMarginRight) / 2 << "' y='" << kHeight - 8
      << "' font-size='11' text-anchor='middle'>" << label << "</text>\n";
}

}  // namespace

SweepResult sweep(const RunConfig& base, std::span<const Index> sizes,
                  std::span<const SliceMode> modes, std::span<const std::uint64_t> seeds,
                  const std::string& out_dir, std::ostream* progress, int jobs) {
  if (sizes.empty() || modes.empty() || seeds.empty()) {
    throw std::invalid_argument("sweep: empty axis");
  }
  fs::create_directories(out_dir);
  SweepResult result;
  result.csv_path = (fs::path(out_dir) / "sweep.csv").string();
  result.plot_path = (fs::path(out_dir) / "f1_vs_slice_size.svg").string();

  std::ofstream csv(result.csv_path);
  if (!csv) throw std::runtime_error("cannot write " + result.csv_path);
  csv << "mode,slice_size,seed,dev_f1,dev_f1_early,mean_read_ratio,best_epoch\n";
  csv.flush();

  std::vector<CellTask> tasks;
  for (SliceMode mode : modes) {
    for (Index size : sizes) {
      for (std::uint64_t seed : seeds) tasks.push_back({mode, size, seed});
    }
  }

  jobs = std::max(1, jobs);
  std::mutex io_mutex;
  std::size_t next = 0;
  std::exception_ptr failure;

  auto worker = [&]() {
    while (true) {
      CellTask task;
      {
        std::lock_guard<std::mutex> lock(io_mutex);
        if (failure || next >= tasks.size()) return;
        task = tasks[next++];
      }
      try {
        SweepCell cell = run_cell(base, task);
        std::lock_guard<std::mutex> lock(io_mutex);
        result.cells.push_back(cell);
        csv << cell_csv_row(cell);
        csv.flush();
        if (progress) {
          (*progress) << "cell " << to_string(cell.mode) << " size " << cell.slice_size
                      << " seed " << cell.seed << " dev_f1 " << cell.dev_f1 << "\n"
                      << std::flush;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(io_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // Deterministic row order in the result (CSV order may vary with jobs > 1).
  std::sort(result.cells.begin(), result.cells.end(), [](const SweepCell& a, const SweepCell& b) {
    if (a.mode != b.mode) return static_cast<int>(a.mode) < static_cast<int>(b.mode);
    if (a.slice_size != b.slice_size) return a.slice_size < b.slice_size;
    return a.seed < b.seed;
  });
  write_f1_vs_size_svg(result, result.plot_path);
  return result;
}

double sweep_mean_f1(const SweepResult& result, SliceMode mode, Index size) {
  double total = 0.0;
  int n = 0;
  for (const SweepCell& c : result.cells) {
    if (c.mode == mode && c.slice_size == size) {
      total += c.dev_f1;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("sweep_mean_f1: no cells for requested point");
  return total / n;
}

void write_f1_vs_size_svg(const SweepResult& result, const std::string& path) {
  std::vector<Index> sizes;
  std::vector<SliceMode> modes;
  for (const SweepCell& c : result.cells) {
    if (std::find(sizes.begin(), sizes.end(), c.slice_size) == sizes.end()) {
      sizes.push_back(c.slice_size);
    }
    if (std::find(modes.begin(), modes.end(), c.mode) == modes.end()) modes.push_back(c.mode);
  }
  std::sort(sizes.begin(), sizes.end());

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  svg_header(out, "dev text-F1 vs slice size");
  axis_label_x(out, "slice size");
  axis_label_y(out, "dev text-F1");
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    double x = plot_x(sizes.size() == 1 ? 0.5 : double(s) / (sizes.size() - 1));
    out << "<text x='" << x << "' y='" << kHeight - kMarginBottom + 16
        << "' font-size='10' text-anchor='middle'>" << sizes[s] << "</text>\n";
  }
  for (int tick = 0; tick <= 5; ++tick) {
    double f = tick / 5.0;
    out << "<text x='" << kMarginLeft - 8 << "' y='" << plot_y(f) + 4
        << "' font-size='10' text-anchor='end'>" << f << "</text>\n";
  }
  for (std::size_t m = 0; m < modes.size(); ++m) {
    std::ostringstream points;
    for (std::size_t s = 0; s < sizes.size(); ++s) {
      double f1 = 0.0;
      int n = 0;
      for (const SweepCell& c : result.cells) {
        if (c.mode == modes[m] && c.slice_size == sizes[s]) {
          f1 += c.dev_f1;
          ++n;
        }
      }
      if (n == 0) continue;
      f1 /= n;
      double x = plot_x(sizes.size() == 1 ? 0.5 : double(s) / (sizes.size() - 1));
      double y = plot_y(std::clamp(f1, 0.0, 1.0));
      points << x << ',' << y << ' ';
      out << "<circle cx='" << x << "' cy='" << y << "' r='3' fill='" << series_color(m)
          << "'/>\n";
    }
    out << "<polyline points='" << points.str() << "' fill='none' stroke='" << series_color(m)
        << "' stroke-width='1.5'/>\n";
    out << "<text x='" << kWidth - kMarginRight - 4 << "' y='" << kMarginTop + 14 * (m + 1)
        << "' font-size='11' text-anchor='end' fill='" << series_color(m) << "'>"
        << to_string(modes[m]) << "</text>\n";
  }
  out << "</svg>\n";
}

void write_consumption_histogram_svg(const EvalReport& report, const std::string& path) {
  std::size_t buckets = report.hist_lc.size();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  svg_header(out, "distribution of consumed length");
  axis_label_x(out, "consumed tokens (bucket upper edge)");
  axis_label_y(out, "examples");
  if (buckets == 0) {
    out << "</svg>\n";
    return;
  }
  std::size_t peak = 1;
  for (std::size_t b = 0; b < buckets; ++b) {
    peak = std::max({peak, report.hist_le[b], report.hist_lmax[b], report.hist_lc[b]});
  }
  const std::vector<std::size_t>* series[3] = {&report.hist_lmax, &report.hist_le,
                                               &report.hist_lc};
  const char* names[3] = {"best", "earlystopping", "full"};
  double band = (kWidth - kMarginLeft - kMarginRight) / double(buckets);
  double bar = band / 4.0;
  for (int s = 0; s < 3; ++s) {
    for (std::size_t b = 0; b < buckets; ++b) {
      double h = (kHeight - kMarginBottom - kMarginTop) *
                 (double((*series[s])[b]) / double(peak));
      double x = kMarginLeft + band * b + bar * s + bar / 2.0;
      out << "<rect x='" << x << "' y='" << kHeight - kMarginBottom - h << "' width='" << bar
          << "' height='" << h << "' fill='" << series_color(s) << "'/>\n";
    }
    out << "<text x='" << kWidth - kMarginRight - 4 << "' y='" << kMarginTop + 14 * (s + 1)
        << "' font-size='11' text-anchor='end' fill='" << series_color(s) << "'>" << names[s]
        << "</text>\n";
  }
  for (std::size_t b = 0; b < buckets; ++b) {
    out << "<text x='" << kMarginLeft + band * (b + 0.5) << "' y='"
        << kHeight - kMarginBottom + 16 << "' font-size='9' text-anchor='middle'>"
        << (b + 1) * static_cast<std::size_t>(report.bucket_width) << "</text>\n";
  }
  out << "</svg>\n";
}

void write_read_ratio_svg(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  svg_header(out, "read ratio vs context length");
  axis_label_x(out, "context length (bucket)");
  axis_label_y(out, "mean L_e / L_c");
  const auto& table = report.read_ratio_by_length;
  if (table.empty()) {
    out << "</svg>\n";
    return;
  }
  std::ostringstream points;
  for (std::size_t i = 0; i < table.size(); ++i) {
    double x = plot_x(table.size() == 1 ? 0.5 : double(i) / (table.size() - 1));
    double y = plot_y(std::clamp(table[i].mean_read_ratio, 0.0, 1.0));
    points << x << ',' << y << ' ';
    out << "<circle cx='" << x << "' cy='" << y << "' r='3' fill='" << series_color(0)
        << "'/>\n";
    out << "<text x='" << x << "' y='" << kHeight - kMarginBottom + 16
        << "' font-size='9' text-anchor='middle'>" << table[i].hi << "</text>\n";
  }
  out << "<polyline points='" << points.str() << "' fill='none' stroke='" << series_color(0)
      << "' stroke-width='1.5'/>\n";
  for (int tick = 0; tick <= 5; ++tick) {
    double f = tick / 5.0;
    out << "<text x='" << kMarginLeft - 8 << "' y='" << plot_y(f) + 4
        << "' font-size='10' text-anchor='end'>" << f << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace sliceqa
