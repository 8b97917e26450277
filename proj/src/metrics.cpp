#include "sliceqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace sliceqa {

std::string normalize_answer(const std::string& s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (char c : s) {
    if (std::ispunct(static_cast<unsigned char>(c))) continue;
    lowered += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  std::istringstream words(lowered);
  std::string w;
  std::string out;
  while (words >> w) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

namespace {

std::map<std::string, int> token_bag(const std::string& normalized) {
  std::map<std::string, int> bag;
  std::istringstream words(normalized);
  std::string w;
  while (words >> w) ++bag[w];
  return bag;
}

double f1_single(const std::string& pred_norm, const std::string& gold_norm) {
  if (pred_norm.empty() || gold_norm.empty()) {
    return pred_norm == gold_norm ? 1.0 : 0.0;
  }
  auto pred = token_bag(pred_norm);
  auto gold = token_bag(gold_norm);
  int common = 0;
  int pred_total = 0;
  int gold_total = 0;
  for (const auto& [tok, count] : pred) {
    pred_total += count;
    auto it = gold.find(tok);
    if (it != gold.end()) common += std::min(count, it->second);
  }
  for (const auto& [tok, count] : gold) gold_total += count;
  if (common == 0) return 0.0;
  double precision = static_cast<double>(common) / pred_total;
  double recall = static_cast<double>(common) / gold_total;
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double text_f1(const std::string& prediction, std::span<const std::string> golds) {
  if (golds.empty()) throw std::invalid_argument("text_f1: no gold answers");
  std::string pred_norm = normalize_answer(prediction);
  double best = 0.0;
  for (const std::string& gold : golds) {
    best = std::max(best, f1_single(pred_norm, normalize_answer(gold)));
  }
  return best;
}

bool exact_match(const std::string& prediction, std::span<const std::string> golds) {
  std::string pred_norm = normalize_answer(prediction);
  for (const std::string& gold : golds) {
    if (pred_norm == normalize_answer(gold)) return true;
  }
  return false;
}

Greediness greediness_metrics(Index l_max, Index answer_end, Index l_c) {
  if (l_c < 1 || answer_end >= l_c || l_max > l_c) {
    throw std::invalid_argument("greediness_metrics: inconsistent inputs");
  }
  Greediness g;
  g.extra_ratio = static_cast<double>(l_max - answer_end) / static_cast<double>(l_c);
  g.read_ratio = static_cast<double>(l_max) / static_cast<double>(l_c);
  g.early_commit = g.extra_ratio < 0.0;
  return g;
}

std::optional<double> efficiency(double f_early, double f_full, double tokens_full,
                                 double tokens_early) {
  if (tokens_early <= 0.0) throw std::invalid_argument("efficiency: tokens_early must be > 0");
  if (f_full == 0.0) return std::nullopt;
  if (f_early == 0.0) return 0.0;
  return (f_early / f_full) * (tokens_full / tokens_early);
}

PrefixCurve oracle_best_stop(const PrefixPredictor& predict, std::span<const std::string> golds,
                             Index context_length, Index stride) {
  if (stride < 1) throw std::invalid_argument("oracle_best_stop: stride must be >= 1");
  PrefixCurve curve;
  for (Index len = stride; len < context_length + stride; len += stride) {
    Index prefix = std::min(len, context_length);
    curve.prefix_lengths.push_back(prefix);
    curve.f1.push_back(text_f1(predict(prefix), golds));
    if (prefix == context_length) break;
  }
  curve.best_f1 = 0.0;
  for (double f : curve.f1) curve.best_f1 = std::max(curve.best_f1, f);
  curve.l_max = curve.prefix_lengths.back();
  for (std::size_t i = 0; i < curve.f1.size(); ++i) {
    if (curve.f1[i] == curve.best_f1) {
      curve.l_max = curve.prefix_lengths[i];
      break;
    }
  }
  return curve;
}

EvalReport consumption_report(std::vector<ExampleRecord> records, Index bucket_width) {
  if (bucket_width < 1) throw std::invalid_argument("consumption_report: bucket_width >= 1");
  EvalReport report;
  report.bucket_width = bucket_width;
  report.examples = std::move(records);
  if (report.examples.empty()) return report;

  double sum_f_full = 0.0;
  double sum_f_early = 0.0;
  double sum_em = 0.0;
  double sum_ratio = 0.0;
  double total_le = 0.0;
  double total_lc = 0.0;
  Index max_lc = 0;
  for (const ExampleRecord& r : report.examples) {
    sum_f_full += r.f1_full;
    sum_f_early += r.f1_early;
    sum_em += r.em_full;
    sum_ratio += static_cast<double>(r.l_e) / static_cast<double>(r.l_c);
    total_le += static_cast<double>(r.l_e);
    total_lc += static_cast<double>(r.l_c);
    max_lc = std::max(max_lc, r.l_c);
  }
  double n = static_cast<double>(report.examples.size());
  report.f_full = sum_f_full / n;
  report.f_early = sum_f_early / n;
  report.em = sum_em / n;
  report.mean_read_ratio = sum_ratio / n;
  report.saving = 1.0 - total_le / total_lc;
  report.efficiency_value = efficiency(report.f_early, report.f_full, total_lc, total_le);

  std::size_t buckets = static_cast<std::size_t>((max_lc + bucket_width - 1) / bucket_width);
  report.hist_le.assign(buckets, 0);
  report.hist_lmax.assign(buckets, 0);
  report.hist_lc.assign(buckets, 0);
  auto bucket_of = [&](Index tokens) {
    // Consumed counts are in [1, L_c]; bucket b covers (b*w, (b+1)*w].
    return static_cast<std::size_t>((tokens - 1) / bucket_width);
  };
  for (const ExampleRecord& r : report.examples) {
    ++report.hist_le[bucket_of(r.l_e)];
    ++report.hist_lmax[bucket_of(r.l_max)];
    ++report.hist_lc[bucket_of(r.l_c)];
  }

  std::map<std::size_t, std::pair<double, std::size_t>> by_length;
  for (const ExampleRecord& r : report.examples) {
    auto& [ratio_sum, count] = by_length[bucket_of(r.l_c)];
    ratio_sum += static_cast<double>(r.l_e) / static_cast<double>(r.l_c);
    ++count;
  }
  for (const auto& [bucket, acc] : by_length) {
    LengthBucket lb;
    lb.lo = static_cast<Index>(bucket) * bucket_width + 1;
    lb.hi = static_cast<Index>(bucket + 1) * bucket_width;
    lb.mean_read_ratio = acc.first / static_cast<double>(acc.second);
    lb.count = acc.second;
    report.read_ratio_by_length.push_back(lb);
  }
  return report;
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "id,l_c,l_e,l_max,answer_end,f1_full,f1_early,em_full,extra_ratio,"
         "oracle_read_ratio,early_commit,stop_slice,stopped_early,pred_full,pred_early\n";
  auto quote = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    q += '"';
    return q;
  };
  for (const ExampleRecord& r : report.examples) {
    out << quote(r.id) << ',' << r.l_c << ',' << r.l_e << ',' << r.l_max << ',' << r.answer_end
        << ',' << r.f1_full << ',' << r.f1_early << ',' << r.em_full << ',' << r.extra_ratio
        << ',' << r.oracle_read_ratio << ',' << (r.early_commit ? 1 : 0) << ',' << r.stop_slice
        << ',' << (r.stopped_early ? 1 : 0) << ',' << quote(r.pred_full) << ','
        << quote(r.pred_early) << '\n';
  }
  out << "aggregate,f_full," << report.f_full << '\n';
  out << "aggregate,f_early," << report.f_early << '\n';
  out << "aggregate,em," << report.em << '\n';
  out << "aggregate,mean_read_ratio," << report.mean_read_ratio << '\n';
  out << "aggregate,saving," << report.saving << '\n';
  out << "aggregate,efficiency,";
  if (report.efficiency_value) {
    out << *report.efficiency_value << '\n';
  } else {
    out << "undefined\n";
  }
}

void write_report_json(const EvalReport& report, const std::string& path) {
  nlohmann::json j;
  j["f_full"] = report.f_full;
  j["f_early"] = report.f_early;
  j["em"] = report.em;
  j["mean_read_ratio"] = report.mean_read_ratio;
  j["saving"] = report.saving;
  if (report.efficiency_value) {
    j["efficiency"] = *report.efficiency_value;
  } else {
    j["efficiency"] = "undefined";
  }
  j["examples"] = report.examples.size();
  j["dropped_examples"] = report.dropped_examples;
  j["bucket_width"] = report.bucket_width;
  j["hist_le"] = report.hist_le;
  j["hist_lmax"] = report.hist_lmax;
  j["hist_lc"] = report.hist_lc;
  nlohmann::json table = nlohmann::json::array();
  for (const LengthBucket& b : report.read_ratio_by_length) {
    table.push_back({{"lo", b.lo},
                     {"hi", b.hi},
                     {"mean_read_ratio", b.mean_read_ratio},
                     {"count", b.count}});
  }
  j["read_ratio_by_length"] = table;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

EvalReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  EvalReport report;
  report.f_full = j.at("f_full").get<double>();
  report.f_early = j.at("f_early").get<double>();
  report.em = j.at("em").get<double>();
  report.mean_read_ratio = j.at("mean_read_ratio").get<double>();
  report.saving = j.at("saving").get<double>();
  if (j.at("efficiency").is_number()) report.efficiency_value = j.at("efficiency").get<double>();
  report.dropped_examples = j.value("dropped_examples", std::size_t{0});
  report.bucket_width = j.at("bucket_width").get<Index>();
  report.hist_le = j.at("hist_le").get<std::vector<std::size_t>>();
  report.hist_lmax = j.at("hist_lmax").get<std::vector<std::size_t>>();
  report.hist_lc = j.at("hist_lc").get<std::vector<std::size_t>>();
  for (const nlohmann::json& b : j.at("read_ratio_by_length")) {
    LengthBucket lb;
    lb.lo = b.at("lo").get<Index>();
    lb.hi = b.at("hi").get<Index>();
    lb.mean_read_ratio = b.at("mean_read_ratio").get<double>();
    lb.count = b.at("count").get<std::size_t>();
    report.read_ratio_by_length.push_back(lb);
  }
  return report;
}

}  // namespace sliceqa
