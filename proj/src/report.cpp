#include "blkrew/report.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace blkrew {

Json to_json(const CriticalWeightReport& report) {
  Json j;
  j["bin_edges"] = report.bin_edges;
  j["full_counts"] = report.full_counts;
  j["surviving_counts"] = report.surviving_counts;
  j["reference_median"] = report.reference_median;
  j["surviving_total"] = report.surviving_total;
  j["surviving_below_median"] = report.surviving_below_median;
  return j;
}

Json to_json(const PruneReport& report) {
  Json j;
  j["base_accuracy"] = report.base_accuracy;
  j["reg_accuracy"] = report.reg_accuracy;
  j["pruned_accuracy"] = report.pruned_accuracy;
  j["compression_rate"] = report.compression_rate;
  j["total_weights"] = report.total_weights;
  j["surviving_weights"] = report.surviving_weights;
  j["epochs"] = {{"pretrain", report.pretrain_epochs},
                 {"reweight", report.reweight_epochs},
                 {"retrain", report.retrain_epochs}};
  Json layers = Json::array();
  for (const auto& st : report.layers) {
    Json l;
    l["rows"] = st.rows;
    l["cols"] = st.cols;
    l["block_m"] = st.block_m;
    l["block_n"] = st.block_n;
    l["clamped"] = st.clamped;
    l["floor_applied"] = st.floor_applied;
    l["total"] = st.total;
    l["surviving"] = st.surviving;
    l["row_groups"] = st.row_groups;
    l["row_groups_killed"] = st.row_groups_killed;
    l["col_groups"] = st.col_groups;
    l["col_groups_killed"] = st.col_groups_killed;
    l["block_survival_hist"] = st.block_survival_hist;
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  j["critical_weights"] = to_json(report.critical);
  return j;
}

Json to_json(const BenchCase& bench) {
  Json j;
  j["shape"] = {{"m", bench.m}, {"k", bench.k}, {"n", bench.n}};
  j["block"] = {{"m", bench.block_m}, {"n", bench.block_n}};
  j["target_sparsity"] = bench.target_sparsity;
  j["actual_sparsity"] = bench.actual_sparsity;
  j["repeats"] = bench.repeats;
  j["workers"] = bench.workers;
  Json variants = Json::array();
  for (const auto& v : bench.variants) {
    variants.push_back({{"name", v.name},
                        {"median_ms", v.median_ms},
                        {"min_ms", v.min_ms},
                        {"max_ms", v.max_ms}});
  }
  j["variants"] = std::move(variants);
  return j;
}

Json to_json(const BalanceMetrics& metrics) {
  return Json{{"divergence", metrics.divergence}, {"imbalance", metrics.imbalance}};
}

void write_report(const Json& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << report.dump(2) << '\n';
}

Json read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report: " + path);
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw IoError("bad report json in " + path + ": " + e.what());
  }
  return j;
}

std::string default_report_name(const std::string& command, uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << command << "-seed" << seed << '-' << std::put_time(&tm, "%Y%m%dT%H%M%SZ") << ".json";
  return ss.str();
}

}  // namespace blkrew
