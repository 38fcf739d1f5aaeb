#include "itfr/report_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace itfr {

namespace {

using json = nlohmann::json;

std::string fmt17(double x) {
  if (is_absent(x)) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

json matrix_to_json(const UtilityMatrix& util) {
  json values = json::array();
  json counts = json::array();
  for (int p = 0; p < util.user_group_count; ++p) {
    json vrow = json::array();
    json crow = json::array();
    for (int q = 0; q < util.item_group_count; ++q) {
      const double v = util.value(p, q);
      if (is_absent(v)) {
        vrow.push_back(nullptr);
      } else {
        vrow.push_back(v);
      }
      crow.push_back(util.eligible(p, q));
    }
    values.push_back(vrow);
    counts.push_back(crow);
  }
  return json{{"values", values}, {"eligible_user_counts", counts}, {"k", util.k}};
}

constexpr const char* kParamColumns =
    "method,seed,split,k,d,lr,l2,batch_size,epochs,negatives,eta,gamma,rho,tau,scorer";
constexpr const char* kMetricColumns = "precision,recall,ndcg,cv,min,ucv,icv";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

RunParams RunParams::from_config(const TrainConfig& cfg, const std::string& split) {
  RunParams params;
  params.method = to_string(cfg.method);
  if (cfg.method == Method::kItfr) {
    if (cfg.no_sa) params.method += "+no-sa";
    if (cfg.no_cb) params.method += "+no-cb";
    if (cfg.no_pn) params.method += "+no-pn";
  }
  if (cfg.method == Method::kBpr && cfg.pn_only) params.method += "+pn";
  params.seed = cfg.seed;
  params.split = split;
  params.k = cfg.k;
  params.dim = cfg.dim;
  params.lr = cfg.lr;
  params.l2 = cfg.l2;
  params.batch_size = cfg.batch_size;
  params.epochs = cfg.epochs;
  params.negatives_per_positive = cfg.negatives_per_positive;
  params.eta = cfg.eta;
  params.gamma = cfg.gamma;
  params.rho = cfg.rho;
  params.tau = cfg.tau;
  params.scorer = to_string(cfg.scorer());
  return params;
}

void write_report_json(const FairnessReport& report, const RunParams& params,
                       const InteractionDataset& ds, const std::filesystem::path& path) {
  json j;
  j["method"] = params.method;
  j["seed"] = params.seed;
  j["split"] = params.split;
  j["k"] = params.k;
  j["params"] = {{"d", params.dim},
                 {"lr", params.lr},
                 {"l2", params.l2},
                 {"batch_size", params.batch_size},
                 {"epochs", params.epochs},
                 {"negatives", params.negatives_per_positive},
                 {"eta", params.eta},
                 {"gamma", params.gamma},
                 {"rho", params.rho},
                 {"tau", params.tau},
                 {"scorer", params.scorer}};
  j["accuracy"] = {{"precision", report.accuracy.precision},
                   {"recall", report.accuracy.recall},
                   {"ndcg", report.accuracy.ndcg},
                   {"evaluated_users", report.accuracy.evaluated_users}};
  j["fairness"] = {{"cv", report.cv},
                   {"min", report.min_frac},
                   {"ucv", is_absent(report.ucv) ? json(nullptr) : json(report.ucv)},
                   {"icv", is_absent(report.icv) ? json(nullptr) : json(report.icv)}};
  j["utility"] = matrix_to_json(report.utility);
  j["utility"]["user_groups"] = ds.user_group_labels;
  j["utility"]["item_groups"] = ds.item_group_labels;

  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path.string());
  out << j.dump(2) << '\n';
}

void write_report_csv(const FairnessReport& report, const RunParams& params,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path.string());
  out << kParamColumns << ',' << kMetricColumns << '\n';
  out << params.method << ',' << params.seed << ',' << params.split << ',' << params.k << ','
      << params.dim << ',' << fmt17(params.lr) << ',' << fmt17(params.l2) << ','
      << params.batch_size << ',' << params.epochs << ',' << params.negatives_per_positive << ','
      << fmt17(params.eta) << ',' << fmt17(params.gamma) << ',' << fmt17(params.rho) << ','
      << fmt17(params.tau) << ',' << params.scorer << ',' << fmt17(report.accuracy.precision)
      << ',' << fmt17(report.accuracy.recall) << ',' << fmt17(report.accuracy.ndcg) << ','
      << fmt17(report.cv) << ',' << fmt17(report.min_frac) << ',' << fmt17(report.ucv) << ','
      << fmt17(report.icv) << '\n';
}

void write_utility_csv(const UtilityMatrix& util, const InteractionDataset& ds,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write utility table: " + path.string());
  out << "user_group\\item_group";
  for (const auto& label : ds.item_group_labels) out << ',' << label;
  out << '\n';
  for (int p = 0; p < util.user_group_count; ++p) {
    out << ds.user_group_labels[p];
    for (int q = 0; q < util.item_group_count; ++q) out << ',' << fmt17(util.value(p, q));
    out << '\n';
  }
}

void aggregate_reports(const std::vector<std::filesystem::path>& report_csvs,
                       const std::filesystem::path& out_csv) {
  const std::vector<std::string> param_cols = split_csv_line(kParamColumns);
  const std::vector<std::string> metric_cols = split_csv_line(kMetricColumns);
  const std::size_t seed_col = 1;  // grouped-over column

  struct Group {
    std::vector<std::string> key_fields;
    std::vector<std::vector<double>> metric_values;  // per metric
  };
  std::map<std::string, Group> groups;

  for (const auto& path : report_csvs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open report: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty report: " + path.string());
    const auto header = split_csv_line(line);
    const auto expected = split_csv_line(std::string(kParamColumns) + "," + kMetricColumns);
    if (header != expected) throw DataError("unexpected report columns in " + path.string());

    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = split_csv_line(line);
      if (fields.size() != expected.size())
        throw DataError("malformed report row in " + path.string());

      std::string key;
      std::vector<std::string> key_fields;
      for (std::size_t c = 0; c < param_cols.size(); ++c) {
        if (c == seed_col) continue;
        key += fields[c];
        key += '\x1f';
        key_fields.push_back(fields[c]);
      }
      auto& group = groups[key];
      if (group.metric_values.empty()) {
        group.key_fields = key_fields;
        group.metric_values.resize(metric_cols.size());
      }
      for (std::size_t mc = 0; mc < metric_cols.size(); ++mc) {
        const std::string& cellv = fields[param_cols.size() + mc];
        if (!cellv.empty()) group.metric_values[mc].push_back(std::stod(cellv));
      }
    }
  }

  std::ofstream out(out_csv);
  if (!out) throw DataError("cannot write " + out_csv.string());
  out << "method,split,k,d,lr,l2,batch_size,epochs,negatives,eta,gamma,rho,tau,scorer,n_runs";
  for (const auto& metric : metric_cols) out << ',' << metric << "_mean," << metric << "_std";
  out << '\n';
  for (const auto& [key, group] : groups) {
    for (std::size_t c = 0; c < group.key_fields.size(); ++c) {
      if (c) out << ',';
      out << group.key_fields[c];
    }
    std::size_t n_runs = 0;
    for (const auto& vals : group.metric_values) n_runs = std::max(n_runs, vals.size());
    out << ',' << n_runs;
    for (const auto& vals : group.metric_values) {
      if (vals.empty()) {
        out << ",,";
        continue;
      }
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double var = 0.0;
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= static_cast<double>(vals.size());
      out << ',' << fmt17(mean) << ',' << fmt17(std::sqrt(var));
    }
    out << '\n';
  }
}

std::uint64_t fnv1a_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open for checksum: " + path.string());
  std::uint64_t hash = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ull;
    }
  }
  return hash;
}

}  // namespace itfr
