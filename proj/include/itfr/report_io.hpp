#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "itfr/evaluator.hpp"
#include "itfr/trainer.hpp"

namespace itfr {

// Hyperparameters echoed into every report row so runs are self-describing
// and aggregation can group on them.
struct RunParams {
  std::string method = "bpr";
  std::uint64_t seed = 0;
  std::string split = "test";
  int k = 20;
  int dim = 64;
  double lr = 1e-3;
  double l2 = 0.0;
  int batch_size = 1024;
  int epochs = 200;
  int negatives_per_positive = 1;
  double eta = 0.0;
  double gamma = 0.0;
  double rho = 0.0;
  double tau = 0.0;
  std::string scorer = "dot";

  static RunParams from_config(const TrainConfig& cfg, const std::string& split);
};

void write_report_json(const FairnessReport& report, const RunParams& params,
                       const InteractionDataset& ds, const std::filesystem::path& path);
// One flat row per run; column order is fixed.
void write_report_csv(const FairnessReport& report, const RunParams& params,
                      const std::filesystem::path& path);
// P x Q grid with group labels on the margins.
void write_utility_csv(const UtilityMatrix& util, const InteractionDataset& ds,
                       const std::filesystem::path& path);

// Mean and population std of each metric, grouped by every non-seed
// parameter column. Inputs are flat report CSVs as written by
// write_report_csv.
void aggregate_reports(const std::vector<std::filesystem::path>& report_csvs,
                       const std::filesystem::path& out_csv);

std::uint64_t fnv1a_file(const std::filesystem::path& path);

}  // namespace itfr
