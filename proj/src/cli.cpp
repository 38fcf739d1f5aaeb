#include "itfr/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "itfr/report_io.hpp"

namespace itfr {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::array<double, 3> parse_ratios(const std::string& text) {
  std::array<double, 3> ratios{};
  std::stringstream ss(text);
  std::string part;
  int idx = 0;
  while (std::getline(ss, part, ',')) {
    if (idx >= 3) throw UsageError("--ratios expects three comma-separated values");
    try {
      ratios[idx++] = std::stod(part);
    } catch (const std::exception&) {
      throw UsageError("invalid ratio: " + part);
    }
  }
  if (idx != 3) throw UsageError("--ratios expects three comma-separated values");
  return ratios;
}

fs::path resolve_out(const std::string& out_flag, const std::string& default_name) {
  if (!out_flag.empty()) return out_flag;
  if (const char* root = std::getenv("ITFR_OUT_ROOT")) {
    return fs::path(root) / default_name;
  }
  throw UsageError("--out is required (or set ITFR_OUT_ROOT)");
}

json config_to_json(const TrainConfig& cfg) {
  return json{{"method", to_string(cfg.method)},
              {"no_sa", cfg.no_sa},
              {"no_cb", cfg.no_cb},
              {"no_pn", cfg.no_pn},
              {"pn_only", cfg.pn_only},
              {"lr", cfg.lr},
              {"batch_size", cfg.batch_size},
              {"epochs", cfg.epochs},
              {"negatives", cfg.negatives_per_positive},
              {"l2", cfg.l2},
              {"d", cfg.dim},
              {"eta", cfg.eta},
              {"gamma", cfg.gamma},
              {"rho", cfg.rho},
              {"tau", cfg.tau},
              {"init_scale", cfg.init_scale},
              {"seed", cfg.seed},
              {"eval_every", cfg.eval_every},
              {"patience", cfg.patience},
              {"k", cfg.k},
              {"beta_plain", cfg.beta_from_plain_losses},
              {"log_every", cfg.log_every}};
}

void apply_json_config(TrainConfig& cfg, const json& j) {
  for (const auto& [key, value] : j.items()) {
    if (key == "method") cfg.method = method_from_string(value.get<std::string>());
    else if (key == "no_sa") cfg.no_sa = value.get<bool>();
    else if (key == "no_cb") cfg.no_cb = value.get<bool>();
    else if (key == "no_pn") cfg.no_pn = value.get<bool>();
    else if (key == "pn_only") cfg.pn_only = value.get<bool>();
    else if (key == "lr") cfg.lr = value.get<double>();
    else if (key == "batch_size") cfg.batch_size = value.get<int>();
    else if (key == "epochs") cfg.epochs = value.get<int>();
    else if (key == "negatives") cfg.negatives_per_positive = value.get<int>();
    else if (key == "l2") cfg.l2 = value.get<double>();
    else if (key == "d") cfg.dim = value.get<int>();
    else if (key == "eta") cfg.eta = value.get<double>();
    else if (key == "gamma") cfg.gamma = value.get<double>();
    else if (key == "rho") cfg.rho = value.get<double>();
    else if (key == "tau") cfg.tau = value.get<double>();
    else if (key == "init_scale") cfg.init_scale = value.get<double>();
    else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "eval_every") cfg.eval_every = value.get<int>();
    else if (key == "patience") cfg.patience = value.get<int>();
    else if (key == "k") cfg.k = value.get<int>();
    else if (key == "beta_plain") cfg.beta_from_plain_losses = value.get<bool>();
    else if (key == "log_every") cfg.log_every = value.get<int>();
    else throw UsageError("unknown config key: " + key);
  }
}

// Flags that were explicitly given override the --config file, which
// overrides the built-in defaults.
struct TrainFlags {
  std::string method = "bpr";
  bool no_sa = false, no_cb = false, no_pn = false, pn_only = false, beta_plain = false;
  double lr = 1e-3, l2 = 0.0, eta = 0.03, gamma = 1.0, rho = 0.04, tau = 2.0, init_scale = 0.1;
  int batch_size = 1024, epochs = 200, negatives = 1, dim = 64, eval_every = 1, patience = 0,
      k = 20, log_every = 1;
  std::uint64_t seed = 0;
  std::string config_path;

  void register_options(CLI::App* cmd) {
    cmd->add_option("--method", method, "bpr|groupdro|groupdro-two-sided|itfr");
    cmd->add_flag("--no-sa", no_sa, "itfr ablation: disable the sharpness-aware loss");
    cmd->add_flag("--no-cb", no_cb, "itfr ablation: weight update on losses instead of contributions");
    cmd->add_flag("--no-pn", no_pn, "itfr ablation: dot scorer instead of the normalized one");
    cmd->add_flag("--pn-only", pn_only, "bpr with the normalized scorer");
    cmd->add_flag("--beta-plain", beta_plain, "beta weights from plain-loss means");
    cmd->add_option("--lr", lr);
    cmd->add_option("--l2", l2);
    cmd->add_option("--eta", eta);
    cmd->add_option("--gamma", gamma);
    cmd->add_option("--rho", rho);
    cmd->add_option("--tau", tau);
    cmd->add_option("--init-scale", init_scale);
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--negatives", negatives);
    cmd->add_option("--d", dim, "embedding dimension");
    cmd->add_option("--eval-every", eval_every);
    cmd->add_option("--patience", patience);
    cmd->add_option("--k", k);
    cmd->add_option("--log-every", log_every);
    cmd->add_option("--seed", seed);
    cmd->add_option("--config", config_path, "JSON config file (flags take precedence)");
  }

  TrainConfig build(const CLI::App* cmd) const {
    TrainConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw DataError("cannot open config file: " + config_path);
      apply_json_config(cfg, json::parse(in));
    }
    auto given = [&](const std::string& name) { return cmd->count(name) > 0; };
    if (given("--method")) cfg.method = method_from_string(method);
    if (given("--no-sa")) cfg.no_sa = no_sa;
    if (given("--no-cb")) cfg.no_cb = no_cb;
    if (given("--no-pn")) cfg.no_pn = no_pn;
    if (given("--pn-only")) cfg.pn_only = pn_only;
    if (given("--beta-plain")) cfg.beta_from_plain_losses = beta_plain;
    if (given("--lr")) cfg.lr = lr;
    if (given("--l2")) cfg.l2 = l2;
    if (given("--eta")) cfg.eta = eta;
    if (given("--gamma")) cfg.gamma = gamma;
    if (given("--rho")) cfg.rho = rho;
    if (given("--tau")) cfg.tau = tau;
    if (given("--init-scale")) cfg.init_scale = init_scale;
    if (given("--batch-size")) cfg.batch_size = batch_size;
    if (given("--epochs")) cfg.epochs = epochs;
    if (given("--negatives")) cfg.negatives_per_positive = negatives;
    if (given("--d")) cfg.dim = dim;
    if (given("--eval-every")) cfg.eval_every = eval_every;
    if (given("--patience")) cfg.patience = patience;
    if (given("--k")) cfg.k = k;
    if (given("--log-every")) cfg.log_every = log_every;
    if (given("--seed")) cfg.seed = seed;
    cfg.validate();
    return cfg;
  }
};

void run_eval(const fs::path& data_dir, const fs::path& checkpoint_path, int k,
              const std::string& split_name, const fs::path& out_dir) {
  if (split_name != "test" && split_name != "validation") {
    throw UsageError("--split must be test or validation");
  }
  auto [ds, split] = load_split_dir(data_dir);
  const EmbeddingTable table = load_checkpoint(checkpoint_path);
  if (table.user_count != ds.user_count || table.item_count != ds.item_count) {
    throw DataError("checkpoint shape does not match the dataset");
  }

  std::vector<Interaction> eval_set, mask;
  if (split_name == "test") {
    eval_set = split.test;
    mask = split.train;
    mask.insert(mask.end(), split.validation.begin(), split.validation.end());
  } else {
    eval_set = split.validation;
    mask = split.train;
  }
  const FairnessReport report = evaluate(table, ds, eval_set, mask, k);

  RunParams params;
  params.split = split_name;
  params.k = k;
  params.dim = table.dim;
  params.l2 = table.l2;
  params.tau = table.tau;
  params.seed = table.seed;
  params.scorer = to_string(table.scorer_mode);
  params.method = "unknown";
  const fs::path manifest_path = checkpoint_path.parent_path() / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    const json manifest = json::parse(in);
    TrainConfig cfg;
    apply_json_config(cfg, manifest.at("config"));
    cfg.k = k;
    params = RunParams::from_config(cfg, split_name);
  }

  fs::create_directories(out_dir);
  write_report_json(report, params, ds, out_dir / ("report_" + split_name + ".json"));
  write_report_csv(report, params, out_dir / ("report_" + split_name + ".csv"));
  write_utility_csv(report.utility, ds, out_dir / ("utility_" + split_name + ".csv"));

  std::printf("%s @%d  P=%.4f R=%.4f N=%.4f  CV=%.4f MIN=%.4f UCV=%.4f ICV=%.4f\n",
              split_name.c_str(), k, report.accuracy.precision, report.accuracy.recall,
              report.accuracy.ndcg, report.cv, report.min_frac, report.ucv, report.icv);
}

}  // namespace

void run_training(const TrainConfig& cfg, const fs::path& data_dir, const fs::path& out_dir) {
  auto [ds, split] = load_split_dir(data_dir);
  const TrainResult result = train(cfg, split, ds);

  fs::create_directories(out_dir);
  save_checkpoint(result.table, out_dir / "checkpoint.bin");
  result.log.write_csv(out_dir / "training_log.csv");

  json manifest;
  manifest["command"] = "train";
  manifest["data_dir"] = data_dir.string();
  manifest["output_dir"] = out_dir.string();
  manifest["config"] = config_to_json(cfg);
  manifest["seeds"] = std::vector<std::uint64_t>{cfg.seed};
  manifest["best_epoch"] = result.best_epoch;
  manifest["best_validation_recall"] = result.best_recall;

  if (!split.validation.empty()) {
    const FairnessReport val =
        evaluate(result.table, ds, split.validation, split.train, cfg.k);
    const RunParams params = RunParams::from_config(cfg, "validation");
    write_report_json(val, params, ds, out_dir / "report_validation.json");
    write_report_csv(val, params, out_dir / "report_validation.csv");
    write_utility_csv(val.utility, ds, out_dir / "utility_validation.csv");
  }

  json checksums;
  for (const char* name :
       {"checkpoint.bin", "training_log.csv", "report_validation.csv",
        "report_validation.json", "utility_validation.csv"}) {
    const fs::path p = out_dir / name;
    if (fs::exists(p)) {
      char buf[24];
      std::snprintf(buf, sizeof(buf), "%016llx",
                    static_cast<unsigned long long>(fnv1a_file(p)));
      checksums[name] = buf;
    }
  }
  manifest["artifacts"] = checksums;
  std::ofstream mout(out_dir / "manifest.json");
  if (!mout) throw DataError("cannot write manifest");
  mout << manifest.dump(2) << '\n';

  std::printf("%s seed=%llu best_epoch=%d val_recall@%d=%.4f -> %s\n",
              to_string(cfg.method).c_str(), static_cast<unsigned long long>(cfg.seed),
              result.best_epoch, cfg.k, result.best_recall, out_dir.string().c_str());
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"intersectional two-sided fairness trainer and evaluator"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write the synthetic two-genre dataset");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  ToyConfig toy;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--items-per-group", toy.items_per_group);
  synth->add_option("--pos-per-user", toy.positives_per_user);
  synth->add_option("--users-per-group", toy.users_per_group);
  synth->add_option("--majority-per-group", toy.majority_users_per_group);
  synth->callback([&] {
    const fs::path out = resolve_out(synth_out, "synth");
    write_dataset_tsv(generate_toy(synth_seed, toy), out);
    std::printf("synthetic dataset -> %s\n", out.string().c_str());
  });

  // prep
  auto* prep = app.add_subcommand("prep", "load raw TSVs, split, write a data directory");
  std::string prep_interactions, prep_user_groups, prep_item_groups, prep_ratios = "0.7,0.1,0.2",
              prep_out;
  std::uint64_t prep_seed = 0;
  prep->add_option("--interactions", prep_interactions)->required();
  prep->add_option("--user-groups", prep_user_groups)->required();
  prep->add_option("--item-groups", prep_item_groups)->required();
  prep->add_option("--ratios", prep_ratios, "train,validation,test fractions");
  prep->add_option("--seed", prep_seed);
  prep->add_option("--out", prep_out);
  prep->callback([&] {
    const fs::path out = resolve_out(prep_out, "prep");
    const InteractionDataset ds = load_dataset(prep_interactions, prep_user_groups, prep_item_groups);
    const SplitDataset split = split_dataset(ds, parse_ratios(prep_ratios), prep_seed);
    write_split_dir(ds, split, out);
    std::printf("split %zu/%zu/%zu -> %s\n", split.train.size(), split.validation.size(),
                split.test.size(), out.string().c_str());
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model and report on validation");
  std::string train_data, train_out;
  TrainFlags flags;
  train_cmd->add_option("--data", train_data, "directory written by prep")->required();
  train_cmd->add_option("--out", train_out, "run output directory");
  flags.register_options(train_cmd);
  train_cmd->callback([&] {
    const TrainConfig cfg = flags.build(train_cmd);
    const fs::path out = resolve_out(
        train_out, "train_" + to_string(cfg.method) + "_seed" + std::to_string(cfg.seed));
    run_training(cfg, train_data, out);
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_data, eval_checkpoint, eval_split = "test", eval_out;
  int eval_k = 20;
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--checkpoint", eval_checkpoint)->required();
  eval_cmd->add_option("--k", eval_k);
  eval_cmd->add_option("--split", eval_split, "test|validation");
  eval_cmd->add_option("--out", eval_out);
  eval_cmd->callback([&] {
    const fs::path out = resolve_out(eval_out, "eval");
    run_eval(eval_data, eval_checkpoint, eval_k, eval_split, out);
  });

  // report
  auto* report_cmd = app.add_subcommand("report", "aggregate per-seed reports");
  std::vector<std::string> report_runs;
  std::string report_out;
  report_cmd->add_option("--runs", report_runs, "run directories")->required()->expected(-1);
  report_cmd->add_option("--out", report_out)->required();
  report_cmd->callback([&] {
    std::vector<fs::path> csvs;
    for (const auto& dir : report_runs) {
      const fs::path test_csv = fs::path(dir) / "report_test.csv";
      const fs::path val_csv = fs::path(dir) / "report_validation.csv";
      if (fs::exists(test_csv)) {
        csvs.push_back(test_csv);
      } else if (fs::exists(val_csv)) {
        csvs.push_back(val_csv);
      } else {
        throw DataError("no report CSV found in " + dir);
      }
    }
    aggregate_reports(csvs, report_out);
    std::printf("aggregated %zu reports -> %s\n", csvs.size(), report_out.c_str());
  });

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Cartesian grid of training runs");
  std::string sweep_grid, sweep_data, sweep_out;
  sweep_cmd->add_option("--grid", sweep_grid, "JSON file mapping config keys to value lists")
      ->required();
  sweep_cmd->add_option("--data", sweep_data)->required();
  sweep_cmd->add_option("--out", sweep_out);
  sweep_cmd->callback([&] {
    const fs::path out = resolve_out(sweep_out, "sweep");
    std::ifstream in(sweep_grid);
    if (!in) throw DataError("cannot open grid file: " + sweep_grid);
    const json grid = json::parse(in);
    if (!grid.is_object() || grid.empty()) throw UsageError("grid must be a non-empty object");

    std::vector<std::string> keys;
    std::vector<std::vector<json>> values;
    for (const auto& [key, value] : grid.items()) {
      if (!value.is_array() || value.empty())
        throw UsageError("grid entry " + key + " must be a non-empty array");
      keys.push_back(key);
      values.emplace_back(value.begin(), value.end());
    }

    std::vector<std::size_t> cursor(keys.size(), 0);
    std::size_t run_index = 0;
    for (;;) {
      json combo;
      for (std::size_t i = 0; i < keys.size(); ++i) combo[keys[i]] = values[i][cursor[i]];
      TrainConfig cfg;
      apply_json_config(cfg, combo);
      cfg.validate();
      char name[64];
      std::snprintf(name, sizeof(name), "run_%04zu", run_index++);
      run_training(cfg, sweep_data, out / name);

      std::size_t pos = 0;
      while (pos < keys.size() && ++cursor[pos] == values[pos].size()) cursor[pos++] = 0;
      if (pos == keys.size()) break;
    }
    std::printf("sweep finished: %zu runs -> %s\n", run_index, out.string().c_str());
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace itfr
