// Copyright 2026 The Impromptu Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: simulate, compare, sweep-alpha, similarity,
// train-inverse and ingest.
//
// Exit codes: 0 success, 2 configuration error, 3 divergence in a required
// strategy, 4 I/O error, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "impromptu/impromptu.hpp"

namespace {

namespace fs = std::filesystem;
using impromptu::Json;

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string format = "json";
};

impromptu::BenchConfig load_config(const CommonOptions& common) {
  Json j = Json::object();
  if (!common.config_path.empty()) {
    std::ifstream in(common.config_path);
    if (!in) throw impromptu::IoError("cannot open config file " + common.config_path);
    try {
      j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw impromptu::InvalidArgument(std::string("config: ") + e.what());
    }
  }
  if (common.seed) j["seed"] = *common.seed;
  return impromptu::config_from_json(j);
}

fs::path prepare_out_dir(const CommonOptions& common) {
  if (common.out_dir.empty()) return {};
  std::error_code ec;
  fs::create_directories(common.out_dir, ec);
  if (ec) throw impromptu::IoError("cannot create output directory " + common.out_dir + ": " + ec.message());
  return fs::path(common.out_dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw impromptu::IoError("cannot write " + path.string());
  return os;
}

void write_json_file(const fs::path& path, const Json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

void add_common(CLI::App* sub, CommonOptions& common) {
  sub->add_option("--config", common.config_path, "JSON configuration file")->check(CLI::ExistingFile);
  sub->add_option("--seed", common.seed, "Override the configuration seed");
  sub->add_option("--out-dir", common.out_dir, "Directory for reports and logs");
  sub->add_option("--format", common.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
}

std::string number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int emit_run(const CommonOptions& common, const impromptu::BenchConfig& config, const impromptu::RunReport& report) {
  const fs::path dir = prepare_out_dir(common);
  const Json j = impromptu::report_json(report);
  if (!dir.empty()) {
    write_json_file(dir / "report.json", j);
    for (const auto& s : report.strategies) {
      auto os = open_out(dir / (std::string("steps_") + impromptu::to_string(s.strategy) + ".csv"));
      impromptu::write_step_log_csv(os, s.log, config.target.state_dim());
    }
  }
  if (common.format == "json") {
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "strategy,rms_tracking,rms_prediction,diverged\n";
    for (const auto& s : report.strategies) {
      std::cout << impromptu::to_string(s.strategy) << ',' << number(s.metrics.rms_tracking) << ','
                << number(s.metrics.rms_prediction) << ',' << (s.diverged ? 1 : 0) << '\n';
    }
  }
  for (const auto& s : report.strategies) {
    if (s.diverged) {
      std::cerr << "error: strategy " << impromptu::to_string(s.strategy) << " diverged at step " << s.diverged_step
                << '\n';
      return kExitDivergence;
    }
  }
  return kExitOk;
}

std::vector<double> default_alphas() {
  std::vector<double> a;
  for (double v : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0}) a.push_back(v);
  return a;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer of learned inverse dynamics with online error correction"};
  app.require_subcommand(1);
  CommonOptions common;

  auto* simulate = app.add_subcommand("simulate", "Run one control strategy on the configured target");
  add_common(simulate, common);
  std::string strategy = "online";
  simulate->add_option("--strategy", strategy, "baseline, offline or online")
      ->check(CLI::IsMember({"baseline", "offline", "online"}));

  auto* compare = app.add_subcommand("compare", "Run baseline, offline-only and offline + online side by side");
  add_common(compare, common);

  auto* sweep = app.add_subcommand("sweep-alpha", "Fixed-gain sweep checked against the stability condition");
  add_common(sweep, common);
  std::vector<double> alphas;
  sweep->add_option("--alphas", alphas, "Gains to sweep")->delimiter(',');

  auto* sim = app.add_subcommand("similarity", "Similarity vector, ISS gains and stability verdict");
  add_common(sim, common);
  double alpha = 1.0;
  bool fit_budget = false;
  sim->add_option("--alpha", alpha, "Gain to check");
  sim->add_flag("--fit-budget", fit_budget, "Fit the prediction budget from an online run (otherwise zero)");

  auto* train = app.add_subcommand("train-inverse", "Train the source inverse network and save it");
  add_common(train, common);
  std::string model_out;
  std::optional<int> epochs;
  train->add_option("--model-out", model_out, "Output model file")->required();
  train->add_option("--epochs", epochs, "Override the maximum epoch count");

  auto* ingest = app.add_subcommand("ingest", "Resample a t,<columns> trajectory CSV to a fixed step");
  add_common(ingest, common);
  std::string input;
  std::vector<std::string> columns = {"yd"};
  double dt = impromptu::kTestTrajectoryDt;
  std::string time_column = "t";
  ingest->add_option("--input", input, "Trajectory CSV")->required();
  ingest->add_option("--columns", columns, "Columns to resample")->delimiter(',');
  ingest->add_option("--dt", dt, "Output step in seconds");
  ingest->add_option("--time-column", time_column, "Name of the time column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*simulate) {
      const auto config = load_config(common);
      return emit_run(common, config, impromptu::run_strategies(config, {impromptu::strategy_from_string(strategy)}));
    }
    if (*compare) {
      const auto config = load_config(common);
      return emit_run(common, config, impromptu::run_comparison(config));
    }
    if (*sweep) {
      const auto config = load_config(common);
      const auto report = impromptu::alpha_sweep(config, alphas.empty() ? default_alphas() : alphas);
      Json j = impromptu::sweep_json(report);
      j["config_digest"] = impromptu::config_digest(config);
      j["config"] = impromptu::config_to_json(config);
      const fs::path dir = prepare_out_dir(common);
      if (!dir.empty()) write_json_file(dir / "sweep.json", j);
      if (common.format == "json") {
        std::cout << j.dump(2) << '\n';
      } else {
        std::cout << "alpha,bounded,rms_tracking,lemma1,margin\n";
        for (const auto& p : report.points) {
          std::cout << number(p.alpha) << ',' << (p.bounded ? 1 : 0) << ',' << number(p.rms_tracking) << ','
                    << impromptu::to_string(p.lemma.verdict) << ',' << number(p.lemma.margin) << '\n';
        }
      }
      return kExitOk;
    }
    if (*sim) {
      const auto config = load_config(common);
      const auto s = impromptu::similarity(config.source, config.target);
      const auto iss = impromptu::iss_gains(config.target);
      impromptu::PredictionBudget pb;
      if (fit_budget) {
        pb = impromptu::fit_budget_from_run(config, impromptu::prepare_inverse(config).inverse);
      }
      const auto budget = impromptu::make_stability_budget(config.source, config.target, iss, pb);
      const auto verdict = impromptu::lemma1_check(config.source, config.target, budget, alpha);
      const Json j = impromptu::stability_report_json(s, budget, verdict, alpha);
      const fs::path dir = prepare_out_dir(common);
      if (!dir.empty()) write_json_file(dir / "stability.json", j);
      if (common.format == "json") {
        std::cout << j.dump(2) << '\n';
      } else {
        std::cout << "S1,S2_norm,L1,L2,beta4,alpha_max,alpha,verdict,margin\n"
                  << number(s.S1) << ',' << number(s.norm_S2) << ',' << number(budget.L1) << ','
                  << number(budget.L2) << ',' << number(budget.beta4) << ','
                  << (budget.alpha_unbounded ? std::string("inf") : number(budget.alpha_max)) << ','
                  << number(alpha) << ',' << impromptu::to_string(verdict.verdict) << ',' << number(verdict.margin)
                  << '\n';
      }
      return kExitOk;
    }
    if (*train) {
      auto config = load_config(common);
      if (epochs) config.training.max_epochs = *epochs;
      const auto data = impromptu::source_inverse_dataset(config.source, config.excitation);
      const auto trained = impromptu::train_mlp(data, config.training, config.seed);
      impromptu::save_mlp(model_out, trained.model);
      const Json j = {{"version", 1},
                      {"model", model_out},
                      {"samples", data.size()},
                      {"skipped_traces", data.skipped_traces},
                      {"epochs_run", trained.report.epochs_run},
                      {"best_epoch", trained.report.best_epoch},
                      {"train_rmse", trained.report.train_rmse},
                      {"validation_rmse", trained.report.validation_rmse},
                      {"early_stopped", trained.report.early_stopped},
                      {"seed", config.seed},
                      {"config_digest", impromptu::config_digest(config)}};
      const fs::path dir = prepare_out_dir(common);
      if (!dir.empty()) write_json_file(dir / "training.json", j);
      if (common.format == "json") {
        std::cout << j.dump(2) << '\n';
      } else {
        std::cout << "samples,epochs_run,train_rmse,validation_rmse\n"
                  << data.size() << ',' << trained.report.epochs_run << ',' << number(trained.report.train_rmse)
                  << ',' << number(trained.report.validation_rmse) << '\n';
      }
      return kExitOk;
    }
    if (*ingest) {
      std::ifstream in(input);
      if (!in) throw impromptu::IoError("cannot open trajectory file " + input);
      const auto table = impromptu::read_csv_table(in);
      const int ti = table.column_index(time_column);
      if (ti < 0) throw impromptu::InvalidArgument("csv: missing time column '" + time_column + "'");
      if (table.columns[ti].empty()) throw impromptu::InvalidArgument("csv: no data rows");
      std::vector<std::vector<double>> resampled;
      for (const auto& name : columns) {
        const int ci = table.column_index(name);
        if (ci < 0) throw impromptu::InvalidArgument("csv: missing column '" + name + "'");
        resampled.push_back(impromptu::resample_linear(table.columns[ti], table.columns[ci], dt));
      }
      const std::size_t n = resampled.front().size();
      const double t0 = table.columns[ti].front();
      const fs::path dir = prepare_out_dir(common);
      auto write_csv = [&](std::ostream& os) {
        os << "t";
        for (const auto& name : columns) os << ',' << name;
        os << '\n';
        for (std::size_t k = 0; k < n; ++k) {
          os << number(t0 + dt * static_cast<double>(k));
          for (const auto& col : resampled) os << ',' << number(col[k]);
          os << '\n';
        }
      };
      if (!dir.empty()) {
        auto os = open_out(dir / "trajectory.csv");
        write_csv(os);
      }
      if (common.format == "csv") {
        write_csv(std::cout);
      } else {
        Json j = {{"version", 1}, {"input", input}, {"dt", dt}, {"samples", n}};
        Json bounds = Json::object();
        for (std::size_t c = 0; c < columns.size(); ++c) {
          bounds[columns[c]] = impromptu::TrajectorySpec::samples(resampled[c], dt).bound();
        }
        j["bounds"] = bounds;
        std::cout << j.dump(2) << '\n';
      }
      return kExitOk;
    }
  } catch (const impromptu::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const impromptu::AssumptionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const impromptu::RelativeDegreeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const impromptu::SingularGainError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const impromptu::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kExitIo;
  } catch (const impromptu::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}
