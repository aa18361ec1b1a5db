#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace condseg {

struct ExperimentOptions {
  std::size_t image_size = 32;
  std::size_t depth = 3;
  std::size_t base_channels = 8;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path out_dir = "runs";
  std::size_t threads = 1;
  bool save_checkpoints = true;
  std::ostream* log = nullptr;

  nlohmann::json to_json() const;
};

/// CONDSEG_THREADS if set to a positive integer, else 1.
std::size_t threads_from_env();

/// Variants of a preset in the row order of its results table.
const std::vector<std::string>& preset_variants(const std::string& preset);
const std::vector<std::string>& preset_names();

struct RowResult {
  std::string row;   // table row label, e.g. "SME" or "SME swapped"
  std::string mode;  // metadata mode used for scoring
  std::map<std::string, double> subset_f1;
  std::map<std::string, std::size_t> subset_counts;
  double average_f1 = 0.0;
  std::size_t count = 0;
};

struct RunResult {
  std::string preset;
  std::string variant;
  std::uint64_t seed = 0;
  std::vector<std::string> subsets;  // table columns after "Average"
  std::vector<RowResult> rows;
  nlohmann::json extra;  // preset-specific measurements

  nlohmann::json to_json() const;
  static RunResult from_json(const nlohmann::json& j);
};

/// Trains and evaluates every (variant, seed) pair; each run writes history,
/// per-sample scores, its checkpoint(s) and run.json to
/// out_dir/<preset>/<variant>/seed<N>/. Runs execute on up to `threads` workers.
std::vector<RunResult> run_experiment(const std::string& preset, const std::vector<std::string>& variants,
                                      const ExperimentOptions& opts);

struct ReportCell {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single seed
  std::size_t n = 0;
  bool best = false;
};

struct ReportTable {
  std::string preset;
  std::vector<std::string> columns;  // "Average" first
  std::vector<std::string> rows;
  std::map<std::pair<std::string, std::string>, ReportCell> cells;  // (row, column)
};

/// Aggregates every run.json under `out_dir` (mean and sd over seeds), writes
/// report.csv and report.txt there and returns the tables in preset order.
std::vector<ReportTable> report(const std::filesystem::path& out_dir);

std::string render_table(const ReportTable& table);

}  // namespace condseg
