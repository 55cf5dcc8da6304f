#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gmx/config.hpp"

namespace gmx {

/// One row of the run matrix: overrides applied on top of the base config.
struct AblationRow {
  std::string name;
  KeyValues overrides;
};

/// baseline, +mix(random), +mix(similar), +MITrans, hard, soft.
std::vector<AblationRow> ablation_rows();

struct AblationRun {
  std::string row;
  std::uint64_t seed = 0;
  std::optional<double> val_miou;
  std::optional<double> pseudo_initial;
  std::optional<double> pseudo_final;
  std::string error;  // empty on success
};

struct RowSummary {
  std::string row;
  std::size_t completed = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single run
  double pseudo_initial = 0.0;
  double pseudo_final = 0.0;
};

struct AblationTable {
  std::vector<std::string> rows;
  std::vector<AblationRun> runs;

  std::optional<RowSummary> summary(const std::string& row) const;
  /// `row,seed,val_miou,pseudo_initial,pseudo_final,error` per run.
  std::string runs_csv() const;
  /// `row,runs,mean,std,pseudo_initial,pseudo_final` per row.
  std::string summary_csv() const;
  std::string pretty() const;
  bool complete() const;
};

struct AblationOptions {
  /// Concurrent runs; results do not depend on it.
  std::size_t threads = 1;
  /// Per-run metrics CSVs go to <dir>/runs/ when set.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const AblationRun&)> on_run;
};

/// Trains every row for `base.ablate_seeds` seeds (base seed + k). Rows that
/// resolve to the same configuration share runs. Training errors are
/// recorded per run and never abort the matrix.
AblationTable run_ablation(const RunConfig& base, const DatasetManifest& manifest, const AblationOptions& options = {});

}  // namespace gmx
