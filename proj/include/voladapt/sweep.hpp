// Threshold grid search over the selection predicate.

#ifndef VOLADAPT_SWEEP_HPP
#define VOLADAPT_SWEEP_HPP

#include <optional>
#include <string>
#include <vector>

#include "voladapt/curation.hpp"
#include "voladapt/driver.hpp"

namespace voladapt {

enum class SweepObjective {
  kGtDice,        // balanced accuracy of retention against Dice(proposals, GT) >= good_dice
  kRetainedBand,  // retained fraction inside [band_lo, band_hi]
};

struct SweepGrids {
  std::vector<double> tau_conf = default_tau_conf_grid();
  std::vector<double> overlap_lo = default_overlap_lo_grid();
  std::vector<double> overlap_hi = default_overlap_hi_grid();
  std::vector<std::uint32_t> tau_cc = default_tau_cc_grid();
  Connectivity connectivity = Connectivity::k26;
  SweepObjective objective = SweepObjective::kRetainedBand;
  double good_dice = 0.5;
  double band_lo = 0.3;
  double band_hi = 0.7;

  void validate() const;
};

SweepGrids load_sweep_grids(const fs::path& path);
SweepGrids parse_sweep_grids(const std::string& toml_text);

/// Cartesian product honoring lo < hi, in grid order (tau_conf slowest,
/// tau_cc fastest). Throws std::invalid_argument when nothing survives.
std::vector<SelectConfig> expand_grid(const SweepGrids& grids);

struct SweepCase {
  std::optional<CaseStatistics> stats;
  std::optional<bool> good;  // set for the GT objective
};

struct SweepRow {
  std::size_t rank = 0;
  SelectConfig config;
  std::size_t retained = 0;
  std::size_t rejected = 0;
  double score = 0.0;
};

/// Scores every configuration and sorts by descending score; ties keep
/// grid order.
std::vector<SweepRow> run_sweep(const std::vector<SweepCase>& cases, const SweepGrids& grids);

std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Gathers proposals for every target case of `cycle` through the configured
/// proposer and evaluates the grid.
std::vector<SweepRow> grid_sweep(const RunConfig& cfg, const SweepGrids& grids, std::uint32_t cycle = 2);

}  // namespace voladapt

#endif  // VOLADAPT_SWEEP_HPP
