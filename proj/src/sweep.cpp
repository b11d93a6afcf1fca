#include "voladapt/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "voladapt/metrics.hpp"

namespace voladapt {

void SweepGrids::validate() const {
  if (tau_conf.empty() || overlap_lo.empty() || overlap_hi.empty() || tau_cc.empty()) {
    throw std::invalid_argument("sweep grids must all be non-empty");
  }
  for (double v : tau_conf) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("tau_conf grid value outside [0, 1]");
  }
  for (const auto* g : {&overlap_lo, &overlap_hi}) {
    for (double v : *g) {
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("overlap grid value outside [0, 1]");
    }
  }
  for (auto v : tau_cc) {
    if (v < 1) throw std::invalid_argument("tau_cc grid values must be >= 1");
  }
  if (!(good_dice >= 0.0 && good_dice <= 1.0)) throw std::invalid_argument("good_dice outside [0, 1]");
  if (!(band_lo >= 0.0 && band_lo <= band_hi && band_hi <= 1.0)) {
    throw std::invalid_argument("band must satisfy 0 <= lo <= hi <= 1");
  }
}

std::vector<SelectConfig> expand_grid(const SweepGrids& grids) {
  grids.validate();
  std::vector<SelectConfig> out;
  for (double c : grids.tau_conf) {
    for (double lo : grids.overlap_lo) {
      for (double hi : grids.overlap_hi) {
        if (!(lo < hi)) continue;
        for (auto cc : grids.tau_cc) {
          SelectConfig s;
          s.tau_conf = c;
          s.tau_overlap_lo = lo;
          s.tau_overlap_hi = hi;
          s.tau_cc = cc;
          s.connectivity = grids.connectivity;
          out.push_back(s);
        }
      }
    }
  }
  if (out.empty()) throw std::invalid_argument("grid is empty after enforcing overlap_lo < overlap_hi");
  return out;
}

namespace {

double band_score(double fraction, double lo, double hi) {
  if (fraction < lo) return fraction - lo;
  if (fraction > hi) return hi - fraction;
  return 0.0;
}

double balanced_accuracy(std::size_t tp, std::size_t pos, std::size_t tn, std::size_t neg) {
  if (pos == 0 && neg == 0) return 0.0;
  if (pos == 0) return static_cast<double>(tn) / static_cast<double>(neg);
  if (neg == 0) return static_cast<double>(tp) / static_cast<double>(pos);
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(pos) + static_cast<double>(tn) / static_cast<double>(neg));
}

}  // namespace

std::vector<SweepRow> run_sweep(const std::vector<SweepCase>& cases, const SweepGrids& grids) {
  if (grids.objective == SweepObjective::kGtDice) {
    for (const auto& c : cases) {
      if (!c.good) throw std::invalid_argument("gt_dice objective needs ground truth for every case");
    }
  }
  const auto configs = expand_grid(grids);
  std::vector<SweepRow> rows;
  rows.reserve(configs.size());
  for (const auto& cfg : configs) {
    SweepRow row;
    row.config = cfg;
    std::size_t tp = 0, tn = 0, pos = 0, neg = 0;
    for (const auto& c : cases) {
      const bool kept = judge_case("", c.stats, cfg).retained;
      kept ? ++row.retained : ++row.rejected;
      if (c.good) {
        if (*c.good) {
          ++pos;
          tp += kept ? 1 : 0;
        } else {
          ++neg;
          tn += kept ? 0 : 1;
        }
      }
    }
    if (grids.objective == SweepObjective::kGtDice) {
      row.score = balanced_accuracy(tp, pos, tn, neg);
    } else {
      const double f = cases.empty() ? 0.0 : static_cast<double>(row.retained) / static_cast<double>(cases.size());
      row.score = band_score(f, grids.band_lo, grids.band_hi);
    }
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.score > b.score; });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = i + 1;
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream o;
  o << "rank,tau_conf,overlap_lo,overlap_hi,tau_cc,connectivity,retained,rejected,score\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.4g,%.4g,%.4g,%u,%d,%zu,%zu,%.6f\n", r.rank, r.config.tau_conf,
                  r.config.tau_overlap_lo, r.config.tau_overlap_hi, r.config.tau_cc,
                  static_cast<int>(r.config.connectivity), r.retained, r.rejected, r.score);
    o << buf;
  }
  return o.str();
}

std::vector<SweepRow> grid_sweep(const RunConfig& cfg, const SweepGrids& grids, std::uint32_t cycle) {
  grids.validate();
  if (grids.objective == SweepObjective::kGtDice && cfg.target_labels.empty()) {
    throw DriverError("gt_dice objective needs data.target_labels");
  }
  const auto targets = load_targets(cfg, cycle);
  const auto proposals = gather_proposals(cfg, targets);
  std::vector<SweepCase> cases;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    SweepCase c;
    c.stats = case_statistics(targets[i].id, proposals[i], cfg.select.clip_to_bbox);
    if (targets[i].gt) {
      const Dims3 d = targets[i].gt->dims();
      std::vector<SliceMask2D> slices(d.d, SliceMask2D::empty(d.h, d.w));
      for (const auto& p : proposals[i]) slices[p.slice_index] = p.mask;
      const Mask3D stacked = stack_slices(slices, targets[i].gt->spacing());
      const bool both_empty = stacked.foreground_count() == 0 && targets[i].gt->foreground_count() == 0;
      c.good = both_empty || dice(stacked, *targets[i].gt) >= grids.good_dice;
    }
    cases.push_back(std::move(c));
  }
  return run_sweep(cases, grids);
}

}  // namespace voladapt
