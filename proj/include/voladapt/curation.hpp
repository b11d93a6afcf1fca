// Pseudo-label curation with box-prompted slice proposals.
//
// The first self-training cycle refines a teacher mask slice by slice: a
// proposal replaces the teacher's slice when its confidence reaches
// tau_conf. Later cycles keep teacher labels as they are and decide per
// volume whether to train on them, from three statistics of the proposals:
// mean confidence, overlap ratio against the prompt boxes, and the number of
// 3D connected components of the stacked proposal masks.

#ifndef VOLADAPT_CURATION_HPP
#define VOLADAPT_CURATION_HPP

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "voladapt/metrics.hpp"
#include "voladapt/volume.hpp"

namespace voladapt {

struct SliceProposal {
  std::uint32_t slice_index = 0;
  SliceMask2D mask;
  double confidence = 0.0;
  BBox2D bbox;  // the prompt that produced this proposal
};

struct RefineConfig {
  double tau_conf = 0.7;
  void validate() const;
};

struct SelectConfig {
  double tau_conf = 0.7;
  double tau_overlap_lo = 0.4;
  double tau_overlap_hi = 0.7;
  std::uint32_t tau_cc = 10;
  Connectivity connectivity = Connectivity::k26;
  /// Count only proposal pixels inside the prompt box in the overlap numerator.
  bool clip_to_bbox = false;
  void validate() const;
};

enum class RejectReason { kNone, kConfidence, kOverlap, kComponents, kEmpty };
const char* to_string(RejectReason r);

struct CaseReport {
  std::string case_id;
  std::size_t slice_count = 0;  // |J_i|
  // Unset when the case had no prompted slices.
  std::optional<double> mean_conf;
  std::optional<double> overlap_ratio;
  std::optional<std::uint32_t> cc_count;
  bool conf_pass = false;
  bool overlap_pass = false;
  bool cc_pass = false;
  bool retained = false;
  /// First failing criterion in the order confidence, overlap, components.
  RejectReason reason = RejectReason::kEmpty;
};

struct CurationSummary {
  std::size_t retained = 0;
  std::size_t rejected_by_conf = 0;
  std::size_t rejected_by_overlap = 0;
  std::size_t rejected_by_cc = 0;
  std::size_t rejected_empty = 0;

  void add(const CaseReport& r);
  std::size_t total() const {
    return retained + rejected_by_conf + rejected_by_overlap + rejected_by_cc + rejected_empty;
  }
  friend bool operator==(const CurationSummary&, const CurationSummary&) = default;
};

/// Raised when a case has no prompted slices, so its statistics are undefined.
class EmptyCaseError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Tightest box around the slice foreground; nullopt for an empty slice.
std::optional<BBox2D> bbox_of_slice(const SliceMask2D& s);

/// Applies the confidence-gated replacement rule to every proposal slice.
/// Slices without a proposal are copied from `teacher` unchanged.
Mask3D refine_volume(const Mask3D& teacher, std::span<const SliceProposal> proposals,
                     const RefineConfig& cfg);

double mean_confidence(std::span<const SliceProposal> proposals);

/// Σ|s_j| / Σ|B_j| over the prompted slices.
double overlap_ratio(std::span<const SliceProposal> proposals, bool clip_to_bbox = false);

/// Components of the proposal masks placed at their slice positions.
std::uint32_t proposal_components(std::span<const SliceProposal> proposals,
                                  Connectivity connectivity);

/// Evaluates the retention predicate. Never throws for an empty case;
/// instead returns a rejected report with reason kEmpty.
CaseReport select_case(const std::string& case_id, std::span<const SliceProposal> proposals,
                       const SelectConfig& cfg);

/// Statistics computed once per case so that many threshold settings can
/// be evaluated without touching the masks again.
struct CaseStatistics {
  std::string case_id;
  std::size_t slice_count = 0;
  double mean_conf = 0.0;
  double overlap_ratio = 0.0;
  std::uint32_t cc_6 = 0;
  std::uint32_t cc_26 = 0;
};

std::optional<CaseStatistics> case_statistics(const std::string& case_id,
                                              std::span<const SliceProposal> proposals,
                                              bool clip_to_bbox = false);

/// The retention predicate over precomputed statistics; nullopt = empty case.
CaseReport judge_case(const std::string& case_id, const std::optional<CaseStatistics>& stats,
                      const SelectConfig& cfg);

std::string case_report_json(const CaseReport& r);
std::string summary_json(const CurationSummary& s);

/// Default threshold grids used for sweeps.
std::vector<double> default_tau_conf_grid();
std::vector<double> default_overlap_lo_grid();
std::vector<double> default_overlap_hi_grid();
std::vector<std::uint32_t> default_tau_cc_grid();

}  // namespace voladapt

#endif  // VOLADAPT_CURATION_HPP
