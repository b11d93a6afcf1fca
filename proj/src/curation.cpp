#include "voladapt/curation.hpp"

#include <algorithm>
#include <numeric>

#include "json.hpp"

namespace voladapt {

void RefineConfig::validate() const {
  if (!(tau_conf > 0.0 && tau_conf < 1.0)) {
    throw std::invalid_argument("refine tau_conf must lie in (0, 1)");
  }
}

void SelectConfig::validate() const {
  if (!(tau_conf >= 0.0 && tau_conf <= 1.0)) {
    throw std::invalid_argument("select tau_conf must lie in [0, 1]");
  }
  if (!(tau_overlap_lo >= 0.0 && tau_overlap_lo < tau_overlap_hi && tau_overlap_hi <= 1.0)) {
    throw std::invalid_argument("overlap bounds need 0 <= lo < hi <= 1");
  }
  if (tau_cc < 1) throw std::invalid_argument("tau_cc must be >= 1");
}

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::kNone: return "retained";
    case RejectReason::kConfidence: return "confidence";
    case RejectReason::kOverlap: return "overlap";
    case RejectReason::kComponents: return "components";
    case RejectReason::kEmpty: return "empty";
  }
  return "unknown";
}

void CurationSummary::add(const CaseReport& r) {
  switch (r.reason) {
    case RejectReason::kNone: ++retained; break;
    case RejectReason::kConfidence: ++rejected_by_conf; break;
    case RejectReason::kOverlap: ++rejected_by_overlap; break;
    case RejectReason::kComponents: ++rejected_by_cc; break;
    case RejectReason::kEmpty: ++rejected_empty; break;
  }
}

std::optional<BBox2D> bbox_of_slice(const SliceMask2D& s) {
  std::optional<BBox2D> box;
  for (std::uint32_t r = 0; r < s.height(); ++r) {
    for (std::uint32_t c = 0; c < s.width(); ++c) {
      if (!s.at(r, c)) continue;
      if (!box) {
        box = BBox2D{r, r, c, c};
        continue;
      }
      box->row_min = std::min(box->row_min, r);
      box->row_max = std::max(box->row_max, r);
      box->col_min = std::min(box->col_min, c);
      box->col_max = std::max(box->col_max, c);
    }
  }
  return box;
}

namespace {

// Sorted by slice index; rejects duplicates and inconsistent slice dims.
std::vector<const SliceProposal*> ordered(std::span<const SliceProposal> proposals) {
  std::vector<const SliceProposal*> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) out.push_back(&p);
  std::sort(out.begin(), out.end(),
            [](const SliceProposal* a, const SliceProposal* b) { return a->slice_index < b->slice_index; });
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i > 0 && out[i]->slice_index == out[i - 1]->slice_index) {
      throw std::invalid_argument("duplicate proposal for slice " +
                                  std::to_string(out[i]->slice_index));
    }
    if (out[i]->mask.height() != out[0]->mask.height() ||
        out[i]->mask.width() != out[0]->mask.width()) {
      throw std::invalid_argument("proposal masks have inconsistent dims");
    }
    out[i]->bbox.validate(out[i]->mask.height(), out[i]->mask.width());
    if (!(out[i]->confidence >= 0.0 && out[i]->confidence <= 1.0)) {
      throw std::invalid_argument("proposal confidence outside [0, 1]");
    }
  }
  return out;
}

std::size_t foreground_in(const SliceProposal& p, bool clip) {
  if (!clip) return p.mask.foreground_count();
  std::size_t n = 0;
  for (std::uint32_t r = p.bbox.row_min; r <= p.bbox.row_max; ++r) {
    for (std::uint32_t c = p.bbox.col_min; c <= p.bbox.col_max; ++c) n += p.mask.at(r, c);
  }
  return n;
}

}  // namespace

Mask3D refine_volume(const Mask3D& teacher, std::span<const SliceProposal> proposals,
                     const RefineConfig& cfg) {
  cfg.validate();
  const Dims3 dims = teacher.dims();
  const auto sorted = ordered(proposals);
  std::vector<std::uint8_t> data(teacher.data().begin(), teacher.data().end());
  const std::size_t plane = static_cast<std::size_t>(dims.h) * dims.w;
  for (const SliceProposal* p : sorted) {
    if (p->slice_index >= dims.d) {
      throw std::out_of_range("proposal slice " + std::to_string(p->slice_index) +
                              " beyond depth " + std::to_string(dims.d));
    }
    if (p->mask.height() != dims.h || p->mask.width() != dims.w) {
      throw std::invalid_argument("proposal mask dims do not match teacher slices");
    }
    if (p->confidence >= cfg.tau_conf) {
      std::copy(p->mask.data().begin(), p->mask.data().end(),
                data.begin() + static_cast<std::ptrdiff_t>(p->slice_index * plane));
    }
  }
  return Mask3D(dims, std::move(data), teacher.spacing());
}

double mean_confidence(std::span<const SliceProposal> proposals) {
  if (proposals.empty()) throw EmptyCaseError("mean confidence undefined without prompted slices");
  const auto sorted = ordered(proposals);
  double sum = 0.0;
  for (const SliceProposal* p : sorted) sum += p->confidence;
  return sum / static_cast<double>(sorted.size());
}

double overlap_ratio(std::span<const SliceProposal> proposals, bool clip_to_bbox) {
  if (proposals.empty()) throw EmptyCaseError("overlap ratio undefined without prompted slices");
  const auto sorted = ordered(proposals);
  std::size_t fg = 0, box = 0;
  for (const SliceProposal* p : sorted) {
    fg += foreground_in(*p, clip_to_bbox);
    box += p->bbox.pixel_count();
  }
  return static_cast<double>(fg) / static_cast<double>(box);
}

std::uint32_t proposal_components(std::span<const SliceProposal> proposals,
                                  Connectivity connectivity) {
  if (proposals.empty()) throw EmptyCaseError("component count undefined without prompted slices");
  const auto sorted = ordered(proposals);
  const std::uint32_t depth = sorted.back()->slice_index + 1;
  const std::uint32_t h = sorted.front()->mask.height();
  const std::uint32_t w = sorted.front()->mask.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<std::uint8_t> data(depth * plane, 0);
  for (const SliceProposal* p : sorted) {
    std::copy(p->mask.data().begin(), p->mask.data().end(),
              data.begin() + static_cast<std::ptrdiff_t>(p->slice_index * plane));
  }
  return label_components(Mask3D({depth, h, w}, std::move(data)), connectivity).count;
}

std::optional<CaseStatistics> case_statistics(const std::string& case_id,
                                              std::span<const SliceProposal> proposals,
                                              bool clip_to_bbox) {
  if (proposals.empty()) return std::nullopt;
  CaseStatistics s;
  s.case_id = case_id;
  s.slice_count = proposals.size();
  s.mean_conf = mean_confidence(proposals);
  s.overlap_ratio = overlap_ratio(proposals, clip_to_bbox);
  s.cc_6 = proposal_components(proposals, Connectivity::k6);
  s.cc_26 = proposal_components(proposals, Connectivity::k26);
  return s;
}

CaseReport judge_case(const std::string& case_id, const std::optional<CaseStatistics>& stats,
                      const SelectConfig& cfg) {
  CaseReport r;
  r.case_id = case_id;
  if (!stats) {
    r.reason = RejectReason::kEmpty;
    return r;
  }
  r.slice_count = stats->slice_count;
  r.mean_conf = stats->mean_conf;
  r.overlap_ratio = stats->overlap_ratio;
  r.cc_count = cfg.connectivity == Connectivity::k6 ? stats->cc_6 : stats->cc_26;
  r.conf_pass = *r.mean_conf >= cfg.tau_conf;
  r.overlap_pass = *r.overlap_ratio >= cfg.tau_overlap_lo && *r.overlap_ratio <= cfg.tau_overlap_hi;
  r.cc_pass = *r.cc_count <= cfg.tau_cc;
  r.retained = r.conf_pass && r.overlap_pass && r.cc_pass;
  if (r.retained) {
    r.reason = RejectReason::kNone;
  } else if (!r.conf_pass) {
    r.reason = RejectReason::kConfidence;
  } else if (!r.overlap_pass) {
    r.reason = RejectReason::kOverlap;
  } else {
    r.reason = RejectReason::kComponents;
  }
  return r;
}

CaseReport select_case(const std::string& case_id, std::span<const SliceProposal> proposals,
                       const SelectConfig& cfg) {
  cfg.validate();
  return judge_case(case_id, case_statistics(case_id, proposals, cfg.clip_to_bbox), cfg);
}

std::string case_report_json(const CaseReport& r) {
  nlohmann::ordered_json j;
  j["case"] = r.case_id;
  j["slices"] = r.slice_count;
  j["mean_conf"] = r.mean_conf ? nlohmann::ordered_json(*r.mean_conf) : nullptr;
  j["overlap_ratio"] = r.overlap_ratio ? nlohmann::ordered_json(*r.overlap_ratio) : nullptr;
  j["cc_count"] = r.cc_count ? nlohmann::ordered_json(*r.cc_count) : nullptr;
  j["conf_pass"] = r.conf_pass;
  j["overlap_pass"] = r.overlap_pass;
  j["cc_pass"] = r.cc_pass;
  j["retained"] = r.retained;
  j["reason"] = to_string(r.reason);
  return j.dump();
}

std::string summary_json(const CurationSummary& s) {
  nlohmann::ordered_json j;
  j["summary"] = true;
  j["retained"] = s.retained;
  j["rejected_by_conf"] = s.rejected_by_conf;
  j["rejected_by_overlap"] = s.rejected_by_overlap;
  j["rejected_by_cc"] = s.rejected_by_cc;
  j["rejected_empty"] = s.rejected_empty;
  return j.dump();
}

std::vector<double> default_tau_conf_grid() { return {0.5, 0.6, 0.7, 0.8, 0.9}; }
std::vector<double> default_overlap_lo_grid() { return {0.3, 0.4, 0.5}; }
std::vector<double> default_overlap_hi_grid() { return {0.6, 0.7, 0.8}; }
std::vector<std::uint32_t> default_tau_cc_grid() { return {1, 3, 5, 10, 20, 30, 50}; }

}  // namespace voladapt
