#include <algorithm>
#include <random>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "voladapt/curation.hpp"

using namespace voladapt;

namespace {

SliceMask2D rect(std::uint32_t h, std::uint32_t w, BBox2D b) {
  std::vector<std::uint8_t> data(static_cast<std::size_t>(h) * w, 0);
  for (std::uint32_t r = b.row_min; r <= b.row_max; ++r)
    for (std::uint32_t c = b.col_min; c <= b.col_max; ++c) data[r * w + c] = 1;
  return SliceMask2D(h, w, std::move(data));
}

SliceMask2D filled(std::uint32_t h, std::uint32_t w, std::uint8_t v) {
  return SliceMask2D(h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, v));
}

SliceProposal proposal(std::uint32_t j, SliceMask2D m, double conf, BBox2D box) {
  return SliceProposal{j, std::move(m), conf, box};
}

Mask3D stack(const std::vector<SliceMask2D>& s) { return stack_slices(s); }

}  // namespace

TEST_CASE("bbox_of_slice") {
  CHECK_FALSE(bbox_of_slice(SliceMask2D::empty(4, 5)).has_value());
  std::vector<std::uint8_t> d(20, 0);
  d[1 * 5 + 3] = 1;
  d[3 * 5 + 1] = 1;
  const auto b = bbox_of_slice(SliceMask2D(4, 5, d));
  REQUIRE(b.has_value());
  CHECK(*b == BBox2D{1, 3, 1, 3});
  CHECK(b->pixel_count() == 9);
}

TEST_CASE("refine_volume enumerates every per-slice branch") {
  // Four 3x3 slices. Teacher slice j holds value pattern T_j, proposal slice
  // holds P_j. For each slice independently pick one of: no proposal,
  // conf below tau, conf exactly tau, conf above tau.
  const double tau = 0.7;
  const std::uint32_t H = 3, W = 3;
  std::vector<SliceMask2D> teacher_slices, proposal_masks;
  for (std::uint32_t j = 0; j < 4; ++j) {
    teacher_slices.push_back(rect(H, W, BBox2D{0, j % 3, 0, 0}));
    proposal_masks.push_back(rect(H, W, BBox2D{1, 2, 1, 1 + (j % 2)}));
  }
  const Mask3D teacher = stack(teacher_slices);
  enum Branch { kNone, kBelow, kEqual, kAbove };
  const double conf_of[] = {0.0, 0.69, tau, 0.95};

  int cases = 0;
  for (int code = 0; code < 256; ++code) {
    std::vector<SliceProposal> props;
    std::vector<SliceMask2D> expected;
    for (std::uint32_t j = 0; j < 4; ++j) {
      const int b = (code >> (2 * j)) & 3;
      if (b != kNone) {
        props.push_back(proposal(j, proposal_masks[j], conf_of[b], BBox2D{1, 2, 1, 2}));
      }
      // Piecewise rule: proposal slice iff a proposal exists with c >= tau.
      expected.push_back(b == kEqual || b == kAbove ? proposal_masks[j] : teacher_slices[j]);
    }
    const Mask3D got = refine_volume(teacher, props, RefineConfig{tau});
    CHECK(got == stack(expected));
    ++cases;
  }
  CHECK(cases == 256);
}

TEST_CASE("refine_volume input validation") {
  const Mask3D teacher = Mask3D::empty({2, 3, 3});
  std::vector<SliceProposal> props{proposal(2, filled(3, 3, 1), 0.9, BBox2D{0, 2, 0, 2})};
  CHECK_THROWS_AS(refine_volume(teacher, props, RefineConfig{}), std::out_of_range);
  props = {proposal(0, filled(3, 3, 1), 0.9, BBox2D{0, 2, 0, 2}),
           proposal(0, filled(3, 3, 0), 0.9, BBox2D{0, 2, 0, 2})};
  CHECK_THROWS_AS(refine_volume(teacher, props, RefineConfig{}), std::invalid_argument);
  props = {proposal(0, filled(4, 3, 1), 0.9, BBox2D{0, 2, 0, 2})};
  CHECK_THROWS_AS(refine_volume(teacher, props, RefineConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(refine_volume(teacher, {}, RefineConfig{1.0}), std::invalid_argument);
  CHECK(refine_volume(teacher, {}, RefineConfig{}) == teacher);
}

TEST_CASE("case statistics") {
  // 3 fg pixels in a 6-pixel box and 1 in a 2-pixel box: (3+1)/(6+2).
  const std::uint32_t H = 4, W = 4;
  std::vector<SliceProposal> props{
      proposal(1, rect(H, W, BBox2D{0, 0, 0, 2}), 0.8, BBox2D{0, 1, 0, 2}),
      proposal(2, rect(H, W, BBox2D{3, 3, 3, 3}), 0.6, BBox2D{2, 3, 3, 3}),
  };
  CHECK(overlap_ratio(props) == 0.5);
  CHECK(mean_confidence(props) == doctest::Approx(0.7));

  std::vector<SliceProposal> uneven{
      proposal(0, rect(H, W, BBox2D{0, 0, 0, 0}), 0.5, BBox2D{0, 0, 0, 3}),  // 1/4
      proposal(1, rect(H, W, BBox2D{0, 1, 0, 3}), 0.5, BBox2D{0, 3, 0, 3}),  // 8/16
  };
  CHECK(overlap_ratio(uneven) == doctest::Approx(9.0 / 20.0));

  SUBCASE("clipping counts only pixels inside the box") {
    std::vector<SliceProposal> spill{
        proposal(0, filled(H, W, 1), 0.9, BBox2D{0, 1, 0, 1}),
    };
    CHECK(overlap_ratio(spill) == 4.0);
    CHECK(overlap_ratio(spill, true) == 1.0);
  }
  SUBCASE("mean confidence matches a compensated sum") {
    std::mt19937_64 rng(71);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<SliceProposal> many;
    for (std::uint32_t j = 0; j < 500; ++j) {
      many.push_back(proposal(j, SliceMask2D::empty(2, 2), u(rng), BBox2D{0, 1, 0, 1}));
    }
    double sum = 0.0, comp = 0.0;
    for (const auto& p : many) {
      const double y = p.confidence - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    CHECK(std::abs(mean_confidence(many) - sum / 500.0) < 1e-12);
  }
  SUBCASE("components use true slice positions") {
    // Single pixels at the same (r, c) on slices 0 and 1 touch; on 0 and 2
    // they are separated by an unprompted slice.
    const BBox2D box{0, 0, 0, 0};
    std::vector<SliceProposal> adjacent{proposal(0, rect(2, 2, box), 1, box),
                                        proposal(1, rect(2, 2, box), 1, box)};
    std::vector<SliceProposal> gap{proposal(0, rect(2, 2, box), 1, box),
                                   proposal(2, rect(2, 2, box), 1, box)};
    CHECK(proposal_components(adjacent, Connectivity::k6) == 1);
    CHECK(proposal_components(gap, Connectivity::k6) == 2);
    CHECK(proposal_components(gap, Connectivity::k26) == 2);
  }
  SUBCASE("components agree with flood fill on the stacked masks") {
    std::mt19937_64 rng(73);
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<SliceProposal> ps;
      std::vector<std::uint8_t> volume;
      for (std::uint32_t j = 0; j < 6; ++j) {
        auto bits = oracle::random_bits(rng, 36, 0.3);
        volume.insert(volume.end(), bits.begin(), bits.end());
        ps.push_back(proposal(j, SliceMask2D(6, 6, bits), 0.5, BBox2D{0, 5, 0, 5}));
      }
      for (int conn : {6, 26}) {
        CHECK(static_cast<int>(proposal_components(ps, connectivity_from_int(conn))) ==
              oracle::FloodFill(volume, 6, 6, 6, conn).count());
      }
    }
  }
  SUBCASE("empty cases") {
    CHECK_THROWS_AS(mean_confidence({}), EmptyCaseError);
    CHECK_THROWS_AS(overlap_ratio({}), EmptyCaseError);
    CHECK_THROWS_AS(proposal_components({}, Connectivity::k26), EmptyCaseError);
    CHECK_FALSE(case_statistics("x", {}).has_value());
  }
}

TEST_CASE("selection truth table") {
  SelectConfig cfg;
  cfg.tau_conf = 0.7;
  cfg.tau_overlap_lo = 0.4;
  cfg.tau_overlap_hi = 0.7;
  cfg.tau_cc = 10;

  CurationSummary summary;
  for (int code = 0; code < 8; ++code) {
    const bool conf_ok = code & 1, overlap_ok = code & 2, cc_ok = code & 4;
    CaseStatistics s;
    s.slice_count = 3;
    s.mean_conf = conf_ok ? 0.8 : 0.6;
    s.overlap_ratio = overlap_ok ? 0.5 : 0.9;
    s.cc_26 = s.cc_6 = cc_ok ? 2 : 11;
    const CaseReport r = judge_case("c" + std::to_string(code), s, cfg);
    CHECK(r.conf_pass == conf_ok);
    CHECK(r.overlap_pass == overlap_ok);
    CHECK(r.cc_pass == cc_ok);
    CHECK(r.retained == (code == 7));
    const RejectReason want = code == 7   ? RejectReason::kNone
                              : !conf_ok  ? RejectReason::kConfidence
                              : !overlap_ok ? RejectReason::kOverlap
                                            : RejectReason::kComponents;
    CHECK(r.reason == want);
    summary.add(r);
  }
  summary.add(judge_case("empty", std::nullopt, cfg));
  CHECK(summary.retained == 1);
  CHECK(summary.rejected_by_conf == 4);
  CHECK(summary.rejected_by_overlap == 2);
  CHECK(summary.rejected_by_cc == 1);
  CHECK(summary.rejected_empty == 1);
  CHECK(summary.total() == 9);
}

TEST_CASE("selection boundaries are inclusive") {
  SelectConfig cfg;
  CaseStatistics s;
  s.slice_count = 1;
  s.mean_conf = cfg.tau_conf;
  s.overlap_ratio = cfg.tau_overlap_lo;
  s.cc_6 = s.cc_26 = cfg.tau_cc;
  CHECK(judge_case("a", s, cfg).retained);
  s.overlap_ratio = cfg.tau_overlap_hi;
  CHECK(judge_case("a", s, cfg).retained);
  s.cc_26 = cfg.tau_cc + 1;
  CHECK_FALSE(judge_case("a", s, cfg).retained);
  cfg.connectivity = Connectivity::k6;
  CHECK(judge_case("a", s, cfg).retained);
}

TEST_CASE("tightening thresholds never admits a rejected case") {
  std::mt19937_64 rng(79);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CaseStatistics> cases;
  for (int i = 0; i < 60; ++i) {
    CaseStatistics s;
    s.slice_count = 5;
    s.mean_conf = u(rng);
    s.overlap_ratio = u(rng);
    s.cc_6 = s.cc_26 = 1 + static_cast<std::uint32_t>(30 * u(rng));
    cases.push_back(s);
  }
  for (int trial = 0; trial < 100; ++trial) {
    SelectConfig loose;
    loose.tau_conf = 0.5 * u(rng);
    loose.tau_overlap_lo = 0.3 * u(rng);
    loose.tau_overlap_hi = 0.7 + 0.3 * u(rng);
    loose.tau_cc = 10 + static_cast<std::uint32_t>(20 * u(rng));
    SelectConfig tight = loose;
    tight.tau_conf += 0.4 * u(rng);
    tight.tau_overlap_lo += 0.15 * u(rng);
    tight.tau_overlap_hi -= 0.15 * u(rng);
    tight.tau_cc -= static_cast<std::uint32_t>(9 * u(rng));
    REQUIRE_NOTHROW(tight.validate());
    for (const auto& s : cases) {
      if (judge_case("x", s, tight).retained) CHECK(judge_case("x", s, loose).retained);
    }
  }
}

TEST_CASE("select_case end to end and JSON") {
  const BBox2D box{0, 3, 0, 3};
  std::vector<SliceProposal> props{proposal(0, rect(4, 4, BBox2D{0, 2, 0, 2}), 0.9, box),
                                   proposal(1, rect(4, 4, BBox2D{0, 2, 0, 2}), 0.8, box)};
  SelectConfig cfg;
  cfg.tau_overlap_hi = 0.8;
  const CaseReport r = select_case("case_7", props, cfg);
  CHECK(r.retained);
  CHECK(*r.overlap_ratio == doctest::Approx(18.0 / 32.0));
  CHECK(*r.cc_count == 1);

  const auto j = nlohmann::json::parse(case_report_json(r));
  CHECK(j["case"] == "case_7");
  CHECK(j["reason"] == "retained");
  CHECK(j["slices"] == 2);

  const CaseReport e = select_case("none", {}, cfg);
  CHECK_FALSE(e.retained);
  CHECK(e.reason == RejectReason::kEmpty);
  CHECK(nlohmann::json::parse(case_report_json(e))["mean_conf"].is_null());

  CurationSummary s;
  s.add(r);
  s.add(e);
  const auto sj = nlohmann::json::parse(summary_json(s));
  CHECK(sj["retained"] == 1);
  CHECK(sj["rejected_empty"] == 1);

  SelectConfig bad;
  bad.tau_overlap_lo = 0.8;
  bad.tau_overlap_hi = 0.8;
  CHECK_THROWS_AS(select_case("x", props, bad), std::invalid_argument);
}

TEST_CASE("default grids") {
  std::size_t valid = 0;
  for (double lo : default_overlap_lo_grid())
    for (double hi : default_overlap_hi_grid()) valid += lo < hi;
  CHECK(default_tau_conf_grid().size() * valid * default_tau_cc_grid().size() == 315);
}

TEST_CASE("spec-style examples") {
  std::vector<std::uint8_t> d(6 * 8, 0);
  d[3 * 8 + 5] = 1;
  const auto one = bbox_of_slice(SliceMask2D(6, 8, d));
  CHECK(*one == BBox2D{3, 3, 5, 5});
  CHECK(one->pixel_count() == 1);

  std::mt19937_64 rng(83);
  for (int trial = 0; trial < 50; ++trial) {
    const auto bits = oracle::random_bits(rng, 9 * 11, 0.04);
    const SliceMask2D s(9, 11, bits);
    std::uint32_t r0 = 99, r1 = 0, c0 = 99, c1 = 0;
    for (std::uint32_t r = 0; r < 9; ++r)
      for (std::uint32_t c = 0; c < 11; ++c)
        if (bits[r * 11 + c]) r0 = std::min(r0, r), r1 = std::max(r1, r), c0 = std::min(c0, c), c1 = std::max(c1, c);
    const auto b = bbox_of_slice(s);
    if (r0 == 99) {
      CHECK_FALSE(b.has_value());
    } else {
      CHECK(*b == BBox2D{r0, r1, c0, c1});
    }
  }

  // D = 4, confidences 0.9 and 0.4 at slices 1 and 2, tau 0.5.
  const Mask3D y0 = Mask3D({4, 2, 2}, std::vector<std::uint8_t>(16, 1));
  const BBox2D box{0, 1, 0, 1};
  std::vector<SliceProposal> props{proposal(1, filled(2, 2, 0), 0.9, box),
                                   proposal(2, filled(2, 2, 0), 0.4, box)};
  const Mask3D y1 = refine_volume(y0, props, RefineConfig{0.5});
  for (std::uint32_t j = 0; j < 4; ++j) {
    CHECK(extract_slice(y1, j) == (j == 1 ? filled(2, 2, 0) : filled(2, 2, 1)));
  }

  CHECK(mean_confidence(std::vector<SliceProposal>{proposal(0, filled(2, 2, 0), 0.55, box)}) ==
        0.55);
}

TEST_CASE("overlap ratio is invariant under slice permutation and joint translation") {
  std::mt19937_64 rng(89);
  std::uniform_int_distribution<std::uint32_t> pick(0, 5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<SliceProposal> ps, shifted;
    for (std::uint32_t j = 0; j < 5; ++j) {
      const std::uint32_t r0 = pick(rng), c0 = pick(rng);
      const BBox2D box{r0, r0 + pick(rng) % 3, c0, c0 + pick(rng) % 3};
      const BBox2D fg{box.row_min, box.row_min + pick(rng) % (box.row_max - box.row_min + 1),
                      box.col_min, box.col_max};
      ps.push_back(proposal(j, rect(12, 12, fg), 0.5, box));
      const BBox2D box2{box.row_min + 3, box.row_max + 3, box.col_min + 4, box.col_max + 4};
      const BBox2D fg2{fg.row_min + 3, fg.row_max + 3, fg.col_min + 4, fg.col_max + 4};
      shifted.push_back(proposal(j, rect(12, 12, fg2), 0.5, box2));
    }
    const double o = overlap_ratio(ps);
    CHECK(overlap_ratio(shifted) == o);
    std::vector<SliceProposal> permuted(ps.rbegin(), ps.rend());
    CHECK(overlap_ratio(permuted) == o);
  }
}
