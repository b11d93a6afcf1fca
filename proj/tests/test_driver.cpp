#include <cstdlib>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "voladapt/codec.hpp"
#include "voladapt/curation.hpp"
#include "voladapt/driver.hpp"
#include "voladapt/fourier.hpp"
#include "voladapt/schedule.hpp"
#include "voladapt/synth.hpp"

using namespace voladapt;
using json = nlohmann::json;

namespace {

struct Fixture {
  TempDir dir;
  SynthLayout lay;
  RunConfig cfg;

  explicit Fixture(std::uint32_t cycles = 3, std::size_t targets = 8, std::size_t oracle = 4,
                   std::uint64_t seed = 11) {
    SynthOptions o;
    o.seed = seed;
    o.targets = targets;
    o.oracle = oracle;
    o.sources = 3;
    o.cycles = cycles;
    lay = write_synthetic_dataset(dir.path(), o, MOCK_PROPOSER_PATH);
    cfg = load_run_config(lay.config);
  }

  fs::path out() const { return cfg.resolve(cfg.out_dir); }
  json manifest(std::uint32_t t) const {
    return json::parse(read_text(out() / ("cycle_" + std::to_string(t)) / "manifest.json"));
  }
};

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> out;
  std::istringstream in(read_text(p));
  std::string line;
  while (std::getline(in, line)) out.push_back(json::parse(line));
  return out;
}

std::vector<float> pvec_values(const fs::path& p) {
  const ParamVector v = load_pvec(p);
  return {v.values().begin(), v.values().end()};
}

}  // namespace

TEST_CASE("pairing is seeded, ordered by source id, and reproducible") {
  const std::vector<std::string> targets{"t0", "t1"};
  const auto a = draw_pairing({"s2", "s0", "s1"}, targets, 42);
  const auto b = draw_pairing({"s0", "s1", "s2"}, targets, 42);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a[i].source == "s" + std::to_string(i));
    CHECK(a[i].source == b[i].source);
    CHECK(a[i].target == b[i].target);
  }
  // With many sources both targets get used, and another seed changes the draw.
  std::vector<std::string> many;
  for (int i = 0; i < 64; ++i) many.push_back("s" + std::to_string(100 + i));
  const auto x = draw_pairing(many, targets, 42);
  const auto y = draw_pairing(many, targets, 43);
  std::set<std::string> used;
  bool differs = false;
  for (std::size_t i = 0; i < x.size(); ++i) {
    used.insert(x[i].target);
    differs |= x[i].target != y[i].target;
  }
  CHECK(used.size() == 2);
  CHECK(differs);
}

TEST_CASE("single target pairs every source with it; no target is an error") {
  for (const auto& p : draw_pairing({"a", "b", "c", "d"}, {"only"}, 5)) CHECK(p.target == "only");
  CHECK_THROWS_AS(draw_pairing({"a"}, {}, 5), DriverError);
}

TEST_CASE("phase 1 with 3 sources and 2 targets is reproducible across runs") {
  Fixture f;
  TempDir scratch;
  // Two targets only.
  const fs::path tdir = scratch / "targets";
  fs::create_directories(tdir);
  for (const char* id : {"case_00", "case_01"}) {
    fs::copy_file(f.dir / ("target/images/" + std::string(id) + ".vol"), tdir / (std::string(id) + ".vol"));
  }
  RunConfig c = f.cfg;
  c.seed = 42;
  c.target_images = tdir;
  c.out_dir = scratch / "o1";
  phase1_prepare(c);
  c.out_dir = scratch / "o2";
  const Phase1Result r = phase1_prepare(c);
  CHECK(tree_bytes(scratch / "o1") == tree_bytes(scratch / "o2"));
  REQUIRE(r.epochs.size() == 1);
  CHECK(r.epochs[0].size() == 3);

  const json pairing = json::parse(read_text(scratch / "o1" / "pairing.json"));
  const auto pairs = pairing["epochs"][0]["pairs"];
  REQUIRE(pairs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(pairs[i]["source"] == r.epochs[0][i].source);
    CHECK(pairs[i]["target"] == r.epochs[0][i].target);
  }
}

TEST_CASE("phase 1 output differs from its source only inside the low-frequency cube") {
  Fixture f;
  f.cfg.fda_L = 0.04;  // b = floor(0.04 * 32) = 1
  phase1_prepare(f.cfg);
  const json pairing = json::parse(read_text(f.out() / "pairing.json"));
  for (const auto& p : pairing["epochs"][0]["pairs"]) {
    CHECK(p["half_width"] == 1);
    const std::string id = p["source"];
    const Volume3D src = load_volume(f.out() / "phase1/original" / (id + ".vol"));
    const Volume3D out = load_volume(f.out() / "phase1/images" / (id + ".vol"));
    const std::size_t n = 32;
    const auto fs_ = oracle::separable_dft3({src.data().begin(), src.data().end()}, n, n, n);
    const auto fo = oracle::separable_dft3({out.data().begin(), out.data().end()}, n, n, n);
    double peak = 0.0;
    for (const auto& v : fs_) peak = std::max(peak, std::abs(v));
    double worst_outside = 0.0, worst_inside = 0.0;
    for (std::size_t kd = 0; kd < n; ++kd)
      for (std::size_t kh = 0; kh < n; ++kh)
        for (std::size_t kw = 0; kw < n; ++kw) {
          const std::size_t i = (kd * n + kh) * n + kw;
          const auto dist = [&](std::size_t k) {
            return std::abs(static_cast<long>(oracle::centered_index(k, n)) - static_cast<long>(n / 2));
          };
          const bool inside = dist(kd) <= 1 && dist(kh) <= 1 && dist(kw) <= 1;
          const double diff = std::abs(std::abs(fs_[i]) - std::abs(fo[i]));
          (inside ? worst_inside : worst_outside) = std::max(inside ? worst_inside : worst_outside, diff);
        }
    CHECK(worst_outside <= 1e-5 * peak);
    CHECK(worst_inside > 1e-3 * peak);
  }
}

TEST_CASE("oracle proposer: cycle 1 labels equal GT on prompted slices; later cycles keep every oracle case") {
  Fixture f;
  const RunResult r = run_cycles(f.cfg);
  CHECK(r.completed == 3);
  REQUIRE(r.cycles.size() == 3);

  for (const auto& id : f.lay.oracle_cases) {
    const Mask3D label = load_mask(f.out() / "cycle_1/labels" / (id + ".vol"));
    const Mask3D gt = load_mask(f.dir / "target/labels" / (id + ".vol"));
    const Mask3D teacher = load_mask(f.dir / "predictions" / (id + ".vol"));
    std::size_t prompted = 0;
    for (std::uint32_t j = 0; j < gt.dims().d; ++j) {
      if (extract_slice(teacher, j).foreground_count() == 0) continue;
      ++prompted;
      CHECK(extract_slice(label, j) == extract_slice(gt, j));
    }
    CHECK(prompted > 0);
  }
  for (std::uint32_t t = 2; t <= 3; ++t) {
    const auto recs = jsonl(f.out() / ("cycle_" + std::to_string(t)) / "curation.jsonl");
    REQUIRE(recs.size() == 9);
    std::set<std::string> retained;
    for (const auto& rec : recs) {
      if (!rec.contains("summary") && rec["retained"].get<bool>()) retained.insert(rec["case"]);
    }
    for (const auto& id : f.lay.oracle_cases) CHECK(retained.count(id) == 1);
    CHECK(recs.back()["summary"] == true);
    CHECK(r.cycles[t - 1].summary.total() == 8);
  }
}

TEST_CASE("manifests: sources plus curated targets, checksummed, with cycle-consistent origins") {
  Fixture f;
  run_cycles(f.cfg);
  for (std::uint32_t t = 1; t <= 3; ++t) {
    CHECK(verify_manifest(f.out(), t).empty());
    const json m = f.manifest(t);
    CHECK(m["cycle"] == t);
    std::size_t sources = 0;
    std::set<std::string> targets;
    for (const auto& e : m["entries"]) {
      CHECK(fs::exists(f.out() / e["image"].get<std::string>()));
      CHECK(fs::exists(f.out() / e["label"].get<std::string>()));
      CHECK(m["checksums"].contains(e["label"].get<std::string>()));
      if (e["origin"] == "source") {
        ++sources;
        CHECK(e["image"].get<std::string>().rfind("phase1/images/", 0) == 0);
      } else {
        CHECK(e["origin"] == (t == 1 ? "target-refined" : "target-selected"));
        targets.insert(fs::path(e["label"].get<std::string>()).stem().string());
      }
    }
    CHECK(sources == 3);
    if (t == 1) {
      CHECK(targets.size() == 8);
    } else {
      std::set<std::string> retained;
      for (const auto& rec : jsonl(f.out() / ("cycle_" + std::to_string(t)) / "curation.jsonl")) {
        if (!rec.contains("summary") && rec["retained"].get<bool>()) retained.insert(rec["case"]);
      }
      CHECK(targets == retained);
      CHECK(m["curation"]["retained"] == retained.size());
    }
  }
}

TEST_CASE("rerun with the same seed is byte-identical, at any worker count") {
  Fixture f;
  run_cycles(f.cfg);
  RunConfig c = f.cfg;
  c.out_dir = f.dir / "out_again";
  c.workers = 1;
  run_cycles(c);
  const auto a = tree_bytes(f.out());
  const auto b = tree_bytes(c.out_dir);
  CHECK(a.size() == b.size());
  CHECK(a == b);
}

TEST_CASE("kill after cycle 2 and resume matches the uninterrupted run") {
  Fixture f;
  run_cycles(f.cfg);
  RunConfig c = f.cfg;
  c.out_dir = f.dir / "out_resumed";
  RunOptions stop;
  stop.stop_after = 2;
  const RunResult first = run_cycles(c, stop);
  CHECK(first.completed == 2);
  CHECK_FALSE(fs::exists(c.out_dir / "cycle_3"));
  // Leftovers of an interrupted third cycle are discarded on resume.
  fs::create_directories(c.out_dir / "cycle_3.tmp" / "labels");
  fs::create_directories(c.out_dir / "cycle_3");
  RunOptions resume;
  resume.resume = true;
  const RunResult second = run_cycles(c, resume);
  CHECK(second.cycles.size() == 1);
  CHECK(second.completed == 3);
  CHECK(tree_bytes(f.out()) == tree_bytes(c.out_dir));
}

TEST_CASE("N = 1 runs refinement only") {
  Fixture f(1);
  const RunResult r = run_cycles(f.cfg);
  CHECK(r.completed == 1);
  CHECK(fs::exists(f.out() / "cycle_1/manifest.json"));
  CHECK_FALSE(fs::exists(f.out() / "cycle_2"));
  CHECK(f.manifest(1)["phase"] == "refine");
  CHECK(r.cycles[0].refined == 8);
}

TEST_CASE("checksums catch post-hoc mutation and resume refuses") {
  Fixture f;
  RunOptions stop;
  stop.stop_after = 2;
  run_cycles(f.cfg, stop);
  CHECK(verify_manifest(f.out(), 2).empty());

  const fs::path label = f.out() / "cycle_1/labels" / (f.lay.oracle_cases[0] + ".vol");
  auto bytes = read_bytes(label);
  bytes.back() ^= 1;
  {
    std::ofstream o(label, std::ios::binary);
    o.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const auto problems = verify_manifest(f.out(), 1);
  REQUIRE(problems.size() == 1);
  CHECK(problems[0].find("checksum mismatch") != std::string::npos);

  RunOptions resume;
  resume.resume = true;
  CHECK_THROWS_WITH_AS(run_cycles(f.cfg, resume), doctest::Contains("refusing to resume"), DriverError);
  bytes.back() ^= 1;
  {
    std::ofstream o(label, std::ios::binary);
    o.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  fs::remove(f.out() / "phase1/targets" / "case_00.vol");
  CHECK_THROWS_AS(run_cycles(f.cfg, resume), DriverError);
}

TEST_CASE("resume guards: changed config, missing state, occupied output") {
  Fixture f;
  RunOptions stop;
  stop.stop_after = 1;
  run_cycles(f.cfg, stop);
  CHECK_THROWS_WITH_AS(run_cycles(f.cfg), doctest::Contains("already holds a run"), DriverError);
  RunConfig changed = f.cfg;
  changed.select.tau_cc = 3;
  RunOptions resume;
  resume.resume = true;
  CHECK_THROWS_WITH_AS(run_cycles(changed, resume), doctest::Contains("configuration differs"), DriverError);
  RunConfig fresh = f.cfg;
  fresh.out_dir = f.dir / "never_ran";
  CHECK_THROWS_WITH_AS(run_cycles(fresh, resume), doctest::Contains("nothing to resume"), DriverError);
}

TEST_CASE("proposer failure aborts the cycle and keeps state; resume then completes") {
  Fixture f;
  run_cycles(f.cfg);
  RunConfig c = f.cfg;
  c.out_dir = f.dir / "out_flaky";
  const fs::path flag = f.dir / "proposer_down";
  c.proposer_command = "if [ -e '" + flag.string() + "' ]; then exit 1; fi; exec " + f.cfg.proposer_command;
  RunConfig baseline = c;
  baseline.out_dir = f.dir / "out_flaky_baseline";
  run_cycles(baseline);

  RunOptions stop;
  stop.stop_after = 1;
  run_cycles(c, stop);
  write_text(flag, "");
  RunOptions resume;
  resume.resume = true;
  CHECK_THROWS_WITH_AS(run_cycles(c, resume), doctest::Contains("proposer failed"), DriverError);
  const json state = json::parse(read_text(c.out_dir / "state.json"));
  CHECK(state["completed_cycles"] == 1);
  CHECK_FALSE(fs::exists(c.out_dir / "cycle_2"));
  fs::remove(flag);
  CHECK(run_cycles(c, resume).completed == 3);
  CHECK(tree_bytes(baseline.out_dir) == tree_bytes(c.out_dir));
}

TEST_CASE("proposer error records abort the cycle") {
  Fixture f;
  f.cfg.proposer_command += " --fault error-every --fault-after 5";
  CHECK_THROWS_WITH_AS(run_cycles(f.cfg), doctest::Contains("proposer error for case"), DriverError);
  CHECK_FALSE(fs::exists(f.out() / "cycle_1"));
}

TEST_CASE("trainer mode: EMA teacher per cycle, predictions feed the next cycle") {
  Fixture f;
  // Fixture predictions for cycle 2 onwards are the ground truth itself.
  const fs::path fixtures = f.dir / "fixtures";
  fs::create_directories(fixtures);
  for (const auto& e : fs::directory_iterator(f.dir / "target/labels")) {
    fs::copy_file(e.path(), fixtures / e.path().filename());
  }
  f.cfg.trainer_command = std::string("'") + MOCK_TRAINER_PATH + "' --fixtures '" + fixtures.string() + "'";
  f.cfg.ema_alpha = 0.75;
  run_cycles(f.cfg);

  // No initial teacher: the first student becomes the teacher.
  const auto t1 = pvec_values(f.out() / "cycle_1/teacher.pvec");
  CHECK(t1 == pvec_values(f.out() / "cycle_1/trainer/student.pvec"));
  for (std::uint32_t t = 2; t <= 3; ++t) {
    const auto prev = pvec_values(f.out() / ("cycle_" + std::to_string(t - 1)) / "teacher.pvec");
    const auto s = pvec_values(f.out() / ("cycle_" + std::to_string(t)) / "trainer/student.pvec");
    const auto got = pvec_values(f.out() / ("cycle_" + std::to_string(t)) / "teacher.pvec");
    REQUIRE(got.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double want = 0.75 * prev[i] + 0.25 * s[i];
      CHECK(std::abs(got[i] - want) <= 1e-6);
    }
  }
  // Cycle 2 used the trainer's predictions (ground truth), so its labels are exact.
  const json m2 = f.manifest(2);
  for (const auto& e : m2["entries"]) {
    if (e["origin"] == "source") continue;
    const std::string id = fs::path(e["label"].get<std::string>()).stem().string();
    CHECK(load_mask(f.out() / e["label"].get<std::string>()) == load_mask(f.dir / "target/labels" / (id + ".vol")));
  }
  const json state = json::parse(read_text(f.out() / "state.json"));
  CHECK(state["cycles"][2].contains("teacher_sha256"));
}

TEST_CASE("trainer mode: per-epoch checkpoints blend every period epochs and at the last") {
  Fixture f(1);
  const fs::path fixtures = f.dir / "predictions";
  f.cfg.trainer_command =
      std::string("'") + MOCK_TRAINER_PATH + "' --checkpoints --fixtures '" + fixtures.string() + "'";
  f.cfg.epochs = 5;
  f.cfg.ema_period = 2;
  f.cfg.ema_alpha = 0.5;
  const fs::path init = f.dir / "t0.pvec";
  save_pvec(ParamVector(std::vector<float>(16, 1.0f), "mock"), init);
  f.cfg.initial_teacher = init;
  run_cycles(f.cfg);

  std::vector<double> teacher(16, 1.0);
  for (int e : {2, 4, 5}) {
    const auto s = pvec_values(f.out() / "cycle_1/trainer/checkpoints" / ("epoch_" + std::to_string(e) + ".pvec"));
    for (std::size_t i = 0; i < 16; ++i) teacher[i] = 0.5 * teacher[i] + 0.5 * s[i];
  }
  const auto got = pvec_values(f.out() / "cycle_1/teacher.pvec");
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(got[i] - teacher[i]) <= 1e-6);
}

TEST_CASE("trainer failure aborts the cycle with state preserved") {
  Fixture f;
  const fs::path fixtures = f.dir / "predictions";
  const std::string trainer = std::string("'") + MOCK_TRAINER_PATH + "' --fixtures '" + fixtures.string() + "'";
  f.cfg.trainer_command = trainer + " --fail-cycle 2";
  CHECK_THROWS_WITH_AS(run_cycles(f.cfg), doctest::Contains("trainer (cycle 2) failed"), DriverError);
  const json state = json::parse(read_text(f.out() / "state.json"));
  CHECK(state["completed_cycles"] == 1);
}

TEST_CASE("missing teacher predictions abort before any cycle output") {
  Fixture f;
  fs::remove(f.dir / "predictions" / "case_03.vol");
  CHECK_THROWS_WITH_AS(run_cycles(f.cfg), doctest::Contains("missing teacher prediction"), DriverError);
  CHECK_FALSE(fs::exists(f.out() / "cycle_1"));
}

TEST_CASE("per-cycle prediction directories take precedence") {
  Fixture f;
  const fs::path c2 = f.dir / "predictions" / "cycle_2";
  fs::create_directories(c2);
  for (const auto& id : list_cases(f.dir / "target/labels")) {
    save_mask(Mask3D::empty(Dims3{32, 32, 32}), c2 / (id + ".vol"));
  }
  CHECK(teacher_predictions_path(f.cfg, 2, "case_00") == c2 / "case_00.vol");
  CHECK(teacher_predictions_path(f.cfg, 3, "case_00") == f.dir / "predictions" / "case_00.vol");
  const RunResult r = run_cycles(f.cfg);
  CHECK(r.cycles[1].summary.rejected_empty == 8);
  CHECK(r.cycles[2].summary.retained == 4);
}

TEST_CASE("float teacher predictions are thresholded at 0.5") {
  TempDir d;
  std::vector<float> v{0.2f, 0.5f, 0.7f, 0.49f};
  save_volume(Volume3D(Dims3{1, 2, 2}, v), d / "p.vol");
  const Mask3D m = load_prediction(d / "p.vol");
  CHECK(std::vector<std::uint8_t>(m.data().begin(), m.data().end()) == std::vector<std::uint8_t>{0, 1, 1, 0});
}

TEST_CASE("teacher fallback keeps rejected cases under their own origin") {
  Fixture f;
  f.cfg.rejected_fallback = RejectedFallback::kTeacher;
  run_cycles(f.cfg);
  const json m = f.manifest(2);
  std::size_t fallback = 0, selected = 0;
  for (const auto& e : m["entries"]) {
    if (e["origin"] == "target-fallback") ++fallback;
    if (e["origin"] == "target-selected") ++selected;
  }
  CHECK(selected == 4);
  CHECK(fallback == 4);
  CHECK(verify_manifest(f.out(), 2).empty());
}

TEST_CASE("original source images can be chosen for training") {
  Fixture f(1);
  f.cfg.train_sources = SourceImages::kOriginal;
  run_cycles(f.cfg);
  const json m1 = f.manifest(1);
  for (const auto& e : m1["entries"]) {
    if (e["origin"] == "source") CHECK(e["image"].get<std::string>().rfind("phase1/original/", 0) == 0);
  }
  CHECK(verify_manifest(f.out(), 1).empty());
}

TEST_CASE("per-epoch resampling draws a fresh pairing per epoch") {
  Fixture f(1, 8, 4);
  f.cfg.resample_pairing_per_epoch = true;
  f.cfg.pairing_epochs = 3;
  const Phase1Result r = phase1_prepare(f.cfg);
  REQUIRE(r.epochs.size() == 3);
  const json pairing = json::parse(read_text(f.out() / "pairing.json"));
  CHECK(pairing["epochs"].size() == 3);
  CHECK(pairing["lambda_per_epoch"].size() == 3);
  std::set<std::uint64_t> seeds;
  for (const auto& e : pairing["epochs"]) seeds.insert(e["seed"].get<std::uint64_t>());
  CHECK(seeds.size() == 3);
  for (int e = 0; e < 3; ++e) {
    for (const auto& p : r.epochs[e]) {
      CHECK(fs::exists(f.out() / "phase1/images" / ("epoch_" + std::to_string(e)) / (p.source + ".vol")));
    }
  }
  f.cfg.out_dir = f.dir / "run";
  run_cycles(f.cfg);
  CHECK(verify_manifest(f.cfg.resolve(f.cfg.out_dir), 1).empty());
}

TEST_CASE("cropping applies the image window to labels and ground truth") {
  Fixture f(2);
  f.cfg.crop_dims = Dims3{24, 24, 24};
  // Teacher predictions must live in the cropped frame.
  const fs::path pred = f.dir / "pred_cropped";
  fs::create_directories(pred);
  for (const auto& id : list_cases(f.dir / "target/images")) {
    const Volume3D img = load_volume(f.dir / "target/images" / (id + ".vol"));
    const FitWindow w = nonzero_fit_window(img, *f.cfg.crop_dims);
    save_mask(apply_fit(load_mask(f.dir / "predictions" / (id + ".vol")), w), pred / (id + ".vol"));
  }
  f.cfg.predictions_dir = pred;
  // The oracle mock reads uncropped ground truth, so only shapes are checked here.
  f.cfg.proposer_command = std::string("'") + MOCK_PROPOSER_PATH + "' --kind constant --fill full";
  run_cycles(f.cfg);
  const VolHeader h = read_vol_header(f.out() / "phase1/labels/src_00.vol");
  CHECK(h.dims == Dims3{24, 24, 24});
  CHECK(read_vol_header(f.out() / "phase1/targets/case_00.vol").dims == Dims3{24, 24, 24});
  CHECK(read_vol_header(f.out() / "cycle_1/labels/case_00.vol").dims == Dims3{24, 24, 24});
}

TEST_CASE("worker pool honours the environment cap") {
  ::setenv("VOLADAPT_WORKERS", "2", 1);
  CHECK(worker_count(8) == 2);
  CHECK(worker_count(1) == 1);
  ::setenv("VOLADAPT_WORKERS", "junk", 1);
  CHECK(worker_count(8) == 8);
  ::unsetenv("VOLADAPT_WORKERS");
  CHECK(worker_count(3) == 3);
  CHECK(worker_count(0) >= 1);
}

TEST_CASE("metrics.csv carries one row per case with GT comparisons") {
  Fixture f(2);
  run_cycles(f.cfg);
  const std::string csv = read_text(f.out() / "cycle_2/metrics.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "case,origin,prompted_slices,label_voxels,teacher_dice,teacher_hd95,label_dice,label_hd95");
  std::size_t rows = 0, rejected = 0;
  while (std::getline(in, line)) {
    ++rows;
    if (line.find(",rejected,") != std::string::npos) {
      ++rejected;
      CHECK(line.substr(line.size() - 2) == ",,");
    }
  }
  CHECK(rows == 8);
  CHECK(rejected == 4);
  // Cycle-1 oracle rows: refined label equals GT, so Dice 1 and HD95 0.
  const std::string c1 = read_text(f.out() / "cycle_1/metrics.csv");
  for (const auto& id : f.lay.oracle_cases) {
    const auto pos = c1.find(id + ",");
    REQUIRE(pos != std::string::npos);
    const std::string row = c1.substr(pos, c1.find('\n', pos) - pos);
    CHECK(row.find(",1.000000,0.000000") != std::string::npos);
  }
}
