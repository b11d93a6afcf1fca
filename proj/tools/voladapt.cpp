// voladapt command-line front end.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "voladapt/codec.hpp"
#include "voladapt/curation.hpp"
#include "voladapt/driver.hpp"
#include "voladapt/fourier.hpp"
#include "voladapt/metrics.hpp"
#include "voladapt/rng.hpp"
#include "voladapt/schedule.hpp"
#include "voladapt/sweep.hpp"
#include "voladapt/synth.hpp"

using namespace voladapt;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream o(p, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + p.string());
  o << s;
}

std::pair<double, double> parse_range(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("expected lo:hi, got '" + s + "'");
  return {std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
}

const char* dtype_name(VolDtype d) { return d == VolDtype::kMask8 ? "mask8" : "float32"; }

int vol_info(const fs::path& path) {
  const VolHeader h = read_vol_header(path);
  ojson j;
  j["path"] = path.string();
  j["dtype"] = dtype_name(h.dtype);
  j["dims"] = {h.dims.d, h.dims.h, h.dims.w};
  j["spacing"] = {h.spacing[0], h.spacing[1], h.spacing[2]};
  if (h.dtype == VolDtype::kMask8) {
    j["foreground"] = load_mask(path).foreground_count();
  } else {
    const Volume3D v = load_volume(path);
    float lo = v.data()[0], hi = v.data()[0];
    for (float x : v.data()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    j["min"] = lo;
    j["max"] = hi;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

fs::path pick_target(const fs::path& tgt, std::optional<std::uint64_t> seed) {
  if (!fs::is_directory(tgt)) return tgt;
  const auto ids = list_cases(tgt);
  if (ids.empty()) throw std::runtime_error("no .vol files in " + tgt.string());
  Rng rng(derive_seed(seed.value_or(0), "pairing"));
  const std::string id = ids[rng.below(ids.size())];
  std::cerr << "paired with " << id << "\n";
  return tgt / (id + ".vol");
}

int metrics_eval(const fs::path& pred, const fs::path& gt, const fs::path& report, int conn, bool spacing) {
  const Mask3D p = load_mask(pred);
  const Mask3D g = load_mask(gt);
  const Connectivity c = connectivity_from_int(conn);
  ojson j;
  j["dice"] = dice(p, g);
  int rc = 0;
  try {
    j["hd95_voxels"] = hd95(p, g, false);
    if (spacing) j["hd95_physical"] = hd95(p, g, true);
  } catch (const UndefinedMetricError& e) {
    j["hd95_voxels"] = nullptr;
    std::cerr << "hd95 undefined: " << e.what() << "\n";
    rc = 2;
  }
  j["cc_pred"] = label_components(p, c).count;
  j["cc_gt"] = label_components(g, c).count;
  const std::string text = j.dump(2) + "\n";
  if (report.empty()) std::cout << text;
  else write_text(report, text);
  return rc;
}

void apply_overrides(RunConfig& cfg, const std::map<std::string, std::string>& strs,
                     std::optional<std::uint64_t> seed, std::optional<std::uint32_t> cycles,
                     std::optional<std::size_t> workers, std::optional<double> L) {
  if (seed) cfg.seed = *seed;
  if (cycles) cfg.cycles = *cycles;
  if (workers) cfg.workers = *workers;
  if (L) cfg.fda_L = *L;
  const fs::path cwd = fs::current_path();
  auto path_of = [&](const std::string& v) { return fs::absolute(cwd / v); };
  for (const auto& [k, v] : strs) {
    if (v.empty()) continue;
    if (k == "out") cfg.out_dir = path_of(v);
    else if (k == "proposer") cfg.proposer_command = v;
    else if (k == "trainer") cfg.trainer_command = v;
    else if (k == "predictions") cfg.predictions_dir = path_of(v);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric domain adaptation toolkit"};
  app.require_subcommand(1);

  // vol
  auto* vol = app.add_subcommand("vol", "VOL1 volume utilities");
  vol->require_subcommand(1);
  std::string vol_in, vol_out, vol_target;
  auto* vol_info_cmd = vol->add_subcommand("info", "print header and value range");
  vol_info_cmd->add_option("path", vol_in)->required();
  auto* vol_norm = vol->add_subcommand("normalize", "min-max normalize to [0, 1]");
  vol_norm->add_option("in", vol_in)->required();
  vol_norm->add_option("out", vol_out)->required();
  auto* vol_crop = vol->add_subcommand("crop", "crop to the nonzero box, then center pad/crop");
  vol_crop->add_option("in", vol_in)->required();
  vol_crop->add_option("out", vol_out)->required();
  vol_crop->add_option("--target", vol_target, "D,H,W")->required();

  // fda
  auto* fda = app.add_subcommand("fda", "Fourier amplitude transplantation");
  fda->require_subcommand(1);
  std::string fda_src, fda_tgt, fda_out, fda_amp, fda_phase;
  double fda_L = 0.02;
  std::optional<std::uint64_t> fda_seed;
  auto* fda_apply = fda->add_subcommand("apply", "translate a source volume toward a target");
  fda_apply->add_option("--src", fda_src)->required();
  fda_apply->add_option("--tgt", fda_tgt, "target volume, or a directory to draw one from")->required();
  fda_apply->add_option("--L", fda_L);
  fda_apply->add_option("--out", fda_out)->required();
  fda_apply->add_option("--seed-pairing", fda_seed, "seed for drawing the target from a directory");
  auto* fda_spec = fda->add_subcommand("spectrum", "write centered amplitude and phase volumes");
  fda_spec->add_option("in", fda_src)->required();
  fda_spec->add_option("--out-amp", fda_amp)->required();
  fda_spec->add_option("--out-phase", fda_phase)->required();

  // schedule
  auto* sched = app.add_subcommand("schedule", "adversarial weight schedule");
  sched->require_subcommand(1);
  LambdaSchedule ls;
  double sched_at = 0.0;
  std::optional<double> freeze;
  auto* sched_lambda = sched->add_subcommand("lambda", "evaluate lambda(t)");
  sched_lambda->add_option("--max", ls.lambda_max);
  sched_lambda->add_option("--gamma", ls.gamma);
  sched_lambda->add_option("--t0", ls.t0);
  sched_lambda->add_option("--warmup", ls.warmup_epochs);
  sched_lambda->add_option("--freeze-after", freeze);
  sched_lambda->add_option("--at", sched_at)->required();

  // ema
  auto* ema = app.add_subcommand("ema", "teacher parameter averaging");
  ema->require_subcommand(1);
  std::string ema_teacher, ema_student, ema_out;
  double ema_alpha = 0.99;
  auto* ema_blend_cmd = ema->add_subcommand("blend", "teacher <- alpha * teacher + (1 - alpha) * student");
  ema_blend_cmd->add_option("--teacher", ema_teacher)->required();
  ema_blend_cmd->add_option("--student", ema_student)->required();
  ema_blend_cmd->add_option("--alpha", ema_alpha);
  ema_blend_cmd->add_option("--out", ema_out)->required();

  // metrics
  auto* met = app.add_subcommand("metrics", "segmentation metrics");
  met->require_subcommand(1);
  std::string met_pred, met_gt, met_report;
  int met_conn = 26;
  bool met_spacing = false;
  auto* met_eval = met->add_subcommand("eval", "dice, hd95 and component counts (exit 2 when hd95 is undefined)");
  met_eval->add_option("--pred", met_pred)->required();
  met_eval->add_option("--gt", met_gt)->required();
  met_eval->add_option("--report", met_report);
  met_eval->add_option("--connectivity", met_conn);
  met_eval->add_flag("--spacing", met_spacing, "also report hd95 in physical units");

  // curate
  auto* cur = app.add_subcommand("curate", "pseudo-label refinement and selection");
  cur->require_subcommand(1);
  std::string cur_teacher, cur_props, cur_out, cur_report, cur_case, cur_overlap = "0.4:0.7";
  double cur_tau = 0.7;
  SelectConfig sel;
  int cur_conn = 26;
  auto* cur_refine = cur->add_subcommand("refine", "replace teacher slices by confident proposals");
  cur_refine->add_option("--teacher", cur_teacher)->required();
  cur_refine->add_option("--proposals", cur_props)->required();
  cur_refine->add_option("--tau", cur_tau);
  cur_refine->add_option("--out", cur_out)->required();
  cur_refine->add_option("--case", cur_case, "case id to use when the file holds several");
  auto* cur_select = cur->add_subcommand("select", "volume-level retention per case");
  cur_select->add_option("--proposals", cur_props)->required();
  cur_select->add_option("--tau-conf", sel.tau_conf);
  cur_select->add_option("--overlap", cur_overlap, "lo:hi");
  cur_select->add_option("--max-cc", sel.tau_cc);
  cur_select->add_option("--connectivity", cur_conn);
  cur_select->add_flag("--clip-to-bbox", sel.clip_to_bbox);
  cur_select->add_option("--report", cur_report);

  // selftrain
  auto* st = app.add_subcommand("selftrain", "two-phase self-training driver");
  st->require_subcommand(1);
  std::string st_config, st_grids, st_csv, st_out, st_proposer_exe;
  std::map<std::string, std::string> st_over{{"out", ""}, {"proposer", ""}, {"trainer", ""}, {"predictions", ""}};
  std::optional<std::uint64_t> st_seed;
  std::optional<std::uint32_t> st_cycles, st_stop;
  std::optional<std::size_t> st_workers;
  std::optional<double> st_L;
  bool st_resume = false;
  std::uint32_t st_cycle = 2;
  auto add_overrides = [&](CLI::App* c) {
    c->add_option("--config", st_config)->required();
    c->add_option("--seed", st_seed);
    c->add_option("--cycles", st_cycles);
    c->add_option("--workers", st_workers);
    c->add_option("--L", st_L);
    c->add_option("--out", st_over["out"]);
    c->add_option("--proposer", st_over["proposer"]);
    c->add_option("--trainer", st_over["trainer"]);
    c->add_option("--predictions", st_over["predictions"]);
  };
  auto* st_run = st->add_subcommand("run", "Phase-I preparation and the self-training cycles");
  add_overrides(st_run);
  st_run->add_flag("--resume", st_resume, "continue after the last completed cycle");
  st_run->add_option("--stop-after", st_stop, "stop once this cycle completes");
  auto* st_prepare = st->add_subcommand("prepare", "Phase-I FDA pairing only");
  add_overrides(st_prepare);
  auto* st_sweep = st->add_subcommand("sweep", "threshold grid search over the selection predicate");
  add_overrides(st_sweep);
  st_sweep->add_option("--grids", st_grids, "grids TOML (default grids when omitted)");
  st_sweep->add_option("--cycle", st_cycle, "teacher predictions of this cycle");
  st_sweep->add_option("--csv", st_csv, "write the table here instead of stdout");
  auto* st_verify = st->add_subcommand("verify", "re-check manifest checksums of completed cycles");
  add_overrides(st_verify);
  SynthOptions so;
  auto* st_synth = st->add_subcommand("synth", "write a seeded synthetic dataset with run.toml");
  st_synth->add_option("--out", st_out)->required();
  st_synth->add_option("--seed", so.seed);
  st_synth->add_option("--targets", so.targets);
  st_synth->add_option("--oracle", so.oracle);
  st_synth->add_option("--sources", so.sources);
  st_synth->add_option("--cycles", so.cycles);
  st_synth->add_option("--proposer", st_proposer_exe, "mock proposer executable (default: next to this binary)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (vol_info_cmd->parsed()) return vol_info(vol_in);
    if (vol_norm->parsed()) {
      save_volume(minmax_normalize(load_volume(vol_in)), vol_out);
      return 0;
    }
    if (vol_crop->parsed()) {
      const Volume3D v = load_volume(vol_in);
      save_volume(crop_to_nonzero_then_fit(v, parse_dims(vol_target)), vol_out);
      return 0;
    }
    if (fda_apply->parsed()) {
      const FdaResult r = apply_fda(load_volume(fda_src), load_volume(pick_target(fda_tgt, fda_seed)), fda_L);
      for (const auto& n : r.notes) std::cerr << "note: " << n << "\n";
      std::cerr << "half_width " << r.half_width << "\n";
      save_volume(r.volume, fda_out);
      return 0;
    }
    if (fda_spec->parsed()) {
      const Volume3D v = load_volume(fda_src);
      const Spectrum3D s = fft3_centered(v);
      std::vector<float> amp(s.amplitude().begin(), s.amplitude().end());
      std::vector<float> ph(s.phase().begin(), s.phase().end());
      save_volume(Volume3D(s.dims(), std::move(amp), v.spacing()), fda_amp);
      save_volume(Volume3D(s.dims(), std::move(ph), v.spacing()), fda_phase);
      return 0;
    }
    if (sched_lambda->parsed()) {
      ls.freeze_after = freeze;
      ls.validate();
      std::printf("%.17g\n", lambda_at(ls, sched_at));
      return 0;
    }
    if (ema_blend_cmd->parsed()) {
      save_pvec(ema_blend(load_pvec(ema_teacher), load_pvec(ema_student), ema_alpha), ema_out);
      return 0;
    }
    if (met_eval->parsed()) return metrics_eval(met_pred, met_gt, met_report, met_conn, met_spacing);
    if (cur_refine->parsed()) {
      const auto groups = parse_proposals(read_text(cur_props));
      std::vector<SliceProposal> props;
      if (!cur_case.empty()) {
        if (groups.count(cur_case)) props = groups.at(cur_case);
      } else if (groups.size() > 1) {
        throw std::invalid_argument("proposals hold several cases; pass --case");
      } else if (!groups.empty()) {
        props = groups.begin()->second;
      }
      RefineConfig rc;
      rc.tau_conf = cur_tau;
      save_mask(refine_volume(load_mask(cur_teacher), props, rc), cur_out);
      return 0;
    }
    if (cur_select->parsed()) {
      const auto [lo, hi] = parse_range(cur_overlap);
      sel.tau_overlap_lo = lo;
      sel.tau_overlap_hi = hi;
      sel.connectivity = connectivity_from_int(cur_conn);
      sel.validate();
      CurationSummary sum;
      std::string out;
      for (const auto& [id, props] : parse_proposals(read_text(cur_props))) {
        const CaseReport r = select_case(id, props, sel);
        sum.add(r);
        out += case_report_json(r) + "\n";
      }
      out += summary_json(sum) + "\n";
      if (cur_report.empty()) std::cout << out;
      else write_text(cur_report, out);
      return 0;
    }
    if (st_synth->parsed()) {
      fs::path exe = st_proposer_exe;
      if (exe.empty()) exe = fs::canonical("/proc/self/exe").parent_path() / "mock_proposer";
      const SynthLayout lay = write_synthetic_dataset(st_out, so, exe);
      std::cout << lay.config.string() << "\n";
      return 0;
    }

    RunConfig cfg = load_run_config(st_config);
    apply_overrides(cfg, st_over, st_seed, st_cycles, st_workers, st_L);
    cfg.validate();
    if (st_prepare->parsed()) {
      const Phase1Result r = phase1_prepare(cfg);
      std::cerr << "paired " << r.epochs.front().size() << " sources over " << r.epochs.size() << " draw(s)\n";
      return 0;
    }
    if (st_run->parsed()) {
      RunOptions opts;
      opts.resume = st_resume;
      opts.stop_after = st_stop;
      const RunResult r = run_cycles(cfg, opts);
      for (const auto& c : r.cycles) {
        if (c.cycle == 1) {
          std::cerr << "cycle 1: refined " << c.refined << " cases, replaced " << c.replaced_slices << " slices\n";
        } else {
          std::cerr << "cycle " << c.cycle << ": " << summary_json(c.summary) << "\n";
        }
      }
      std::cerr << "completed " << r.completed << " of " << cfg.cycles << " cycles\n";
      return 0;
    }
    if (st_verify->parsed()) {
      const fs::path out = cfg.resolve(cfg.out_dir);
      const ojson state = ojson::parse(read_text(out / "state.json"));
      int bad = 0;
      for (const auto& c : state.at("cycles")) {
        for (const auto& p : verify_manifest(out, c.at("cycle").get<std::uint32_t>())) {
          std::cout << p << "\n";
          ++bad;
        }
      }
      std::cout << (bad ? "FAILED" : "OK") << "\n";
      return bad ? 1 : 0;
    }
    if (st_sweep->parsed()) {
      const SweepGrids grids = st_grids.empty() ? SweepGrids{} : load_sweep_grids(st_grids);
      const std::string csv = sweep_csv(grid_sweep(cfg, grids, st_cycle));
      if (st_csv.empty()) std::cout << csv;
      else write_text(st_csv, csv);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
