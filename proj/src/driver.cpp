#include "voladapt/driver.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "voladapt/codec.hpp"
#include "voladapt/fourier.hpp"
#include "voladapt/metrics.hpp"
#include "voladapt/parallel.hpp"
#include "voladapt/protocol.hpp"
#include "voladapt/rng.hpp"

namespace voladapt {

using ojson = nlohmann::ordered_json;

namespace {

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DriverError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string sha256_text(const std::string& s) {
  return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string rel(const fs::path& p) { return p.generic_string(); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

void run_command(const std::string& cmd, const std::string& what) {
  std::fflush(nullptr);
  const int rc = std::system(cmd.c_str());
  if (rc == -1) throw DriverError(what + ": could not start command");
  if (!WIFEXITED(rc) || WEXITSTATUS(rc) != 0) {
    const int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : 128 + WTERMSIG(rc);
    throw DriverError(what + " failed with status " + std::to_string(code) + ": " + cmd);
  }
}

const char* origin_name(std::uint32_t cycle) { return cycle == 1 ? "target-refined" : "target-selected"; }

fs::path cycle_dir(const fs::path& out, std::uint32_t t) { return out / ("cycle_" + std::to_string(t)); }

fs::path tmp_cycle_dir(const fs::path& out, std::uint32_t t) {
  return out / ("cycle_" + std::to_string(t) + ".tmp");
}

Mask3D fit_label(const Mask3D& m, const Prepared& p, const std::string& what) {
  Mask3D out = p.window ? apply_fit(m, *p.window) : m;
  if (out.dims() != p.image.dims()) {
    throw DriverError(what + ": dims " + out.dims().str() + " do not match image " + p.image.dims().str());
  }
  return out;
}

struct LoadedSet {
  std::vector<std::string> ids;
  std::vector<Prepared> images;
};

LoadedSet load_prepared(const RunConfig& cfg, const fs::path& dir, const char* what) {
  LoadedSet s;
  s.ids = list_cases(dir);
  if (s.ids.empty()) throw DriverError(std::string("no ") + what + " volumes in " + dir.string());
  std::vector<std::optional<Prepared>> slots(s.ids.size());
  parallel_for(s.ids.size(), worker_count(cfg.workers), [&](std::size_t, std::size_t i) {
    slots[i] = prepare_volume(cfg, load_volume(dir / (s.ids[i] + ".vol")));
  });
  for (auto& p : slots) s.images.push_back(std::move(*p));
  return s;
}

ojson read_json(const fs::path& p) {
  try {
    return ojson::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw DriverError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

std::vector<std::string> verify_checksums(const fs::path& out_dir, const ojson& manifest,
                                          const std::string& label) {
  std::vector<std::string> problems;
  if (!manifest.contains("checksums") || !manifest["checksums"].is_object()) {
    problems.push_back(label + ": no checksums");
    return problems;
  }
  for (const auto& [path, sum] : manifest["checksums"].items()) {
    const fs::path p = out_dir / path;
    if (!fs::exists(p)) {
      problems.push_back(label + ": missing " + path);
    } else if (sha256_file(p) != sum.get<std::string>()) {
      problems.push_back(label + ": checksum mismatch for " + path);
    }
  }
  return problems;
}

std::string config_hash(const RunConfig& cfg) { return sha256_text(cfg.to_json().dump()); }

}  // namespace

void RunConfig::validate() const {
  auto need = [](const fs::path& p, const char* key) {
    if (p.empty()) throw std::invalid_argument(std::string("config key '") + key + "': required");
  };
  if (cycles < 1) throw std::invalid_argument("config key 'cycles': must be >= 1");
  need(source_images, "data.source_images");
  need(source_labels, "data.source_labels");
  need(target_images, "data.target_images");
  if (proposer_command.empty()) throw std::invalid_argument("config key 'proposer.command': required");
  need(predictions_dir, "trainer.predictions");
  if (!(fda_L >= 0.0 && fda_L <= 0.5)) throw std::invalid_argument("config key 'fda.L': must lie in [0, 0.5]");
  if (pairing_epochs < 1) throw std::invalid_argument("config key 'fda.epochs': must be >= 1");
  if (!(proposer_timeout_s > 0.0)) throw std::invalid_argument("config key 'proposer.timeout_s': must be > 0");
  if (proposer_window < 1) throw std::invalid_argument("config key 'proposer.window': must be >= 1");
  if (epochs < 1) throw std::invalid_argument("config key 'trainer.epochs': must be >= 1");
  if (ema_period < 1) throw std::invalid_argument("config key 'ema.period': must be >= 1");
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw std::invalid_argument("config key 'ema.alpha': must lie in (0, 1)");
  if (crop_dims && !crop_dims->positive()) throw std::invalid_argument("config key 'data.crop': must be positive");
  refine.validate();
  select.validate();
  schedule.validate();

  std::vector<std::pair<fs::path, const char*>> dirs{{resolve(source_images), "data.source_images"},
                                                      {resolve(source_labels), "data.source_labels"},
                                                      {resolve(target_images), "data.target_images"},
                                                      {resolve(out_dir), "out"}};
  if (!target_labels.empty()) dirs.emplace_back(resolve(target_labels), "data.target_labels");
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    for (std::size_t j = i + 1; j < dirs.size(); ++j) {
      if (dirs[i].first.lexically_normal() == dirs[j].first.lexically_normal()) {
        throw std::invalid_argument(std::string("config keys '") + dirs[i].second + "' and '" + dirs[j].second +
                                    "' name the same directory");
      }
    }
  }
}

fs::path RunConfig::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute()) return p;
  return config_dir / p;
}

nlohmann::ordered_json RunConfig::to_json() const {
  ojson j;
  j["seed"] = seed;
  j["cycles"] = cycles;
  j["data"] = {{"source_images", rel(resolve(source_images))},
               {"source_labels", rel(resolve(source_labels))},
               {"target_images", rel(resolve(target_images))},
               {"target_labels", rel(resolve(target_labels))},
               {"normalize", normalize},
               {"crop", crop_dims ? ojson::array({crop_dims->d, crop_dims->h, crop_dims->w}) : ojson(nullptr)}};
  j["fda"] = {{"L", fda_L}, {"resample_per_epoch", resample_pairing_per_epoch}, {"epochs", pairing_epochs}};
  j["refine"] = {{"tau_conf", refine.tau_conf}};
  j["select"] = {{"tau_conf", select.tau_conf},
                 {"overlap", {select.tau_overlap_lo, select.tau_overlap_hi}},
                 {"tau_cc", select.tau_cc},
                 {"connectivity", static_cast<int>(select.connectivity)},
                 {"clip_to_bbox", select.clip_to_bbox}};
  j["proposer"] = {{"command", proposer_command}};
  j["trainer"] = {{"command", trainer_command},
                  {"predictions", rel(resolve(predictions_dir))},
                  {"epochs", epochs},
                  {"initial_teacher", rel(resolve(initial_teacher))}};
  j["ema"] = {{"alpha", ema_alpha}, {"period", ema_period}};
  j["schedule"] = {{"lambda_max", schedule.lambda_max},
                   {"gamma", schedule.gamma},
                   {"t0", schedule.t0},
                   {"warmup_epochs", schedule.warmup_epochs},
                   {"freeze_after", schedule.freeze_after ? ojson(*schedule.freeze_after) : ojson(nullptr)}};
  j["run"] = {{"rejected_fallback", rejected_fallback == RejectedFallback::kDrop ? "drop" : "teacher"},
              {"train_sources", train_sources == SourceImages::kFda ? "fda" : "original"}};
  return j;
}

std::size_t worker_count(std::size_t configured) {
  std::size_t n = configured ? configured : std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("VOLADAPT_WORKERS")) {
    char* end = nullptr;
    const unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && cap > 0) n = std::min<std::size_t>(n, cap);
  }
  return n;
}

std::vector<std::string> list_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DriverError("not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".vol") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<PairingEntry> draw_pairing(const std::vector<std::string>& sources,
                                       const std::vector<std::string>& targets, std::uint64_t seed) {
  if (targets.empty()) throw DriverError("empty target set");
  std::vector<std::string> src = sources;
  std::sort(src.begin(), src.end());
  Rng rng(seed);
  std::vector<PairingEntry> out;
  for (const auto& s : src) out.push_back({s, targets[rng.below(targets.size())]});
  return out;
}

Prepared prepare_volume(const RunConfig& cfg, const Volume3D& raw) {
  Prepared p{raw, std::nullopt};
  if (cfg.crop_dims) {
    p.window = nonzero_fit_window(raw, *cfg.crop_dims);
    p.image = apply_fit(raw, *p.window);
  }
  if (cfg.normalize) p.image = minmax_normalize(p.image);
  return p;
}

Phase1Result phase1_prepare(const RunConfig& cfg) {
  const fs::path out = cfg.resolve(cfg.out_dir);
  const std::size_t workers = worker_count(cfg.workers);
  const LoadedSet sources = load_prepared(cfg, cfg.resolve(cfg.source_images), "source");
  const LoadedSet targets = load_prepared(cfg, cfg.resolve(cfg.target_images), "target");

  const fs::path tmp = out / "phase1.tmp";
  fs::remove_all(tmp);
  for (const char* sub : {"original", "images", "labels", "targets"}) fs::create_directories(tmp / sub);

  std::map<std::string, std::string> checksums;
  auto commit_volume = [&](const Volume3D& v, const fs::path& relpath) {
    save_volume(v, tmp / relpath);
    checksums["phase1/" + rel(relpath)] = sha256_file(tmp / relpath);
  };
  auto commit_mask = [&](const Mask3D& m, const fs::path& relpath) {
    save_mask(m, tmp / relpath);
    checksums["phase1/" + rel(relpath)] = sha256_file(tmp / relpath);
  };

  const fs::path label_dir = cfg.resolve(cfg.source_labels);
  for (std::size_t i = 0; i < sources.ids.size(); ++i) {
    const std::string& id = sources.ids[i];
    const fs::path lp = label_dir / (id + ".vol");
    if (!fs::exists(lp)) throw DriverError("source " + id + " has no label in " + label_dir.string());
    commit_volume(sources.images[i].image, fs::path("original") / (id + ".vol"));
    commit_mask(fit_label(load_mask(lp), sources.images[i], "source label " + id),
                fs::path("labels") / (id + ".vol"));
  }
  for (std::size_t i = 0; i < targets.ids.size(); ++i) {
    commit_volume(targets.images[i].image, fs::path("targets") / (targets.ids[i] + ".vol"));
  }

  std::map<std::string, std::size_t> target_index;
  for (std::size_t i = 0; i < targets.ids.size(); ++i) target_index[targets.ids[i]] = i;
  std::map<std::string, std::size_t> source_index;
  for (std::size_t i = 0; i < sources.ids.size(); ++i) source_index[sources.ids[i]] = i;

  Phase1Result result;
  const std::uint64_t pairing_seed = derive_seed(cfg.seed, "pairing");
  const std::uint32_t draws = cfg.resample_pairing_per_epoch ? cfg.pairing_epochs : 1;
  ojson epochs = ojson::array();
  for (std::uint32_t e = 0; e < draws; ++e) {
    const std::uint64_t seed = cfg.resample_pairing_per_epoch ? derive_seed(pairing_seed, e) : pairing_seed;
    std::vector<PairingEntry> pairs = draw_pairing(sources.ids, targets.ids, seed);
    const fs::path sub = cfg.resample_pairing_per_epoch ? fs::path("images") / ("epoch_" + std::to_string(e))
                                                        : fs::path("images");
    fs::create_directories(tmp / sub);

    std::vector<std::optional<FdaResult>> fda(pairs.size());
    parallel_for(pairs.size(), workers, [&](std::size_t, std::size_t i) {
      const auto& src = sources.images[source_index.at(pairs[i].source)].image;
      const auto& tgt = targets.images[target_index.at(pairs[i].target)].image;
      if (src.dims() != tgt.dims()) {
        throw DriverError("FDA pair " + pairs[i].source + " -> " + pairs[i].target + ": dims " +
                          src.dims().str() + " vs " + tgt.dims().str() + " (set data.crop)");
      }
      fda[i] = apply_fda(src, tgt, cfg.fda_L);
    });

    ojson plist = ojson::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      commit_volume(fda[i]->volume, sub / (pairs[i].source + ".vol"));
      ojson entry;
      entry["source"] = pairs[i].source;
      entry["target"] = pairs[i].target;
      entry["half_width"] = fda[i]->half_width;
      entry["notes"] = fda[i]->notes;
      plist.push_back(entry);
    }
    ojson ej;
    ej["epoch"] = e;
    ej["seed"] = seed;
    ej["pairs"] = plist;
    epochs.push_back(ej);
    result.epochs.push_back(std::move(pairs));
  }

  ojson lambdas = ojson::array();
  for (std::uint32_t e = 0; e < cfg.pairing_epochs; ++e) lambdas.push_back(lambda_at(cfg.schedule, e));

  ojson pairing;
  pairing["seed"] = cfg.seed;
  pairing["L"] = cfg.fda_L;
  pairing["resample_per_epoch"] = cfg.resample_pairing_per_epoch;
  pairing["lambda_per_epoch"] = lambdas;
  pairing["epochs"] = epochs;

  ojson manifest;
  manifest["cycle"] = 0;
  manifest["phase"] = "fda";
  ojson entries = ojson::array();
  for (const auto& id : sources.ids) {
    ojson en;
    const std::string image = cfg.resample_pairing_per_epoch ? "phase1/images/epoch_0/" + id + ".vol"
                                                             : "phase1/images/" + id + ".vol";
    en["image"] = image;
    en["label"] = "phase1/labels/" + id + ".vol";
    en["origin"] = "source";
    entries.push_back(en);
  }
  manifest["entries"] = entries;
  manifest["checksums"] = checksums;
  write_file_atomic(tmp / "manifest.json", dump(manifest));

  fs::remove_all(out / "phase1");
  fs::rename(tmp, out / "phase1");
  write_file_atomic(out / "pairing.json", dump(pairing));
  return result;
}

fs::path teacher_predictions_path(const RunConfig& cfg, std::uint32_t cycle, const std::string& case_id) {
  const std::string file = case_id + ".vol";
  if (!cfg.trainer_command.empty() && cycle >= 2) {
    return cycle_dir(cfg.resolve(cfg.out_dir), cycle - 1) / "predictions" / file;
  }
  const fs::path dir = cfg.resolve(cfg.predictions_dir);
  const fs::path per_cycle = dir / ("cycle_" + std::to_string(cycle)) / file;
  if (fs::exists(per_cycle)) return per_cycle;
  return dir / file;
}

Mask3D load_prediction(const fs::path& path) {
  if (!fs::exists(path)) throw DriverError("missing teacher prediction " + path.string());
  const VolHeader h = read_vol_header(path);
  if (h.dtype == VolDtype::kMask8) return load_mask(path);
  return threshold_mask(load_volume(path), 0.5f);
}

std::vector<TargetCase> load_targets(const RunConfig& cfg, std::uint32_t cycle) {
  const LoadedSet targets = load_prepared(cfg, cfg.resolve(cfg.target_images), "target");
  const fs::path gt_dir = cfg.resolve(cfg.target_labels);
  std::vector<std::optional<TargetCase>> slots(targets.ids.size());
  parallel_for(targets.ids.size(), worker_count(cfg.workers), [&](std::size_t, std::size_t i) {
    const std::string& id = targets.ids[i];
    const Prepared& p = targets.images[i];
    Mask3D teacher = load_prediction(teacher_predictions_path(cfg, cycle, id));
    if (teacher.dims() != p.image.dims()) {
      throw DriverError("teacher prediction for " + id + " has dims " + teacher.dims().str() +
                        ", image has " + p.image.dims().str());
    }
    std::optional<Mask3D> gt;
    if (!gt_dir.empty()) {
      const fs::path gp = gt_dir / (id + ".vol");
      if (!fs::exists(gp)) throw DriverError("target " + id + " has no ground truth in " + gt_dir.string());
      gt = fit_label(load_mask(gp), p, "ground truth " + id);
    }
    slots[i] = TargetCase{id, p.image, std::move(teacher), std::move(gt)};
  });
  std::vector<TargetCase> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<std::vector<SliceProposal>> gather_proposals(const RunConfig& cfg,
                                                         const std::vector<TargetCase>& cases) {
  SessionOptions opts;
  opts.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(cfg.proposer_timeout_s * 1000.0));
  opts.window = cfg.proposer_window;
  const std::size_t workers = std::max<std::size_t>(1, std::min(worker_count(cfg.workers), cases.size()));

  std::vector<std::unique_ptr<ProposerSession>> sessions(workers);
  std::vector<std::vector<SliceProposal>> out(cases.size());
  try {
    parallel_for(cases.size(), workers, [&](std::size_t worker, std::size_t i) {
      const TargetCase& tc = cases[i];
      const Dims3 d = tc.image.dims();
      std::vector<ProposalRequest> reqs;
      for (std::uint32_t j = 0; j < d.d; ++j) {
        const auto box = bbox_of_slice(extract_slice(tc.teacher, j));
        if (!box) continue;
        ProposalRequest r;
        r.case_id = tc.id;
        r.slice_index = j;
        r.bbox = *box;
        r.h = d.h;
        r.w = d.w;
        const auto data = tc.image.data();
        const std::size_t plane = static_cast<std::size_t>(d.h) * d.w;
        r.image.assign(data.begin() + j * plane, data.begin() + (j + 1) * plane);
        reqs.push_back(std::move(r));
      }
      if (reqs.empty()) return;
      if (!sessions[worker]) sessions[worker] = ProposerSession::spawn(cfg.proposer_command, opts);
      const auto results = sessions[worker]->propose_all(reqs);
      for (std::size_t k = 0; k < results.size(); ++k) {
        if (results[k].error) {
          throw DriverError("proposer error for case " + tc.id + " slice " + std::to_string(reqs[k].slice_index) +
                            ": " + *results[k].error);
        }
        out[i].push_back({reqs[k].slice_index, results[k].response->mask, results[k].response->confidence,
                          reqs[k].bbox});
      }
    });
  } catch (const ProtocolError& e) {
    throw DriverError(std::string("proposer failed (") + to_string(e.code()) + "): " + e.what());
  }
  for (auto& s : sessions) {
    if (s) s->close();
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".part";
  {
    std::ofstream o(tmp, std::ios::binary | std::ios::trunc);
    if (!o) throw DriverError("cannot write " + tmp.string());
    o.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!o) throw DriverError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::vector<std::string> verify_manifest(const fs::path& out_dir, std::uint32_t cycle) {
  const fs::path mp = cycle_dir(out_dir, cycle) / "manifest.json";
  const std::string label = "cycle " + std::to_string(cycle);
  if (!fs::exists(mp)) return {label + ": missing manifest.json"};
  ojson m;
  try {
    m = read_json(mp);
  } catch (const DriverError& e) {
    return {label + ": " + e.what()};
  }
  std::vector<std::string> problems = verify_checksums(out_dir, m, label);
  if (!m.contains("cycle") || m["cycle"] != cycle) problems.push_back(label + ": cycle field mismatch");
  if (m.contains("entries")) {
    for (const auto& e : m["entries"]) {
      const std::string origin = e.value("origin", "");
      if (origin == "source") continue;
      if (origin == origin_name(cycle) || (cycle >= 2 && origin == "target-fallback")) continue;
      problems.push_back(label + ": origin '" + origin + "' not allowed");
    }
    for (const auto& e : m["entries"]) {
      for (const char* key : {"image", "label"}) {
        if (!e.contains(key) || !m["checksums"].contains(e[key].get<std::string>())) {
          problems.push_back(label + ": entry without checksum");
        }
      }
    }
  }
  return problems;
}

namespace {

struct CaseResult {
  std::optional<Mask3D> label;  // written when set
  std::string origin;
  std::size_t prompted = 0;
  std::size_t replaced = 0;
  std::optional<CaseReport> report;
  std::string metrics_row;
};

std::string optional_metric(const std::optional<Mask3D>& a, const std::optional<Mask3D>& b, bool hd) {
  if (!a || !b) return "";
  if (!hd) {
    if (a->foreground_count() == 0 && b->foreground_count() == 0) return "";
    return fmt(dice(*a, *b));
  }
  try {
    return fmt(hd95(*a, *b, true));
  } catch (const UndefinedMetricError&) {
    return "";
  }
}

CaseResult curate_case(const RunConfig& cfg, std::uint32_t cycle, const TargetCase& tc,
                       const std::vector<SliceProposal>& props) {
  CaseResult r;
  r.prompted = props.size();
  if (cycle == 1) {
    r.label = refine_volume(tc.teacher, props, cfg.refine);
    for (const auto& p : props) r.replaced += p.confidence >= cfg.refine.tau_conf ? 1 : 0;
  } else {
    const auto stats = case_statistics(tc.id, props, cfg.select.clip_to_bbox);
    r.report = judge_case(tc.id, stats, cfg.select);
    if (r.report->retained || cfg.rejected_fallback == RejectedFallback::kTeacher) r.label = tc.teacher;
  }
  if (cycle >= 2 && !r.report->retained) {
    r.origin = r.label ? "target-fallback" : "rejected";
  } else {
    r.origin = origin_name(cycle);
  }
  const std::string& origin = r.origin;
  std::ostringstream row;
  row << tc.id << ',' << origin << ',' << r.prompted << ',';
  if (r.label) row << r.label->foreground_count();
  const std::optional<Mask3D> teacher(tc.teacher);
  row << ',' << optional_metric(teacher, tc.gt, false) << ',' << optional_metric(teacher, tc.gt, true) << ','
      << optional_metric(r.label, tc.gt, false) << ',' << optional_metric(r.label, tc.gt, true);
  r.metrics_row = row.str();
  return r;
}

struct Teacher {
  std::optional<ParamVector> params;
};

void blend_into(Teacher& teacher, const ParamVector& student, double alpha) {
  teacher.params = teacher.params ? ema_blend(*teacher.params, student, alpha) : student;
}

void train_and_predict(const RunConfig& cfg, const fs::path& out, std::uint32_t t, Teacher& teacher) {
  const fs::path dir = fs::absolute(cycle_dir(out, t));
  const fs::path tdir = dir / "trainer";
  fs::create_directories(tdir);
  const fs::path prev_teacher =
      t == 1 ? (cfg.initial_teacher.empty() ? fs::path{} : fs::absolute(cfg.resolve(cfg.initial_teacher)))
             : fs::absolute(cycle_dir(out, t - 1) / "teacher.pvec");

  std::string cmd = cfg.trainer_command + " --manifest " + shell_quote((dir / "manifest.json").string()) +
                    " --cycle " + std::to_string(t) + " --epochs " + std::to_string(cfg.epochs) + " --out " +
                    shell_quote(tdir.string());
  if (!prev_teacher.empty() && fs::exists(prev_teacher)) cmd += " --teacher " + shell_quote(prev_teacher.string());
  run_command(cmd, "trainer (cycle " + std::to_string(t) + ")");

  const fs::path ckpt = tdir / "checkpoints";
  if (fs::is_directory(ckpt)) {
    for (std::uint32_t e = 1; e <= cfg.epochs; ++e) {
      const fs::path p = ckpt / ("epoch_" + std::to_string(e) + ".pvec");
      if (!fs::exists(p)) throw DriverError("trainer did not write " + p.string());
      if (e % cfg.ema_period == 0 || e == cfg.epochs) blend_into(teacher, load_pvec(p), cfg.ema_alpha);
    }
  } else {
    const fs::path p = tdir / "student.pvec";
    if (!fs::exists(p)) throw DriverError("trainer wrote neither student.pvec nor checkpoints/ in " + tdir.string());
    blend_into(teacher, load_pvec(p), cfg.ema_alpha);
  }
  save_pvec(*teacher.params, dir / "teacher.pvec");

  const fs::path pdir = dir / "predictions";
  fs::create_directories(pdir);
  const std::string pcmd = cfg.trainer_command + " --predict --cycle " + std::to_string(t) + " --teacher " +
                           shell_quote((dir / "teacher.pvec").string()) + " --images " +
                           shell_quote(fs::absolute(out / "phase1" / "targets").string()) + " --out " +
                           shell_quote(pdir.string());
  run_command(pcmd, "trainer prediction (cycle " + std::to_string(t) + ")");
}

CycleOutcome run_one_cycle(const RunConfig& cfg, const fs::path& out, std::uint32_t t, Teacher& teacher) {
  const std::vector<TargetCase> cases = load_targets(cfg, t);
  const auto proposals = gather_proposals(cfg, cases);

  std::vector<std::optional<CaseResult>> results(cases.size());
  parallel_for(cases.size(), worker_count(cfg.workers), [&](std::size_t, std::size_t i) {
    results[i] = curate_case(cfg, t, cases[i], proposals[i]);
  });

  const fs::path tmp = tmp_cycle_dir(out, t);
  fs::remove_all(tmp);
  fs::create_directories(tmp / "labels");
  const std::string prefix = "cycle_" + std::to_string(t) + "/";

  const ojson phase1 = read_json(out / "phase1" / "manifest.json");
  std::map<std::string, std::string> checksums;
  ojson entries = ojson::array();
  for (const auto& e : phase1["entries"]) {
    ojson en;
    const std::string id = fs::path(e["label"].get<std::string>()).stem().string();
    en["image"] = cfg.train_sources == SourceImages::kFda ? e["image"].get<std::string>()
                                                          : "phase1/original/" + id + ".vol";
    en["label"] = e["label"];
    en["origin"] = "source";
    for (const char* key : {"image", "label"}) {
      const std::string p = en[key];
      checksums[p] = phase1["checksums"].at(p);
    }
    entries.push_back(en);
  }
  if (cfg.resample_pairing_per_epoch && cfg.train_sources == SourceImages::kFda) {
    for (const auto& [p, sum] : phase1["checksums"].items()) {
      if (p.rfind("phase1/images/", 0) == 0) checksums[p] = sum;
    }
  }

  CycleOutcome outcome;
  outcome.cycle = t;
  std::string jsonl;
  std::string csv = "case,origin,prompted_slices,label_voxels,teacher_dice,teacher_hd95,label_dice,label_hd95\n";
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const CaseResult& r = *results[i];
    const std::string& id = cases[i].id;
    if (r.label) {
      save_mask(*r.label, tmp / "labels" / (id + ".vol"));
      const std::string image = "phase1/targets/" + id + ".vol";
      const std::string label = prefix + "labels/" + id + ".vol";
      checksums[label] = sha256_file(tmp / "labels" / (id + ".vol"));
      checksums[image] = phase1["checksums"].at(image);
      ojson en;
      en["image"] = image;
      en["label"] = label;
      en["origin"] = r.origin;
      entries.push_back(en);
    }
    if (t == 1) {
      ojson rec;
      rec["case"] = id;
      rec["action"] = "refine";
      rec["prompted_slices"] = r.prompted;
      rec["replaced_slices"] = r.replaced;
      jsonl += rec.dump() + "\n";
      outcome.refined += r.label ? 1 : 0;
      outcome.replaced_slices += r.replaced;
    } else {
      jsonl += case_report_json(*r.report) + "\n";
      outcome.summary.add(*r.report);
    }
    csv += r.metrics_row + "\n";
  }

  ojson curation;
  if (t == 1) {
    curation["refined"] = outcome.refined;
    curation["replaced_slices"] = outcome.replaced_slices;
    ojson s;
    s["summary"] = true;
    s["refined"] = outcome.refined;
    s["replaced_slices"] = outcome.replaced_slices;
    jsonl += s.dump() + "\n";
  } else {
    curation = ojson::parse(summary_json(outcome.summary));
    curation.erase("summary");
    jsonl += summary_json(outcome.summary) + "\n";
  }
  write_file_atomic(tmp / "curation.jsonl", jsonl);
  write_file_atomic(tmp / "metrics.csv", csv);
  checksums[prefix + "curation.jsonl"] = sha256_file(tmp / "curation.jsonl");
  checksums[prefix + "metrics.csv"] = sha256_file(tmp / "metrics.csv");

  ojson manifest;
  manifest["cycle"] = t;
  manifest["phase"] = t == 1 ? "refine" : "select";
  manifest["entries"] = entries;
  manifest["curation"] = curation;
  manifest["checksums"] = checksums;
  write_file_atomic(tmp / "manifest.json", dump(manifest));

  fs::remove_all(cycle_dir(out, t));
  fs::rename(tmp, cycle_dir(out, t));

  if (!cfg.trainer_command.empty()) train_and_predict(cfg, out, t, teacher);
  return outcome;
}

ojson make_state(const std::string& cfg_hash, const std::string& phase1_hash, const ojson& cycles) {
  ojson s;
  s["config_sha256"] = cfg_hash;
  s["phase1_sha256"] = phase1_hash;
  s["completed_cycles"] = cycles.size();
  s["cycles"] = cycles;
  return s;
}

}  // namespace

RunResult run_cycles(const RunConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const fs::path out = cfg.resolve(cfg.out_dir);
  const fs::path state_path = out / "state.json";
  const std::string cfg_hash = config_hash(cfg);
  fs::create_directories(out);

  RunResult result;
  ojson done_cycles = ojson::array();
  std::string phase1_hash;
  Teacher teacher;

  if (options.resume) {
    if (!fs::exists(state_path)) throw DriverError("nothing to resume: no state.json in " + out.string());
    const ojson state = read_json(state_path);
    if (state.value("config_sha256", "") != cfg_hash) {
      throw DriverError("refusing to resume: configuration differs from the interrupted run");
    }
    phase1_hash = state.value("phase1_sha256", "");
    const fs::path p1 = out / "phase1" / "manifest.json";
    if (!fs::exists(p1) || sha256_file(p1) != phase1_hash) {
      throw DriverError("refusing to resume: phase1/manifest.json is missing or altered");
    }
    std::vector<std::string> problems = verify_checksums(out, read_json(p1), "phase1");
    done_cycles = state.at("cycles");
    for (const auto& c : done_cycles) {
      const std::uint32_t t = c.at("cycle");
      const fs::path mp = cycle_dir(out, t) / "manifest.json";
      if (fs::exists(mp) && sha256_file(mp) != c.at("manifest_sha256").get<std::string>()) {
        problems.push_back("cycle " + std::to_string(t) + ": manifest.json altered");
      }
      auto more = verify_manifest(out, t);
      problems.insert(problems.end(), more.begin(), more.end());
      if (c.contains("teacher_sha256")) {
        const fs::path tp = cycle_dir(out, t) / "teacher.pvec";
        if (!fs::exists(tp) || sha256_file(tp) != c["teacher_sha256"].get<std::string>()) {
          problems.push_back("cycle " + std::to_string(t) + ": teacher.pvec missing or altered");
        }
      }
    }
    if (!problems.empty()) {
      std::string msg = "refusing to resume:";
      for (const auto& p : problems) msg += "\n  " + p;
      throw DriverError(msg);
    }
    result.completed = static_cast<std::uint32_t>(done_cycles.size());
    if (result.completed > 0 && !cfg.trainer_command.empty()) {
      teacher.params = load_pvec(cycle_dir(out, result.completed) / "teacher.pvec");
    }
  } else {
    if (fs::exists(state_path)) {
      throw DriverError(out.string() + " already holds a run; pass --resume or use a fresh directory");
    }
    phase1_prepare(cfg);
    phase1_hash = sha256_file(out / "phase1" / "manifest.json");
    write_file_atomic(state_path, dump(make_state(cfg_hash, phase1_hash, done_cycles)));
  }

  if (result.completed == 0 && !cfg.trainer_command.empty() && !cfg.initial_teacher.empty()) {
    teacher.params = load_pvec(cfg.resolve(cfg.initial_teacher));
  }

  std::vector<fs::path> stale;
  for (const auto& e : fs::directory_iterator(out)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("cycle_", 0) != 0) continue;
    const std::string num = name.substr(6);
    const bool numbered = !num.empty() && std::all_of(num.begin(), num.end(), ::isdigit);
    if (!numbered || std::stoul(num) > result.completed) stale.push_back(e.path());
  }
  for (const auto& p : stale) fs::remove_all(p);

  for (std::uint32_t t = result.completed + 1; t <= cfg.cycles; ++t) {
    result.cycles.push_back(run_one_cycle(cfg, out, t, teacher));
    ojson c;
    c["cycle"] = t;
    c["manifest_sha256"] = sha256_file(cycle_dir(out, t) / "manifest.json");
    if (!cfg.trainer_command.empty()) c["teacher_sha256"] = sha256_file(cycle_dir(out, t) / "teacher.pvec");
    done_cycles.push_back(c);
    write_file_atomic(state_path, dump(make_state(cfg_hash, phase1_hash, done_cycles)));
    result.completed = t;
    if (options.stop_after && t >= *options.stop_after) break;
  }
  return result;
}

}  // namespace voladapt
