#include <fstream>
#include <set>
#include <sstream>

#include "toml.hpp"
#include "voladapt/driver.hpp"
#include "voladapt/sweep.hpp"

namespace voladapt {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': " + why);
}

void allow_only(const toml::table& t, const std::string& where, std::set<std::string> keys) {
  for (const auto& [k, v] : t) {
    const std::string name(k.str());
    if (!keys.count(name)) bad(where.empty() ? name : where + "." + name, "unknown key");
  }
}

const toml::table* section(const toml::table& root, const std::string& name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) bad(name, "expected a table");
  return n->as_table();
}

std::optional<double> get_double(const toml::table* t, const std::string& where, const std::string& key) {
  if (!t) return std::nullopt;
  const toml::node* n = t->get(key);
  if (!n) return std::nullopt;
  if (n->is_floating_point()) return n->as_floating_point()->get();
  if (n->is_integer()) return static_cast<double>(n->as_integer()->get());
  bad(where + key, "expected a number");
}

std::optional<std::int64_t> get_int(const toml::table* t, const std::string& where, const std::string& key) {
  if (!t) return std::nullopt;
  const toml::node* n = t->get(key);
  if (!n) return std::nullopt;
  if (!n->is_integer()) bad(where + key, "expected an integer");
  return n->as_integer()->get();
}

std::optional<std::string> get_string(const toml::table* t, const std::string& where, const std::string& key) {
  if (!t) return std::nullopt;
  const toml::node* n = t->get(key);
  if (!n) return std::nullopt;
  if (!n->is_string()) bad(where + key, "expected a string");
  return n->as_string()->get();
}

std::optional<bool> get_bool(const toml::table* t, const std::string& where, const std::string& key) {
  if (!t) return std::nullopt;
  const toml::node* n = t->get(key);
  if (!n) return std::nullopt;
  if (!n->is_boolean()) bad(where + key, "expected true or false");
  return n->as_boolean()->get();
}

std::optional<std::vector<double>> get_numbers(const toml::table* t, const std::string& where,
                                               const std::string& key) {
  if (!t) return std::nullopt;
  const toml::node* n = t->get(key);
  if (!n) return std::nullopt;
  if (!n->is_array()) bad(where + key, "expected an array");
  std::vector<double> out;
  for (const auto& e : *n->as_array()) {
    if (e.is_floating_point()) {
      out.push_back(e.as_floating_point()->get());
    } else if (e.is_integer()) {
      out.push_back(static_cast<double>(e.as_integer()->get()));
    } else {
      bad(where + key, "expected numbers");
    }
  }
  return out;
}

std::uint32_t to_u32(std::int64_t v, const std::string& key, std::int64_t min = 0) {
  if (v < min || v > UINT32_MAX) bad(key, "out of range");
  return static_cast<std::uint32_t>(v);
}

toml::table parse_toml(const std::string& text) {
  try {
    return toml::parse(text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "TOML parse error at line " << e.source().begin.line << ": " << e.description();
    throw std::invalid_argument(msg.str());
  }
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& toml_text, const fs::path& config_dir) {
  const toml::table root = parse_toml(toml_text);
  allow_only(root, "", {"seed", "cycles", "out", "workers", "data", "fda", "refine", "select",
                        "proposer", "trainer", "ema", "schedule", "run"});
  RunConfig c;
  c.config_dir = config_dir;
  const toml::table* top = &root;
  if (auto v = get_int(top, "", "seed")) {
    if (*v < 0) bad("seed", "must be non-negative");
    c.seed = static_cast<std::uint64_t>(*v);
  }
  if (auto v = get_int(top, "", "cycles")) c.cycles = to_u32(*v, "cycles", 1);
  if (auto v = get_string(top, "", "out")) c.out_dir = *v;
  if (auto v = get_int(top, "", "workers")) c.workers = to_u32(*v, "workers");

  if (const auto* t = section(root, "data")) {
    allow_only(*t, "data", {"source_images", "source_labels", "target_images", "target_labels",
                            "normalize", "crop"});
    if (auto v = get_string(t, "data.", "source_images")) c.source_images = *v;
    if (auto v = get_string(t, "data.", "source_labels")) c.source_labels = *v;
    if (auto v = get_string(t, "data.", "target_images")) c.target_images = *v;
    if (auto v = get_string(t, "data.", "target_labels")) c.target_labels = *v;
    if (auto v = get_bool(t, "data.", "normalize")) c.normalize = *v;
    if (auto v = get_numbers(t, "data.", "crop")) {
      if (v->size() != 3) bad("data.crop", "expected [D, H, W]");
      Dims3 d;
      d.d = to_u32(static_cast<std::int64_t>((*v)[0]), "data.crop", 1);
      d.h = to_u32(static_cast<std::int64_t>((*v)[1]), "data.crop", 1);
      d.w = to_u32(static_cast<std::int64_t>((*v)[2]), "data.crop", 1);
      c.crop_dims = d;
    }
  }
  if (const auto* t = section(root, "fda")) {
    allow_only(*t, "fda", {"L", "resample_per_epoch", "epochs"});
    if (auto v = get_double(t, "fda.", "L")) c.fda_L = *v;
    if (auto v = get_bool(t, "fda.", "resample_per_epoch")) c.resample_pairing_per_epoch = *v;
    if (auto v = get_int(t, "fda.", "epochs")) c.pairing_epochs = to_u32(*v, "fda.epochs", 1);
  }
  if (const auto* t = section(root, "refine")) {
    allow_only(*t, "refine", {"tau_conf"});
    if (auto v = get_double(t, "refine.", "tau_conf")) c.refine.tau_conf = *v;
  }
  if (const auto* t = section(root, "select")) {
    allow_only(*t, "select", {"tau_conf", "overlap", "tau_cc", "connectivity", "clip_to_bbox"});
    if (auto v = get_double(t, "select.", "tau_conf")) c.select.tau_conf = *v;
    if (auto v = get_numbers(t, "select.", "overlap")) {
      if (v->size() != 2) bad("select.overlap", "expected [lo, hi]");
      c.select.tau_overlap_lo = (*v)[0];
      c.select.tau_overlap_hi = (*v)[1];
    }
    if (auto v = get_int(t, "select.", "tau_cc")) c.select.tau_cc = to_u32(*v, "select.tau_cc", 1);
    if (auto v = get_int(t, "select.", "connectivity")) {
      try {
        c.select.connectivity = connectivity_from_int(static_cast<int>(*v));
      } catch (const std::invalid_argument&) {
        bad("select.connectivity", "must be 6 or 26");
      }
    }
    if (auto v = get_bool(t, "select.", "clip_to_bbox")) c.select.clip_to_bbox = *v;
  }
  if (const auto* t = section(root, "proposer")) {
    allow_only(*t, "proposer", {"command", "timeout_s", "window"});
    if (auto v = get_string(t, "proposer.", "command")) c.proposer_command = *v;
    if (auto v = get_double(t, "proposer.", "timeout_s")) c.proposer_timeout_s = *v;
    if (auto v = get_int(t, "proposer.", "window")) c.proposer_window = to_u32(*v, "proposer.window", 1);
  }
  if (const auto* t = section(root, "trainer")) {
    allow_only(*t, "trainer", {"command", "predictions", "epochs", "initial_teacher"});
    if (auto v = get_string(t, "trainer.", "command")) c.trainer_command = *v;
    if (auto v = get_string(t, "trainer.", "predictions")) c.predictions_dir = *v;
    if (auto v = get_int(t, "trainer.", "epochs")) c.epochs = to_u32(*v, "trainer.epochs", 1);
    if (auto v = get_string(t, "trainer.", "initial_teacher")) c.initial_teacher = *v;
  }
  if (const auto* t = section(root, "ema")) {
    allow_only(*t, "ema", {"alpha", "period"});
    if (auto v = get_double(t, "ema.", "alpha")) c.ema_alpha = *v;
    if (auto v = get_int(t, "ema.", "period")) c.ema_period = to_u32(*v, "ema.period", 1);
  }
  if (const auto* t = section(root, "schedule")) {
    allow_only(*t, "schedule", {"lambda_max", "gamma", "t0", "warmup_epochs", "freeze_after"});
    if (auto v = get_double(t, "schedule.", "lambda_max")) c.schedule.lambda_max = *v;
    if (auto v = get_double(t, "schedule.", "gamma")) c.schedule.gamma = *v;
    if (auto v = get_double(t, "schedule.", "t0")) c.schedule.t0 = *v;
    if (auto v = get_int(t, "schedule.", "warmup_epochs")) c.schedule.warmup_epochs = static_cast<int>(*v);
    if (auto v = get_double(t, "schedule.", "freeze_after")) c.schedule.freeze_after = *v;
  }
  if (const auto* t = section(root, "run")) {
    allow_only(*t, "run", {"rejected_fallback", "train_sources"});
    if (auto v = get_string(t, "run.", "rejected_fallback")) {
      if (*v == "drop") c.rejected_fallback = RejectedFallback::kDrop;
      else if (*v == "teacher") c.rejected_fallback = RejectedFallback::kTeacher;
      else bad("run.rejected_fallback", "must be drop or teacher");
    }
    if (auto v = get_string(t, "run.", "train_sources")) {
      if (*v == "fda") c.train_sources = SourceImages::kFda;
      else if (*v == "original") c.train_sources = SourceImages::kOriginal;
      else bad("run.train_sources", "must be fda or original");
    }
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_all(path), fs::absolute(path).parent_path());
}

SweepGrids parse_sweep_grids(const std::string& toml_text) {
  const toml::table root = parse_toml(toml_text);
  allow_only(root, "", {"tau_conf", "overlap_lo", "overlap_hi", "tau_cc", "connectivity", "objective",
                        "good_dice", "band"});
  SweepGrids g;
  const toml::table* t = &root;
  if (auto v = get_numbers(t, "", "tau_conf")) g.tau_conf = *v;
  if (auto v = get_numbers(t, "", "overlap_lo")) g.overlap_lo = *v;
  if (auto v = get_numbers(t, "", "overlap_hi")) g.overlap_hi = *v;
  if (auto v = get_numbers(t, "", "tau_cc")) {
    g.tau_cc.clear();
    for (double x : *v) {
      if (x != static_cast<double>(static_cast<std::int64_t>(x))) bad("tau_cc", "expected integers");
      g.tau_cc.push_back(to_u32(static_cast<std::int64_t>(x), "tau_cc", 1));
    }
  }
  if (auto v = get_int(t, "", "connectivity")) {
    try {
      g.connectivity = connectivity_from_int(static_cast<int>(*v));
    } catch (const std::invalid_argument&) {
      bad("connectivity", "must be 6 or 26");
    }
  }
  if (auto v = get_string(t, "", "objective")) {
    if (*v == "gt_dice") g.objective = SweepObjective::kGtDice;
    else if (*v == "retained_band") g.objective = SweepObjective::kRetainedBand;
    else bad("objective", "must be gt_dice or retained_band");
  }
  if (auto v = get_double(t, "", "good_dice")) g.good_dice = *v;
  if (auto v = get_numbers(t, "", "band")) {
    if (v->size() != 2) bad("band", "expected [lo, hi]");
    g.band_lo = (*v)[0];
    g.band_hi = (*v)[1];
  }
  g.validate();
  return g;
}

SweepGrids load_sweep_grids(const fs::path& path) { return parse_sweep_grids(read_all(path)); }

}  // namespace voladapt
