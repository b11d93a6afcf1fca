// Self-training orchestration: Phase-I FDA pairing and the Phase-II cycle
// loop (refine on cycle 1, select on cycles 2..N), with per-cycle manifests,
// curation reports, metrics and an external trainer hook.
//
// Output layout under `out`:
//   pairing.json                  source -> target pairing, per epoch
//   phase1/original/<case>.vol    preprocessed sources
//   phase1/images/<case>.vol      FDA-translated sources (epoch_<e>/ when resampled)
//   phase1/labels/<case>.vol      source labels in the preprocessed frame
//   phase1/targets/<case>.vol     preprocessed targets
//   phase1/manifest.json          checksums of everything above
//   cycle_<t>/manifest.json       training set for cycle t with SHA-256 checksums
//   cycle_<t>/curation.jsonl      one record per target case plus a summary line
//   cycle_<t>/metrics.csv         per-case label statistics (Dice/HD95 with GT)
//   cycle_<t>/labels/<case>.vol   target labels used for training in cycle t
//   cycle_<t>/trainer/            trainer output (trainer mode)
//   cycle_<t>/teacher.pvec        EMA teacher after the cycle (trainer mode)
//   cycle_<t>/predictions/        teacher predictions for cycle t+1 (trainer mode)
//   state.json                    completed cycles; the commit point for --resume
//
// Trainer contract (trainer mode). Training:
//   <command> --manifest M --cycle t --epochs E --out DIR [--teacher P]
// must write DIR/student.pvec, or DIR/checkpoints/epoch_<e>.pvec for e = 1..E.
// Prediction:
//   <command> --predict --cycle t --teacher P --images DIR --out DIR
// must write one <case>.vol per target image.

#ifndef VOLADAPT_DRIVER_HPP
#define VOLADAPT_DRIVER_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "voladapt/curation.hpp"
#include "voladapt/schedule.hpp"
#include "voladapt/volume.hpp"

namespace voladapt {

namespace fs = std::filesystem;

enum class RejectedFallback { kDrop, kTeacher };
enum class SourceImages { kFda, kOriginal };

struct RunConfig {
  fs::path config_dir;  // relative paths resolve against this

  std::uint64_t seed = 0;
  std::uint32_t cycles = 5;
  fs::path out_dir = "out";
  std::size_t workers = 0;  // 0 = hardware concurrency

  fs::path source_images;
  fs::path source_labels;
  fs::path target_images;
  fs::path target_labels;  // optional, evaluation only
  bool normalize = true;
  std::optional<Dims3> crop_dims;

  double fda_L = 0.02;
  bool resample_pairing_per_epoch = false;
  std::uint32_t pairing_epochs = 1;

  RefineConfig refine;
  SelectConfig select;

  std::string proposer_command;
  double proposer_timeout_s = 30.0;
  std::size_t proposer_window = 32;

  std::string trainer_command;  // empty = trainerless
  fs::path predictions_dir;     // trainerless teacher predictions
  std::uint32_t epochs = 1;     // hint passed to the trainer
  fs::path initial_teacher;     // optional PVEC

  double ema_alpha = 0.99;
  std::uint32_t ema_period = 1;  // blend every `ema_period` epochs
  LambdaSchedule schedule;

  /// kTeacher keeps rejected cases (cycles >= 2) with origin "target-fallback".
  RejectedFallback rejected_fallback = RejectedFallback::kDrop;
  SourceImages train_sources = SourceImages::kFda;

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;
  fs::path resolve(const fs::path& p) const;
  /// Canonical JSON of every field that affects outputs.
  nlohmann::ordered_json to_json() const;
};

/// Parses a TOML run configuration. Unknown keys are errors.
RunConfig load_run_config(const fs::path& path);
RunConfig parse_run_config(const std::string& toml_text, const fs::path& config_dir);

class DriverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t worker_count(std::size_t configured);

/// Sorted case ids (file stems of *.vol) in a directory.
std::vector<std::string> list_cases(const fs::path& dir);

struct PairingEntry {
  std::string source;
  std::string target;
};

/// Seeded choice of a target for every source, in source-id order.
std::vector<PairingEntry> draw_pairing(const std::vector<std::string>& sources,
                                       const std::vector<std::string>& targets, std::uint64_t seed);

struct Phase1Result {
  std::vector<std::vector<PairingEntry>> epochs;
};

struct Prepared {
  Volume3D image;
  std::optional<FitWindow> window;  // set when cropping
};

/// Per-volume ingest: crop/pad around the nonzero box when configured, then
/// min-max normalize when configured.
Prepared prepare_volume(const RunConfig& cfg, const Volume3D& raw);

/// Translates every source volume with FDA against its paired target and
/// writes pairing.json and phase1/. Idempotent for a fixed config.
Phase1Result phase1_prepare(const RunConfig& cfg);

/// Teacher predictions consumed by cycle t. With a trainer, cycles t >= 2 use
/// the predictions the trainer wrote after cycle t-1. Otherwise the
/// predictions directory is searched for cycle_<t>/<case>.vol, then <case>.vol.
fs::path teacher_predictions_path(const RunConfig& cfg, std::uint32_t cycle, const std::string& case_id);

/// Float predictions are thresholded at 0.5; masks are taken as they are.
Mask3D load_prediction(const fs::path& path);

struct TargetCase {
  std::string id;
  Volume3D image;
  Mask3D teacher;
  std::optional<Mask3D> gt;
};

/// Preprocessed target images (and ground truth) with the teacher
/// predictions for `cycle`.
std::vector<TargetCase> load_targets(const RunConfig& cfg, std::uint32_t cycle);

/// One box prompt per slice with teacher foreground; proposals come back
/// sorted by slice. Any per-request error aborts with DriverError.
std::vector<std::vector<SliceProposal>> gather_proposals(const RunConfig& cfg,
                                                         const std::vector<TargetCase>& cases);

struct RunOptions {
  bool resume = false;
  /// Stop after this cycle completes (simulates an interrupted run).
  std::optional<std::uint32_t> stop_after;
};

struct CycleOutcome {
  std::uint32_t cycle = 0;
  CurationSummary summary;      // cycles >= 2
  std::size_t refined = 0;      // cycle 1: cases written with refined labels
  std::size_t replaced_slices = 0;
};

struct RunResult {
  std::vector<CycleOutcome> cycles;  // cycles executed by this invocation
  std::uint32_t completed = 0;       // total completed cycles in the output dir
};

RunResult run_cycles(const RunConfig& cfg, const RunOptions& options = {});

/// Re-checks every checksum in a cycle manifest. Returns problems found.
std::vector<std::string> verify_manifest(const fs::path& out_dir, std::uint32_t cycle);

/// Writes via a sibling temporary file and rename.
void write_file_atomic(const fs::path& path, const std::string& contents);

}  // namespace voladapt

#endif  // VOLADAPT_DRIVER_HPP
