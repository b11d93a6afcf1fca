// Adversarial weight schedule and EMA teacher updates.
//
// The gradient reversal layer itself lives in the external trainer: it is
// the identity going forward and multiplies the discriminator gradient by
// -lambda(t) going backward. This module only supplies lambda(t).

#ifndef VOLADAPT_SCHEDULE_HPP
#define VOLADAPT_SCHEDULE_HPP

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace voladapt {

struct LambdaSchedule {
  double lambda_max = 1.0;
  double gamma = 0.5;
  double t0 = 30.0;
  int warmup_epochs = 0;
  /// Epoch from which lambda is pinned to lambda_max; unset means t0 + 5/gamma.
  std::optional<double> freeze_after;

  double freeze_epoch() const { return freeze_after.value_or(t0 + 5.0 / gamma); }
  /// Throws std::invalid_argument on non-positive lambda_max/gamma or negative warm-up.
  void validate() const;
};

/// 0 during warm-up, logistic ramp lambda_max / (1 + exp(-gamma (t - t0)))
/// until the freeze epoch, lambda_max afterwards.
double lambda_at(const LambdaSchedule& s, double t);

class ParamVector {
 public:
  ParamVector(std::vector<float> values, std::string tag);

  std::span<const float> values() const { return values_; }
  const std::string& tag() const { return tag_; }
  std::size_t size() const { return values_.size(); }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<float> values_;
  std::string tag_;
};

/// alpha * teacher + (1 - alpha) * student, elementwise.
ParamVector ema_blend(const ParamVector& teacher, const ParamVector& student, double alpha);

/// Infinity-norm distance; vectors must have equal length.
double max_abs_gap(const ParamVector& a, const ParamVector& b);

// PVEC: "PVEC" | u32 tag length | tag | u64 count | f32 payload, little-endian.
std::vector<std::uint8_t> encode_pvec(const ParamVector& p);
ParamVector decode_pvec(std::span<const std::uint8_t> bytes);
ParamVector load_pvec(const std::filesystem::path& path);
void save_pvec(const ParamVector& p, const std::filesystem::path& path);

}  // namespace voladapt

#endif  // VOLADAPT_SCHEDULE_HPP
