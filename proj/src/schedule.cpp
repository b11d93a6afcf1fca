#include "voladapt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace voladapt {

void LambdaSchedule::validate() const {
  if (!(lambda_max > 0.0) || !std::isfinite(lambda_max)) {
    throw std::invalid_argument("lambda_max must be positive");
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("gamma must be positive");
  if (warmup_epochs < 0) throw std::invalid_argument("warmup_epochs must be >= 0");
  if (!std::isfinite(t0)) throw std::invalid_argument("t0 must be finite");
}

double lambda_at(const LambdaSchedule& s, double t) {
  if (t < s.warmup_epochs) return 0.0;
  if (t >= s.freeze_epoch()) return s.lambda_max;
  return s.lambda_max / (1.0 + std::exp(-s.gamma * (t - s.t0)));
}

ParamVector::ParamVector(std::vector<float> values, std::string tag)
    : values_(std::move(values)), tag_(std::move(tag)) {
  if (!std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); })) {
    throw std::invalid_argument("parameter vector contains non-finite values");
  }
}

ParamVector ema_blend(const ParamVector& teacher, const ParamVector& student, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("EMA alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
  if (teacher.size() != student.size()) {
    throw std::invalid_argument("EMA length mismatch: " + std::to_string(teacher.size()) + " vs " +
                                std::to_string(student.size()));
  }
  if (teacher.tag() != student.tag()) {
    throw std::invalid_argument("EMA tag mismatch: '" + teacher.tag() + "' vs '" + student.tag() +
                                "'");
  }
  std::vector<float> out(teacher.size());
  const auto t = teacher.values();
  const auto s = student.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(alpha * t[i] + (1.0 - alpha) * s[i]);
  }
  return ParamVector(std::move(out), teacher.tag());
}

double max_abs_gap(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_gap length mismatch");
  double gap = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    gap = std::max(gap, std::abs(static_cast<double>(a.values()[i]) - b.values()[i]));
  }
  return gap;
}

namespace {

constexpr char kPvecMagic[4] = {'P', 'V', 'E', 'C'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

}  // namespace

std::vector<std::uint8_t> encode_pvec(const ParamVector& p) {
  std::vector<std::uint8_t> out(std::begin(kPvecMagic), std::end(kPvecMagic));
  put(out, static_cast<std::uint32_t>(p.tag().size()));
  out.insert(out.end(), p.tag().begin(), p.tag().end());
  put(out, static_cast<std::uint64_t>(p.size()));
  const auto* raw = reinterpret_cast<const std::uint8_t*>(p.values().data());
  out.insert(out.end(), raw, raw + p.size() * sizeof(float));
  return out;
}

ParamVector decode_pvec(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kPvecMagic, 4) != 0) {
    throw std::runtime_error("not a PVEC file (bad magic)");
  }
  std::uint32_t tag_len;
  std::memcpy(&tag_len, bytes.data() + 4, 4);
  std::size_t pos = 8;
  if (bytes.size() < pos + tag_len + 8) throw std::runtime_error("PVEC header truncated");
  std::string tag(reinterpret_cast<const char*>(bytes.data() + pos), tag_len);
  pos += tag_len;
  std::uint64_t count;
  std::memcpy(&count, bytes.data() + pos, 8);
  pos += 8;
  const std::size_t remaining = bytes.size() - pos;
  if (count > remaining / sizeof(float) || remaining != count * sizeof(float)) {
    throw std::runtime_error("PVEC payload size does not match declared count " +
                             std::to_string(count));
  }
  std::vector<float> values(count);
  if (remaining > 0) std::memcpy(values.data(), bytes.data() + pos, remaining);
  return ParamVector(std::move(values), std::move(tag));
}

ParamVector load_pvec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};
  return decode_pvec(bytes);
}

void save_pvec(const ParamVector& p, const std::filesystem::path& path) {
  const auto bytes = encode_pvec(p);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace voladapt
