#include "voladapt/fourier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace voladapt {

Spectrum3D::Spectrum3D(Dims3 dims, std::vector<double> amplitude, std::vector<double> phase,
                       bool centered)
    : dims_(dims), amplitude_(std::move(amplitude)), phase_(std::move(phase)), centered_(centered) {
  if (!dims_.positive()) throw std::invalid_argument("spectrum dims must be positive");
  if (amplitude_.size() != dims_.count() || phase_.size() != dims_.count()) {
    throw std::invalid_argument("spectrum planes do not match dims " + dims_.str());
  }
  for (std::size_t i = 0; i < amplitude_.size(); ++i) {
    if (!std::isfinite(amplitude_[i]) || amplitude_[i] < 0.0) {
      throw std::invalid_argument("spectrum amplitude must be finite and non-negative");
    }
    if (!std::isfinite(phase_[i]) || phase_[i] < -std::numbers::pi || phase_[i] > std::numbers::pi) {
      throw std::invalid_argument("spectrum phase out of range");
    }
  }
}

Spectrum3D Spectrum3D::from_complex(Dims3 dims, std::span<const cplx> bins, bool centered) {
  std::vector<double> amp(bins.size());
  std::vector<double> phase(bins.size());
  for (std::size_t i = 0; i < bins.size(); ++i) {
    amp[i] = std::abs(bins[i]);
    if (amp[i] == 0.0) {
      phase[i] = 0.0;
      continue;
    }
    double p = std::arg(bins[i]);
    if (p <= -std::numbers::pi) p = std::numbers::pi;
    phase[i] = p;
  }
  return Spectrum3D(dims, std::move(amp), std::move(phase), centered);
}

std::vector<cplx> Spectrum3D::to_complex() const {
  std::vector<cplx> out(amplitude_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::polar(amplitude_[i], phase_[i]);
  return out;
}

// ---------------------------------------------------------------------------

FreqCube::Range FreqCube::clamp_range(std::uint32_t center, std::uint32_t b,
                                      std::uint32_t extent) {
  const std::uint32_t lo = center >= b ? center - b : 0;
  const std::uint64_t hi = std::min<std::uint64_t>(std::uint64_t{center} + b, extent - 1);
  return {lo, static_cast<std::uint32_t>(hi)};
}

FreqCube::FreqCube(Dims3 dims, std::uint32_t half_width) : dims_(dims), b_(half_width) {
  if (!dims_.positive()) throw std::invalid_argument("cube dims must be positive");
  rd_ = clamp_range(dims_.d / 2, b_, dims_.d);
  rh_ = clamp_range(dims_.h / 2, b_, dims_.h);
  rw_ = clamp_range(dims_.w / 2, b_, dims_.w);
}

bool FreqCube::contains(std::uint32_t d, std::uint32_t h, std::uint32_t w) const {
  return d >= rd_.lo && d <= rd_.hi && h >= rh_.lo && h <= rh_.hi && w >= rw_.lo && w <= rw_.hi;
}

std::vector<std::size_t> FreqCube::members() const {
  std::vector<std::size_t> out;
  out.reserve(member_count());
  for (std::uint32_t d = rd_.lo; d <= rd_.hi; ++d) {
    for (std::uint32_t h = rh_.lo; h <= rh_.hi; ++h) {
      for (std::uint32_t w = rw_.lo; w <= rw_.hi; ++w) {
        out.push_back((static_cast<std::size_t>(d) * dims_.h + h) * dims_.w + w);
      }
    }
  }
  return out;
}

std::size_t FreqCube::member_count() const {
  return static_cast<std::size_t>(rd_.hi - rd_.lo + 1) * (rh_.hi - rh_.lo + 1) *
         (rw_.hi - rw_.lo + 1);
}

FreqCube cube_from_L(Dims3 dims, double L) {
  if (!(L > 0.0 && L < 1.0)) {
    throw std::invalid_argument("L must lie in (0, 1), got " + std::to_string(L));
  }
  // The epsilon absorbs decimal representation error, e.g. 0.03 * 100.
  const double scaled = L * static_cast<double>(dims.min_extent());
  const auto b = static_cast<std::uint32_t>(std::floor(scaled + 1e-9));
  return FreqCube(dims, b);
}

// ---------------------------------------------------------------------------

Spectrum3D fft3_centered(const Volume3D& v) {
  std::vector<cplx> bins(v.data().begin(), v.data().end());
  fft3_inplace(bins, v.dims(), false);
  const auto shifted = fftshift3(bins, v.dims());
  return Spectrum3D::from_complex(v.dims(), shifted, true);
}

InverseResult ifft3_centered(const Spectrum3D& s, Spacing3 spacing) {
  if (!s.centered()) throw std::invalid_argument("ifft3_centered needs a centered spectrum");
  auto bins = ifftshift3(s.to_complex(), s.dims());
  fft3_inplace(bins, s.dims(), true);
  std::vector<float> real(bins.size());
  double residue = 0.0;
  for (std::size_t i = 0; i < bins.size(); ++i) {
    real[i] = static_cast<float>(bins[i].real());
    residue = std::max(residue, std::abs(bins[i].imag()));
  }
  return {Volume3D(s.dims(), std::move(real), spacing), residue};
}

Spectrum3D amplitude_swap(const Spectrum3D& src, const Spectrum3D& tgt, const FreqCube& cube) {
  if (!(src.dims() == tgt.dims()) || !(src.dims() == cube.dims())) {
    throw std::invalid_argument("amplitude_swap dims mismatch: " + src.dims().str() + " vs " +
                                tgt.dims().str());
  }
  if (!src.centered() || !tgt.centered()) {
    throw std::invalid_argument("amplitude_swap needs centered spectra");
  }
  std::vector<double> amp(src.amplitude().begin(), src.amplitude().end());
  for (std::size_t i : cube.members()) amp[i] = tgt.amplitude()[i];
  return Spectrum3D(src.dims(), std::move(amp),
                    std::vector<double>(src.phase().begin(), src.phase().end()), true);
}

FdaResult apply_fda(const Volume3D& src, const Volume3D& tgt, double L) {
  if (!(src.dims() == tgt.dims())) {
    throw std::invalid_argument("apply_fda dims mismatch: " + src.dims().str() + " vs " +
                                tgt.dims().str());
  }
  const FreqCube cube = cube_from_L(src.dims(), L);
  FdaResult result{Volume3D::zeros(src.dims()), cube.half_width(), 0.0, {}};
  if (L < kTypicalLMin || L > kTypicalLMax) {
    std::ostringstream os;
    os << "L=" << L << " outside the usual MRI range [" << kTypicalLMin << ", " << kTypicalLMax
       << "]";
    result.notes.push_back(os.str());
  }
  const std::size_t side = 2 * std::size_t{cube.half_width()} + 1;
  if (cube.member_count() != side * side * side) {
    result.notes.push_back("cube clamped at array borders");
  }

  const Spectrum3D mixed = amplitude_swap(fft3_centered(src), fft3_centered(tgt), cube);
  auto inv = ifft3_centered(mixed, src.spacing());
  result.volume = std::move(inv.volume);
  result.max_imag_residue = inv.max_imag_residue;
  return result;
}

}  // namespace voladapt
