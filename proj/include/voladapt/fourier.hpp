// Fourier amplitude transplantation between volumes.
//
// A source volume keeps its phase spectrum while its lowest frequencies take
// the target's amplitudes, so appearance moves toward the target and
// anatomy stays put. All spectra here are centered: the DC bin sits at
// (floor(D/2), floor(H/2), floor(W/2)).

#ifndef VOLADAPT_FOURIER_HPP
#define VOLADAPT_FOURIER_HPP

#include <string>
#include <vector>

#include "voladapt/fft.hpp"
#include "voladapt/volume.hpp"

namespace voladapt {

/// Polar form of a 3D spectrum. Amplitude >= 0; phase in (-pi, pi], and
/// exactly 0 wherever amplitude is 0.
class Spectrum3D {
 public:
  Spectrum3D(Dims3 dims, std::vector<double> amplitude, std::vector<double> phase,
             bool centered);

  /// Polar decomposition of complex bins.
  static Spectrum3D from_complex(Dims3 dims, std::span<const cplx> bins, bool centered);

  const Dims3& dims() const { return dims_; }
  std::span<const double> amplitude() const { return amplitude_; }
  std::span<const double> phase() const { return phase_; }
  bool centered() const { return centered_; }

  std::vector<cplx> to_complex() const;

 private:
  Dims3 dims_;
  std::vector<double> amplitude_;
  std::vector<double> phase_;
  bool centered_;
};

/// Centered low-frequency cube of half-width b, clamped at array borders.
class FreqCube {
 public:
  FreqCube(Dims3 dims, std::uint32_t half_width);

  const Dims3& dims() const { return dims_; }
  std::uint32_t half_width() const { return b_; }
  std::array<std::uint32_t, 3> center() const { return {dims_.d / 2, dims_.h / 2, dims_.w / 2}; }

  bool contains(std::uint32_t d, std::uint32_t h, std::uint32_t w) const;
  /// Linear indices of member bins in ascending order.
  std::vector<std::size_t> members() const;
  std::size_t member_count() const;

 private:
  struct Range {
    std::uint32_t lo;
    std::uint32_t hi;  // inclusive
  };
  static Range clamp_range(std::uint32_t center, std::uint32_t b, std::uint32_t extent);

  Dims3 dims_;
  std::uint32_t b_;
  Range rd_, rh_, rw_;
};

/// b = floor(L * min(D, H, W)). Throws std::invalid_argument unless 0 < L < 1.
FreqCube cube_from_L(Dims3 dims, double L);

Spectrum3D fft3_centered(const Volume3D& v);

struct InverseResult {
  Volume3D volume;
  /// Largest |imag| discarded when taking the real part.
  double max_imag_residue = 0.0;
};

InverseResult ifft3_centered(const Spectrum3D& s, Spacing3 spacing = kUnitSpacing);

/// Target amplitude inside the cube, source amplitude elsewhere, source
/// phase everywhere.
Spectrum3D amplitude_swap(const Spectrum3D& src, const Spectrum3D& tgt, const FreqCube& cube);

struct FdaResult {
  Volume3D volume;
  std::uint32_t half_width = 0;
  double max_imag_residue = 0.0;
  std::vector<std::string> notes;
};

inline constexpr double kTypicalLMin = 0.01;
inline constexpr double kTypicalLMax = 0.03;

/// Fourier domain adaptation of `src` toward the appearance of `tgt`.
/// Output intensities are not clamped.
FdaResult apply_fda(const Volume3D& src, const Volume3D& tgt, double L);

}  // namespace voladapt

#endif  // VOLADAPT_FOURIER_HPP
