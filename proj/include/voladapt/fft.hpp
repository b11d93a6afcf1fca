// Complex FFT for arbitrary lengths.
//
// Lengths whose prime factors are all small use a recursive mixed-radix
// Cooley-Tukey decomposition; any length with a larger prime factor goes
// through Bluestein's chirp-z algorithm on a power-of-two convolution.

#ifndef VOLADAPT_FFT_HPP
#define VOLADAPT_FFT_HPP

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "voladapt/volume.hpp"

namespace voladapt {

using cplx = std::complex<double>;

/// Immutable after construction; forward/inverse may run concurrently.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n);
  ~FftPlan();
  FftPlan(FftPlan&&) noexcept;
  FftPlan& operator=(FftPlan&&) noexcept;

  std::size_t size() const { return n_; }
  bool uses_bluestein() const { return bluestein_ != nullptr; }

  /// In-place forward transform, X_k = sum_j x_j exp(-2 pi i jk / n).
  void forward(std::span<cplx> data) const;
  /// In-place inverse transform including the 1/n factor.
  void inverse(std::span<cplx> data) const;

 private:
  struct Bluestein;

  void mixed_radix(std::span<const cplx> in, std::span<cplx> out) const;
  void recurse(const cplx* in, std::size_t stride, cplx* out, std::size_t n,
               std::size_t factor_idx) const;

  std::size_t n_;
  std::vector<std::size_t> factors_;
  std::vector<cplx> twiddles_;  // exp(-2 pi i k / n), k < n
  std::unique_ptr<Bluestein> bluestein_;
};

/// Prime factorization in ascending order.
std::vector<std::size_t> factorize(std::size_t n);

/// Separable 3D transform over row-major (d, h, w) data.
void fft3_inplace(std::span<cplx> data, Dims3 dims, bool inverse);

/// Moves the zero-frequency bin to (floor(D/2), floor(H/2), floor(W/2)).
std::vector<cplx> fftshift3(std::span<const cplx> data, Dims3 dims);
/// Exact inverse of fftshift3.
std::vector<cplx> ifftshift3(std::span<const cplx> data, Dims3 dims);

}  // namespace voladapt

#endif  // VOLADAPT_FFT_HPP
