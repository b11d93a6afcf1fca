#include "voladapt/fft.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

namespace voladapt {

namespace {

// Largest prime handled by the direct radix-p butterfly.
constexpr std::size_t kMaxDirectRadix = 13;

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

std::vector<std::size_t> factorize(std::size_t n) {
  std::vector<std::size_t> out;
  for (std::size_t p = 2; p * p <= n; ++p) {
    while (n % p == 0) {
      out.push_back(p);
      n /= p;
    }
  }
  if (n > 1) out.push_back(n);
  return out;
}

struct FftPlan::Bluestein {
  std::size_t m = 0;          // power-of-two convolution length
  std::vector<cplx> chirp;    // exp(-i pi k^2 / n)
  std::vector<cplx> kernel;   // FFT of the conjugate chirp, wrapped
  std::unique_ptr<FftPlan> inner;
};

FftPlan::FftPlan(std::size_t n) : n_(n) {
  if (n == 0) throw std::invalid_argument("FFT length must be positive");

  factors_ = factorize(n);
  const bool direct =
      std::all_of(factors_.begin(), factors_.end(), [](std::size_t p) { return p <= kMaxDirectRadix; });

  if (direct) {
    // Fold pairs of 2 into radix 4 for fewer passes.
    std::vector<std::size_t> folded;
    std::size_t twos = static_cast<std::size_t>(std::count(factors_.begin(), factors_.end(), 2));
    for (; twos >= 2; twos -= 2) folded.push_back(4);
    if (twos == 1) folded.push_back(2);
    for (std::size_t p : factors_) {
      if (p != 2) folded.push_back(p);
    }
    factors_ = std::move(folded);

    twiddles_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = {std::cos(angle), std::sin(angle)};
    }
    return;
  }

  auto b = std::make_unique<Bluestein>();
  b->m = next_pow2(2 * n - 1);
  b->inner = std::make_unique<FftPlan>(b->m);
  b->chirp.resize(n);
  const std::uint64_t two_n = 2 * static_cast<std::uint64_t>(n);
  for (std::size_t k = 0; k < n; ++k) {
    // k^2 mod 2n keeps the angle argument small and exact.
    const std::uint64_t k2 = (static_cast<std::uint64_t>(k) * k) % two_n;
    const double angle = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
    b->chirp[k] = {std::cos(angle), std::sin(angle)};
  }
  b->kernel.assign(b->m, cplx{});
  b->kernel[0] = std::conj(b->chirp[0]);
  for (std::size_t k = 1; k < n; ++k) {
    b->kernel[k] = std::conj(b->chirp[k]);
    b->kernel[b->m - k] = std::conj(b->chirp[k]);
  }
  b->inner->forward(b->kernel);
  bluestein_ = std::move(b);
}

FftPlan::~FftPlan() = default;
FftPlan::FftPlan(FftPlan&&) noexcept = default;
FftPlan& FftPlan::operator=(FftPlan&&) noexcept = default;

void FftPlan::recurse(const cplx* in, std::size_t stride, cplx* out, std::size_t n,
                      std::size_t factor_idx) const {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  const std::size_t p = factors_[factor_idx];
  const std::size_t m = n / p;
  for (std::size_t q = 0; q < p; ++q) {
    recurse(in + q * stride, stride * p, out + q * m, m, factor_idx + 1);
  }

  const std::size_t step = n_ / n;  // twiddle stride for W_n
  if (p == 2) {
    for (std::size_t k = 0; k < m; ++k) {
      const cplx a = out[k];
      const cplx b = out[m + k] * twiddles_[k * step];
      out[k] = a + b;
      out[m + k] = a - b;
    }
    return;
  }
  if (p == 4) {
    for (std::size_t k = 0; k < m; ++k) {
      const cplx a0 = out[k];
      const cplx a1 = out[m + k] * twiddles_[k * step];
      const cplx a2 = out[2 * m + k] * twiddles_[2 * k * step];
      const cplx a3 = out[3 * m + k] * twiddles_[3 * k * step];
      const cplx s02 = a0 + a2;
      const cplx d02 = a0 - a2;
      const cplx s13 = a1 + a3;
      const cplx d13 = a1 - a3;
      const cplx rot{d13.imag(), -d13.real()};  // -i * d13
      out[k] = s02 + s13;
      out[m + k] = d02 + rot;
      out[2 * m + k] = s02 - s13;
      out[3 * m + k] = d02 - rot;
    }
    return;
  }

  const std::size_t root_step = n_ / p;  // twiddle stride for W_p
  cplx tmp[kMaxDirectRadix];
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t q = 0; q < p; ++q) {
      tmp[q] = out[q * m + k] * twiddles_[(q * k * step) % n_];
    }
    for (std::size_t r = 0; r < p; ++r) {
      cplx acc = tmp[0];
      for (std::size_t q = 1; q < p; ++q) {
        acc += tmp[q] * twiddles_[((q * r) % p) * root_step];
      }
      out[r * m + k] = acc;
    }
  }
}

void FftPlan::mixed_radix(std::span<const cplx> in, std::span<cplx> out) const {
  recurse(in.data(), 1, out.data(), n_, 0);
}

void FftPlan::forward(std::span<cplx> data) const {
  if (data.size() != n_) throw std::invalid_argument("FFT buffer length mismatch");
  if (n_ == 1) return;

  if (!bluestein_) {
    std::vector<cplx> input(data.begin(), data.end());
    mixed_radix(input, data);
    return;
  }

  const Bluestein& b = *bluestein_;
  std::vector<cplx> work(b.m, cplx{});
  for (std::size_t k = 0; k < n_; ++k) work[k] = data[k] * b.chirp[k];
  b.inner->forward(work);
  for (std::size_t k = 0; k < b.m; ++k) work[k] *= b.kernel[k];
  b.inner->inverse(work);
  for (std::size_t k = 0; k < n_; ++k) data[k] = work[k] * b.chirp[k];
}

void FftPlan::inverse(std::span<cplx> data) const {
  for (auto& x : data) x = std::conj(x);
  forward(data);
  const double scale = 1.0 / static_cast<double>(n_);
  for (auto& x : data) x = std::conj(x) * scale;
}

void fft3_inplace(std::span<cplx> data, Dims3 dims, bool inverse) {
  if (data.size() != dims.count()) throw std::invalid_argument("fft3 buffer/dims mismatch");

  std::map<std::size_t, FftPlan> plans;
  auto plan_for = [&plans](std::size_t n) -> const FftPlan& {
    auto it = plans.find(n);
    if (it == plans.end()) it = plans.emplace(n, FftPlan(n)).first;
    return it->second;
  };

  const std::size_t extents[3] = {dims.d, dims.h, dims.w};
  const std::size_t strides[3] = {static_cast<std::size_t>(dims.h) * dims.w, dims.w, 1};
  std::vector<cplx> line;
  for (int axis = 2; axis >= 0; --axis) {
    const std::size_t n = extents[axis];
    if (n == 1) continue;
    const FftPlan& plan = plan_for(n);
    const std::size_t stride = strides[axis];
    line.resize(n);
    // Each line is identified by its offset with the axis coordinate zeroed.
    for (std::size_t base = 0; base < data.size(); ++base) {
      if ((base / stride) % n != 0) continue;
      for (std::size_t i = 0; i < n; ++i) line[i] = data[base + i * stride];
      if (inverse) {
        plan.inverse(line);
      } else {
        plan.forward(line);
      }
      for (std::size_t i = 0; i < n; ++i) data[base + i * stride] = line[i];
    }
  }
}

namespace {

std::vector<cplx> roll3(std::span<const cplx> data, Dims3 dims, bool forward) {
  if (data.size() != dims.count()) throw std::invalid_argument("shift buffer/dims mismatch");
  std::vector<cplx> out(data.size());
  const std::size_t sd = dims.d / 2;
  const std::size_t sh = dims.h / 2;
  const std::size_t sw = dims.w / 2;
  for (std::size_t d = 0; d < dims.d; ++d) {
    const std::size_t td = (d + sd) % dims.d;
    for (std::size_t h = 0; h < dims.h; ++h) {
      const std::size_t th = (h + sh) % dims.h;
      for (std::size_t w = 0; w < dims.w; ++w) {
        const std::size_t tw = (w + sw) % dims.w;
        const std::size_t src = (d * dims.h + h) * dims.w + w;
        const std::size_t dst = (td * dims.h + th) * dims.w + tw;
        if (forward) {
          out[dst] = data[src];
        } else {
          out[src] = data[dst];
        }
      }
    }
  }
  return out;
}

}  // namespace

std::vector<cplx> fftshift3(std::span<const cplx> data, Dims3 dims) {
  return roll3(data, dims, true);
}

std::vector<cplx> ifftshift3(std::span<const cplx> data, Dims3 dims) {
  return roll3(data, dims, false);
}

}  // namespace voladapt
