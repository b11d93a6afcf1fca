#include "voladapt/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace voladapt {

static_assert(std::endian::native == std::endian::little,
              "VOL1 I/O assumes a little-endian host");

std::uint32_t Dims3::min_extent() const { return std::min({d, h, w}); }

std::string Dims3::str() const {
  std::ostringstream os;
  os << d << "x" << h << "x" << w;
  return os.str();
}

namespace {

void require_dims(Dims3 dims) {
  if (!dims.positive()) {
    throw std::invalid_argument("volume dims must be positive, got " + dims.str());
  }
}

void require_spacing(const Spacing3& s) {
  for (float v : s) {
    if (!std::isfinite(v) || v <= 0.0f) {
      throw std::invalid_argument("voxel spacing must be finite and positive");
    }
  }
}

}  // namespace

Volume3D::Volume3D(Dims3 dims, std::vector<float> data, Spacing3 spacing)
    : dims_(dims), data_(std::move(data)), spacing_(spacing) {
  require_dims(dims_);
  require_spacing(spacing_);
  if (data_.size() != dims_.count()) {
    throw std::invalid_argument("volume data length " + std::to_string(data_.size()) +
                                " does not match dims " + dims_.str());
  }
  if (!std::all_of(data_.begin(), data_.end(), [](float x) { return std::isfinite(x); })) {
    throw std::invalid_argument("volume contains non-finite values");
  }
}

Volume3D Volume3D::zeros(Dims3 dims, Spacing3 spacing) {
  require_dims(dims);
  return Volume3D(dims, std::vector<float>(dims.count(), 0.0f), spacing);
}

Mask3D::Mask3D(Dims3 dims, std::vector<std::uint8_t> data, Spacing3 spacing)
    : dims_(dims), data_(std::move(data)), spacing_(spacing) {
  require_dims(dims_);
  require_spacing(spacing_);
  if (data_.size() != dims_.count()) {
    throw std::invalid_argument("mask data length " + std::to_string(data_.size()) +
                                " does not match dims " + dims_.str());
  }
  if (!std::all_of(data_.begin(), data_.end(), [](std::uint8_t b) { return b <= 1; })) {
    throw std::invalid_argument("mask values must be 0 or 1");
  }
}

Mask3D Mask3D::empty(Dims3 dims, Spacing3 spacing) {
  require_dims(dims);
  return Mask3D(dims, std::vector<std::uint8_t>(dims.count(), 0), spacing);
}

std::size_t Mask3D::foreground_count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

SliceMask2D::SliceMask2D(std::uint32_t h, std::uint32_t w, std::vector<std::uint8_t> data)
    : h_(h), w_(w), data_(std::move(data)) {
  if (h_ == 0 || w_ == 0) throw std::invalid_argument("slice dims must be positive");
  if (data_.size() != static_cast<std::size_t>(h_) * w_) {
    throw std::invalid_argument("slice data length does not match dims");
  }
  if (!std::all_of(data_.begin(), data_.end(), [](std::uint8_t b) { return b <= 1; })) {
    throw std::invalid_argument("slice mask values must be 0 or 1");
  }
}

SliceMask2D SliceMask2D::empty(std::uint32_t h, std::uint32_t w) {
  return SliceMask2D(h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w, 0));
}

std::size_t SliceMask2D::foreground_count() const {
  return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

void BBox2D::validate(std::uint32_t h, std::uint32_t w) const {
  if (row_min > row_max || col_min > col_max || row_max >= h || col_max >= w) {
    std::ostringstream os;
    os << "bbox [" << row_min << "," << row_max << "," << col_min << "," << col_max
       << "] invalid for " << h << "x" << w << " slice";
    throw std::invalid_argument(os.str());
  }
}

// ---------------------------------------------------------------------------
// VOL1

const char* to_string(VolIoErrc code) {
  switch (code) {
    case VolIoErrc::kOpenFailed: return "open-failed";
    case VolIoErrc::kWriteFailed: return "write-failed";
    case VolIoErrc::kBadMagic: return "bad-magic";
    case VolIoErrc::kBadDtype: return "bad-dtype";
    case VolIoErrc::kTruncatedHeader: return "truncated-header";
    case VolIoErrc::kZeroDims: return "zero-dims";
    case VolIoErrc::kDimsOverflow: return "dims-overflow";
    case VolIoErrc::kTruncatedPayload: return "truncated-payload";
    case VolIoErrc::kTrailingBytes: return "trailing-bytes";
    case VolIoErrc::kNonFinite: return "non-finite";
    case VolIoErrc::kNonBinary: return "non-binary";
    case VolIoErrc::kWrongDtype: return "wrong-dtype";
  }
  return "unknown";
}

VolIoError::VolIoError(VolIoErrc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

namespace {

constexpr char kMagic[4] = {'V', 'O', 'L', '1'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T value;
  std::memcpy(&value, bytes.data() + offset, sizeof(T));
  return value;
}

std::vector<std::uint8_t> encode_header(VolDtype dtype, Dims3 dims, const Spacing3& spacing,
                                        std::size_t payload_bytes) {
  std::vector<std::uint8_t> out;
  out.reserve(kVolHeaderBytes + payload_bytes);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<std::uint8_t>(dtype));
  put(out, dims.d);
  put(out, dims.h);
  put(out, dims.w);
  for (float s : spacing) put(out, s);
  return out;
}

VolHeader decode_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw VolIoError(VolIoErrc::kBadMagic, "missing VOL1 magic");
  }
  if (bytes.size() < kVolHeaderBytes) {
    throw VolIoError(VolIoErrc::kTruncatedHeader,
                     "header needs " + std::to_string(kVolHeaderBytes) + " bytes, file has " +
                         std::to_string(bytes.size()));
  }
  VolHeader hdr{};
  const std::uint8_t dtype = bytes[4];
  if (dtype > 1) {
    throw VolIoError(VolIoErrc::kBadDtype, "dtype code " + std::to_string(dtype));
  }
  hdr.dtype = static_cast<VolDtype>(dtype);
  hdr.dims = {get<std::uint32_t>(bytes, 5), get<std::uint32_t>(bytes, 9),
              get<std::uint32_t>(bytes, 13)};
  for (int i = 0; i < 3; ++i) hdr.spacing[i] = get<float>(bytes, 17 + 4 * i);
  if (!hdr.dims.positive()) throw VolIoError(VolIoErrc::kZeroDims, hdr.dims.str());
  // Checked stepwise so the 64-bit product cannot wrap.
  const std::uint64_t dh = std::uint64_t{hdr.dims.d} * hdr.dims.h;
  if (dh > kMaxVoxels || dh * hdr.dims.w > kMaxVoxels) {
    throw VolIoError(VolIoErrc::kDimsOverflow, hdr.dims.str() + " exceeds voxel cap");
  }
  for (float s : hdr.spacing) {
    if (!std::isfinite(s) || s <= 0.0f) {
      throw VolIoError(VolIoErrc::kNonFinite, "spacing must be finite and positive");
    }
  }
  return hdr;
}

std::span<const std::uint8_t> payload_of(std::span<const std::uint8_t> bytes,
                                         const VolHeader& hdr) {
  const std::size_t elem = hdr.dtype == VolDtype::kFloat32 ? 4 : 1;
  const std::size_t want = hdr.dims.count() * elem;
  const std::size_t have = bytes.size() - kVolHeaderBytes;
  if (have < want) {
    throw VolIoError(VolIoErrc::kTruncatedPayload,
                     "expected " + std::to_string(want) + " payload bytes, found " +
                         std::to_string(have));
  }
  if (have > want) {
    throw VolIoError(VolIoErrc::kTrailingBytes,
                     std::to_string(have - want) + " bytes after payload");
  }
  return bytes.subspan(kVolHeaderBytes, want);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolIoError(VolIoErrc::kOpenFailed, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw VolIoError(VolIoErrc::kOpenFailed, path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw VolIoError(VolIoErrc::kWriteFailed, path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const Volume3D& v) {
  auto out = encode_header(VolDtype::kFloat32, v.dims(), v.spacing(), v.size() * 4);
  const auto* raw = reinterpret_cast<const std::uint8_t*>(v.data().data());
  out.insert(out.end(), raw, raw + v.size() * 4);
  return out;
}

std::vector<std::uint8_t> encode_mask(const Mask3D& m) {
  auto out = encode_header(VolDtype::kMask8, m.dims(), m.spacing(), m.size());
  out.insert(out.end(), m.data().begin(), m.data().end());
  return out;
}

Volume3D decode_volume(std::span<const std::uint8_t> bytes) {
  const VolHeader hdr = decode_header(bytes);
  const auto payload = payload_of(bytes, hdr);
  std::vector<float> data(hdr.dims.count());
  if (hdr.dtype == VolDtype::kFloat32) {
    std::memcpy(data.data(), payload.data(), payload.size());
    if (!std::all_of(data.begin(), data.end(), [](float x) { return std::isfinite(x); })) {
      throw VolIoError(VolIoErrc::kNonFinite, "payload contains NaN or Inf");
    }
  } else {
    std::transform(payload.begin(), payload.end(), data.begin(),
                   [](std::uint8_t b) { return static_cast<float>(b); });
  }
  return Volume3D(hdr.dims, std::move(data), hdr.spacing);
}

Mask3D decode_mask(std::span<const std::uint8_t> bytes) {
  const VolHeader hdr = decode_header(bytes);
  const auto payload = payload_of(bytes, hdr);
  if (hdr.dtype != VolDtype::kMask8) {
    throw VolIoError(VolIoErrc::kWrongDtype, "expected mask (dtype 1)");
  }
  if (!std::all_of(payload.begin(), payload.end(), [](std::uint8_t b) { return b <= 1; })) {
    throw VolIoError(VolIoErrc::kNonBinary, "mask payload has values other than 0/1");
  }
  return Mask3D(hdr.dims, std::vector<std::uint8_t>(payload.begin(), payload.end()),
                hdr.spacing);
}

VolHeader read_vol_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VolIoError(VolIoErrc::kOpenFailed, path.string());
  std::vector<std::uint8_t> head(kVolHeaderBytes);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  return decode_header(head);
}

Volume3D load_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }
Mask3D load_mask(const std::filesystem::path& path) { return decode_mask(read_file(path)); }

void save_volume(const Volume3D& v, const std::filesystem::path& path) {
  write_file(path, encode_volume(v));
}
void save_mask(const Mask3D& m, const std::filesystem::path& path) {
  write_file(path, encode_mask(m));
}

// ---------------------------------------------------------------------------
// Preprocessing

Volume3D minmax_normalize(const Volume3D& v) {
  const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
  const float lo = *lo_it;
  const float hi = *hi_it;
  std::vector<float> out(v.size(), 0.0f);
  if (hi > lo) {
    const double range = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (v.data()[i] == hi) {
        out[i] = 1.0f;  // exact endpoint keeps normalize idempotent
      } else {
        out[i] = static_cast<float>((static_cast<double>(v.data()[i]) - lo) / range);
      }
    }
  }
  return Volume3D(v.dims(), std::move(out), v.spacing());
}

namespace {

AxisWindow fit_axis(std::int64_t lo, std::int64_t hi, std::int64_t target) {
  const std::int64_t extent = hi - lo + 1;
  if (extent >= target) return {lo + (extent - target) / 2, 0, target};
  return {lo, (target - extent) / 2, extent};
}

template <typename T>
std::vector<T> copy_window(std::span<const T> src, Dims3 dims, const FitWindow& win) {
  const Dims3 target = win.target;
  std::vector<T> out(target.count(), T{0});
  if (win.empty) return out;
  const auto& [wd, wh, ww] = win.axes;
  for (std::int64_t d = 0; d < wd.length; ++d) {
    for (std::int64_t h = 0; h < wh.length; ++h) {
      const auto src_row = (static_cast<std::size_t>(wd.src_start + d) * dims.h +
                            static_cast<std::size_t>(wh.src_start + h)) * dims.w +
                           static_cast<std::size_t>(ww.src_start);
      const auto dst_row = (static_cast<std::size_t>(wd.dst_start + d) * target.h +
                            static_cast<std::size_t>(wh.dst_start + h)) * target.w +
                           static_cast<std::size_t>(ww.dst_start);
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(src_row), ww.length,
                  out.begin() + static_cast<std::ptrdiff_t>(dst_row));
    }
  }
  return out;
}

}  // namespace

FitWindow nonzero_fit_window(const Volume3D& v, Dims3 target) {
  require_dims(target);
  const Dims3 dims = v.dims();
  std::array<std::int64_t, 3> lo{dims.d, dims.h, dims.w};
  std::array<std::int64_t, 3> hi{-1, -1, -1};
  for (std::uint32_t d = 0; d < dims.d; ++d) {
    for (std::uint32_t h = 0; h < dims.h; ++h) {
      for (std::uint32_t w = 0; w < dims.w; ++w) {
        if (v.at(d, h, w) == 0.0f) continue;
        const std::array<std::int64_t, 3> p{d, h, w};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
      }
    }
  }
  FitWindow win;
  win.source = dims;
  win.target = target;
  if (hi[0] < 0) {
    win.empty = true;
    return win;
  }
  win.axes = {fit_axis(lo[0], hi[0], target.d), fit_axis(lo[1], hi[1], target.h),
              fit_axis(lo[2], hi[2], target.w)};
  return win;
}

Volume3D apply_fit(const Volume3D& v, const FitWindow& win) {
  if (v.dims() != win.source) throw std::invalid_argument("fit window was computed for other dims");
  return Volume3D(win.target, copy_window(v.data(), v.dims(), win), v.spacing());
}

Mask3D apply_fit(const Mask3D& m, const FitWindow& win) {
  if (m.dims() != win.source) throw std::invalid_argument("fit window was computed for other dims");
  return Mask3D(win.target, copy_window(m.data(), m.dims(), win), m.spacing());
}

Volume3D crop_to_nonzero_then_fit(const Volume3D& v, Dims3 target) {
  return apply_fit(v, nonzero_fit_window(v, target));
}

SliceMask2D extract_slice(const Mask3D& m, std::uint32_t j) {
  if (j >= m.dims().d) {
    throw std::out_of_range("slice index " + std::to_string(j) + " out of range for depth " +
                            std::to_string(m.dims().d));
  }
  const std::size_t plane = static_cast<std::size_t>(m.dims().h) * m.dims().w;
  const auto first = m.data().begin() + static_cast<std::ptrdiff_t>(j * plane);
  return SliceMask2D(m.dims().h, m.dims().w,
                     std::vector<std::uint8_t>(first, first + static_cast<std::ptrdiff_t>(plane)));
}

Mask3D stack_slices(std::span<const SliceMask2D> slices, Spacing3 spacing) {
  if (slices.empty()) throw std::invalid_argument("cannot stack zero slices");
  const std::uint32_t h = slices.front().height();
  const std::uint32_t w = slices.front().width();
  std::vector<std::uint8_t> data;
  data.reserve(slices.size() * h * w);
  for (const auto& s : slices) {
    if (s.height() != h || s.width() != w) {
      throw std::invalid_argument("inconsistent slice dims while stacking");
    }
    data.insert(data.end(), s.data().begin(), s.data().end());
  }
  return Mask3D({static_cast<std::uint32_t>(slices.size()), h, w}, std::move(data), spacing);
}

Mask3D threshold_mask(const Volume3D& v, float threshold) {
  std::vector<std::uint8_t> data(v.size());
  std::transform(v.data().begin(), v.data().end(), data.begin(),
                 [threshold](float x) { return static_cast<std::uint8_t>(x >= threshold); });
  return Mask3D(v.dims(), std::move(data), v.spacing());
}

Volume3D mask_to_volume(const Mask3D& m) {
  std::vector<float> data(m.size());
  std::transform(m.data().begin(), m.data().end(), data.begin(),
                 [](std::uint8_t b) { return static_cast<float>(b); });
  return Volume3D(m.dims(), std::move(data), m.spacing());
}

Dims3 parse_dims(const std::string& text) {
  Dims3 out{};
  std::uint32_t* slots[3] = {&out.d, &out.h, &out.w};
  std::istringstream in(text);
  std::string part;
  int i = 0;
  while (std::getline(in, part, ',')) {
    if (i == 3) throw std::invalid_argument("dims need exactly 3 values: " + text);
    std::size_t used = 0;
    const unsigned long value = std::stoul(part, &used);
    if (used != part.size() || value == 0 || value > 0xFFFFFFFFul) {
      throw std::invalid_argument("bad dims component '" + part + "'");
    }
    *slots[i++] = static_cast<std::uint32_t>(value);
  }
  if (i != 3) throw std::invalid_argument("dims need exactly 3 values: " + text);
  return out;
}

}  // namespace voladapt
