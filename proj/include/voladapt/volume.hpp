// Volumetric data types, VOL1 file I/O and intensity preprocessing.
//
// Voxel order is row-major over (d, h, w) with w varying fastest. All types
// validate their invariants on construction and are immutable afterwards.

#ifndef VOLADAPT_VOLUME_HPP
#define VOLADAPT_VOLUME_HPP

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace voladapt {

struct Dims3 {
  std::uint32_t d = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(d) * h * w;
  }
  std::uint32_t min_extent() const;
  bool positive() const { return d > 0 && h > 0 && w > 0; }
  std::string str() const;

  friend bool operator==(const Dims3&, const Dims3&) = default;
};

using Spacing3 = std::array<float, 3>;
inline constexpr Spacing3 kUnitSpacing{1.0f, 1.0f, 1.0f};

class Volume3D {
 public:
  Volume3D(Dims3 dims, std::vector<float> data, Spacing3 spacing = kUnitSpacing);

  static Volume3D zeros(Dims3 dims, Spacing3 spacing = kUnitSpacing);

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  std::span<const float> data() const { return data_; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::uint32_t d, std::uint32_t h, std::uint32_t w) const {
    return (static_cast<std::size_t>(d) * dims_.h + h) * dims_.w + w;
  }
  float at(std::uint32_t d, std::uint32_t h, std::uint32_t w) const {
    return data_[index(d, h, w)];
  }

 private:
  Dims3 dims_;
  std::vector<float> data_;
  Spacing3 spacing_;
};

class Mask3D {
 public:
  Mask3D(Dims3 dims, std::vector<std::uint8_t> data, Spacing3 spacing = kUnitSpacing);

  static Mask3D empty(Dims3 dims, Spacing3 spacing = kUnitSpacing);

  const Dims3& dims() const { return dims_; }
  const Spacing3& spacing() const { return spacing_; }
  std::span<const std::uint8_t> data() const { return data_; }
  std::size_t size() const { return data_.size(); }
  std::size_t foreground_count() const;

  std::size_t index(std::uint32_t d, std::uint32_t h, std::uint32_t w) const {
    return (static_cast<std::size_t>(d) * dims_.h + h) * dims_.w + w;
  }
  bool at(std::uint32_t d, std::uint32_t h, std::uint32_t w) const {
    return data_[index(d, h, w)] != 0;
  }

  friend bool operator==(const Mask3D& a, const Mask3D& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  Dims3 dims_;
  std::vector<std::uint8_t> data_;
  Spacing3 spacing_;
};

class SliceMask2D {
 public:
  SliceMask2D(std::uint32_t h, std::uint32_t w, std::vector<std::uint8_t> data);

  static SliceMask2D empty(std::uint32_t h, std::uint32_t w);

  std::uint32_t height() const { return h_; }
  std::uint32_t width() const { return w_; }
  std::span<const std::uint8_t> data() const { return data_; }
  std::size_t foreground_count() const;

  bool at(std::uint32_t r, std::uint32_t c) const {
    return data_[static_cast<std::size_t>(r) * w_ + c] != 0;
  }

  friend bool operator==(const SliceMask2D&, const SliceMask2D&) = default;

 private:
  std::uint32_t h_;
  std::uint32_t w_;
  std::vector<std::uint8_t> data_;
};

/// Inclusive pixel rectangle inside an H x W slice.
struct BBox2D {
  std::uint32_t row_min = 0;
  std::uint32_t row_max = 0;
  std::uint32_t col_min = 0;
  std::uint32_t col_max = 0;

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(row_max - row_min + 1) * (col_max - col_min + 1);
  }
  bool contains(std::uint32_t r, std::uint32_t c) const {
    return r >= row_min && r <= row_max && c >= col_min && c <= col_max;
  }
  /// Throws std::invalid_argument unless ordered and inside an h x w slice.
  void validate(std::uint32_t h, std::uint32_t w) const;

  friend bool operator==(const BBox2D&, const BBox2D&) = default;
};

// ---------------------------------------------------------------------------
// VOL1 I/O

enum class VolIoErrc {
  kOpenFailed,
  kWriteFailed,
  kBadMagic,
  kBadDtype,
  kTruncatedHeader,
  kZeroDims,
  kDimsOverflow,
  kTruncatedPayload,
  kTrailingBytes,
  kNonFinite,
  kNonBinary,
  kWrongDtype,
};

const char* to_string(VolIoErrc code);

class VolIoError : public std::runtime_error {
 public:
  VolIoError(VolIoErrc code, const std::string& what);
  VolIoErrc code() const { return code_; }

 private:
  VolIoErrc code_;
};

enum class VolDtype : std::uint8_t { kFloat32 = 0, kMask8 = 1 };

struct VolHeader {
  VolDtype dtype;
  Dims3 dims;
  Spacing3 spacing;
};

inline constexpr std::size_t kVolHeaderBytes = 4 + 1 + 3 * 4 + 3 * 4;
/// Hard cap on voxel count accepted by the reader (2^31 voxels).
inline constexpr std::size_t kMaxVoxels = std::size_t{1} << 31;

VolHeader read_vol_header(const std::filesystem::path& path);

Volume3D load_volume(const std::filesystem::path& path);
Mask3D load_mask(const std::filesystem::path& path);
void save_volume(const Volume3D& v, const std::filesystem::path& path);
void save_mask(const Mask3D& m, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_volume(const Volume3D& v);
std::vector<std::uint8_t> encode_mask(const Mask3D& m);
Volume3D decode_volume(std::span<const std::uint8_t> bytes);
Mask3D decode_mask(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Preprocessing

/// (x - min) / (max - min); a constant volume maps to all zeros.
Volume3D minmax_normalize(const Volume3D& v);

/// Crops to the tight bounding box of nonzero voxels, then center-crops or
/// zero-pads each axis to `target`. Odd leftovers go to the high side. An
/// all-zero input yields a zero volume of `target` dims.
Volume3D crop_to_nonzero_then_fit(const Volume3D& v, Dims3 target);

struct AxisWindow {
  std::int64_t src_start = 0;  // first source index copied
  std::int64_t dst_start = 0;  // where it lands in the output
  std::int64_t length = 0;
};

/// The crop/pad placement chosen by crop_to_nonzero_then_fit, reusable so a
/// label volume can follow its image.
struct FitWindow {
  Dims3 source;
  Dims3 target;
  std::array<AxisWindow, 3> axes;
  bool empty = false;  // all-zero input: output is all zeros
};

FitWindow nonzero_fit_window(const Volume3D& v, Dims3 target);
Volume3D apply_fit(const Volume3D& v, const FitWindow& win);
Mask3D apply_fit(const Mask3D& m, const FitWindow& win);

SliceMask2D extract_slice(const Mask3D& m, std::uint32_t j);
Mask3D stack_slices(std::span<const SliceMask2D> slices, Spacing3 spacing = kUnitSpacing);

/// Binarizes a float volume: value >= threshold becomes foreground.
Mask3D threshold_mask(const Volume3D& v, float threshold = 0.5f);
Volume3D mask_to_volume(const Mask3D& m);

Dims3 parse_dims(const std::string& text);

}  // namespace voladapt

#endif  // VOLADAPT_VOLUME_HPP
