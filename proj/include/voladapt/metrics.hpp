// Overlap, surface-distance and connectivity metrics on binary masks.

#ifndef VOLADAPT_METRICS_HPP
#define VOLADAPT_METRICS_HPP

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "voladapt/volume.hpp"

namespace voladapt {

/// 2|A∩B| / (|A| + |B|); two empty masks score 1.0.
double dice(const Mask3D& a, const Mask3D& b);

/// 1 - (2 Σ p g + eps) / (Σ p² + Σ g² + eps), pred in [0, 1].
double soft_dice_loss(const Volume3D& pred, const Mask3D& gt, double epsilon = 1e-5);

enum class Connectivity : int { k6 = 6, k26 = 26 };

/// Throws std::invalid_argument for anything other than 6 or 26.
Connectivity connectivity_from_int(int value);

struct CCLabeling {
  Dims3 dims;
  std::vector<std::uint32_t> labels;  // 0 = background, components 1..count
  std::uint32_t count = 0;
  Connectivity connectivity = Connectivity::k26;

  std::vector<std::size_t> component_sizes() const;
};

/// Components are numbered in order of their first voxel in raster scan.
CCLabeling label_components(const Mask3D& m, Connectivity connectivity = Connectivity::k26);

using Voxel = std::array<std::uint32_t, 3>;

/// Foreground voxels with at least one background face neighbour; the
/// outside of the array counts as background. Raster order.
std::vector<Voxel> surface_voxels(const Mask3D& m);

class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Percentile with linear interpolation between order statistics
/// (position q * (n - 1)). q in [0, 1]; values must be non-empty.
double percentile_linear(std::vector<double> values, double q);

/// Pooled symmetric 95th-percentile surface distance: the distances from
/// every surface voxel of `a` to the surface of `b` and vice versa are
/// merged into one set before taking the percentile. Voxel units unless
/// `use_spacing`. Throws UndefinedMetricError if either mask is empty.
double hd95(const Mask3D& a, const Mask3D& b, bool use_spacing = false);

/// Euclidean distance from every voxel to the nearest voxel in `sites`
/// (exact separable transform). Sites must be non-empty.
std::vector<double> distance_to_sites(Dims3 dims, const std::vector<Voxel>& sites,
                                      const Spacing3& spacing = kUnitSpacing);

}  // namespace voladapt

#endif  // VOLADAPT_METRICS_HPP
