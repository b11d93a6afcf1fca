#include "voladapt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace voladapt {

namespace {

void require_same_dims(const Dims3& a, const Dims3& b, const char* what) {
  if (!(a == b)) {
    throw std::invalid_argument(std::string(what) + " dims mismatch: " + a.str() + " vs " + b.str());
  }
}

}  // namespace

double dice(const Mask3D& a, const Mask3D& b) {
  require_same_dims(a.dims(), b.dims(), "dice");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data()[i] != 0;
    const bool y = b.data()[i] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double soft_dice_loss(const Volume3D& pred, const Mask3D& gt, double epsilon) {
  require_same_dims(pred.dims(), gt.dims(), "soft_dice_loss");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be non-negative");
  double pg = 0.0, pp = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred.data()[i];
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("soft dice prediction outside [0, 1]");
    const double g = gt.data()[i];
    pg += p * g;
    pp += p * p;
    gg += g * g;
  }
  const double denom = pp + gg + epsilon;
  if (denom == 0.0) return 0.0;
  return 1.0 - (2.0 * pg + epsilon) / denom;
}

Connectivity connectivity_from_int(int value) {
  if (value == 6) return Connectivity::k6;
  if (value == 26) return Connectivity::k26;
  throw std::invalid_argument("connectivity must be 6 or 26, got " + std::to_string(value));
}

// ---------------------------------------------------------------------------
// Connected components: raster scan with union-find over provisional labels.

namespace {

class DisjointSet {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }
  std::size_t size() const { return parent_.size(); }

 private:
  std::vector<std::uint32_t> parent_;
};

struct Offset {
  int dd, dh, dw;
};

// Neighbours already visited in raster order.
std::vector<Offset> backward_neighbours(Connectivity c) {
  std::vector<Offset> out;
  for (int dd = -1; dd <= 0; ++dd) {
    for (int dh = -1; dh <= 1; ++dh) {
      for (int dw = -1; dw <= 1; ++dw) {
        const bool before = dd < 0 || (dd == 0 && (dh < 0 || (dh == 0 && dw < 0)));
        if (!before) continue;
        const int manhattan = std::abs(dd) + std::abs(dh) + std::abs(dw);
        if (c == Connectivity::k6 && manhattan != 1) continue;
        out.push_back({dd, dh, dw});
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::size_t> CCLabeling::component_sizes() const {
  std::vector<std::size_t> sizes(count, 0);
  for (std::uint32_t l : labels) {
    if (l != 0) ++sizes[l - 1];
  }
  return sizes;
}

CCLabeling label_components(const Mask3D& m, Connectivity connectivity) {
  const Dims3 dims = m.dims();
  const auto offsets = backward_neighbours(connectivity);
  std::vector<std::uint32_t> provisional(m.size(), 0);
  DisjointSet sets;
  sets.make();  // slot 0 is background

  for (std::uint32_t d = 0; d < dims.d; ++d) {
    for (std::uint32_t h = 0; h < dims.h; ++h) {
      for (std::uint32_t w = 0; w < dims.w; ++w) {
        const std::size_t idx = m.index(d, h, w);
        if (!m.data()[idx]) continue;
        std::uint32_t label = 0;
        for (const Offset& o : offsets) {
          const std::int64_t nd = std::int64_t{d} + o.dd;
          const std::int64_t nh = std::int64_t{h} + o.dh;
          const std::int64_t nw = std::int64_t{w} + o.dw;
          if (nd < 0 || nh < 0 || nw < 0 || nh >= dims.h || nw >= dims.w) continue;
          const std::uint32_t other =
              provisional[m.index(static_cast<std::uint32_t>(nd), static_cast<std::uint32_t>(nh),
                                  static_cast<std::uint32_t>(nw))];
          if (other == 0) continue;
          if (label == 0) {
            label = other;
          } else {
            sets.unite(label, other);
          }
        }
        provisional[idx] = label != 0 ? label : sets.make();
      }
    }
  }

  CCLabeling out{dims, std::vector<std::uint32_t>(m.size(), 0), 0, connectivity};
  std::vector<std::uint32_t> final_label(sets.size(), 0);
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    if (provisional[i] == 0) continue;
    const std::uint32_t root = sets.find(provisional[i]);
    if (final_label[root] == 0) final_label[root] = ++out.count;
    out.labels[i] = final_label[root];
  }
  return out;
}

std::vector<Voxel> surface_voxels(const Mask3D& m) {
  const Dims3 dims = m.dims();
  std::vector<Voxel> out;
  auto background = [&](std::int64_t d, std::int64_t h, std::int64_t w) {
    if (d < 0 || h < 0 || w < 0 || d >= dims.d || h >= dims.h || w >= dims.w) return true;
    return !m.at(static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(h),
                 static_cast<std::uint32_t>(w));
  };
  for (std::uint32_t d = 0; d < dims.d; ++d) {
    for (std::uint32_t h = 0; h < dims.h; ++h) {
      for (std::uint32_t w = 0; w < dims.w; ++w) {
        if (!m.at(d, h, w)) continue;
        const std::int64_t D = d, H = h, W = w;
        if (background(D - 1, H, W) || background(D + 1, H, W) || background(D, H - 1, W) ||
            background(D, H + 1, W) || background(D, H, W - 1) || background(D, H, W + 1)) {
          out.push_back({d, h, w});
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distances

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("percentile rank must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

// Squared distance transform along one line: out[p] = min_q f[q] + w (p - q)^2,
// lower envelope of parabolas over the finite sites.
void edt_line(std::span<const double> f, std::span<double> out, double weight,
              std::vector<std::size_t>& v, std::vector<double>& z) {
  const std::size_t n = f.size();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  v.clear();
  z.clear();
  for (std::size_t q = 0; q < n; ++q) {
    if (!std::isfinite(f[q])) continue;
    const double fq = f[q] + weight * static_cast<double>(q) * static_cast<double>(q);
    while (!v.empty()) {
      const std::size_t r = v.back();
      const double fr = f[r] + weight * static_cast<double>(r) * static_cast<double>(r);
      const double s = (fq - fr) / (2.0 * weight * static_cast<double>(q - r));
      if (s <= z.back()) {
        v.pop_back();
        z.pop_back();
      } else {
        v.push_back(q);
        z.push_back(s);
        break;
      }
    }
    if (v.empty()) {
      v.push_back(q);
      z.push_back(-kInf);
    }
  }
  if (v.empty()) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  std::size_t k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    while (k + 1 < v.size() && z[k + 1] < static_cast<double>(p)) ++k;
    const double diff = static_cast<double>(p) - static_cast<double>(v[k]);
    out[p] = f[v[k]] + weight * diff * diff;
  }
}

}  // namespace

std::vector<double> distance_to_sites(Dims3 dims, const std::vector<Voxel>& sites,
                                      const Spacing3& spacing) {
  if (sites.empty()) throw std::invalid_argument("distance_to_sites needs at least one site");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> sq(dims.count(), kInf);
  for (const Voxel& s : sites) {
    sq[(static_cast<std::size_t>(s[0]) * dims.h + s[1]) * dims.w + s[2]] = 0.0;
  }

  const std::size_t extents[3] = {dims.d, dims.h, dims.w};
  const std::size_t strides[3] = {static_cast<std::size_t>(dims.h) * dims.w, dims.w, 1};
  std::vector<double> line_in, line_out;
  std::vector<std::size_t> v;
  std::vector<double> z;
  for (int axis = 2; axis >= 0; --axis) {
    const std::size_t n = extents[axis];
    const std::size_t stride = strides[axis];
    const double weight = static_cast<double>(spacing[axis]) * spacing[axis];
    line_in.resize(n);
    line_out.resize(n);
    for (std::size_t base = 0; base < sq.size(); ++base) {
      if ((base / stride) % n != 0) continue;
      for (std::size_t i = 0; i < n; ++i) line_in[i] = sq[base + i * stride];
      edt_line(line_in, line_out, weight, v, z);
      for (std::size_t i = 0; i < n; ++i) sq[base + i * stride] = line_out[i];
    }
  }
  for (double& x : sq) x = std::sqrt(x);
  return sq;
}

double hd95(const Mask3D& a, const Mask3D& b, bool use_spacing) {
  require_same_dims(a.dims(), b.dims(), "hd95");
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  if (sa.empty() || sb.empty()) {
    throw UndefinedMetricError("hd95 undefined: " + std::string(sa.empty() ? "first" : "second") +
                               " mask is empty");
  }
  const Spacing3 spacing = use_spacing ? a.spacing() : kUnitSpacing;
  const auto to_b = distance_to_sites(b.dims(), sb, spacing);
  const auto to_a = distance_to_sites(a.dims(), sa, spacing);
  const Dims3 dims = a.dims();
  auto at = [&dims](const std::vector<double>& field, const Voxel& p) {
    return field[(static_cast<std::size_t>(p[0]) * dims.h + p[1]) * dims.w + p[2]];
  };
  std::vector<double> pooled;
  pooled.reserve(sa.size() + sb.size());
  for (const Voxel& p : sa) pooled.push_back(at(to_b, p));
  for (const Voxel& p : sb) pooled.push_back(at(to_a, p));
  return percentile_linear(std::move(pooled), 0.95);
}

}  // namespace voladapt
