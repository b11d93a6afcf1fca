// Seeded synthetic datasets for desk-scale runs: ellipsoid "lesions" inside a
// spherical head, a source domain with inverted contrast, teacher predictions
// (ground truth dilated) and a mock proposer plan mixing oracle and noise cases.

#ifndef VOLADAPT_SYNTH_HPP
#define VOLADAPT_SYNTH_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voladapt/volume.hpp"

namespace voladapt {

struct SynthOptions {
  std::uint64_t seed = 0;
  std::size_t targets = 20;
  std::size_t oracle = 10;  // the rest get noise proposals
  std::size_t sources = 4;
  Dims3 dims{32, 32, 32};
  double oracle_conf = 0.95;
  double noise_conf = 0.9;
  double noise_density = 0.05;
  std::uint32_t dilation = 1;
  std::uint32_t cycles = 3;
};

struct SynthLayout {
  std::filesystem::path root;
  std::filesystem::path config;  // run.toml
  std::filesystem::path plan;    // proposer_plan.json
  std::vector<std::string> oracle_cases;
  std::vector<std::string> noise_cases;
};

Mask3D ellipsoid_mask(Dims3 dims, std::array<double, 3> center, std::array<double, 3> radii);

/// Chebyshev (26-neighbourhood) dilation by r voxels.
Mask3D dilate(const Mask3D& m, std::uint32_t r);

/// Writes source/{images,labels}, target/{images,labels}, predictions/,
/// proposer_plan.json and run.toml under `root`. `proposer` is the mock
/// proposer executable named in run.toml.
SynthLayout write_synthetic_dataset(const std::filesystem::path& root, const SynthOptions& opts,
                                    const std::filesystem::path& proposer);

}  // namespace voladapt

#endif  // VOLADAPT_SYNTH_HPP
