#include "voladapt/synth.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "voladapt/mock_proposers.hpp"
#include "voladapt/rng.hpp"

namespace voladapt {

namespace fs = std::filesystem;

Mask3D ellipsoid_mask(Dims3 dims, std::array<double, 3> center, std::array<double, 3> radii) {
  std::vector<std::uint8_t> data(dims.count(), 0);
  std::size_t i = 0;
  for (std::uint32_t z = 0; z < dims.d; ++z) {
    for (std::uint32_t y = 0; y < dims.h; ++y) {
      for (std::uint32_t x = 0; x < dims.w; ++x, ++i) {
        const double a = (z - center[0]) / radii[0];
        const double b = (y - center[1]) / radii[1];
        const double c = (x - center[2]) / radii[2];
        data[i] = a * a + b * b + c * c <= 1.0 ? 1 : 0;
      }
    }
  }
  return Mask3D(dims, std::move(data));
}

Mask3D dilate(const Mask3D& m, std::uint32_t r) {
  const Dims3 d = m.dims();
  std::vector<std::uint8_t> out(d.count(), 0);
  const std::int64_t R = r;
  for (std::uint32_t z = 0; z < d.d; ++z) {
    for (std::uint32_t y = 0; y < d.h; ++y) {
      for (std::uint32_t x = 0; x < d.w; ++x) {
        if (!m.at(z, y, x)) continue;
        for (std::int64_t dz = -R; dz <= R; ++dz) {
          for (std::int64_t dy = -R; dy <= R; ++dy) {
            for (std::int64_t dx = -R; dx <= R; ++dx) {
              const std::int64_t zz = z + dz, yy = y + dy, xx = x + dx;
              if (zz < 0 || yy < 0 || xx < 0 || zz >= d.d || yy >= d.h || xx >= d.w) continue;
              out[m.index(zz, yy, xx)] = 1;
            }
          }
        }
      }
    }
  }
  return Mask3D(d, std::move(out), m.spacing());
}

namespace {

struct Lesion {
  std::array<double, 3> center;
  std::array<double, 3> radii;
};

Lesion draw_lesion(Rng& rng, Dims3 dims) {
  Lesion l;
  const std::array<std::uint32_t, 3> ext{dims.d, dims.h, dims.w};
  for (int a = 0; a < 3; ++a) {
    const double hi = std::max(2.0, ext[a] * 0.3);
    l.radii[a] = std::max(1.5, hi * (0.7 + 0.3 * rng.uniform()));
    const double margin = l.radii[a] + 2.0;
    const double span = std::max(0.0, ext[a] - 1 - 2 * margin);
    l.center[a] = margin + span * rng.uniform();
  }
  return l;
}

// Head sphere at `head`, lesion at `lesion`, background 0, plus uniform noise.
Volume3D render(Rng& rng, Dims3 dims, const Mask3D& lesion, float head, float tumor) {
  const double c[3] = {(dims.d - 1) / 2.0, (dims.h - 1) / 2.0, (dims.w - 1) / 2.0};
  const double rad = 0.45 * dims.min_extent();
  std::vector<float> data(dims.count(), 0.0f);
  std::size_t i = 0;
  for (std::uint32_t z = 0; z < dims.d; ++z) {
    for (std::uint32_t y = 0; y < dims.h; ++y) {
      for (std::uint32_t x = 0; x < dims.w; ++x, ++i) {
        const double r2 = (z - c[0]) * (z - c[0]) + (y - c[1]) * (y - c[1]) + (x - c[2]) * (x - c[2]);
        float v = r2 <= rad * rad ? head : 0.0f;
        if (lesion.data()[i]) v = tumor;
        if (v != 0.0f) v += static_cast<float>(0.05 * rng.uniform());
        data[i] = v;
      }
    }
  }
  return Volume3D(dims, std::move(data));
}

std::string case_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%02zu", prefix, i);
  return buf;
}

}  // namespace

SynthLayout write_synthetic_dataset(const fs::path& root, const SynthOptions& opts, const fs::path& proposer) {
  if (opts.oracle > opts.targets) throw std::invalid_argument("more oracle cases than targets");
  if (opts.targets == 0 || opts.sources == 0) throw std::invalid_argument("need at least one source and target");
  for (const char* sub : {"source/images", "source/labels", "target/images", "target/labels", "predictions"}) {
    fs::create_directories(root / sub);
  }
  SynthLayout lay;
  lay.root = root;

  Rng src_rng(derive_seed(opts.seed, "synth-source"));
  for (std::size_t i = 0; i < opts.sources; ++i) {
    const std::string id = case_name("src", i);
    const Lesion l = draw_lesion(src_rng, opts.dims);
    const Mask3D gt = ellipsoid_mask(opts.dims, l.center, l.radii);
    save_volume(render(src_rng, opts.dims, gt, 0.8f, 0.3f), root / "source/images" / (id + ".vol"));
    save_mask(gt, root / "source/labels" / (id + ".vol"));
  }

  const std::uint64_t mock_seed = derive_seed(opts.seed, "mocks");
  MockPlan plan;
  plan.name = "synthetic-mix";
  plan.gt_dir = fs::absolute(root / "target/labels");
  Rng tgt_rng(derive_seed(opts.seed, "synth-target"));
  // Oracle and noise cases alternate so neither population sits at one end of the id order.
  std::size_t oracle_left = opts.oracle;
  for (std::size_t i = 0; i < opts.targets; ++i) {
    const std::string id = case_name("case", i);
    const Lesion l = draw_lesion(tgt_rng, opts.dims);
    const Mask3D gt = ellipsoid_mask(opts.dims, l.center, l.radii);
    save_volume(render(tgt_rng, opts.dims, gt, 0.3f, 0.9f), root / "target/images" / (id + ".vol"));
    save_mask(gt, root / "target/labels" / (id + ".vol"));
    save_mask(dilate(gt, opts.dilation), root / "predictions" / (id + ".vol"));

    const std::size_t noise_left = opts.targets - i - oracle_left;
    const bool oracle = oracle_left > 0 && (i % 2 == 0 || noise_left == 0);
    MockSpec spec;
    if (oracle) {
      --oracle_left;
      spec.kind = MockKind::kOracle;
      spec.conf = opts.oracle_conf;
      lay.oracle_cases.push_back(id);
    } else {
      spec.kind = MockKind::kNoise;
      spec.conf = opts.noise_conf;
      spec.density = opts.noise_density;
      spec.seed = mock_seed;
      lay.noise_cases.push_back(id);
    }
    plan.per_case[id] = spec;
  }

  lay.plan = root / "proposer_plan.json";
  {
    std::ofstream o(lay.plan);
    o << plan.to_json().dump(2) << "\n";
  }

  lay.config = root / "run.toml";
  std::ofstream o(lay.config);
  o << "seed = " << opts.seed << "\n"
    << "cycles = " << opts.cycles << "\n"
    << "out = \"out\"\n\n"
    << "[data]\n"
    << "source_images = \"source/images\"\n"
    << "source_labels = \"source/labels\"\n"
    << "target_images = \"target/images\"\n"
    << "target_labels = \"target/labels\"\n\n"
    << "[fda]\nL = 0.02\n\n"
    << "[refine]\ntau_conf = 0.7\n\n"
    << "[select]\ntau_conf = 0.7\noverlap = [0.4, 0.8]\ntau_cc = 10\n\n"
    << "[proposer]\n"
    << "command = \"'" << fs::absolute(proposer).string() << "' --plan '" << fs::absolute(lay.plan).string()
    << "'\"\n\n"
    << "[trainer]\npredictions = \"predictions\"\n";
  return lay;
}

}  // namespace voladapt
