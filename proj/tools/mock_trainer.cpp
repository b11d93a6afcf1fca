// Stand-in trainer for the driver's trainer contract. Training writes a
// deterministic student derived from the manifest checksum and cycle;
// prediction copies fixture volumes.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "voladapt/codec.hpp"
#include "voladapt/driver.hpp"
#include "voladapt/rng.hpp"
#include "voladapt/schedule.hpp"

using namespace voladapt;

int main(int argc, char** argv) {
  CLI::App app{"mock trainer"};
  std::string manifest, teacher, out, images, fixtures;
  std::uint32_t cycle = 1, epochs = 1;
  std::size_t size = 16;
  bool predict = false, checkpoints = false;
  int fail_cycle = 0;
  app.add_option("--manifest", manifest);
  app.add_option("--cycle", cycle);
  app.add_option("--epochs", epochs);
  app.add_option("--teacher", teacher);
  app.add_option("--out", out)->required();
  app.add_option("--images", images);
  app.add_option("--fixtures", fixtures, "prediction fixtures: cycle_<t>/<case>.vol or <case>.vol");
  app.add_option("--size", size);
  app.add_flag("--predict", predict);
  app.add_flag("--checkpoints", checkpoints, "write per-epoch checkpoints instead of student.pvec");
  app.add_option("--fail-cycle", fail_cycle, "exit 3 when asked to train this cycle");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path dir(out);
    fs::create_directories(dir);
    if (predict) {
      if (fixtures.empty() || images.empty()) throw std::runtime_error("--predict needs --fixtures and --images");
      for (const auto& id : list_cases(images)) {
        fs::path src = fs::path(fixtures) / ("cycle_" + std::to_string(cycle + 1)) / (id + ".vol");
        if (!fs::exists(src)) src = fs::path(fixtures) / (id + ".vol");
        fs::copy_file(src, dir / (id + ".vol"), fs::copy_options::overwrite_existing);
      }
      return 0;
    }
    if (static_cast<int>(cycle) == fail_cycle) {
      std::cerr << "mock trainer: failing cycle " << cycle << " on request\n";
      return 3;
    }
    const std::string digest = sha256_file(manifest);
    const std::uint64_t seed = derive_seed(fnv1a64(digest), cycle);
    auto student = [&](std::uint32_t epoch) {
      Rng rng(derive_seed(seed, epoch));
      std::vector<float> v(size);
      for (auto& x : v) x = static_cast<float>(rng.uniform());
      return ParamVector(std::move(v), "mock");
    };
    if (checkpoints) {
      fs::create_directories(dir / "checkpoints");
      for (std::uint32_t e = 1; e <= epochs; ++e) {
        save_pvec(student(e), dir / "checkpoints" / ("epoch_" + std::to_string(e) + ".pvec"));
      }
    } else {
      save_pvec(student(epochs), dir / "student.pvec");
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "mock trainer: " << e.what() << "\n";
    return 1;
  }
}
