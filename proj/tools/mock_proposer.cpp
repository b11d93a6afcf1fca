// Mock mask proposer speaking MP1 on stdin/stdout.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "voladapt/mock_proposers.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Mock box-prompt proposer (MP1 over standard streams)"};
  std::string kind = "constant", fill = "full", plan_path, gt_dir, fault = "none", name = "mock";
  double conf = 0.9, density = 0.05;
  std::uint64_t seed = 0;
  std::size_t reorder = 1, fault_after = 0;
  app.add_option("--kind", kind, "oracle | noise | constant")->check(CLI::IsMember({"oracle", "noise", "constant"}));
  app.add_option("--conf", conf, "confidence reported with every mask")->check(CLI::Range(0.0, 1.0));
  app.add_option("--density", density, "noise: foreground probability inside the box")->check(CLI::Range(0.0, 1.0));
  app.add_option("--seed", seed, "noise: seed");
  app.add_option("--fill", fill, "constant: full | empty")->check(CLI::IsMember({"full", "empty"}));
  app.add_option("--gt-dir", gt_dir, "oracle: directory of <case>.vol masks");
  app.add_option("--plan", plan_path, "JSON plan with per-case kinds; flags set the defaults");
  app.add_option("--reorder", reorder, "answer in reversed batches of this size");
  app.add_option("--name", name, "name announced in hello");
  app.add_option("--fault", fault, "inject a protocol fault (testing)");
  app.add_option("--fault-after", fault_after, "responses before the fault triggers");
  CLI11_PARSE(app, argc, argv);

  try {
    voladapt::MockPlan plan;
    if (!plan_path.empty()) {
      std::ifstream in(plan_path);
      if (!in) throw std::runtime_error("cannot open plan " + plan_path);
      nlohmann::json j = nlohmann::json::parse(in);
      voladapt::MockSpec defaults;
      defaults.kind = voladapt::mock_kind_from_string(kind);
      defaults.conf = conf;
      defaults.density = density;
      defaults.seed = seed;
      defaults.fill = fill == "full";
      if (!j.contains("default")) j["default"] = defaults.to_json();
      plan = voladapt::MockPlan::from_json(j);
    } else {
      plan.default_spec.kind = voladapt::mock_kind_from_string(kind);
      plan.default_spec.conf = conf;
      plan.default_spec.density = density;
      plan.default_spec.seed = seed;
      plan.default_spec.fill = fill == "full";
      plan.name = name;
    }
    if (!gt_dir.empty()) plan.gt_dir = gt_dir;
    if (app.count("--name")) plan.name = name;
    plan.reorder = reorder;
    plan.fault = voladapt::mock_fault_from_string(fault);
    plan.fault_after = fault_after;
    return voladapt::serve_mock(std::move(plan), 0, 1);
  } catch (const std::exception& e) {
    std::cerr << "mock_proposer: " << e.what() << "\n";
    return 2;
  }
}
