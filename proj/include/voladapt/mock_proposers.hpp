// Test doubles that speak MP1 in place of a real segmentation model.
//
// oracle    ground-truth slice restricted to the prompt box
// noise     independent Bernoulli(density) pixels inside the box, seeded per
//           (seed, case, slice) so output does not depend on request order
// constant  box completely filled or completely empty

#ifndef VOLADAPT_MOCK_PROPOSERS_HPP
#define VOLADAPT_MOCK_PROPOSERS_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "voladapt/volume.hpp"

namespace voladapt {

enum class MockKind { kOracle, kNoise, kConstant };

MockKind mock_kind_from_string(const std::string& s);
const char* to_string(MockKind k);

struct MockSpec {
  MockKind kind = MockKind::kConstant;
  double conf = 0.9;
  double density = 0.05;  // noise
  std::uint64_t seed = 0;  // noise
  bool fill = true;        // constant: full when true

  void validate() const;
  nlohmann::json to_json() const;
  static MockSpec from_json(const nlohmann::json& j, const MockSpec& defaults);
};

/// Faults for exercising the host's error handling.
enum class MockFault {
  kNone,
  kGarbageHello,
  kWrongVersion,   // hello announces MP2
  kExitAfter,      // exit silently after `fault_after` responses
  kHangAfter,      // stop answering after `fault_after` responses
  kBadRleAfter,    // the response after `fault_after` has runs one short
  kMalformedAfter, // the response after `fault_after` is not JSON
  kErrorEvery,     // every `fault_after`-th request gets an error record
};

MockFault mock_fault_from_string(const std::string& s);

struct MockPlan {
  std::string name = "mock";
  MockSpec default_spec;
  std::map<std::string, MockSpec> per_case;
  std::filesystem::path gt_dir;  // oracle: <gt_dir>/<case>.vol
  /// Buffer up to this many responses and release them in reverse order.
  std::size_t reorder = 1;
  MockFault fault = MockFault::kNone;
  std::size_t fault_after = 0;

  const MockSpec& spec_for(const std::string& case_id) const;

  /// {"name":..., "default":{...}, "cases":{"id":{...}}, "gt_dir":...}
  static MockPlan from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Bernoulli(density) pixels inside `box`, zero elsewhere.
SliceMask2D noise_mask(std::uint64_t seed, const std::string& case_id, std::uint32_t slice,
                       std::uint32_t h, std::uint32_t w, const BBox2D& box, double density);

SliceMask2D oracle_mask(const Mask3D& gt, std::uint32_t slice, const BBox2D& box);

SliceMask2D constant_mask(std::uint32_t h, std::uint32_t w, const BBox2D& box, bool fill);

/// Answers one request line. Returns the response or error object.
class MockProposer {
 public:
  explicit MockProposer(MockPlan plan);

  nlohmann::ordered_json hello() const;
  nlohmann::ordered_json answer(const std::string& request_line);

 private:
  const Mask3D& ground_truth(const std::string& case_id);

  MockPlan plan_;
  std::map<std::string, Mask3D> gt_cache_;
};

/// Serves MP1 on the given descriptors until "bye" or end of input.
/// Returns a process exit code.
int serve_mock(MockPlan plan, int in_fd, int out_fd);

}  // namespace voladapt

#endif  // VOLADAPT_MOCK_PROPOSERS_HPP
