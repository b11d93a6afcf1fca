#include "voladapt/mock_proposers.hpp"

#include <poll.h>
#include <unistd.h>

#include <cerrno>
#include <stdexcept>

#include "voladapt/codec.hpp"
#include "voladapt/protocol.hpp"
#include "voladapt/rng.hpp"

namespace voladapt {

MockKind mock_kind_from_string(const std::string& s) {
  if (s == "oracle") return MockKind::kOracle;
  if (s == "noise") return MockKind::kNoise;
  if (s == "constant") return MockKind::kConstant;
  throw std::invalid_argument("unknown mock kind '" + s + "'");
}

const char* to_string(MockKind k) {
  switch (k) {
    case MockKind::kOracle: return "oracle";
    case MockKind::kNoise: return "noise";
    case MockKind::kConstant: return "constant";
  }
  return "unknown";
}

void MockSpec::validate() const {
  if (!(conf >= 0.0 && conf <= 1.0)) throw std::invalid_argument("mock conf outside [0, 1]");
  if (!(density >= 0.0 && density <= 1.0)) throw std::invalid_argument("mock density outside [0, 1]");
}

nlohmann::json MockSpec::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = to_string(kind);
  j["conf"] = conf;
  if (kind == MockKind::kNoise) {
    j["density"] = density;
    j["seed"] = seed;
  }
  if (kind == MockKind::kConstant) j["fill"] = fill ? "full" : "empty";
  return j;
}

MockSpec MockSpec::from_json(const nlohmann::json& j, const MockSpec& defaults) {
  MockSpec s = defaults;
  if (j.contains("kind")) s.kind = mock_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("conf")) s.conf = j.at("conf").get<double>();
  if (j.contains("density")) s.density = j.at("density").get<double>();
  if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("fill")) {
    const std::string f = j.at("fill");
    if (f != "full" && f != "empty") throw std::invalid_argument("fill must be full or empty");
    s.fill = f == "full";
  }
  s.validate();
  return s;
}

MockFault mock_fault_from_string(const std::string& s) {
  if (s.empty() || s == "none") return MockFault::kNone;
  if (s == "garbage-hello") return MockFault::kGarbageHello;
  if (s == "wrong-version") return MockFault::kWrongVersion;
  if (s == "exit-after") return MockFault::kExitAfter;
  if (s == "hang-after") return MockFault::kHangAfter;
  if (s == "bad-rle-after") return MockFault::kBadRleAfter;
  if (s == "malformed-after") return MockFault::kMalformedAfter;
  if (s == "error-every") return MockFault::kErrorEvery;
  throw std::invalid_argument("unknown fault '" + s + "'");
}

const MockSpec& MockPlan::spec_for(const std::string& case_id) const {
  const auto it = per_case.find(case_id);
  return it == per_case.end() ? default_spec : it->second;
}

MockPlan MockPlan::from_json(const nlohmann::json& j) {
  MockPlan p;
  if (j.contains("name")) p.name = j.at("name");
  if (j.contains("default")) p.default_spec = MockSpec::from_json(j.at("default"), p.default_spec);
  if (j.contains("cases")) {
    for (const auto& [id, spec] : j.at("cases").items()) {
      p.per_case[id] = MockSpec::from_json(spec, p.default_spec);
    }
  }
  if (j.contains("gt_dir")) p.gt_dir = j.at("gt_dir").get<std::string>();
  return p;
}

nlohmann::json MockPlan::to_json() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["default"] = default_spec.to_json();
  nlohmann::ordered_json cases = nlohmann::ordered_json::object();
  for (const auto& [id, spec] : per_case) cases[id] = spec.to_json();
  j["cases"] = cases;
  if (!gt_dir.empty()) j["gt_dir"] = gt_dir.string();
  return j;
}

SliceMask2D noise_mask(std::uint64_t seed, const std::string& case_id, std::uint32_t slice,
                       std::uint32_t h, std::uint32_t w, const BBox2D& box, double density) {
  box.validate(h, w);
  Rng rng(derive_seed(derive_seed(seed, case_id), slice));
  std::vector<std::uint8_t> data(static_cast<std::size_t>(h) * w, 0);
  for (std::uint32_t r = box.row_min; r <= box.row_max; ++r) {
    for (std::uint32_t c = box.col_min; c <= box.col_max; ++c) {
      data[static_cast<std::size_t>(r) * w + c] = rng.uniform() < density ? 1 : 0;
    }
  }
  return SliceMask2D(h, w, std::move(data));
}

SliceMask2D oracle_mask(const Mask3D& gt, std::uint32_t slice, const BBox2D& box) {
  const Dims3 d = gt.dims();
  box.validate(d.h, d.w);
  const SliceMask2D full = extract_slice(gt, slice);
  std::vector<std::uint8_t> data(full.data().begin(), full.data().end());
  for (std::uint32_t r = 0; r < d.h; ++r) {
    for (std::uint32_t c = 0; c < d.w; ++c) {
      if (!box.contains(r, c)) data[static_cast<std::size_t>(r) * d.w + c] = 0;
    }
  }
  return SliceMask2D(d.h, d.w, std::move(data));
}

SliceMask2D constant_mask(std::uint32_t h, std::uint32_t w, const BBox2D& box, bool fill) {
  box.validate(h, w);
  std::vector<std::uint8_t> data(static_cast<std::size_t>(h) * w, 0);
  if (fill) {
    for (std::uint32_t r = box.row_min; r <= box.row_max; ++r)
      for (std::uint32_t c = box.col_min; c <= box.col_max; ++c)
        data[static_cast<std::size_t>(r) * w + c] = 1;
  }
  return SliceMask2D(h, w, std::move(data));
}

MockProposer::MockProposer(MockPlan plan) : plan_(std::move(plan)) {
  plan_.default_spec.validate();
  for (const auto& [id, spec] : plan_.per_case) spec.validate();
}

nlohmann::ordered_json MockProposer::hello() const {
  nlohmann::ordered_json j;
  j["proto"] = kProtocolVersion;
  j["name"] = plan_.name;
  j["caps"] = {"box_prompt"};
  return j;
}

const Mask3D& MockProposer::ground_truth(const std::string& case_id) {
  auto it = gt_cache_.find(case_id);
  if (it != gt_cache_.end()) return it->second;
  if (plan_.gt_dir.empty()) throw std::runtime_error("oracle mock has no ground-truth directory");
  return gt_cache_.emplace(case_id, load_mask(plan_.gt_dir / (case_id + ".vol"))).first->second;
}

nlohmann::ordered_json MockProposer::answer(const std::string& request_line) {
  nlohmann::ordered_json out;
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(request_line);
  } catch (const nlohmann::json::exception& e) {
    out["id"] = nullptr;
    out["error"] = std::string("malformed request: ") + e.what();
    return out;
  }
  if (!req.is_object() || !req.contains("id") || !req["id"].is_number_unsigned()) {
    out["id"] = nullptr;
    out["error"] = "malformed request: missing unsigned id";
    return out;
  }
  out["id"] = req["id"].get<std::uint64_t>();
  try {
    const std::string case_id = req.at("case");
    const std::uint32_t slice = req.at("slice");
    const auto& b = req.at("bbox");
    if (!b.is_array() || b.size() != 4) throw std::invalid_argument("bbox needs four values");
    const BBox2D box{b[0], b[1], b[2], b[3]};
    const std::uint32_t h = req.at("h"), w = req.at("w");
    box.validate(h, w);
    const auto image = decode_f32_b64(req.at("img_b64").get<std::string>());
    if (image.size() != static_cast<std::size_t>(h) * w) {
      throw std::invalid_argument("image holds " + std::to_string(image.size()) + " pixels, expected " +
                                  std::to_string(static_cast<std::size_t>(h) * w));
    }
    const MockSpec& spec = plan_.spec_for(case_id);
    SliceMask2D mask = SliceMask2D::empty(h, w);
    switch (spec.kind) {
      case MockKind::kOracle: {
        const Mask3D& gt = ground_truth(case_id);
        if (gt.dims().h != h || gt.dims().w != w || slice >= gt.dims().d) {
          throw std::invalid_argument("ground truth " + gt.dims().str() + " does not fit slice " +
                                      std::to_string(slice) + " of " + std::to_string(h) + "x" +
                                      std::to_string(w));
        }
        mask = oracle_mask(gt, slice, box);
        break;
      }
      case MockKind::kNoise:
        mask = noise_mask(spec.seed, case_id, slice, h, w, box, spec.density);
        break;
      case MockKind::kConstant:
        mask = constant_mask(h, w, box, spec.fill);
        break;
    }
    out["rle"] = rle_encode(mask);
    out["conf"] = spec.conf;
  } catch (const std::exception& e) {
    out.erase("rle");
    out["error"] = e.what();
  }
  return out;
}

namespace {

bool write_all(int fd, const std::string& s) {
  std::size_t off = 0;
  while (off < s.size()) {
    const ssize_t n = ::write(fd, s.data() + off, s.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    off += static_cast<std::size_t>(n);
  }
  return true;
}

bool input_ready(int fd) {
  pollfd p{fd, POLLIN, 0};
  return ::poll(&p, 1, 0) > 0;
}

}  // namespace

int serve_mock(MockPlan plan, int in_fd, int out_fd) {
  const MockFault fault = plan.fault;
  const std::size_t after = plan.fault_after;
  const std::size_t reorder = std::max<std::size_t>(1, plan.reorder);
  MockProposer proposer(std::move(plan));

  if (fault == MockFault::kGarbageHello) {
    write_all(out_fd, "hello? this is not json\n");
    return 0;
  }
  nlohmann::ordered_json hello = proposer.hello();
  if (fault == MockFault::kWrongVersion) hello["proto"] = "MP2";
  if (!write_all(out_fd, hello.dump() + "\n")) return 1;

  std::vector<std::string> held;
  std::size_t emitted = 0, requests = 0;
  bool hanging = false;

  // Returns false when the process should exit.
  auto emit = [&](std::string line) -> bool {
    if (fault == MockFault::kExitAfter && emitted == after) return false;
    if (fault == MockFault::kHangAfter && emitted == after) {
      hanging = true;
      return true;
    }
    if (fault == MockFault::kMalformedAfter && emitted == after) line = "{\"id\": oops";
    if (!write_all(out_fd, line + "\n")) return false;
    ++emitted;
    return true;
  };
  auto flush = [&]() -> bool {
    while (!held.empty()) {
      std::string line = std::move(held.back());
      held.pop_back();
      if (!hanging && !emit(std::move(line))) return false;
    }
    return true;
  };

  std::string buf;
  char chunk[65536];
  for (;;) {
    std::size_t nl;
    while ((nl = buf.find('\n')) != std::string::npos) {
      std::string line = buf.substr(0, nl);
      buf.erase(0, nl + 1);
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        if (j.is_object() && j.contains("cmd") && j["cmd"] == "bye") return flush() ? 0 : 3;
      } catch (const nlohmann::json::exception&) {
      }
      ++requests;
      nlohmann::ordered_json response = proposer.answer(line);
      if (fault == MockFault::kErrorEvery && after > 0 && requests % after == 0 &&
          !response["id"].is_null()) {
        response.erase("rle");
        response.erase("conf");
        response["error"] = "injected failure";
      }
      if (fault == MockFault::kBadRleAfter && emitted + held.size() == after &&
          response.contains("rle")) {
        response["rle"].push_back(1);
      }
      held.push_back(response.dump());
      if (held.size() >= reorder && !flush()) return 3;
    }
    if (!input_ready(in_fd) && !flush()) return 3;
    const ssize_t n = ::read(in_fd, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      return 1;
    }
    if (n == 0) return flush() ? 0 : 3;
    buf.append(chunk, static_cast<std::size_t>(n));
  }
}

}  // namespace voladapt
