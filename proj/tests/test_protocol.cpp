#include <set>
#include <random>
#include <thread>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "voladapt/codec.hpp"
#include "voladapt/mock_proposers.hpp"
#include "voladapt/protocol.hpp"

using namespace voladapt;
using namespace std::chrono_literals;

namespace {

const std::string kMock = MOCK_PROPOSER_PATH;

ProposalRequest make_request(const std::string& case_id, std::uint32_t slice, std::uint32_t h,
                             std::uint32_t w, BBox2D box) {
  ProposalRequest r;
  r.case_id = case_id;
  r.slice_index = slice;
  r.h = h;
  r.w = w;
  r.bbox = box;
  r.image.resize(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < r.image.size(); ++i) r.image[i] = static_cast<float>(i % 7) * 0.25f;
  return r;
}

ProtocolErrc spawn_error(const std::string& cmd, SessionOptions opt = {}) {
  try {
    auto s = ProposerSession::spawn(cmd, opt);
    auto r = make_request("a", 0, 4, 4, BBox2D{0, 3, 0, 3});
    std::vector<ProposalRequest> reqs(8, r);
    s->propose_all(reqs);
  } catch (const ProtocolError& e) {
    return e.code();
  }
  FAIL("expected a protocol error from: " << cmd);
  return ProtocolErrc::kSpawnFailed;
}

}  // namespace

TEST_CASE("RLE round trip on 500 random slices") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::uint32_t> dim(1, 40);
  std::uniform_real_distribution<double> dens(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const std::uint32_t h = dim(rng), w = dim(rng);
    const auto bits = oracle::random_bits(rng, static_cast<std::size_t>(h) * w, dens(rng));
    const SliceMask2D m(h, w, bits);
    const auto runs = rle_encode(m);
    std::uint64_t total = 0;
    for (auto r : runs) total += r;
    CHECK(total == static_cast<std::uint64_t>(h) * w);
    const SliceMask2D back = rle_decode(runs, h, w);
    CHECK(std::equal(back.data().begin(), back.data().end(), bits.begin(), bits.end()));
  }
}

TEST_CASE("RLE layout") {
  CHECK(rle_encode(SliceMask2D(1, 4, {1, 1, 0, 1})) == std::vector<std::uint32_t>{0, 2, 1, 1});
  CHECK(rle_encode(SliceMask2D(2, 2, {0, 0, 0, 0})) == std::vector<std::uint32_t>{4});
  CHECK(rle_decode(std::vector<std::uint32_t>{1, 0, 2, 1}, 2, 2) == SliceMask2D(2, 2, {0, 0, 0, 1}));
  CHECK_THROWS_AS(rle_decode(std::vector<std::uint32_t>{1, 2}, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(rle_decode(std::vector<std::uint32_t>{5}, 2, 2), std::invalid_argument);
}

TEST_CASE("base64") {
  const std::string text = "foobar";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  CHECK(base64_encode(bytes) == "Zm9vYmFy");
  CHECK(base64_encode(std::span(bytes).first(4)) == "Zm9vYg==");
  CHECK(base64_encode(std::span(bytes).first(5)) == "Zm9vYmE=");
  CHECK(base64_decode("Zm9vYmE=") == std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 5));
  CHECK(base64_decode("").empty());
  CHECK_THROWS(base64_decode("abc"));
  CHECK_THROWS(base64_decode("ab!="));
  // 1.0f is 0x3f800000, little-endian 00 00 80 3f.
  CHECK(encode_f32_b64(std::vector<float>{1.0f}) == "AACAPw==");
  std::mt19937_64 rng(103);
  const auto v = oracle::random_volume(rng, {3, 5, 7});
  const auto back = decode_f32_b64(encode_f32_b64(v.data()));
  CHECK(std::equal(back.begin(), back.end(), v.data().begin(), v.data().end()));
}

TEST_CASE("sha256") {
  const std::string abc = "abc";
  CHECK(sha256_hex(std::vector<std::uint8_t>(abc.begin(), abc.end())) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("handshake") {
  SUBCASE("mock proposer") {
    auto s = ProposerSession::spawn(kMock + " --name tester");
    CHECK(s->hello().name == "tester");
    CHECK(s->hello().caps == std::vector<std::string>{"box_prompt"});
    CHECK(s->close() == 0);
    CHECK(s->close() == 0);
  }
  SUBCASE("garbage first line") {
    try {
      ProposerSession::spawn(kMock + " --fault garbage-hello");
      FAIL("expected failure");
    } catch (const ProtocolError& e) {
      CHECK(e.code() == ProtocolErrc::kBadHello);
      CHECK(e.line() == "hello? this is not json");
    }
  }
  SUBCASE("version mismatch") {
    try {
      ProposerSession::spawn(kMock + " --fault wrong-version");
      FAIL("expected failure");
    } catch (const ProtocolError& e) {
      CHECK(e.code() == ProtocolErrc::kVersionMismatch);
      CHECK(e.line().find("MP2") != std::string::npos);
    }
  }
  SUBCASE("missing capability") {
    CHECK_THROWS_AS(parse_hello(R"({"proto":"MP1","caps":[]})"), ProtocolError);
    CHECK(parse_hello(R"({"proto":"MP1","name":"x","caps":["box_prompt","extra"]})").name == "x");
  }
  SUBCASE("command not found") {
    CHECK(spawn_error("/nonexistent/proposer") == ProtocolErrc::kSpawnFailed);
  }
  SUBCASE("silent child times out") {
    SessionOptions opt;
    opt.timeout = 200ms;
    CHECK(spawn_error("exec sleep 5", opt) == ProtocolErrc::kTimeout);
  }
  SUBCASE("child exits before hello") {
    CHECK(spawn_error("exit 0") == ProtocolErrc::kBadHello);
  }
}

TEST_CASE("proposals") {
  SUBCASE("constant full fills every box") {
    auto s = ProposerSession::spawn(kMock + " --kind constant --fill full --conf 0.8");
    const BBox2D box{1, 3, 2, 5};
    const auto res = s->propose(make_request("a", 0, 6, 7, box));
    REQUIRE(res.response);
    CHECK(res.response->confidence == 0.8);
    CHECK(res.response->mask == constant_mask(6, 7, box, true));
    CHECK(res.response->mask.foreground_count() == box.pixel_count());
  }
  SUBCASE("noise is deterministic across sessions and reordering") {
    std::vector<ProposalRequest> reqs;
    for (std::uint32_t j = 0; j < 100; ++j) reqs.push_back(make_request("case_" + std::to_string(j % 5), j, 12, 10, BBox2D{1, 9, 2, 8}));
    auto a = ProposerSession::spawn(kMock + " --kind noise --density 0.3 --seed 9");
    auto b = ProposerSession::spawn(kMock + " --kind noise --density 0.3 --seed 9 --reorder 7");
    auto c = ProposerSession::spawn(kMock + " --kind noise --density 0.3 --seed 10");
    const auto ra = a->propose_all(reqs);
    const auto rb = b->propose_all(reqs);
    const auto rc = c->propose_all(reqs);
    int differ = 0;
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      REQUIRE(ra[i].response);
      REQUIRE(rb[i].response);
      CHECK(ra[i].response->mask == rb[i].response->mask);
      CHECK(ra[i].response->mask ==
            noise_mask(9, reqs[i].case_id, reqs[i].slice_index, 12, 10, reqs[i].bbox, 0.3));
      differ += !(ra[i].response->mask == rc[i].response->mask);
      const auto& m = ra[i].response->mask;
      for (std::uint32_t r = 0; r < 12; ++r)
        for (std::uint32_t col = 0; col < 10; ++col)
          if (m.at(r, col)) CHECK(reqs[i].bbox.contains(r, col));
    }
    CHECK(differ > 90);
  }
  SUBCASE("oracle returns ground truth inside the box") {
    TempDir dir;
    std::mt19937_64 rng(107);
    const Mask3D gt({5, 8, 9}, oracle::random_bits(rng, 5 * 8 * 9, 0.4));
    save_mask(gt, dir / "liver.vol");
    auto s = ProposerSession::spawn(kMock + " --kind oracle --conf 0.95 --gt-dir " + (dir / "").string());
    std::vector<ProposalRequest> reqs;
    for (std::uint32_t j = 0; j < 5; ++j) reqs.push_back(make_request("liver", j, 8, 9, BBox2D{j, 7, 1, 6}));
    reqs.push_back(make_request("liver", 0, 8, 8, BBox2D{0, 1, 0, 1}));   // wrong width
    reqs.push_back(make_request("liver", 5, 8, 9, BBox2D{0, 1, 0, 1}));   // beyond depth
    reqs.push_back(make_request("missing", 0, 8, 9, BBox2D{0, 1, 0, 1}));
    const auto res = s->propose_all(reqs);
    for (std::uint32_t j = 0; j < 5; ++j) {
      REQUIRE(res[j].response);
      CHECK(res[j].response->confidence == 0.95);
      const SliceMask2D want = extract_slice(gt, j);
      for (std::uint32_t r = 0; r < 8; ++r)
        for (std::uint32_t c = 0; c < 9; ++c)
          CHECK(res[j].response->mask.at(r, c) == (want.at(r, c) && reqs[j].bbox.contains(r, c)));
    }
    CHECK(res[5].error);
    CHECK(res[6].error);
    CHECK(res[7].error);
    CHECK(s->close() == 0);
  }
  SUBCASE("pipelining with large payloads and a full window") {
    SessionOptions opt;
    opt.window = 32;
    auto s = ProposerSession::spawn(kMock + " --kind constant --fill empty --reorder 32", opt);
    std::vector<ProposalRequest> reqs(200, make_request("big", 0, 96, 96, BBox2D{0, 95, 0, 95}));
    const auto res = s->propose_all(reqs);
    std::set<std::uint64_t> ids;
    for (const auto& r : res) {
      REQUIRE(r.response);
      CHECK(r.response->mask.foreground_count() == 0);
      ids.insert(r.id);
    }
    CHECK(ids.size() == 200);
  }
  SUBCASE("window of one") {
    SessionOptions opt;
    opt.window = 1;
    auto s = ProposerSession::spawn(kMock + " --reorder 4", opt);
    std::vector<ProposalRequest> reqs(10, make_request("a", 0, 3, 3, BBox2D{0, 0, 0, 0}));
    CHECK(s->propose_all(reqs).size() == 10);
  }
  SUBCASE("concurrent callers share a session") {
    auto s = ProposerSession::spawn(kMock + " --kind noise --density 0.5 --seed 1 --reorder 5");
    std::vector<std::vector<ProposalResult>> out(4);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
      threads.emplace_back([&, t] {
        std::vector<ProposalRequest> reqs;
        for (std::uint32_t j = 0; j < 25; ++j)
          reqs.push_back(make_request("t" + std::to_string(t), j, 6, 6, BBox2D{0, 5, 0, 5}));
        out[t] = s->propose_all(reqs);
      });
    }
    for (auto& th : threads) th.join();
    for (int t = 0; t < 4; ++t) {
      REQUIRE(out[t].size() == 25);
      for (std::uint32_t j = 0; j < 25; ++j) {
        CHECK(out[t][j].response->mask ==
              noise_mask(1, "t" + std::to_string(t), j, 6, 6, BBox2D{0, 5, 0, 5}, 0.5));
      }
    }
  }
  SUBCASE("invalid requests are rejected before sending") {
    auto s = ProposerSession::spawn(kMock);
    auto r = make_request("a", 0, 4, 4, BBox2D{0, 4, 0, 3});
    CHECK_THROWS_AS(s->propose(r), std::invalid_argument);
    r = make_request("a", 0, 4, 4, BBox2D{0, 3, 0, 3});
    r.image.pop_back();
    CHECK_THROWS_AS(s->propose(r), std::invalid_argument);
    CHECK(s->propose(make_request("a", 0, 4, 4, BBox2D{0, 3, 0, 3})).response);
  }
}

TEST_CASE("per-request errors keep the session alive") {
  auto s = ProposerSession::spawn(kMock + " --fault error-every --fault-after 3 --reorder 4");
  std::vector<ProposalRequest> reqs(30, make_request("a", 0, 4, 4, BBox2D{0, 1, 0, 1}));
  const auto res = s->propose_all(reqs);
  int errors = 0;
  for (const auto& r : res) {
    CHECK(r.response.has_value() != r.error.has_value());
    errors += r.error.has_value();
  }
  CHECK(errors == 10);
  CHECK(s->propose(reqs[0]).response.has_value());
}

TEST_CASE("fatal protocol faults") {
  SessionOptions quick;
  quick.timeout = 300ms;
  CHECK(spawn_error(kMock + " --fault exit-after --fault-after 3") == ProtocolErrc::kChildExited);
  CHECK(spawn_error(kMock + " --fault hang-after --fault-after 2", quick) == ProtocolErrc::kTimeout);
  CHECK(spawn_error(kMock + " --fault bad-rle-after --fault-after 1") == ProtocolErrc::kRleMismatch);
  CHECK(spawn_error(kMock + " --fault malformed-after --fault-after 0") == ProtocolErrc::kMalformedLine);
  CHECK(spawn_error("printf '{\"proto\":\"MP1\",\"caps\":[\"box_prompt\"]}\\n{\"id\":999,\"rle\":[16],\"conf\":0.5}\\n'; exec sleep 2") ==
        ProtocolErrc::kUnknownId);
  CHECK(spawn_error("printf '{\"proto\":\"MP1\",\"caps\":[\"box_prompt\"]}\\n{\"id\":1,\"rle\":[16],\"conf\":1.5}\\n'; exec sleep 2") ==
        ProtocolErrc::kMalformedLine);

  auto s = ProposerSession::spawn(kMock + " --fault exit-after --fault-after 1");
  auto r = make_request("a", 0, 4, 4, BBox2D{0, 3, 0, 3});
  CHECK(s->propose(r).response);
  CHECK_THROWS_AS(s->propose(r), ProtocolError);
  CHECK_THROWS_AS(s->propose(r), ProtocolError);
}

TEST_CASE("mock answers malformed request lines with error records") {
  MockProposer m(MockPlan{});
  const auto bad = m.answer("not json");
  CHECK(bad["id"].is_null());
  CHECK(bad.contains("error"));
  const auto missing = m.answer(R"({"id":4,"case":"a"})");
  CHECK(missing["id"] == 4);
  CHECK(missing.contains("error"));
  const auto wrong_len = m.answer(R"({"id":5,"case":"a","slice":0,"bbox":[0,0,0,0],"h":2,"w":2,"img_b64":"AACAPw=="})");
  CHECK(wrong_len["id"] == 5);
  CHECK(wrong_len.contains("error"));
  CHECK(m.hello().dump() == R"({"proto":"MP1","name":"mock","caps":["box_prompt"]})");
}

TEST_CASE("mock plans") {
  const auto plan = MockPlan::from_json(nlohmann::json::parse(
      R"({"name":"p","default":{"kind":"noise","density":0.1,"seed":5,"conf":0.6},
          "cases":{"a":{"kind":"oracle","conf":0.95},"b":{"kind":"constant","fill":"empty"}}})"));
  CHECK(plan.spec_for("a").kind == MockKind::kOracle);
  CHECK(plan.spec_for("a").conf == 0.95);
  CHECK(plan.spec_for("b").fill == false);
  CHECK(plan.spec_for("b").conf == 0.6);
  CHECK(plan.spec_for("zzz").kind == MockKind::kNoise);
  CHECK(plan.spec_for("zzz").seed == 5);
  CHECK(MockPlan::from_json(plan.to_json()).to_json() == plan.to_json());
  CHECK_THROWS(MockPlan::from_json(nlohmann::json::parse(R"({"default":{"kind":"magic"}})")));
  CHECK_THROWS(MockPlan::from_json(nlohmann::json::parse(R"({"default":{"conf":2}})")));
}
