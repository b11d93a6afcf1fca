// MP1: box-prompted slice proposals from a child process over
// newline-delimited JSON on its standard streams.
//
//   hello     {"proto":"MP1","name":...,"caps":["box_prompt"]}
//   request   {"id":u64,"case":str,"slice":u32,"bbox":[r0,r1,c0,c1],"h":u32,"w":u32,"img_b64":str}
//   response  {"id":u64,"rle":[u32...],"conf":f64}
//   error     {"id":u64,"error":str}
//   shutdown  {"cmd":"bye"}

#ifndef VOLADAPT_PROTOCOL_HPP
#define VOLADAPT_PROTOCOL_HPP

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "voladapt/volume.hpp"

namespace voladapt {

inline constexpr const char* kProtocolVersion = "MP1";

enum class ProtocolErrc {
  kSpawnFailed,
  kBadHello,
  kVersionMismatch,
  kTimeout,
  kChildExited,
  kMalformedLine,
  kRleMismatch,
  kUnknownId,
  kWriteFailed,
};

const char* to_string(ProtocolErrc code);

/// Fatal session error. `line` holds the offending input line if any.
class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ProtocolErrc code, const std::string& what, std::string line = {});
  ProtocolErrc code() const { return code_; }
  const std::string& line() const { return line_; }

 private:
  ProtocolErrc code_;
  std::string line_;
};

struct ProposalRequest {
  std::string case_id;
  std::uint32_t slice_index = 0;
  BBox2D bbox;
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::vector<float> image;  // h * w, row-major
};

struct ProposalResponse {
  SliceMask2D mask;
  double confidence = 0.0;
};

/// Exactly one of `response` and `error` is set.
struct ProposalResult {
  std::uint64_t id = 0;
  std::optional<ProposalResponse> response;
  std::optional<std::string> error;
};

struct HelloInfo {
  std::string name;
  std::vector<std::string> caps;
  nlohmann::json raw;
};

struct SessionOptions {
  /// Applies to the hello line and to every wait for the next response.
  std::chrono::milliseconds timeout{30000};
  std::size_t window = 32;
};

nlohmann::json request_json(std::uint64_t id, const ProposalRequest& r);

/// Validates a hello line. Throws ProtocolError (kBadHello or kVersionMismatch).
HelloInfo parse_hello(const std::string& line);

/// One child process. Requests may be pipelined and answered in any order;
/// results are always returned in request order. Thread-safe.
class ProposerSession {
 public:
  /// Runs `command` through /bin/sh -c and waits for its hello line.
  static std::unique_ptr<ProposerSession> spawn(const std::string& command,
                                                SessionOptions options = {});
  ~ProposerSession();

  ProposerSession(const ProposerSession&) = delete;
  ProposerSession& operator=(const ProposerSession&) = delete;

  const HelloInfo& hello() const { return hello_; }
  const SessionOptions& options() const { return options_; }

  std::vector<ProposalResult> propose_all(std::span<const ProposalRequest> requests);
  ProposalResult propose(const ProposalRequest& request);

  /// Sends the shutdown line and reaps the child. Returns its exit status
  /// (or -1 if it had to be killed). Idempotent.
  int close();

 private:
  ProposerSession(int pid, int to_child, int from_child, SessionOptions options);

  std::optional<std::string> read_line(std::chrono::milliseconds timeout);
  [[noreturn]] void fail_child_exit(const std::string& context);
  [[noreturn]] void fail(ProtocolErrc code, const std::string& what, std::string line = {});
  void abort_child();

  int pid_;
  int to_child_;
  int from_child_;
  SessionOptions options_;
  HelloInfo hello_;
  std::string inbuf_;
  std::uint64_t next_id_ = 1;
  bool closed_ = false;
  int exit_status_ = -1;
  std::mutex mu_;
};

}  // namespace voladapt

#endif  // VOLADAPT_PROTOCOL_HPP
