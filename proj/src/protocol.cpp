#include "voladapt/protocol.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <thread>
#include <unordered_map>

#include "voladapt/codec.hpp"

extern char** environ;

namespace voladapt {

const char* to_string(ProtocolErrc code) {
  switch (code) {
    case ProtocolErrc::kSpawnFailed: return "spawn failed";
    case ProtocolErrc::kBadHello: return "bad hello";
    case ProtocolErrc::kVersionMismatch: return "version mismatch";
    case ProtocolErrc::kTimeout: return "timeout";
    case ProtocolErrc::kChildExited: return "child exited";
    case ProtocolErrc::kMalformedLine: return "malformed line";
    case ProtocolErrc::kRleMismatch: return "RLE mismatch";
    case ProtocolErrc::kUnknownId: return "unknown id";
    case ProtocolErrc::kWriteFailed: return "write failed";
  }
  return "unknown";
}

ProtocolError::ProtocolError(ProtocolErrc code, const std::string& what, std::string line)
    : std::runtime_error(std::string(to_string(code)) + ": " + what),
      code_(code),
      line_(std::move(line)) {}

nlohmann::json request_json(std::uint64_t id, const ProposalRequest& r) {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["case"] = r.case_id;
  j["slice"] = r.slice_index;
  j["bbox"] = {r.bbox.row_min, r.bbox.row_max, r.bbox.col_min, r.bbox.col_max};
  j["h"] = r.h;
  j["w"] = r.w;
  j["img_b64"] = encode_f32_b64(r.image);
  return j;
}

HelloInfo parse_hello(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError(ProtocolErrc::kBadHello, "first line is not JSON", line);
  }
  if (!j.is_object() || !j.contains("proto") || !j["proto"].is_string()) {
    throw ProtocolError(ProtocolErrc::kBadHello, "first line carries no \"proto\" field", line);
  }
  const std::string proto = j["proto"];
  if (proto != kProtocolVersion) {
    throw ProtocolError(ProtocolErrc::kVersionMismatch,
                        "child speaks " + proto + ", host speaks " + kProtocolVersion, line);
  }
  HelloInfo info;
  info.raw = j;
  if (j.contains("name") && j["name"].is_string()) info.name = j["name"];
  if (j.contains("caps")) {
    if (!j["caps"].is_array()) throw ProtocolError(ProtocolErrc::kBadHello, "caps is not a list", line);
    for (const auto& c : j["caps"]) {
      if (!c.is_string()) throw ProtocolError(ProtocolErrc::kBadHello, "caps holds a non-string", line);
      info.caps.push_back(c);
    }
  }
  if (std::find(info.caps.begin(), info.caps.end(), "box_prompt") == info.caps.end()) {
    throw ProtocolError(ProtocolErrc::kBadHello, "child lacks the box_prompt capability", line);
  }
  return info;
}

namespace {

using Clock = std::chrono::steady_clock;

std::optional<std::string> pop_line(std::string& buf) {
  const auto nl = buf.find('\n');
  if (nl == std::string::npos) return std::nullopt;
  std::string line = buf.substr(0, nl);
  buf.erase(0, nl + 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

std::string describe_status(int status) {
  if (WIFEXITED(status)) return "exit code " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status)) return "signal " + std::to_string(WTERMSIG(status));
  return "status " + std::to_string(status);
}

// Waits up to `limit` for the child; returns its raw status if reaped.
std::optional<int> reap(int pid, std::chrono::milliseconds limit) {
  const auto deadline = Clock::now() + limit;
  for (;;) {
    int status = 0;
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) return status;
    if (r < 0) return std::nullopt;
    if (Clock::now() >= deadline) return std::nullopt;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
}

}  // namespace

std::unique_ptr<ProposerSession> ProposerSession::spawn(const std::string& command,
                                                        SessionOptions options) {
  static std::once_flag ignore_sigpipe;
  std::call_once(ignore_sigpipe, [] { ::signal(SIGPIPE, SIG_IGN); });
  if (options.window == 0) throw std::invalid_argument("pipelining window must be >= 1");

  int in_pipe[2], out_pipe[2];
  if (pipe2(in_pipe, O_CLOEXEC) != 0) {
    throw ProtocolError(ProtocolErrc::kSpawnFailed, std::strerror(errno));
  }
  if (pipe2(out_pipe, O_CLOEXEC) != 0) {
    const int err = errno;
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw ProtocolError(ProtocolErrc::kSpawnFailed, std::strerror(err));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  const char* argv[] = {"/bin/sh", "-c", command.c_str(), nullptr};
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, nullptr, const_cast<char**>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  if (rc != 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    throw ProtocolError(ProtocolErrc::kSpawnFailed, command + ": " + std::strerror(rc));
  }
  fcntl(in_pipe[1], F_SETFL, fcntl(in_pipe[1], F_GETFL) | O_NONBLOCK);

  std::unique_ptr<ProposerSession> s(new ProposerSession(pid, in_pipe[1], out_pipe[0], options));
  std::optional<std::string> line;
  try {
    line = s->read_line(options.timeout);
  } catch (const ProtocolError& e) {
    if (e.code() != ProtocolErrc::kTimeout) throw;
    s->abort_child();
    throw ProtocolError(ProtocolErrc::kTimeout, "no hello within " +
                                                    std::to_string(options.timeout.count()) + " ms");
  }
  if (!line) {
    const auto status = reap(pid, std::chrono::milliseconds(1000));
    s->closed_ = true;
    if (status) s->exit_status_ = *status;
    ::close(s->to_child_);
    ::close(s->from_child_);
    const bool not_found = status && WIFEXITED(*status) &&
                           (WEXITSTATUS(*status) == 127 || WEXITSTATUS(*status) == 126);
    throw ProtocolError(not_found ? ProtocolErrc::kSpawnFailed : ProtocolErrc::kBadHello,
                        "child closed its output before hello" +
                            (status ? " (" + describe_status(*status) + ")" : std::string()));
  }
  try {
    s->hello_ = parse_hello(*line);
  } catch (const ProtocolError&) {
    s->abort_child();
    throw;
  }
  return s;
}

ProposerSession::ProposerSession(int pid, int to_child, int from_child, SessionOptions options)
    : pid_(pid), to_child_(to_child), from_child_(from_child), options_(options) {}

ProposerSession::~ProposerSession() {
  try {
    close();
  } catch (...) {
  }
}

void ProposerSession::abort_child() {
  if (closed_) return;
  closed_ = true;
  ::kill(pid_, SIGKILL);
  int status = 0;
  if (waitpid(pid_, &status, 0) == pid_) exit_status_ = status;
  ::close(to_child_);
  ::close(from_child_);
}

void ProposerSession::fail(ProtocolErrc code, const std::string& what, std::string line) {
  abort_child();
  throw ProtocolError(code, what, std::move(line));
}

void ProposerSession::fail_child_exit(const std::string& context) {
  std::string detail = context;
  if (!closed_) {
    closed_ = true;
    const auto status = reap(pid_, std::chrono::milliseconds(1000));
    if (status) {
      exit_status_ = *status;
      detail += " (" + describe_status(*status) + ")";
    } else {
      ::kill(pid_, SIGKILL);
      waitpid(pid_, nullptr, 0);
    }
    ::close(to_child_);
    ::close(from_child_);
  }
  throw ProtocolError(ProtocolErrc::kChildExited, detail);
}

std::optional<std::string> ProposerSession::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (auto line = pop_line(inbuf_)) return line;
    pollfd p{from_child_, POLLIN, 0};
    const int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(ProtocolErrc::kChildExited, std::strerror(errno));
    }
    if (r == 0) throw ProtocolError(ProtocolErrc::kTimeout, "no line from child");
    char chunk[65536];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return std::nullopt;
    }
    if (n == 0) return std::nullopt;
    inbuf_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::vector<ProposalResult> ProposerSession::propose_all(std::span<const ProposalRequest> requests) {
  std::lock_guard lock(mu_);
  if (closed_) throw ProtocolError(ProtocolErrc::kChildExited, "session is closed");
  for (const auto& r : requests) {
    r.bbox.validate(r.h, r.w);
    if (r.image.size() != static_cast<std::size_t>(r.h) * r.w) {
      throw std::invalid_argument("request image holds " + std::to_string(r.image.size()) +
                                  " pixels, expected h * w");
    }
  }

  const std::uint64_t base = next_id_;
  next_id_ += requests.size();
  std::vector<ProposalResult> results(requests.size());
  std::unordered_map<std::uint64_t, std::size_t> pending;
  std::string outbuf;
  std::size_t next = 0, done = 0;
  auto deadline = Clock::now() + options_.timeout;

  auto handle = [&](const std::string& line) {
    if (line.empty()) return;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      fail(ProtocolErrc::kMalformedLine, "response is not JSON", line);
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned()) {
      fail(ProtocolErrc::kMalformedLine, "response lacks an unsigned id", line);
    }
    const std::uint64_t id = j["id"];
    const auto it = pending.find(id);
    if (it == pending.end()) fail(ProtocolErrc::kUnknownId, "no outstanding request " + std::to_string(id), line);
    const std::size_t idx = it->second;
    const ProposalRequest& req = requests[idx];
    ProposalResult& out = results[idx];
    out.id = id;
    if (j.contains("error")) {
      if (!j["error"].is_string()) fail(ProtocolErrc::kMalformedLine, "error is not a string", line);
      out.error = j["error"].get<std::string>();
    } else {
      if (!j.contains("rle") || !j["rle"].is_array() || !j.contains("conf") || !j["conf"].is_number()) {
        fail(ProtocolErrc::kMalformedLine, "response needs rle and conf", line);
      }
      std::vector<std::uint32_t> runs;
      runs.reserve(j["rle"].size());
      for (const auto& v : j["rle"]) {
        if (!v.is_number_unsigned() || v.get<std::uint64_t>() > UINT32_MAX) {
          fail(ProtocolErrc::kMalformedLine, "rle holds a non-u32 value", line);
        }
        runs.push_back(v.get<std::uint32_t>());
      }
      const double conf = j["conf"];
      if (!(conf >= 0.0 && conf <= 1.0)) fail(ProtocolErrc::kMalformedLine, "conf outside [0, 1]", line);
      try {
        out.response = ProposalResponse{rle_decode(runs, req.h, req.w), conf};
      } catch (const std::invalid_argument& e) {
        fail(ProtocolErrc::kRleMismatch, e.what(), line);
      }
    }
    pending.erase(it);
    ++done;
  };

  while (done < requests.size()) {
    while (next < requests.size() && pending.size() < options_.window) {
      const std::uint64_t id = base + next;
      pending.emplace(id, next);
      outbuf += request_json(id, requests[next]).dump();
      outbuf += '\n';
      ++next;
    }
    if (auto line = pop_line(inbuf_)) {
      handle(*line);
      deadline = Clock::now() + options_.timeout;
      continue;
    }
    pollfd fds[2] = {{from_child_, POLLIN, 0}, {to_child_, POLLOUT, 0}};
    const nfds_t nfds = outbuf.empty() ? 1 : 2;
    const int r = ::poll(fds, nfds, remaining_ms(deadline));
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(ProtocolErrc::kChildExited, std::strerror(errno));
    }
    if (r == 0) {
      fail(ProtocolErrc::kTimeout, std::to_string(pending.size()) + " request(s) unanswered after " +
                                       std::to_string(options_.timeout.count()) + " ms");
    }
    if (nfds == 2 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
      const ssize_t n = ::write(to_child_, outbuf.data(), outbuf.size());
      if (n > 0) {
        outbuf.erase(0, static_cast<std::size_t>(n));
        deadline = Clock::now() + options_.timeout;
      } else if (n < 0 && errno != EAGAIN && errno != EINTR) {
        if (errno == EPIPE) fail_child_exit("child stopped reading requests");
        fail(ProtocolErrc::kWriteFailed, std::strerror(errno));
      }
    }
    if (fds[0].revents & (POLLIN | POLLHUP | POLLERR)) {
      char chunk[65536];
      const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
      if (n == 0) fail_child_exit(std::to_string(pending.size()) + " request(s) outstanding");
      if (n > 0) inbuf_.append(chunk, static_cast<std::size_t>(n));
    }
  }
  return results;
}

ProposalResult ProposerSession::propose(const ProposalRequest& request) {
  return propose_all(std::span<const ProposalRequest>(&request, 1)).front();
}

int ProposerSession::close() {
  std::lock_guard lock(mu_);
  auto code = [this] {
    return exit_status_ >= 0 && WIFEXITED(exit_status_) ? WEXITSTATUS(exit_status_) : -1;
  };
  if (closed_) return code();
  closed_ = true;
  const std::string bye = "{\"cmd\":\"bye\"}\n";
  const ssize_t ignored = ::write(to_child_, bye.data(), bye.size());
  (void)ignored;
  ::close(to_child_);
  const auto status = reap(pid_, options_.timeout);
  if (status) {
    exit_status_ = *status;
  } else {
    ::kill(pid_, SIGKILL);
    waitpid(pid_, nullptr, 0);
    exit_status_ = -1;
  }
  ::close(from_child_);
  return code();
}

}  // namespace voladapt
