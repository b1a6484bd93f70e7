#pragma once

// Wire contract between the harness and policy executables, and a
// subprocess runner that enforces wall-clock and address-space limits.
//
// One request line in, one response line out (NDJSON):
//   request  {"benchmark","instance","entry","limits"[,"source"]}
//   response {"actions":[...]} | {"error":"..."}
//
// Isolation is a separate process group, RLIMIT_AS and GRIDPLAN_NO_NET=1 in
// the child's environment. It is not a security boundary.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "gridplan/grasp_env.hpp"
#include "gridplan/minigrid_env.hpp"

extern char** environ;

namespace gridplan {

enum class Benchmark : std::uint8_t { Grasp, Minigrid };

inline constexpr std::string_view to_string(Benchmark b) { return b == Benchmark::Grasp ? "grasp" : "minigrid"; }

inline Benchmark parse_benchmark(std::string_view s) {
  if (s == "grasp") return Benchmark::Grasp;
  if (s == "minigrid") return Benchmark::Minigrid;
  throw std::invalid_argument("unknown benchmark '" + std::string(s) + "'");
}

using AnyInstance = std::variant<GraspInstance, MgInstance>;

inline Benchmark benchmark_of(const AnyInstance& inst) {
  return std::holds_alternative<GraspInstance>(inst) ? Benchmark::Grasp : Benchmark::Minigrid;
}

inline const std::string& instance_id(const AnyInstance& inst) {
  return std::visit([](const auto& i) -> const std::string& { return i.id; }, inst);
}

inline json to_json(const AnyInstance& inst) {
  return std::visit([](const auto& i) { return to_json(i); }, inst);
}

inline AnyInstance instance_from_json(Benchmark b, const json& j) {
  if (b == Benchmark::Grasp) return grasp_from_json(j);
  return mg_from_json(j);
}

// Signature tags for the solve() entry point.
inline constexpr std::string_view kGraspEntry = "grasp6";
inline constexpr std::string_view kMinigridEntry = "minigrid2";

inline std::string_view default_entry(Benchmark b) { return b == Benchmark::Grasp ? kGraspEntry : kMinigridEntry; }

struct PolicyLimits {
  int wall_ms = 10000;
  int mem_mb = 512;
};

struct PolicyRequest {
  Benchmark benchmark = Benchmark::Grasp;
  json instance;
  std::string entry;
  PolicyLimits limits;
  std::optional<std::string> source;  // program text for interpreters
};

inline PolicyRequest make_request(const AnyInstance& inst, PolicyLimits limits = {},
                                  std::optional<std::string> source = std::nullopt) {
  PolicyRequest r;
  r.benchmark = benchmark_of(inst);
  r.instance = to_json(inst);
  r.entry = std::string(default_entry(r.benchmark));
  r.limits = limits;
  r.source = std::move(source);
  return r;
}

inline json to_json(const PolicyRequest& r) {
  json j = {{"benchmark", to_string(r.benchmark)},
            {"instance", r.instance},
            {"entry", r.entry},
            {"limits", {{"wall_ms", r.limits.wall_ms}, {"mem_mb", r.limits.mem_mb}}}};
  if (r.source) j["source"] = *r.source;
  return j;
}

inline PolicyRequest request_from_json(const json& j) {
  PolicyRequest r;
  r.benchmark = parse_benchmark(j.at("benchmark").get<std::string>());
  r.instance = j.at("instance");
  r.entry = j.value("entry", std::string(default_entry(r.benchmark)));
  if (j.contains("limits")) {
    r.limits.wall_ms = j["limits"].value("wall_ms", r.limits.wall_ms);
    r.limits.mem_mb = j["limits"].value("mem_mb", r.limits.mem_mb);
  }
  if (j.contains("source") && j["source"].is_string()) r.source = j["source"].get<std::string>();
  return r;
}

enum class PolicyExit : std::uint8_t { Ok, Crash, Timeout, BadOutput };

inline constexpr std::string_view to_string(PolicyExit e) {
  constexpr std::array<std::string_view, 4> names = {"ok", "crash", "timeout", "bad_output"};
  return names[static_cast<std::size_t>(e)];
}

struct PolicyResponse {
  std::vector<std::string> actions;   // canonical upper-case names
  std::vector<std::string> rejected;  // entries outside the vocabulary
  std::string error;                  // from {"error": ...} or the runner
  std::string stderr_tail;
  long elapsed_ms = 0;
  PolicyExit exit = PolicyExit::Ok;
};

inline bool in_vocabulary(Benchmark b, std::string_view name) {
  return b == Benchmark::Grasp ? parse_grasp_action(name).has_value() : parse_mg_action(name).has_value();
}

// Interprets one response document. Anything other than an object with an
// "actions" array is bad output.
inline PolicyResponse parse_response_line(Benchmark b, std::string_view line) {
  PolicyResponse r;
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    r.exit = PolicyExit::BadOutput;
    r.error = "response is not a JSON object";
    return r;
  }
  if (j.contains("error")) {
    r.exit = PolicyExit::BadOutput;
    r.error = j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump();
    return r;
  }
  if (!j.contains("actions") || !j["actions"].is_array()) {
    r.exit = PolicyExit::BadOutput;
    r.error = "response has no actions array";
    return r;
  }
  for (const auto& a : j["actions"]) {
    if (a.is_string() && in_vocabulary(b, a.get<std::string>()))
      r.actions.push_back(to_upper(trim(a.get<std::string>())));
    else
      r.rejected.push_back(a.is_string() ? a.get<std::string>() : a.dump());
  }
  return r;
}

inline std::string response_line(const std::vector<std::string>& actions) {
  return json{{"actions", actions}}.dump();
}

inline std::string error_line(std::string_view message) { return json{{"error", message}}.dump(); }

// ---------------------------------------------------------------------------
// Subprocess runner

namespace detail {

inline constexpr std::size_t kMaxStdout = 16u << 20;
inline constexpr std::size_t kStderrTail = 4096;

inline void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

inline void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe2(fd, O_CLOEXEC) != 0) throw Error(std::string("pipe2: ") + std::strerror(errno));
  }
  ~Pipe() {
    close_read();
    close_write();
  }
  void close_read() {
    if (fd[0] >= 0) ::close(fd[0]), fd[0] = -1;
  }
  void close_write() {
    if (fd[1] >= 0) ::close(fd[1]), fd[1] = -1;
  }
};

}  // namespace detail

// Runs argv[0] with argv[1..] (PATH is not searched). Every failure of the
// child is reported in the response; only a failure to fork or create pipes
// throws.
inline PolicyResponse run_policy(const std::vector<std::string>& argv, const PolicyRequest& req) {
  if (argv.empty()) throw std::invalid_argument("run_policy: empty command");
  if (req.limits.wall_ms <= 0 || req.limits.mem_mb <= 0) throw std::invalid_argument("run_policy: limits must be positive");
  detail::ignore_sigpipe();

  const std::string payload = to_json(req).dump() + "\n";

  // Everything the child needs is built before fork; after it only
  // async-signal-safe calls are made.
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  std::vector<std::string> env_store;
  for (char** e = environ; e && *e; ++e)
    if (std::strncmp(*e, "GRIDPLAN_NO_NET=", 16) != 0) env_store.emplace_back(*e);
  env_store.emplace_back("GRIDPLAN_NO_NET=1");
  std::vector<char*> cenv;
  for (auto& e : env_store) cenv.push_back(e.data());
  cenv.push_back(nullptr);
  const rlim_t mem = static_cast<rlim_t>(req.limits.mem_mb) << 20;

  detail::Pipe in, out, err;
  const auto t0 = std::chrono::steady_clock::now();
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    const rlimit rl{mem, mem};
    ::setrlimit(RLIMIT_AS, &rl);
    ::dup2(in.fd[0], 0);
    ::dup2(out.fd[1], 1);
    ::dup2(err.fd[1], 2);
    ::execve(cargv[0], cargv.data(), cenv.data());
    const char msg[] = "exec failed\n";
    [[maybe_unused]] auto n = ::write(2, msg, sizeof msg - 1);
    ::_exit(127);
  }
  ::setpgid(pid, pid);  // either side may win the race
  in.close_read();
  out.close_write();
  err.close_write();
  detail::set_nonblocking(in.fd[1]);
  detail::set_nonblocking(out.fd[0]);
  detail::set_nonblocking(err.fd[0]);

  std::string stdout_buf, stderr_buf;
  std::size_t written = 0;
  bool timed_out = false, overflow = false;
  const auto deadline = t0 + std::chrono::milliseconds(req.limits.wall_ms);
  char buf[65536];

  while (out.fd[0] >= 0 || err.fd[0] >= 0) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      timed_out = true;
      break;
    }
    pollfd fds[3];
    int n = 0;
    int idx_in = -1, idx_out = -1, idx_err = -1;
    if (in.fd[1] >= 0) idx_in = n, fds[n++] = {in.fd[1], POLLOUT, 0};
    if (out.fd[0] >= 0) idx_out = n, fds[n++] = {out.fd[0], POLLIN, 0};
    if (err.fd[0] >= 0) idx_err = n, fds[n++] = {err.fd[0], POLLIN, 0};
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    const int rc = ::poll(fds, static_cast<nfds_t>(n), static_cast<int>(std::min<long long>(left + 1, 1000)));
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (idx_in >= 0 && fds[idx_in].revents) {
      if (fds[idx_in].revents & POLLOUT) {
        const auto w = ::write(in.fd[1], payload.data() + written, payload.size() - written);
        if (w > 0) written += static_cast<std::size_t>(w);
        if ((w < 0 && errno != EAGAIN) || written == payload.size()) in.close_write();
      } else {
        in.close_write();  // child closed its end
      }
    }
    auto drain = [&](detail::Pipe& p, int idx, std::string& dst, bool is_out) {
      if (idx < 0 || !fds[idx].revents) return;
      const auto r = ::read(p.fd[0], buf, sizeof buf);
      if (r > 0) {
        dst.append(buf, static_cast<std::size_t>(r));
        if (!is_out && dst.size() > 2 * detail::kStderrTail) dst.erase(0, dst.size() - detail::kStderrTail);
        if (is_out && dst.size() > detail::kMaxStdout) overflow = true;
      } else if (r == 0 || errno != EAGAIN) {
        p.close_read();
      }
    };
    drain(out, idx_out, stdout_buf, true);
    drain(err, idx_err, stderr_buf, false);
    if (overflow) break;
  }
  in.close_write();

  int status = 0;
  if (timed_out || overflow) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
  } else {
    // Output streams are closed; give the child the rest of its budget to exit.
    for (;;) {
      const pid_t w = ::waitpid(pid, &status, WNOHANG);
      if (w == pid) break;
      if (std::chrono::steady_clock::now() >= deadline) {
        timed_out = true;
        ::kill(-pid, SIGKILL);
        ::kill(pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    ::kill(-pid, SIGKILL);  // stray grandchildren
  }
  const auto elapsed =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();

  PolicyResponse resp;
  if (timed_out) {
    resp.exit = PolicyExit::Timeout;
    resp.error = "wall-clock limit of " + std::to_string(req.limits.wall_ms) + " ms exceeded";
  } else if (overflow) {
    resp.exit = PolicyExit::BadOutput;
    resp.error = "response exceeds " + std::to_string(detail::kMaxStdout) + " bytes";
  } else if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    resp.exit = PolicyExit::Crash;
    resp.error = WIFSIGNALED(status) ? "killed by signal " + std::to_string(WTERMSIG(status))
                                     : "exit status " + std::to_string(WEXITSTATUS(status));
  } else {
    std::string line;
    for (const auto& l : split_lines(stdout_buf))
      if (!trim(l).empty()) {
        line = l;
        break;
      }
    auto parsed = parse_response_line(req.benchmark, line);
    resp.actions = std::move(parsed.actions);
    resp.rejected = std::move(parsed.rejected);
    resp.error = std::move(parsed.error);
    resp.exit = parsed.exit;
  }
  if (stderr_buf.size() > detail::kStderrTail) stderr_buf.erase(0, stderr_buf.size() - detail::kStderrTail);
  resp.stderr_tail = std::move(stderr_buf);
  resp.elapsed_ms = static_cast<long>(elapsed);
  return resp;
}

// Bounded pool: at most `parallelism` children at once; results keep the
// order of `requests`.
inline std::vector<PolicyResponse> run_policies(const std::vector<std::string>& argv,
                                                const std::vector<PolicyRequest>& requests, int parallelism) {
  std::vector<PolicyResponse> out(requests.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < requests.size();) {
      try {
        out[i] = run_policy(argv, requests[i]);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, parallelism));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(n, requests.size()); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

// ---------------------------------------------------------------------------
// Scoring

struct ScoredResponse {
  double j = 0.0;
  bool success = false;  // MiniGrid only
  std::string outcome;   // the exit tag
};

inline ScoredResponse score_detail(const PolicyResponse& resp, const AnyInstance& inst) {
  ScoredResponse s;
  s.outcome = std::string(to_string(resp.exit));
  const bool ok = resp.exit == PolicyExit::Ok;
  if (const auto* g = std::get_if<GraspInstance>(&inst)) {
    std::vector<GraspAction> acts;
    if (ok)
      for (const auto& a : resp.actions)
        if (auto p = parse_grasp_action(a)) acts.push_back(*p);
    s.j = grasp_run(*g, acts).score;
  } else {
    const auto& m = std::get<MgInstance>(inst);
    if (ok) {
      std::vector<MgAction> acts;
      for (const auto& a : resp.actions)
        if (auto p = parse_mg_action(a)) acts.push_back(*p);
      const auto o = mg_run(m, acts);
      s.j = o.reward;
      s.success = o.success;
    }
  }
  return s;
}

// Failure exits score like the empty trace on GRASP and 0 on MiniGrid.
inline double score_response(const PolicyResponse& resp, const AnyInstance& inst) {
  return score_detail(resp, inst).j;
}

}  // namespace gridplan
