#include "latentdemo/sandbox.hpp"

#include <fcntl.h>
#include <grp.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "latentdemo/common.hpp"

namespace latentdemo {

namespace fs = std::filesystem;

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "PASS";
    case Verdict::fail: return "FAIL";
    case Verdict::timeout: return "TIMEOUT";
    case Verdict::error: return "ERROR";
  }
  return "ERROR";
}

Verdict parse_verdict(std::string_view name) {
  if (name == "PASS") return Verdict::pass;
  if (name == "FAIL") return Verdict::fail;
  if (name == "TIMEOUT") return Verdict::timeout;
  if (name == "ERROR") return Verdict::error;
  throw ParseError("unknown verdict '" + std::string(name) + "'");
}

void SandboxPolicy::validate() const {
  if (!(timeout_s > 0.0)) throw ConfigError("sandbox: timeout must be > 0");
  if (memory_cap == 0) throw ConfigError("sandbox: memory cap must be > 0");
  if (interpreter.empty()) throw ConfigError("sandbox: interpreter must be set");
}

namespace {

// Exit status 0 alone is not trusted: the candidate could call os._exit(0).
// The harness also records its verdict in a file named by a per-run nonce.
constexpr const char* kHarness = R"PY(import json, sys, traceback
def main():
    verdict_path = sys.argv[1]
    def record(v):
        with open(verdict_path, 'w') as fh:
            fh.write(v)
    with open('candidate.py') as fh:
        src = fh.read()
    with open('tests.json') as fh:
        tests = json.load(fh)
    try:
        code = compile(src, 'candidate.py', 'exec')
    except BaseException:
        traceback.print_exc(limit=1)
        record('ERROR')
        return 2
    env = {'__name__': '__candidate__'}
    try:
        exec(code, env)
    except BaseException:
        traceback.print_exc(limit=2)
        record('ERROR')
        return 2
    for i, t in enumerate(tests):
        try:
            exec(compile(t, 'test_%d' % i, 'exec'), env)
        except BaseException:
            print('test %d failed' % i)
            traceback.print_exc(limit=2)
            record('FAIL')
            return 1
    record('PASS')
    return 0
sys.exit(main())
)PY";

constexpr uid_t kNobody = 65534;

class ScratchDir {
 public:
  explicit ScratchDir(const fs::path& root) {
    const fs::path base = root.empty() ? fs::temp_directory_path() : root;
    std::error_code ec;
    fs::create_directories(base, ec);
    std::string tmpl = (base / "ldsbx-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) {
      throw SandboxInfraError("sandbox: cannot create scratch directory under " + base.string() + ": " +
                              std::strerror(errno));
    }
    path_ = tmpl;
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_file(const fs::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(content.data(), static_cast<std::streamsize>(content.size()))) {
    throw SandboxInfraError("sandbox: cannot write " + p.string());
  }
}

std::string resolve_interpreter(const std::string& name) {
  if (name.find('/') != std::string::npos) return name;
  const char* path = std::getenv("PATH");
  std::stringstream dirs(path != nullptr ? path : "/usr/bin:/bin");
  std::string dir;
  while (std::getline(dirs, dir, ':')) {
    const fs::path candidate = fs::path(dir.empty() ? "." : dir) / name;
    if (::access(candidate.c_str(), X_OK) == 0) return candidate.string();
  }
  throw SandboxInfraError("sandbox: interpreter '" + name + "' not found on PATH");
}

std::string random_nonce() {
  static std::atomic<std::uint64_t> counter{0};
  std::random_device rd;
  return std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1));
}

void append_capped(std::string& dst, const char* data, std::size_t n) {
  if (dst.size() >= kMaxDetailBytes) return;
  dst.append(data, std::min(n, kMaxDetailBytes - dst.size()));
}

}  // namespace

ExecutionOutcome run_candidate(std::string_view code, const std::vector<std::string>& tests,
                               const SandboxPolicy& policy, std::string_view language) {
  policy.validate();
  if (language != "python") {
    throw SandboxInfraError("sandbox: no execution adapter for language '" + std::string(language) + "'");
  }
  const auto started = std::chrono::steady_clock::now();
  const std::string interpreter = resolve_interpreter(policy.interpreter);

  ScratchDir dir(policy.scratch_root);
  const std::string nonce = random_nonce();
  const fs::path verdict_file = dir.path() / (".verdict-" + nonce);
  write_file(dir.path() / "candidate.py", code);
  write_file(dir.path() / "tests.json", nlohmann::json(tests).dump());
  write_file(dir.path() / "harness.py", kHarness);

  const bool drop_privileges = ::geteuid() == 0;
  if (drop_privileges) {
    for (const auto& entry : fs::directory_iterator(dir.path())) {
      if (::chown(entry.path().c_str(), kNobody, kNobody) != 0) {
        throw SandboxInfraError("sandbox: chown failed: " + std::string(std::strerror(errno)));
      }
    }
    if (::chown(dir.path().c_str(), kNobody, kNobody) != 0) {
      throw SandboxInfraError("sandbox: chown failed: " + std::string(std::strerror(errno)));
    }
  }

  // Everything the child touches is prepared before fork.
  const std::string dir_str = dir.path().string();
  const std::string verdict_str = verdict_file.string();
  const std::string home_env = "HOME=" + dir_str;
  std::vector<const char*> argv = {interpreter.c_str(), "-I", "harness.py", verdict_str.c_str(), nullptr};
  std::vector<const char*> envp = {"PATH=/usr/bin:/bin", home_env.c_str(), "LANG=C.UTF-8",
                                   "PYTHONDONTWRITEBYTECODE=1", "PYTHONHASHSEED=0", nullptr};
  const rlim_t cpu_limit = static_cast<rlim_t>(std::ceil(policy.timeout_s)) + 1;
  const rlim_t mem_limit = static_cast<rlim_t>(policy.memory_cap);

  int out_pipe[2];
  int err_pipe[2];
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) throw SandboxInfraError("sandbox: pipe failed");
  if (::pipe2(err_pipe, O_CLOEXEC) != 0) {
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    throw SandboxInfraError("sandbox: pipe failed");
  }

  const pid_t pid = ::fork();
  if (pid < 0) {
    for (int fd : {out_pipe[0], out_pipe[1], err_pipe[0], err_pipe[1]}) ::close(fd);
    throw SandboxInfraError("sandbox: fork failed: " + std::string(std::strerror(errno)));
  }
  if (pid == 0) {
    // Child: async-signal-safe calls only.
    ::setpgid(0, 0);
    if (!policy.allow_network) {
      if (::unshare(CLONE_NEWNET) != 0) ::unshare(CLONE_NEWUSER | CLONE_NEWNET);
    }
    struct rlimit rl {};
    rl.rlim_cur = rl.rlim_max = mem_limit;
    ::setrlimit(RLIMIT_AS, &rl);
    rl.rlim_cur = rl.rlim_max = cpu_limit;
    ::setrlimit(RLIMIT_CPU, &rl);
    rl.rlim_cur = rl.rlim_max = 0;
    ::setrlimit(RLIMIT_CORE, &rl);
    rl.rlim_cur = rl.rlim_max = 64u << 20;
    ::setrlimit(RLIMIT_FSIZE, &rl);
    int err = 0;
    if (drop_privileges) {
      if (::setgroups(0, nullptr) != 0 || ::setgid(kNobody) != 0 || ::setuid(kNobody) != 0) err = errno;
    }
    // After the drop, so an unreachable scratch root is an infrastructure error.
    if (err == 0 && ::chdir(dir_str.c_str()) != 0) err = errno;
    if (err == 0) {
      const int devnull = ::open("/dev/null", O_RDONLY);
      if (devnull >= 0) ::dup2(devnull, 0);
      ::dup2(out_pipe[1], 1);
      ::dup2(out_pipe[1], 2);
      ::execve(argv[0], const_cast<char* const*>(argv.data()), const_cast<char* const*>(envp.data()));
      err = errno;
    }
    [[maybe_unused]] auto w = ::write(err_pipe[1], &err, sizeof err);
    ::_exit(127);
  }

  ::close(out_pipe[1]);
  ::close(err_pipe[1]);
  int child_errno = 0;
  const auto got = ::read(err_pipe[0], &child_errno, sizeof child_errno);
  ::close(err_pipe[0]);
  if (got == static_cast<ssize_t>(sizeof child_errno)) {
    ::close(out_pipe[0]);
    ::waitpid(pid, nullptr, 0);
    throw SandboxInfraError("sandbox: cannot start interpreter: " + std::string(std::strerror(child_errno)));
  }

  ExecutionOutcome outcome;
  const auto deadline = started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                      std::chrono::duration<double>(policy.timeout_s));
  ::fcntl(out_pipe[0], F_SETFL, ::fcntl(out_pipe[0], F_GETFL) | O_NONBLOCK);
  char buf[4096];
  int status = 0;
  bool exited = false;
  bool timed_out = false;
  auto drain = [&] {
    for (;;) {
      const auto n = ::read(out_pipe[0], buf, sizeof buf);
      if (n <= 0) break;
      append_capped(outcome.detail, buf, static_cast<std::size_t>(n));
    }
  };
  while (!exited) {
    const auto now = std::chrono::steady_clock::now();
    if (now >= deadline) {
      timed_out = true;
      break;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    pollfd pfd{out_pipe[0], POLLIN, 0};
    ::poll(&pfd, 1, static_cast<int>(std::clamp<long long>(remaining, 1, 20)));
    drain();
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) exited = true;
  }
  ::kill(-pid, SIGKILL);
  if (timed_out) {
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
  }
  drain();
  ::close(out_pipe[0]);
  outcome.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::string recorded;
  {
    std::ifstream in(verdict_file);
    std::getline(in, recorded);
  }
  if (timed_out) {
    outcome.verdict = Verdict::timeout;
  } else if (WIFSIGNALED(status)) {
    const int sig = WTERMSIG(status);
    outcome.verdict = (sig == SIGXCPU) ? Verdict::timeout : Verdict::fail;
    append_capped(outcome.detail, "\n[killed by signal ", 19);
    const std::string s = std::to_string(sig) + "]";
    append_capped(outcome.detail, s.data(), s.size());
  } else {
    const int code_status = WEXITSTATUS(status);
    if (code_status == 0 && recorded == "PASS") {
      outcome.verdict = Verdict::pass;
    } else if (code_status == 2 && recorded == "ERROR") {
      outcome.verdict = Verdict::error;
    } else {
      outcome.verdict = Verdict::fail;
      if (recorded.empty()) {
        const std::string note = "\n[exited with status " + std::to_string(code_status) + " before tests completed]";
        append_capped(outcome.detail, note.data(), note.size());
      }
    }
  }
  return outcome;
}

std::vector<ExecutionOutcome> run_batch(const std::vector<CandidateJob>& jobs, const SandboxPolicy& policy,
                                        std::size_t parallelism) {
  if (parallelism < 1) throw ConfigError("sandbox: parallelism must be >= 1");
  policy.validate();
  std::vector<ExecutionOutcome> outcomes(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        outcomes[i] = run_candidate(jobs[i].code, jobs[i].tests, policy, jobs[i].language);
        outcomes[i].query_task_id = jobs[i].query_task_id;
        outcomes[i].sample_index = jobs[i].sample_index;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(jobs.size());
        return;
      }
    }
  };
  const std::size_t threads = std::min(parallelism, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t + 1 < threads; ++t) pool.emplace_back(worker);
  if (threads > 0) worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return outcomes;
}

std::string outcome_to_jsonl(const ExecutionOutcome& outcome) {
  nlohmann::ordered_json j;
  j["task"] = outcome.query_task_id;
  j["sample"] = outcome.sample_index;
  j["verdict"] = to_string(outcome.verdict);
  j["duration"] = outcome.duration_s;
  j["detail"] = outcome.detail;
  // Captured output may cut a UTF-8 sequence; replace rather than throw.
  return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

ExecutionOutcome outcome_from_jsonl(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    ExecutionOutcome o;
    o.query_task_id = j.at("task").get<std::string>();
    o.sample_index = j.at("sample").get<std::size_t>();
    o.verdict = parse_verdict(j.at("verdict").get<std::string>());
    o.duration_s = j.at("duration").get<double>();
    o.detail = j.value("detail", std::string{});
    return o;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("outcome log: ") + e.what());
  }
}

}  // namespace latentdemo
