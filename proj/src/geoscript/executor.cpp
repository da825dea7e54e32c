#include "geoforge/executor.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <semaphore>
#include <system_error>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geoforge/fsutil.hpp"

namespace geoforge::geoscript {
namespace fs = std::filesystem;
namespace {

constexpr std::size_t k_capture_limit = 64 * 1024;

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out.push_back(c);
  }
  out += "'";
  return out;
}

std::string replace_all(std::string text, std::string_view from, const std::string& to) {
  if (from.empty()) return text;
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

std::string excerpt(const std::string& s, std::size_t limit = 400) {
  if (s.size() <= limit) return s;
  return s.substr(0, limit) + "...";
}

class ScratchDir {
 public:
  explicit ScratchDir(const fs::path& parent) {
    const fs::path base = parent.empty() ? fs::temp_directory_path() : parent;
    std::error_code ec;
    fs::create_directories(base, ec);
    std::string tmpl = (base / "geoforge-exec-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) {
      throw GeoScriptError(ErrorKind::InvalidConfig,
                           fmt::format("cannot create scratch directory under {}: {}", base.string(), std::strerror(errno)));
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

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe2(fd, O_CLOEXEC) != 0) throw std::system_error(errno, std::generic_category(), "pipe2");
  }
  ~Pipe() {
    for (int f : fd) {
      if (f >= 0) ::close(f);
    }
  }
  void close_end(int i) {
    if (fd[i] >= 0) ::close(fd[i]);
    fd[i] = -1;
  }
};

struct ChildResult {
  bool timed_out = false;
  int exit_code = 0;
  std::string out;
  std::string err;
};

ChildResult run_child(const std::string& command, const fs::path& cwd, std::chrono::milliseconds timeout) {
  Pipe out_pipe;
  Pipe err_pipe;
  const std::string cwd_str = cwd.string();
  const auto start = std::chrono::steady_clock::now();

  const pid_t pid = ::fork();
  if (pid < 0) throw std::system_error(errno, std::generic_category(), "fork");
  if (pid == 0) {
    // Child: only async-signal-safe calls until exec.
    ::setpgid(0, 0);
    if (::chdir(cwd_str.c_str()) != 0) ::_exit(127);
    ::dup2(out_pipe.fd[1], STDOUT_FILENO);
    ::dup2(err_pipe.fd[1], STDERR_FILENO);
    const int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::setpgid(pid, pid);  // also set from the parent to close the race
  out_pipe.close_end(1);
  err_pipe.close_end(1);

  ChildResult result;
  bool exited = false;
  int status = 0;
  std::optional<std::chrono::steady_clock::time_point> exited_at;
  const auto deadline = start + timeout;

  auto drain = [&](int& fd, std::string& sink) {
    char buf[4096];
    const ssize_t n = ::read(fd, buf, sizeof buf);
    if (n > 0) {
      if (sink.size() < k_capture_limit) sink.append(buf, static_cast<std::size_t>(std::min<ssize_t>(n, k_capture_limit - sink.size())));
    } else if (n == 0 || (errno != EINTR && errno != EAGAIN)) {
      ::close(fd);
      fd = -1;
    }
  };

  while (true) {
    if (!exited) {
      const pid_t w = ::waitpid(pid, &status, WNOHANG);
      if (w == pid) {
        exited = true;
        exited_at = std::chrono::steady_clock::now();
      }
    }
    const bool pipes_open = out_pipe.fd[0] >= 0 || err_pipe.fd[0] >= 0;
    const auto now = std::chrono::steady_clock::now();
    if (exited && (!pipes_open || now - *exited_at > std::chrono::milliseconds(200))) break;
    if (!exited && now >= deadline) {
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      result.timed_out = true;
      break;
    }
    if (pipes_open) {
      pollfd fds[2];
      int count = 0;
      if (out_pipe.fd[0] >= 0) fds[count++] = {out_pipe.fd[0], POLLIN, 0};
      if (err_pipe.fd[0] >= 0) fds[count++] = {err_pipe.fd[0], POLLIN, 0};
      const int r = ::poll(fds, static_cast<nfds_t>(count), 10);
      if (r > 0) {
        for (int i = 0; i < count; ++i) {
          if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
          if (fds[i].fd == out_pipe.fd[0]) drain(out_pipe.fd[0], result.out);
          else drain(err_pipe.fd[0], result.err);
        }
      }
    } else {
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }
  // Stray background processes in the group do not outlive the run.
  ::kill(-pid, SIGKILL);

  if (!result.timed_out) {
    if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
    else if (WIFSIGNALED(status)) result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

}  // namespace

void validate(const ExternalExecutorConfig& config) {
  if (config.command.empty()) throw GeoScriptError(ErrorKind::InvalidConfig, "executor command is empty");
  if (config.timeout.count() <= 0) throw GeoScriptError(ErrorKind::InvalidConfig, "executor timeout must be positive");
  const fs::path out = config.expected_output.lexically_normal();
  if (out.empty() || out.is_absolute() || *out.begin() == "..") {
    throw GeoScriptError(ErrorKind::InvalidConfig,
                         "expected_output must be a relative path inside the working directory: " +
                             config.expected_output.string());
  }
  const fs::path code = fs::path(config.code_file_name).lexically_normal();
  if (code.empty() || code.has_parent_path() || code == out) {
    throw GeoScriptError(ErrorKind::InvalidConfig, "code_file must be a plain file name distinct from expected_output");
  }
}

ExternalExecutorConfig executor_config_from(const std::map<std::string, std::string>& values) {
  ExternalExecutorConfig config;
  for (const auto& [key, value] : values) {
    if (key == "command") {
      config.command = value;
    } else if (key == "expected_output") {
      config.expected_output = value;
    } else if (key == "timeout_secs") {
      double secs = 0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), secs);
      if (ec != std::errc() || ptr != value.data() + value.size() || !(secs > 0)) {
        throw GeoScriptError(ErrorKind::InvalidConfig, "timeout_secs must be a positive number, got '" + value + "'");
      }
      config.timeout = std::chrono::milliseconds(static_cast<long long>(secs * 1000.0 + 0.5));
    } else if (key == "working_dir") {
      config.working_dir = value;
    } else if (key == "code_file") {
      config.code_file_name = value;
    } else if (key == "rewrite_export_path") {
      config.rewrite_export_path = value;
    } else {
      throw GeoScriptError(ErrorKind::InvalidConfig, "unknown executor key '" + key + "'");
    }
  }
  validate(config);
  return config;
}

Bytes execute_external(std::string_view code, const ExternalExecutorConfig& config) {
  validate(config);
  ScratchDir scratch(config.working_dir);
  const fs::path code_file = scratch.path() / config.code_file_name;
  const fs::path output = scratch.path() / config.expected_output.lexically_normal();
  if (output.has_parent_path()) fs::create_directories(output.parent_path());

  std::string program(code);
  if (!config.rewrite_export_path.empty()) program = replace_all(std::move(program), config.rewrite_export_path, output.string());
  write_file_atomic(code_file, program);

  std::string command = config.command;
  command = replace_all(std::move(command), "{code_file}", shell_quote(code_file.string()));
  command = replace_all(std::move(command), "{scratch_dir}", shell_quote(scratch.path().string()));
  command = replace_all(std::move(command), "{output}", shell_quote(output.string()));
  command = replace_all(std::move(command), "{out}", shell_quote(output.string()));
  spdlog::debug("executor: {}", command);

  const ChildResult child = run_child(command, scratch.path(), config.timeout);
  if (child.timed_out) {
    throw GeoScriptError(ErrorKind::Timeout, fmt::format("renderer timed out after {:.3f}s", config.timeout.count() / 1000.0));
  }
  if (child.exit_code != 0) {
    std::string detail = excerpt(child.err.empty() ? child.out : child.err);
    throw GeoScriptError(ErrorKind::NonZeroExit, fmt::format("renderer exited with code {}: {}", child.exit_code, detail));
  }
  std::error_code ec;
  if (!fs::is_regular_file(output, ec) || fs::file_size(output, ec) == 0) {
    throw GeoScriptError(ErrorKind::MissingOutput,
                         fmt::format("renderer produced no output at {}; stdout: {}", config.expected_output.string(),
                                     excerpt(child.out)));
  }
  return read_file_bytes(output);
}

struct ExternalExecutor::Limiter {
  explicit Limiter(int n) : slots(n) {}
  std::counting_semaphore<1 << 16> slots;
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
};

ExternalExecutor::ExternalExecutor(ExternalExecutorConfig config, int max_concurrent)
    : config_(std::move(config)), limiter_(std::make_unique<Limiter>(std::max(1, max_concurrent))) {
  validate(config_);
}

ExternalExecutor::~ExternalExecutor() = default;

Bytes ExternalExecutor::run(std::string_view code) {
  limiter_->slots.acquire();
  const int now = ++limiter_->active;
  int seen = limiter_->peak.load();
  while (now > seen && !limiter_->peak.compare_exchange_weak(seen, now)) {
  }
  struct Release {
    Limiter* l;
    ~Release() {
      --l->active;
      l->slots.release();
    }
  } release{limiter_.get()};
  return execute_external(code, config_);
}

int ExternalExecutor::peak_concurrency() const { return limiter_->peak.load(); }

}  // namespace geoforge::geoscript
