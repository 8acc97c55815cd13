#pragma once

// Minimal POSIX child-process runner: feeds stdin, captures stdout/stderr,
// enforces a wall-clock limit by killing the child's process group.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "webtriples/error.hpp"

namespace webtriples {

struct ProcessResult {
  int exit_code = -1;           // valid when !signaled
  bool signaled = false;
  int signal = 0;
  bool timed_out = false;
  std::string out;
  std::string err;
  double wall_time_seconds = 0.0;
};

struct ProcessOptions {
  std::optional<std::chrono::milliseconds> timeout;
  std::size_t max_output_bytes = 64 * 1024 * 1024;
};

namespace detail {

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe2(fd, O_CLOEXEC) != 0) {
      throw Error(std::string("pipe: ") + std::strerror(errno));
    }
  }
  ~Pipe() { close_both(); }
  Pipe(const Pipe&) = delete;
  Pipe& operator=(const Pipe&) = delete;
  void close_read() { close_fd(fd[0]); }
  void close_write() { close_fd(fd[1]); }
  void close_both() {
    close_read();
    close_write();
  }
  static void close_fd(int& f) {
    if (f >= 0) {
      ::close(f);
      f = -1;
    }
  }
};

}  // namespace detail

/// Runs `argv` (argv[0] resolved through PATH) with `input` on stdin.
inline ProcessResult run_process(const std::vector<std::string>& argv,
                                 std::string_view input,
                                 const ProcessOptions& options = {}) {
  if (argv.empty()) throw Error("run_process: empty argv");
  detail::Pipe in, out, err;
  const auto start = std::chrono::steady_clock::now();

  pid_t pid = ::fork();
  if (pid < 0) throw Error(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    ::dup2(in.fd[0], STDIN_FILENO);
    ::dup2(out.fd[1], STDOUT_FILENO);
    ::dup2(err.fd[1], STDERR_FILENO);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    const char msg[] = "exec failed\n";
    [[maybe_unused]] auto n = ::write(STDERR_FILENO, msg, sizeof(msg) - 1);
    ::_exit(127);
  }
  ::setpgid(pid, pid);
  in.close_read();
  out.close_write();
  err.close_write();

  ::fcntl(in.fd[1], F_SETFL, O_NONBLOCK);
  // A child that exits without reading stdin must not kill us with SIGPIPE.
  static const bool sigpipe_ignored = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;

  ProcessResult result;
  std::size_t written = 0;
  if (input.empty()) in.close_write();

  auto deadline = options.timeout
                      ? std::optional(start + *options.timeout)
                      : std::nullopt;
  char buf[65536];
  while (out.fd[0] >= 0 || err.fd[0] >= 0) {
    std::vector<pollfd> fds;
    if (in.fd[1] >= 0) fds.push_back({in.fd[1], POLLOUT, 0});
    if (out.fd[0] >= 0) fds.push_back({out.fd[0], POLLIN, 0});
    if (err.fd[0] >= 0) fds.push_back({err.fd[0], POLLIN, 0});
    int wait_ms = -1;
    if (deadline) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          *deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        result.timed_out = true;
        break;
      }
      wait_ms = static_cast<int>(left.count());
    }
    int rc = ::poll(fds.data(), fds.size(), wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (rc == 0) continue;
    for (const auto& p : fds) {
      if (p.revents == 0) continue;
      if (p.fd == in.fd[1]) {
        if (p.revents & (POLLERR | POLLHUP)) {
          in.close_write();
          continue;
        }
        ssize_t n = ::write(in.fd[1], input.data() + written,
                            input.size() - written);
        if (n > 0) written += static_cast<std::size_t>(n);
        if (n < 0 && errno != EAGAIN && errno != EINTR) in.close_write();
        if (written >= input.size()) in.close_write();
        continue;
      }
      int& fd = p.fd == out.fd[0] ? out.fd[0] : err.fd[0];
      std::string& sink = p.fd == out.fd[0] ? result.out : result.err;
      ssize_t n = ::read(fd, buf, sizeof(buf));
      if (n > 0) {
        if (sink.size() < options.max_output_bytes) {
          sink.append(buf, static_cast<std::size_t>(n));
        }
      } else if (n == 0 || (errno != EAGAIN && errno != EINTR)) {
        detail::Pipe::close_fd(fd);
      }
    }
  }
  in.close_write();

  int status = 0;
  bool reaped = false;
  // The child may close its pipes and keep running.
  while (!result.timed_out) {
    pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid || (r < 0 && errno != EINTR)) {
      reaped = r == pid;
      break;
    }
    if (deadline && std::chrono::steady_clock::now() >= *deadline) {
      result.timed_out = true;
      break;
    }
    ::usleep(1000);
  }
  if (result.timed_out) ::kill(-pid, SIGKILL);
  if (!reaped) {
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
  }
  // Reap anything the child left behind in its group.
  ::kill(-pid, SIGKILL);
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.signaled = true;
    result.signal = WTERMSIG(status);
  }
  result.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return result;
}

/// Runs a command line through /bin/sh -c.
inline ProcessResult run_shell(const std::string& command,
                               std::string_view input,
                               const ProcessOptions& options = {}) {
  return run_process({"/bin/sh", "-c", command}, input, options);
}

inline std::string shell_quote(std::string_view s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

}  // namespace webtriples
