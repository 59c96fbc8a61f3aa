/*
 * Copyright 2026 The esnac Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

// A child process spoken to line by line over its stdin / stdout (POSIX).

#pragma once

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <optional>
#include <string>

#include "esnac/common.hpp"

namespace esnac {

class LineProcess {
 public:
  /// Runs `command` through /bin/sh -c. The child's stderr is inherited.
  explicit LineProcess(std::string command) : command_(std::move(command)) {}
  LineProcess(const LineProcess&) = delete;
  LineProcess& operator=(const LineProcess&) = delete;
  ~LineProcess() { stop(); }

  const std::string& command() const { return command_; }
  bool running() const { return pid_ > 0; }

  void start() {
    if (running()) return;
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw Error(std::string("pipe: ") + std::strerror(errno));
    }
    const pid_t pid = fork();
    if (pid < 0) throw Error(std::string("fork: ") + std::strerror(errno));
    if (pid == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    pid_ = pid;
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
    fcntl(in_fd_, F_SETFD, FD_CLOEXEC);
    fcntl(out_fd_, F_SETFD, FD_CLOEXEC);
    buffer_.clear();
  }

  /// Writes one line (a newline is appended). Returns false if the child
  /// has closed its input.
  bool write_line(const std::string& line) {
    start();
    std::string data = line + '\n';
    const char* p = data.data();
    std::size_t left = data.size();
    const auto old = signal(SIGPIPE, SIG_IGN);
    bool ok = true;
    while (left > 0) {
      const ssize_t n = write(in_fd_, p, left);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        ok = false;
        break;
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
    signal(SIGPIPE, old);
    return ok;
  }

  enum class ReadStatus { kLine, kTimeout, kClosed };

  /// Reads the next line (without its newline) within `timeout_seconds`.
  ReadStatus read_line(std::string& line, double timeout_seconds) {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::duration<double>(timeout_seconds);
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return ReadStatus::kLine;
      }
      if (out_fd_ < 0) return ReadStatus::kClosed;
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (left <= 0) return ReadStatus::kTimeout;
      pollfd pfd{out_fd_, POLLIN, 0};
      const int r = poll(&pfd, 1, static_cast<int>(std::min<long long>(left, 1 << 30)));
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) return ReadStatus::kTimeout;
      char chunk[4096];
      const ssize_t n = read(out_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        close(out_fd_);
        out_fd_ = -1;
        continue;  // drain any complete line still buffered
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  /// Closes the pipes and reaps the child, killing it if it does not exit.
  void stop() {
    if (in_fd_ >= 0) close(in_fd_);
    if (out_fd_ >= 0) close(out_fd_);
    in_fd_ = out_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      bool reaped = false;
      for (int i = 0; i < 20 && !reaped; ++i) {
        reaped = waitpid(pid_, &status, WNOHANG) == pid_;
        if (!reaped) usleep(5000);
      }
      if (!reaped) {
        kill(pid_, SIGKILL);
        waitpid(pid_, &status, 0);
      }
    }
    pid_ = -1;
    buffer_.clear();
  }

  /// Kills the child immediately.
  void kill_now() {
    if (pid_ > 0) kill(pid_, SIGKILL);
    stop();
  }

 private:
  std::string command_;
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
};

}  // namespace esnac
