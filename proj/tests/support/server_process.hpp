#pragma once

// Starts agent-server and agent-hub executables for tests and stops them with SIGTERM.

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <string>
#include <thread>
#include <vector>

#include "agentsim/wire.hpp"

extern char **environ;

namespace agentsim::testing {

// An ephemeral port that was free a moment ago.
inline int free_port() {
  int port = 0;
  Socket s = listen_tcp(Endpoint{"127.0.0.1", 0}, port);
  return port;
}

class ServerProcess {
public:
  ServerProcess(const std::string &exe, std::vector<std::string> extra_args) {
    port_ = free_port();
    std::vector<std::string> args{exe, "--listen", "127.0.0.1:" + std::to_string(port_),
                                  "--log-level", "warn"};
    args.insert(args.end(), extra_args.begin(), extra_args.end());
    std::vector<char *> argv;
    for (auto &a : args)
      argv.push_back(a.data());
    argv.push_back(nullptr);
    if (::posix_spawn(&pid_, exe.c_str(), nullptr, nullptr, argv.data(), environ) != 0)
      fail(ErrorCode::Internal, "cannot start " + exe);
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
    while (std::chrono::steady_clock::now() < deadline) {
      try {
        connect_tcp(endpoint(), std::chrono::milliseconds(200));
        return;
      } catch (const Error &) {
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
      }
    }
    stop();
    fail(ErrorCode::Timeout, exe + " did not start listening");
  }

  ~ServerProcess() { stop(); }

  ServerProcess(const ServerProcess &) = delete;
  ServerProcess &operator=(const ServerProcess &) = delete;

  Endpoint endpoint() const { return Endpoint{"127.0.0.1", port_}; }
  pid_t pid() const { return pid_; }

  // Sends SIGTERM and returns the exit status, or -1 if already reaped.
  int stop() {
    if (pid_ <= 0)
      return -1;
    ::kill(pid_, SIGTERM);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  }

private:
  pid_t pid_ = -1;
  int port_ = 0;
};

} // namespace agentsim::testing
