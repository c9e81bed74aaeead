// agent-server: hosts agents behind the framed RPC protocol.
#include <climits>
#include <cstdio>
#include <string>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agentsim/agentsim.h"

namespace {

std::string self_executable() {
  char buf[PATH_MAX];
  const ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
  if (n <= 0)
    return {};
  return std::string(buf, static_cast<std::size_t>(n));
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Agent server"};
  std::string listen = "127.0.0.1:0";
  std::string mode = "many-to-one";
  int capacity = 1024;
  int workers = 0;
  std::string hub;
  bool child = false;
  std::string log_level = "info";
  app.add_option("--listen", listen, "HOST:PORT to bind")->capture_default_str();
  app.add_option("--mode", mode, "many-to-one or one-to-one")
      ->check(CLI::IsMember({"many-to-one", "one-to-one", "many_to_one", "one_to_one"}))
      ->capture_default_str();
  app.add_option("--capacity", capacity, "maximum hosted agents")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--workers", workers, "worker threads (0: 4 x CPUs)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app.add_option("--hub", hub, "hub URL to register with");
  app.add_flag("--child", child, "run as a one-to-one child (prints PORT n)");
  app.add_option("--log-level", log_level)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  if (as_set_log_level(log_level.c_str()) != AS_OK) {
    std::fprintf(stderr, "agent-server: %s\n", as_last_error());
    return 2;
  }
  const nlohmann::json cfg{{"listen", listen},         {"mode", mode},
                           {"capacity", capacity},     {"workers", workers},
                           {"hub", hub},               {"child_mode", child},
                           {"child_executable", self_executable()}};
  const as_status st = as_server_run(cfg.dump().c_str());
  if (st != AS_OK) {
    std::fprintf(stderr, "agent-server: %s: %s\n", as_status_name(st), as_last_error());
    return 1;
  }
  return 0;
}
