// agent-hub: server registry and HTTP API.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "agentsim/agentsim.h"

int main(int argc, char **argv) {
  CLI::App app{"Agent hub"};
  std::string listen = "127.0.0.1:8700";
  std::string ui;
  std::string log_level = "info";
  app.add_option("--listen", listen, "HOST:PORT to bind")->capture_default_str();
  app.add_option("--ui", ui, "directory served under /ui");
  app.add_option("--log-level", log_level)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const auto colon = listen.rfind(':');
  int port = -1;
  if (colon != std::string::npos) {
    try {
      port = std::stoi(listen.substr(colon + 1));
    } catch (const std::exception &) {
    }
  }
  if (port < 0 || port > 65535) {
    std::fprintf(stderr, "agent-hub: --listen expects HOST:PORT, got '%s'\n", listen.c_str());
    return 2;
  }
  if (as_set_log_level(log_level.c_str()) != AS_OK) {
    std::fprintf(stderr, "agent-hub: %s\n", as_last_error());
    return 2;
  }
  const std::string host = listen.substr(0, colon);
  const as_status st = as_hub_run(host.c_str(), port, ui.empty() ? nullptr : ui.c_str());
  if (st != AS_OK) {
    std::fprintf(stderr, "agent-hub: %s: %s\n", as_status_name(st), as_last_error());
    return 1;
  }
  return 0;
}
