#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "enrolkit/serve/api.hpp"

namespace httplib {
class Server;
}

namespace enrolkit::serve {

// Registers the /api routes, CORS headers and the optional static mount.
void bind_routes(httplib::Server& server, ApiService& api,
                 const std::optional<std::filesystem::path>& static_dir = std::nullopt);

struct ServeConfig {
  std::filesystem::path store;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;
  std::optional<std::filesystem::path> session_dir;
};

// Opens the store (failing before any request is served) and blocks.
int run_server(const ServeConfig& config);

}  // namespace enrolkit::serve
