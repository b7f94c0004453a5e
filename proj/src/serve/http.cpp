#include "enrolkit/serve/http.hpp"

#include <iostream>

#include "enrolkit/error.hpp"
#include "httplib.h"

namespace enrolkit::serve {

namespace {

void send(httplib::Response& res, const Response& r) {
  // Leaving a successful raw payload's status unset lets httplib answer
  // Range requests with 206.
  if (r.status != 200 || !r.raw) res.status = r.status;
  if (r.raw) {
    res.set_content(*r.raw, r.content_type);
  } else {
    res.set_content(r.body.dump(), "application/json");
  }
}

}  // namespace

void bind_routes(httplib::Server& server, ApiService& api, const std::optional<std::filesystem::path>& static_dir) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type, Range"}});
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/api/sets", [&api](const httplib::Request&, httplib::Response& res) { send(res, api.list_sets()); });
  // Set ids may contain '/', so the id pattern is greedy.
  server.Get(R"(/api/sets/(.+)/projection)", [&api](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> components;
    if (req.has_param("components")) components = req.get_param_value("components");
    send(res, api.projection(req.matches[1], components));
  });
  server.Post("/api/sessions", [&api](const httplib::Request& req, httplib::Response& res) {
    send(res, api.create_session(req.body));
  });
  server.Get(R"(/api/sessions/([^/]+))", [&api](const httplib::Request& req, httplib::Response& res) {
    send(res, api.get_session(req.matches[1]));
  });
  server.Post(R"(/api/sessions/([^/]+)/decision)", [&api](const httplib::Request& req, httplib::Response& res) {
    send(res, api.post_decision(req.matches[1], req.body));
  });
  server.Delete(R"(/api/sessions/([^/]+)/decision)", [&api](const httplib::Request& req, httplib::Response& res) {
    send(res, api.delete_decision(req.matches[1]));
  });
  server.Post(R"(/api/sessions/([^/]+)/labels)", [&api](const httplib::Request& req, httplib::Response& res) {
    send(res, api.post_labels(req.matches[1], req.body));
  });
  server.Post(R"(/api/sessions/([^/]+)/export)", [&api](const httplib::Request& req, httplib::Response& res) {
    const Response r = api.export_manifest(req.matches[1]);
    if (r.raw) res.set_header("Content-Disposition", "attachment; filename=\"manifest.jsonl\"");
    send(res, r);
  });
  server.Get(R"(/api/audio/(.+))", [&api](const httplib::Request& req, httplib::Response& res) {
    send(res, api.audio(req.matches[1]));
  });

  if (static_dir && !server.set_mount_point("/", static_dir->string())) {
    fail(Errc::not_found, "static directory " + static_dir->string() + " does not exist");
  }
}

int run_server(const ServeConfig& config) {
  ApiService api(open_store(config.store), config.session_dir);
  httplib::Server server;
  bind_routes(server, api, config.static_dir);
  if (!server.bind_to_port(config.host, config.port)) {
    fail(Errc::io_error, "cannot bind " + config.host + ":" + std::to_string(config.port));
  }
  std::cerr << "serving " << config.store.string() << " on http://" << config.host << ":" << config.port << "\n";
  return server.listen_after_bind() ? 0 : 1;
}

}  // namespace enrolkit::serve
