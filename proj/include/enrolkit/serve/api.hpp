#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "enrolkit/corpus.hpp"
#include "enrolkit/enrolment.hpp"
#include "enrolkit/metrics.hpp"
#include "enrolkit/projection.hpp"
#include "json.hpp"

namespace enrolkit::serve {

using Json = nlohmann::ordered_json;

struct Response {
  int status = 200;
  Json body;
  // Raw payload (manifest export, audio); `body` is ignored when set.
  std::optional<std::string> raw;
  std::string content_type = "application/json";
};

// Largest number of components a projection request may ask for.
inline constexpr std::uint32_t kMaxServedComponents = 10;

struct Session {
  std::string session_id;
  std::string set_id;
  std::uint32_t n_components = kDefaultComponents;
  std::uint32_t sample_n = kDefaultExemplarSamples;
  std::optional<Decision> pending_decision;
  std::uint64_t seed = 0;
  std::uint32_t index = 1;
  std::string family;
  std::vector<std::uint32_t> group_sizes;
  std::vector<std::string> group_exemplars;
  std::map<std::uint32_t, GroupName> assigned_names;
  std::vector<std::string> export_history;

  IterationParams params() const;
};

Json session_json(const Session& session);

// Request handling independent of the HTTP binding. The store is read-only
// while serving; sessions are serialised per session.
class ApiService {
 public:
  explicit ApiService(Store store, std::optional<std::filesystem::path> snapshot_dir = std::nullopt);

  Response list_sets() const;
  Response projection(const std::string& set_id, std::optional<std::string> components) const;
  Response create_session(const std::string& body);
  Response get_session(const std::string& session_id) const;
  Response post_decision(const std::string& session_id, const std::string& body);
  Response delete_decision(const std::string& session_id);
  Response post_labels(const std::string& session_id, const std::string& body);
  Response export_manifest(const std::string& session_id);
  Response audio(const std::string& utterance_id) const;

  const Store& store() const { return store_; }

 private:
  struct Fitted {
    PcaModel model;
    Projection projection;
  };
  struct SessionSlot {
    std::mutex mutex;
    Session session;
  };

  std::shared_ptr<const Fitted> fitted(const AnalysisSet& set) const;
  std::shared_ptr<SessionSlot> slot(const std::string& session_id) const;
  void snapshot(const Session& session) const;

  Store store_;
  std::vector<SpeakerReference> refs_;
  std::optional<std::filesystem::path> snapshot_dir_;

  mutable std::mutex fit_mutex_;
  mutable std::map<std::string, std::shared_ptr<const Fitted>> fits_;

  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
  std::uint64_t next_session_ = 1;
};

Response error_response(int status, const std::string& message);

}  // namespace enrolkit::serve
