#include "enrolkit/serve/api.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "enrolkit/discovery.hpp"
#include "enrolkit/error.hpp"

namespace enrolkit::serve {

namespace fs = std::filesystem;

namespace {

int status_for(Errc code) {
  switch (code) {
    case Errc::not_found: return 404;
    case Errc::conflict: return 409;
    case Errc::parse_error: return 400;
    default: return 422;
  }
}

Json parse_body(const std::string& body) {
  if (body.empty()) return Json::object();
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(Errc::parse_error, "request body must be a JSON object");
  return j;
}

template <typename F>
Response guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    return error_response(status_for(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, std::string("bad request: ") + e.what());
  }
}

std::string content_type_for(const fs::path& path) {
  static const std::map<std::string, std::string> types = {
      {".wav", "audio/wav"}, {".mp3", "audio/mpeg"}, {".flac", "audio/flac"},
      {".ogg", "audio/ogg"}, {".opus", "audio/opus"}, {".m4a", "audio/mp4"}};
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  auto it = types.find(ext);
  return it == types.end() ? "application/octet-stream" : it->second;
}

Json decision_json(const Decision& d) {
  Json j;
  if (d.kind == DecisionKind::discrete) {
    j["kind"] = "discrete";
    j["k"] = d.k;
  } else {
    j["kind"] = "continuous";
    j["axis"] = d.axis;
    j["n_bins"] = d.n_bins;
    j["mode"] = to_string(d.mode);
  }
  return j;
}

Decision decision_from(const Json& j) {
  Decision d;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "discrete") {
    d.kind = DecisionKind::discrete;
    d.k = j.at("k").get<std::uint32_t>();
    if (d.k < 2) fail(Errc::invalid_argument, "k must be >= 2");
  } else if (kind == "continuous") {
    d.kind = DecisionKind::continuous;
    d.axis = j.value("axis", 0u);
    if (j.contains("n_bins")) {
      d.n_bins = j["n_bins"].get<std::uint32_t>();
    } else {
      d.n_bins = j.value("bins", 3u);
    }
    d.mode = parse_bin_mode(j.value("mode", std::string("equal_width")));
    if (d.n_bins < 2) fail(Errc::invalid_argument, "n_bins must be >= 2");
  } else {
    fail(Errc::invalid_argument, "kind must be 'discrete' or 'continuous'");
  }
  return d;
}

}  // namespace

Response error_response(int status, const std::string& message) {
  Response r;
  r.status = status;
  r.body = {{"error", message}};
  return r;
}

IterationParams Session::params() const {
  IterationParams p;
  p.seed = seed;
  p.sample_n = sample_n;
  p.n_components = n_components;
  p.index = index;
  p.family = family;
  return p;
}

Json session_json(const Session& s) {
  Json j;
  j["session_id"] = s.session_id;
  j["set_id"] = s.set_id;
  j["n_components"] = s.n_components;
  j["sample_n"] = s.sample_n;
  if (s.pending_decision) {
    Json d = decision_json(*s.pending_decision);
    d["seed"] = s.seed;
    j["pending_decision"] = std::move(d);
    Json groups = Json::array();
    for (std::size_t g = 0; g < s.group_sizes.size(); ++g) {
      groups.push_back({{"index", g}, {"size", s.group_sizes[g]}, {"exemplar_id", s.group_exemplars[g]}});
    }
    j["groups"] = std::move(groups);
  } else {
    j["pending_decision"] = nullptr;
  }
  Json names = Json::object();
  for (const auto& [g, n] : s.assigned_names) {
    names[std::to_string(g)] = {{"label_id", n.label_id}, {"phrase", n.phrase}, {"template", n.template_text}};
  }
  j["assigned_names"] = std::move(names);
  j["export_history"] = s.export_history;
  return j;
}

ApiService::ApiService(Store store, std::optional<fs::path> snapshot_dir)
    : store_(std::move(store)), snapshot_dir_(std::move(snapshot_dir)) {
  const fs::path refs = store_.root / "refs.json";
  if (fs::exists(refs)) refs_ = read_speaker_references(refs);
  if (snapshot_dir_) fs::create_directories(*snapshot_dir_);
}

std::shared_ptr<const ApiService::Fitted> ApiService::fitted(const AnalysisSet& set) const {
  std::lock_guard lock(fit_mutex_);
  if (auto it = fits_.find(set.id); it != fits_.end()) return it->second;
  const Eigen::MatrixXd x = set_embeddings(store_.corpus, set);
  if (x.rows() < 2) fail(Errc::invalid_argument, "analysis set '" + set.id + "' has fewer than 2 members");
  const auto k = static_cast<std::uint32_t>(
      std::min<Eigen::Index>({x.rows() - 1, x.cols(), static_cast<Eigen::Index>(kMaxServedComponents)}));
  auto fit = std::make_shared<Fitted>();
  fit->model = fit_pca(x, k);
  fit->projection = project(fit->model, x);
  fits_[set.id] = fit;
  return fit;
}

std::shared_ptr<ApiService::SessionSlot> ApiService::slot(const std::string& session_id) const {
  std::shared_lock lock(sessions_mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) fail(Errc::not_found, "unknown session '" + session_id + "'");
  return it->second;
}

void ApiService::snapshot(const Session& session) const {
  if (!snapshot_dir_) return;
  std::ofstream out(*snapshot_dir_ / (session.session_id + ".json"), std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write session snapshot");
  out << session_json(session).dump(2) << "\n";
}

Response ApiService::list_sets() const {
  Json sets = Json::array();
  for (const auto& s : store_.sets) {
    sets.push_back({{"id", s.id}, {"n", s.utterance_ids.size()}, {"fixed_inputs", s.fixed_inputs}});
  }
  return {200, std::move(sets)};
}

Response ApiService::projection(const std::string& set_id, std::optional<std::string> components) const {
  return guarded([&]() -> Response {
    const AnalysisSet* set = store_.find_set(set_id);
    if (!set) return error_response(404, "unknown analysis set '" + set_id + "'");
    std::uint32_t k = kDefaultComponents;
    if (components) {
      try {
        std::size_t used = 0;
        const long v = std::stol(*components, &used);
        if (used != components->size() || v < 1) throw std::invalid_argument(*components);
        k = static_cast<std::uint32_t>(v);
      } catch (const std::exception&) {
        return error_response(400, "components must be a positive integer");
      }
    }
    const auto fit = fitted(*set);
    if (k > fit->model.n_components()) {
      return error_response(400, "components " + std::to_string(k) + " exceeds the " +
                                     std::to_string(fit->model.n_components()) + " fitted");
    }
    std::map<std::string, const SpeakerReference*> refs;
    for (const auto& r : refs_) refs[r.speaker] = &r;

    Json body;
    body["set_id"] = set->id;
    body["n"] = set->utterance_ids.size();
    body["components"] = k;
    body["fixed_inputs"] = set->fixed_inputs;
    body["total_variance"] = fit->model.total_variance;
    Json ratios = Json::array();
    for (std::uint32_t c = 0; c < k; ++c) ratios.push_back(fit->model.explained_variance_ratio[c]);
    body["explained_variance_ratio"] = std::move(ratios);
    Json points = Json::array();
    for (std::size_t i = 0; i < set->utterance_ids.size(); ++i) {
      const auto& r = store_.corpus.at(set->utterance_ids[i]);
      Json scores = Json::array();
      for (std::uint32_t c = 0; c < k; ++c) scores.push_back(fit->projection.scores(static_cast<Eigen::Index>(i), c));
      Json meta;
      meta["speaker"] = r.speaker;
      meta["text"] = r.text;
      if (r.ground_truth && r.ground_truth->emotion) {
        meta["emotion"] = to_string(*r.ground_truth->emotion);
        if (r.ground_truth->intensity) meta["intensity"] = *r.ground_truth->intensity;
        meta["category"] = *categorize_ground_truth(*r.ground_truth);
      }
      if (r.reference_transcript && r.hypothesis_transcript && !r.reference_transcript->empty()) {
        meta["wer"] = wer(*r.reference_transcript, *r.hypothesis_transcript);
      }
      if (r.speaker_embedding) {
        if (auto it = refs.find(r.speaker); it != refs.end()) {
          meta["speaker_sim"] = speaker_similarity(*r.speaker_embedding, *it->second);
        }
      }
      if (r.generation) {
        meta["temperature"] = static_cast<double>(r.generation->temperature);
        meta["top_k"] = r.generation->top_k;
      }
      meta["has_audio"] = r.audio_ref.has_value();
      points.push_back({{"id", r.id}, {"scores", std::move(scores)}, {"metadata", std::move(meta)}});
    }
    body["points"] = std::move(points);
    return {200, std::move(body)};
  });
}

Response ApiService::create_session(const std::string& body) {
  return guarded([&]() -> Response {
    const Json j = parse_body(body);
    if (!j.contains("set_id")) return error_response(422, "set_id is required");
    const auto set_id = j.at("set_id").get<std::string>();
    if (!store_.find_set(set_id)) return error_response(404, "unknown analysis set '" + set_id + "'");
    auto s = std::make_shared<SessionSlot>();
    s->session.set_id = set_id;
    s->session.n_components = j.value("n_components", kDefaultComponents);
    s->session.sample_n = j.value("sample_n", kDefaultExemplarSamples);
    s->session.index = j.value("index", 1u);
    s->session.family = j.value("family", std::string{});
    if (s->session.n_components < 1) return error_response(422, "n_components must be >= 1");
    if (s->session.sample_n < 1) return error_response(422, "sample_n must be >= 1");
    {
      std::unique_lock lock(sessions_mutex_);
      s->session.session_id = "s" + std::to_string(next_session_++);
      sessions_[s->session.session_id] = s;
    }
    std::lock_guard guard(s->mutex);
    snapshot(s->session);
    return {201, session_json(s->session)};
  });
}

Response ApiService::get_session(const std::string& session_id) const {
  return guarded([&]() -> Response {
    auto s = slot(session_id);
    std::lock_guard guard(s->mutex);
    return {200, session_json(s->session)};
  });
}

Response ApiService::post_decision(const std::string& session_id, const std::string& body) {
  return guarded([&]() -> Response {
    auto s = slot(session_id);
    std::lock_guard guard(s->mutex);
    Session& session = s->session;
    if (session.pending_decision) return error_response(409, "a decision is already pending");
    const Json j = parse_body(body);
    Decision decision;
    try {
      decision = decision_from(j);
    } catch (const nlohmann::json::exception& e) {
      return error_response(422, std::string("invalid decision: ") + e.what());
    }
    Session next = session;
    next.seed = j.value("seed", std::uint64_t{0});
    const auto& set = store_.set(session.set_id);
    const GroupPreview preview = preview_groups(store_.corpus, set, decision, next.params());
    next.pending_decision = decision;
    next.group_sizes = preview.sizes;
    next.group_exemplars = preview.exemplar_ids;
    next.assigned_names.clear();
    session = std::move(next);
    snapshot(session);
    return {200, session_json(session)};
  });
}

Response ApiService::delete_decision(const std::string& session_id) {
  return guarded([&]() -> Response {
    auto s = slot(session_id);
    std::lock_guard guard(s->mutex);
    Session& session = s->session;
    if (!session.pending_decision) return error_response(409, "no pending decision");
    session.pending_decision.reset();
    session.group_sizes.clear();
    session.group_exemplars.clear();
    session.assigned_names.clear();
    snapshot(session);
    return {200, session_json(session)};
  });
}

Response ApiService::post_labels(const std::string& session_id, const std::string& body) {
  return guarded([&]() -> Response {
    auto s = slot(session_id);
    std::lock_guard guard(s->mutex);
    Session& session = s->session;
    if (!session.pending_decision) return error_response(409, "no pending decision");
    const Json j = parse_body(body);
    const Decision& decision = *session.pending_decision;
    const std::string default_template(decision.kind == DecisionKind::discrete ? kClusterTemplate : kBinTemplate);
    const Json names = j.value("names", Json::object());
    const Json templates = j.value("templates", Json::object());
    if (!names.is_object()) return error_response(422, "names must map group index to a name");
    std::map<std::uint32_t, GroupName> assigned;
    std::vector<std::string> unnamed;
    for (std::uint32_t g = 0; g < decision.n_groups(); ++g) {
      const std::string key = std::to_string(g);
      auto it = names.find(key);
      if (it == names.end() || it->is_null()) {
        unnamed.push_back(key);
        continue;
      }
      GroupName n;
      if (it->is_string()) {
        n.label_id = it->get<std::string>();
        n.phrase = n.label_id;
      } else {
        n.label_id = it->value("label_id", std::string{});
        n.phrase = it->value("phrase", n.label_id);
        n.template_text = it->value("template", std::string{});
      }
      if (n.template_text.empty() && templates.contains(key)) n.template_text = templates[key].get<std::string>();
      if (n.template_text.empty()) n.template_text = j.value("template", default_template);
      if (n.label_id.empty()) {
        unnamed.push_back(key);
        continue;
      }
      render_label_phrase({n.label_id, n.template_text, n.phrase}, "Speaker");
      assigned[g] = std::move(n);
    }
    if (!unnamed.empty()) {
      std::string list;
      for (const auto& u : unnamed) list += (list.empty() ? "" : ", ") + u;
      return error_response(422, "unnamed group(s): " + list);
    }
    std::set<std::string> ids;
    for (const auto& [_, n] : assigned) {
      if (!ids.insert(n.label_id).second) return error_response(422, "duplicate label '" + n.label_id + "'");
    }
    session.assigned_names = std::move(assigned);
    snapshot(session);
    return {200, session_json(session)};
  });
}

Response ApiService::export_manifest(const std::string& session_id) {
  return guarded([&]() -> Response {
    auto s = slot(session_id);
    std::lock_guard guard(s->mutex);
    Session& session = s->session;
    if (!session.pending_decision) return error_response(409, "no pending decision");
    const Decision& decision = *session.pending_decision;
    if (session.assigned_names.size() != decision.n_groups()) return error_response(422, "not every group is named");
    std::vector<GroupName> names;
    for (const auto& [_, n] : session.assigned_names) names.push_back(n);
    const auto& set = store_.set(session.set_id);
    const IterationResult result = run_iteration(store_.corpus, set, store_.corpus, decision, names, session.params());
    Response r;
    r.raw = serialize_manifest(result.augmented);
    r.content_type = "application/x-ndjson";
    session.export_history.push_back("export-" + std::to_string(session.export_history.size() + 1) + ".jsonl");
    if (snapshot_dir_) {
      std::ofstream out(*snapshot_dir_ / (session.session_id + "-" + session.export_history.back()), std::ios::binary);
      out << *r.raw;
    }
    snapshot(session);
    return r;
  });
}

Response ApiService::audio(const std::string& utterance_id) const {
  const UtteranceRecord* r = store_.corpus.find(utterance_id);
  if (!r) return error_response(404, "unknown utterance '" + utterance_id + "'");
  if (!r->audio_ref) return error_response(404, "utterance '" + utterance_id + "' has no audio");
  const fs::path path = store_.corpus.resolve(*r->audio_ref);
  std::ifstream in(path, std::ios::binary);
  if (!in) return error_response(404, "audio file missing for '" + utterance_id + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  Response out;
  out.raw = buffer.str();
  out.content_type = content_type_for(path);
  return out;
}

}  // namespace enrolkit::serve
