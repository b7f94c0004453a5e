#include "enrolkit/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "enrolkit/error.hpp"
#include "json.hpp"

namespace enrolkit {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 6> kEmotionNames = {
    "neutral", "happy", "sad", "angry", "surprised", "helpful"};

const std::set<std::string, std::less<>> kRecordKeys = {
    "id",
    "speaker",
    "text",
    "description_prompt",
    "generation",
    "ground_truth",
    "summary_embedding",
    "summary_source_frames",
    "frame_embeddings_ref",
    "speaker_embedding",
    "reference_transcript",
    "hypothesis_transcript",
    "f0_contour_ref",
    "acoustic_features",
    "audio_ref",
    "enrolled_labels",
};

bool all_finite(const Embedding& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) fail(Errc::io_error, "write failed for " + path.string());
}

// Floats are widened to double so the emitted decimal round-trips to the
// identical f32 bit pattern.
json to_json_vector(const Embedding& v) {
  json arr = json::array();
  for (float x : v) arr.push_back(static_cast<double>(x));
  return arr;
}

Embedding embedding_from_json(const json& j, std::string_view field) {
  if (!j.is_array()) fail(Errc::parse_error, std::string(field) + " must be an array");
  Embedding v;
  v.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) fail(Errc::parse_error, std::string(field) + " must contain numbers");
    v.push_back(static_cast<float>(x.get<double>()));
  }
  return v;
}

std::string string_field(const json& j, std::string_view key, bool required) {
  auto it = j.find(key);
  if (it == j.end()) {
    if (required) fail(Errc::missing_field, "missing field '" + std::string(key) + "'");
    return {};
  }
  if (!it->is_string()) fail(Errc::parse_error, "field '" + std::string(key) + "' must be a string");
  return it->get<std::string>();
}

std::optional<std::string> optional_string(const json& j, std::string_view key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) fail(Errc::parse_error, "field '" + std::string(key) + "' must be a string");
  return it->get<std::string>();
}

TokenList tokens_from_json(const json& j, std::string_view field) {
  if (j.is_string()) return tokenize_transcript(j.get<std::string>());
  if (!j.is_array()) fail(Errc::parse_error, std::string(field) + " must be a string or token list");
  TokenList tokens;
  for (const auto& t : j) {
    if (!t.is_string()) fail(Errc::parse_error, std::string(field) + " tokens must be strings");
    tokens.push_back(t.get<std::string>());
  }
  return tokens;
}

GenerationConfig generation_from_json(const json& j) {
  if (!j.is_object()) fail(Errc::parse_error, "generation must be an object");
  GenerationConfig g;
  for (const auto& [key, value] : j.items()) {
    if (key == "temperature") {
      if (!value.is_number()) fail(Errc::parse_error, "generation.temperature must be a number");
      g.temperature = static_cast<float>(value.get<double>());
    } else if (key == "top_k") {
      if (!value.is_number_integer() || value.get<std::int64_t>() < 0) {
        fail(Errc::parse_error, "generation.top_k must be a non-negative integer");
      }
      g.top_k = static_cast<std::uint32_t>(value.get<std::int64_t>());
    } else {
      g.extra[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
  }
  if (j.find("temperature") == j.end()) fail(Errc::missing_field, "generation.temperature missing");
  if (j.find("top_k") == j.end()) fail(Errc::missing_field, "generation.top_k missing");
  return g;
}

UtteranceRecord record_from_json(const json& j) {
  if (!j.is_object()) fail(Errc::parse_error, "manifest entry must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kRecordKeys.contains(key)) fail(Errc::parse_error, "unknown field '" + key + "'");
  }
  UtteranceRecord r;
  r.id = string_field(j, "id", true);
  if (r.id.empty()) fail(Errc::parse_error, "id must be non-empty");
  r.speaker = string_field(j, "speaker", true);
  r.text = string_field(j, "text", true);
  r.description_prompt = string_field(j, "description_prompt", true);
  if (auto it = j.find("generation"); it != j.end() && !it->is_null()) {
    r.generation = generation_from_json(*it);
  }
  if (auto it = j.find("ground_truth"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) fail(Errc::parse_error, "ground_truth must be an object");
    GroundTruthLabels gt;
    if (auto e = optional_string(*it, "emotion")) gt.emotion = parse_emotion(*e);
    if (auto in = it->find("intensity"); in != it->end() && !in->is_null()) {
      if (!in->is_number_integer()) fail(Errc::parse_error, "ground_truth.intensity must be an integer");
      gt.intensity = in->get<int>();
    }
    r.ground_truth = gt;
  }
  if (auto it = j.find("summary_embedding"); it != j.end() && !it->is_null()) {
    r.summary_embedding = embedding_from_json(*it, "summary_embedding");
  }
  if (auto it = j.find("summary_source_frames"); it != j.end() && !it->is_null()) {
    if (!it->is_number_unsigned()) fail(Errc::parse_error, "summary_source_frames must be unsigned");
    r.summary_source_frames = it->get<std::uint32_t>();
  }
  r.frame_embeddings_ref = optional_string(j, "frame_embeddings_ref");
  if (auto it = j.find("speaker_embedding"); it != j.end() && !it->is_null()) {
    r.speaker_embedding = embedding_from_json(*it, "speaker_embedding");
  }
  if (auto it = j.find("reference_transcript"); it != j.end() && !it->is_null()) {
    r.reference_transcript = tokens_from_json(*it, "reference_transcript");
  }
  if (auto it = j.find("hypothesis_transcript"); it != j.end() && !it->is_null()) {
    r.hypothesis_transcript = tokens_from_json(*it, "hypothesis_transcript");
  }
  r.f0_contour_ref = optional_string(j, "f0_contour_ref");
  if (auto it = j.find("acoustic_features"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) fail(Errc::parse_error, "acoustic_features must be an object");
    std::map<std::string, float> features;
    for (const auto& [name, value] : it->items()) {
      if (!value.is_number()) fail(Errc::parse_error, "acoustic feature '" + name + "' must be a number");
      features[name] = static_cast<float>(value.get<double>());
    }
    r.acoustic_features = std::move(features);
  }
  r.audio_ref = optional_string(j, "audio_ref");
  if (auto it = j.find("enrolled_labels"); it != j.end() && !it->is_null()) {
    if (!it->is_array()) fail(Errc::parse_error, "enrolled_labels must be an array");
    for (const auto& e : *it) {
      EnrolledLabel label;
      label.family = string_field(e, "family", true);
      label.label_id = string_field(e, "label_id", true);
      label.iteration = e.value("iteration", 0u);
      r.enrolled_labels.push_back(std::move(label));
    }
  }
  return r;
}

json record_to_json(const UtteranceRecord& r) {
  json j;
  j["id"] = r.id;
  j["speaker"] = r.speaker;
  j["text"] = r.text;
  j["description_prompt"] = r.description_prompt;
  if (r.generation) {
    json g;
    g["temperature"] = static_cast<double>(r.generation->temperature);
    g["top_k"] = r.generation->top_k;
    for (const auto& [key, value] : r.generation->extra) g[key] = value;
    j["generation"] = std::move(g);
  }
  if (r.ground_truth) {
    json gt = json::object();
    if (r.ground_truth->emotion) gt["emotion"] = std::string(to_string(*r.ground_truth->emotion));
    if (r.ground_truth->intensity) gt["intensity"] = *r.ground_truth->intensity;
    j["ground_truth"] = std::move(gt);
  }
  if (r.summary_embedding) j["summary_embedding"] = to_json_vector(*r.summary_embedding);
  if (r.summary_source_frames) j["summary_source_frames"] = *r.summary_source_frames;
  if (r.frame_embeddings_ref) j["frame_embeddings_ref"] = *r.frame_embeddings_ref;
  if (r.speaker_embedding) j["speaker_embedding"] = to_json_vector(*r.speaker_embedding);
  if (r.reference_transcript) j["reference_transcript"] = *r.reference_transcript;
  if (r.hypothesis_transcript) j["hypothesis_transcript"] = *r.hypothesis_transcript;
  if (r.f0_contour_ref) j["f0_contour_ref"] = *r.f0_contour_ref;
  if (r.acoustic_features) {
    json f = json::object();
    for (const auto& [name, value] : *r.acoustic_features) f[name] = static_cast<double>(value);
    j["acoustic_features"] = std::move(f);
  }
  if (r.audio_ref) j["audio_ref"] = *r.audio_ref;
  if (!r.enrolled_labels.empty()) {
    json arr = json::array();
    for (const auto& e : r.enrolled_labels) {
      arr.push_back({{"family", e.family}, {"label_id", e.label_id}, {"iteration", e.iteration}});
    }
    j["enrolled_labels"] = std::move(arr);
  }
  return j;
}

std::vector<std::string> referenced_files(const UtteranceRecord& r) {
  std::vector<std::string> refs;
  for (const auto* ref : {&r.frame_embeddings_ref, &r.f0_contour_ref, &r.audio_ref}) {
    if (*ref) refs.push_back(**ref);
  }
  return refs;
}

}  // namespace

std::string_view to_string(Emotion emotion) {
  return kEmotionNames[static_cast<std::size_t>(emotion)];
}

Emotion parse_emotion(std::string_view name) {
  for (std::size_t i = 0; i < kEmotionNames.size(); ++i) {
    if (kEmotionNames[i] == name) return static_cast<Emotion>(i);
  }
  fail(Errc::parse_error, "unknown emotion '" + std::string(name) + "'");
}

void validate_record(const UtteranceRecord& r) {
  auto bad = [&r](Errc code, const std::string& what) {
    fail(code, "record '" + r.id + "': " + what);
  };
  if (r.id.empty()) fail(Errc::invalid_argument, "record with empty id");
  if (r.generation) {
    if (!std::isfinite(r.generation->temperature) || r.generation->temperature <= 0.0f) {
      bad(Errc::invalid_argument, "generation.temperature must be finite and > 0");
    }
    if (r.generation->top_k < 1) bad(Errc::invalid_argument, "generation.top_k must be >= 1");
  }
  if (r.ground_truth) {
    const auto& gt = *r.ground_truth;
    if (gt.intensity) {
      if (!gt.emotion || *gt.emotion == Emotion::neutral) {
        bad(Errc::invalid_argument, "intensity requires a non-neutral emotion");
      }
      if (*gt.intensity < 1 || *gt.intensity > 5) {
        bad(Errc::invalid_argument, "intensity must be in 1..5");
      }
    }
  }
  if (r.summary_embedding) {
    if (r.summary_embedding->empty()) bad(Errc::invalid_argument, "summary_embedding is empty");
    if (!all_finite(*r.summary_embedding)) bad(Errc::invalid_argument, "summary_embedding is not finite");
  }
  if (r.speaker_embedding && !all_finite(*r.speaker_embedding)) {
    bad(Errc::invalid_argument, "speaker_embedding is not finite");
  }
  if (r.acoustic_features) {
    for (const auto& [name, value] : *r.acoustic_features) {
      if (!std::isfinite(value)) bad(Errc::invalid_argument, "acoustic feature '" + name + "' is not finite");
    }
  }
  std::set<std::string_view> families;
  for (const auto& e : r.enrolled_labels) {
    if (!families.insert(e.family).second) {
      bad(Errc::invalid_argument, "label family '" + e.family + "' enrolled twice");
    }
  }
}

Corpus::Corpus(std::vector<UtteranceRecord> records, fs::path base_dir)
    : records_(std::move(records)), base_dir_(std::move(base_dir)) {
  index_.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    validate_record(records_[i]);
    if (!index_.emplace(records_[i].id, i).second) {
      fail(Errc::duplicate_id, "duplicate id '" + records_[i].id + "'");
    }
  }
}

const UtteranceRecord* Corpus::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &records_[it->second];
}

const UtteranceRecord& Corpus::at(std::string_view id) const {
  if (const auto* r = find(id)) return *r;
  fail(Errc::not_found, "unknown utterance id '" + std::string(id) + "'");
}

fs::path Corpus::resolve(const std::string& ref) const {
  fs::path p(ref);
  return p.is_absolute() ? p : base_dir_ / p;
}

FloatMatrix Corpus::load_frames(std::string_view id) const {
  const auto& r = at(id);
  if (!r.frame_embeddings_ref) {
    fail(Errc::missing_field, "record '" + r.id + "' has no frame_embeddings_ref");
  }
  auto container = read_embedding_container(resolve(*r.frame_embeddings_ref));
  if (r.summary_embedding && container.data.rows() > 0) {
    const auto& summary = *r.summary_embedding;
    if (static_cast<std::size_t>(container.data.cols()) != summary.size()) {
      fail(Errc::dimension_mismatch, "record '" + r.id + "': frame dim " +
                                         std::to_string(container.data.cols()) +
                                         " != summary dim " + std::to_string(summary.size()));
    }
    const Eigen::VectorXd mean = container.data.cast<double>().colwise().mean().transpose();
    for (std::size_t d = 0; d < summary.size(); ++d) {
      if (std::abs(mean[static_cast<Eigen::Index>(d)] - summary[d]) > 1e-5) {
        fail(Errc::invalid_argument,
             "record '" + r.id + "': summary_embedding differs from frame mean at index " +
                 std::to_string(d));
      }
    }
  }
  return std::move(container.data);
}

Corpus parse_manifest(std::string_view text, const fs::path& base_dir) {
  std::vector<UtteranceRecord> records;
  std::unordered_map<std::string, std::size_t> first_line;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    UtteranceRecord record;
    try {
      record = record_from_json(json::parse(line));
      validate_record(record);
      if (record.frame_embeddings_ref && record.summary_embedding) {
        fs::path p(*record.frame_embeddings_ref);
        const auto header = read_container_header(p.is_absolute() ? p : base_dir / p);
        if (header.dim != record.summary_embedding->size()) {
          fail(Errc::dimension_mismatch,
               "container '" + *record.frame_embeddings_ref + "' has dim " +
                   std::to_string(header.dim) + " but summary_embedding has " +
                   std::to_string(record.summary_embedding->size()) + " entries");
        }
      }
    } catch (const json::exception& e) {
      fail(Errc::parse_error, "manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, inserted] = first_line.emplace(record.id, line_no);
    if (!inserted) {
      fail(Errc::duplicate_id, "manifest line " + std::to_string(line_no) + ": duplicate id '" +
                                   record.id + "' (first seen on line " +
                                   std::to_string(it->second) + ")");
    }
    records.push_back(std::move(record));
    if (end == text.size()) break;
  }
  return Corpus(std::move(records), base_dir);
}

Corpus ingest_manifest(const fs::path& path) {
  return parse_manifest(read_file(path), path.parent_path());
}

std::string serialize_record(const UtteranceRecord& record) {
  return record_to_json(record).dump();
}

std::string serialize_manifest(const Corpus& corpus) {
  std::string out;
  for (const auto& r : corpus.records()) {
    out += serialize_record(r);
    out.push_back('\n');
  }
  return out;
}

void write_manifest(const Corpus& corpus, const fs::path& path) {
  write_file(path, serialize_manifest(corpus));
}

std::vector<AnalysisSet> parse_sets(std::string_view json_text) {
  std::vector<AnalysisSet> sets;
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(Errc::parse_error, std::string("sets: ") + e.what());
  }
  if (!root.is_array()) fail(Errc::parse_error, "sets: expected a JSON array");
  std::set<std::string> ids;
  for (const auto& j : root) {
    AnalysisSet s;
    s.id = string_field(j, "id", true);
    if (!ids.insert(s.id).second) fail(Errc::duplicate_id, "duplicate analysis set id '" + s.id + "'");
    if (auto it = j.find("utterance_ids"); it != j.end()) {
      s.utterance_ids = it->get<std::vector<std::string>>();
    }
    s.fixed_inputs = j.value("fixed_inputs", false);
    s.declared_text = optional_string(j, "declared_text");
    s.declared_speaker = optional_string(j, "declared_speaker");
    s.declared_prompt = optional_string(j, "declared_prompt");
    sets.push_back(std::move(s));
  }
  return sets;
}

std::string serialize_sets(const std::vector<AnalysisSet>& sets) {
  json root = json::array();
  for (const auto& s : sets) {
    json j;
    j["id"] = s.id;
    j["fixed_inputs"] = s.fixed_inputs;
    if (s.declared_text) j["declared_text"] = *s.declared_text;
    if (s.declared_speaker) j["declared_speaker"] = *s.declared_speaker;
    if (s.declared_prompt) j["declared_prompt"] = *s.declared_prompt;
    j["utterance_ids"] = s.utterance_ids;
    root.push_back(std::move(j));
  }
  return root.dump(2) + "\n";
}

std::vector<FixedInputViolation> validate_fixed_inputs(const AnalysisSet& set, const Corpus& corpus) {
  std::vector<const UtteranceRecord*> members;
  members.reserve(set.utterance_ids.size());
  for (const auto& id : set.utterance_ids) {
    const auto* r = corpus.find(id);
    if (!r) fail(Errc::not_found, "analysis set '" + set.id + "': unresolved id '" + id + "'");
    members.push_back(r);
  }
  std::vector<FixedInputViolation> violations;
  if (!set.fixed_inputs) return violations;
  auto check = [&](const UtteranceRecord& r, std::string_view field,
                   const std::optional<std::string>& declared, const std::string& actual) {
    if (declared && *declared != actual) {
      violations.push_back({r.id, std::string(field), *declared, actual});
    }
  };
  for (const auto* r : members) {
    check(*r, "text", set.declared_text, r->text);
    check(*r, "speaker", set.declared_speaker, r->speaker);
    check(*r, "description_prompt", set.declared_prompt, r->description_prompt);
  }
  return violations;
}

AnalysisSet make_analysis_set(std::string id, const std::vector<const UtteranceRecord*>& members) {
  AnalysisSet s;
  s.id = std::move(id);
  for (const auto* r : members) s.utterance_ids.push_back(r->id);
  if (members.empty()) return s;
  const auto& first = *members.front();
  const bool same = std::all_of(members.begin(), members.end(), [&](const UtteranceRecord* r) {
    return r->text == first.text && r->speaker == first.speaker &&
           r->description_prompt == first.description_prompt;
  });
  if (same) {
    s.fixed_inputs = true;
    s.declared_text = first.text;
    s.declared_speaker = first.speaker;
    s.declared_prompt = first.description_prompt;
  }
  return s;
}

const AnalysisSet* Store::find_set(std::string_view id) const {
  for (const auto& s : sets) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

const AnalysisSet& Store::set(std::string_view id) const {
  if (const auto* s = find_set(id)) return *s;
  fail(Errc::not_found, "unknown analysis set '" + std::string(id) + "'");
}

Store open_store(const fs::path& root) {
  if (!fs::is_directory(root)) fail(Errc::io_error, "store '" + root.string() + "' is not a directory");
  const fs::path manifest = root / kManifestFile;
  if (!fs::exists(manifest)) fail(Errc::io_error, "store '" + root.string() + "' has no manifest.jsonl");
  Store store;
  store.root = root;
  store.corpus = ingest_manifest(manifest);
  const fs::path sets = root / kSetsFile;
  if (fs::exists(sets)) store.sets = parse_sets(read_file(sets));
  for (const auto& s : store.sets) {
    for (const auto& id : s.utterance_ids) {
      if (!store.corpus.find(id)) {
        fail(Errc::not_found, "analysis set '" + s.id + "': unresolved id '" + id + "'");
      }
    }
  }
  return store;
}

void save_store(const Corpus& corpus, const std::vector<AnalysisSet>& sets, const fs::path& root) {
  fs::create_directories(root);
  const bool copy = !corpus.base_dir().empty() && fs::exists(corpus.base_dir()) &&
                    !fs::equivalent(fs::absolute(corpus.base_dir()), fs::absolute(root));
  if (copy) {
    for (const auto& r : corpus.records()) {
      for (const auto& ref : referenced_files(r)) {
        if (fs::path(ref).is_absolute()) continue;
        const fs::path src = corpus.base_dir() / ref;
        const fs::path dst = root / ref;
        if (!fs::exists(src)) fail(Errc::io_error, "record '" + r.id + "': missing file " + src.string());
        fs::create_directories(dst.parent_path());
        fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
      }
    }
  }
  write_file(root / kManifestFile, serialize_manifest(corpus));
  write_file(root / kSetsFile, serialize_sets(sets));
}

}  // namespace enrolkit
