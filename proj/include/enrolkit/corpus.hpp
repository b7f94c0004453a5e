#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "enrolkit/container.hpp"
#include "enrolkit/text.hpp"

namespace enrolkit {

using Embedding = std::vector<float>;

struct GenerationConfig {
  float temperature = 1.0f;
  std::uint32_t top_k = 50;
  std::map<std::string, std::string> extra;

  bool operator==(const GenerationConfig&) const = default;
};

enum class Emotion { neutral, happy, sad, angry, surprised, helpful };

std::string_view to_string(Emotion emotion);
Emotion parse_emotion(std::string_view name);

struct GroundTruthLabels {
  std::optional<Emotion> emotion;
  std::optional<int> intensity;  // 1..5 Likert, only for non-neutral emotions

  bool operator==(const GroundTruthLabels&) const = default;
};

// A label family applied to a record by prompt augmentation. Families are
// enrolled one at a time; re-applying a family is rejected.
struct EnrolledLabel {
  std::string family;
  std::string label_id;
  std::uint32_t iteration = 0;

  bool operator==(const EnrolledLabel&) const = default;
};

struct UtteranceRecord {
  std::string id;
  std::string speaker;
  std::string text;
  std::string description_prompt;
  std::optional<GenerationConfig> generation;
  std::optional<GroundTruthLabels> ground_truth;
  std::optional<Embedding> summary_embedding;
  std::optional<std::uint32_t> summary_source_frames;
  std::optional<std::string> frame_embeddings_ref;
  std::optional<Embedding> speaker_embedding;
  std::optional<TokenList> reference_transcript;
  std::optional<TokenList> hypothesis_transcript;
  std::optional<std::string> f0_contour_ref;
  std::optional<std::map<std::string, float>> acoustic_features;
  std::optional<std::string> audio_ref;
  std::vector<EnrolledLabel> enrolled_labels;

  bool operator==(const UtteranceRecord&) const = default;
};

// Checks per-record invariants (finite vectors, generation ranges, label
// consistency). Throws Error with the record id in the message.
void validate_record(const UtteranceRecord& record);

// Immutable after construction; safe for concurrent reads.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<UtteranceRecord> records, std::filesystem::path base_dir);

  const std::vector<UtteranceRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const UtteranceRecord* find(std::string_view id) const;
  const UtteranceRecord& at(std::string_view id) const;

  const std::filesystem::path& base_dir() const { return base_dir_; }
  std::filesystem::path resolve(const std::string& ref) const;

  // Reads the record's frame container and checks it against the stored
  // summary embedding (frame mean within 1e-5) when both are present.
  FloatMatrix load_frames(std::string_view id) const;

  bool operator==(const Corpus& other) const { return records_ == other.records_; }

 private:
  std::vector<UtteranceRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
  std::filesystem::path base_dir_;
};

// One JSON object per line, snake_case keys, file references relative to
// the manifest directory.
Corpus parse_manifest(std::string_view text, const std::filesystem::path& base_dir);
Corpus ingest_manifest(const std::filesystem::path& path);
std::string serialize_record(const UtteranceRecord& record);
std::string serialize_manifest(const Corpus& corpus);
void write_manifest(const Corpus& corpus, const std::filesystem::path& path);

struct AnalysisSet {
  std::string id;
  std::vector<std::string> utterance_ids;
  bool fixed_inputs = false;
  std::optional<std::string> declared_text;
  std::optional<std::string> declared_speaker;
  std::optional<std::string> declared_prompt;

  bool operator==(const AnalysisSet&) const = default;
};

std::vector<AnalysisSet> parse_sets(std::string_view json_text);
std::string serialize_sets(const std::vector<AnalysisSet>& sets);

struct FixedInputViolation {
  std::string utterance_id;
  std::string field;  // "text", "speaker" or "description_prompt"
  std::string expected;
  std::string actual;
};

std::vector<FixedInputViolation> validate_fixed_inputs(const AnalysisSet& set,
                                                       const Corpus& corpus);

// A set built over records, declaring the first record's inputs when all
// members share them.
AnalysisSet make_analysis_set(std::string id, const std::vector<const UtteranceRecord*>& members);

// On-disk store: <root>/manifest.jsonl, <root>/sets.json and the files the
// manifest references.
struct Store {
  std::filesystem::path root;
  Corpus corpus;
  std::vector<AnalysisSet> sets;

  const AnalysisSet& set(std::string_view id) const;
  const AnalysisSet* find_set(std::string_view id) const;
};

inline constexpr std::string_view kManifestFile = "manifest.jsonl";
inline constexpr std::string_view kSetsFile = "sets.json";

Store open_store(const std::filesystem::path& root);

// Writes manifest and sets; copies referenced files from the corpus base
// directory when it differs from `root`.
void save_store(const Corpus& corpus, const std::vector<AnalysisSet>& sets,
                const std::filesystem::path& root);

}  // namespace enrolkit
