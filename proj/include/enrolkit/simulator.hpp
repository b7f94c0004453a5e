#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "enrolkit/corpus.hpp"
#include "enrolkit/metrics.hpp"

namespace enrolkit {

struct DiscreteFactor {
  std::uint32_t k = 2;
  float separation = 10.0f;  // distance between adjacent class means, in noise sigmas
};

struct GradientFactor {
  float strength = 5.0f;  // sd along the gradient direction, in noise sigmas
};

// Inputs varied across records. "speaker" and "text" confounds also set the
// record's speaker and text, which breaks fixed inputs.
struct Confound {
  std::string name;
  std::uint32_t levels = 2;
  float offset_scale = 1.0f;  // spacing between adjacent levels, in noise sigmas
};

struct SweepGridSpec {
  std::vector<float> temperatures;
  std::vector<std::uint32_t> top_ks;
};

struct TranscriptSpec {
  std::uint32_t length = 8;
  std::uint32_t vocabulary = 50;
  float corruption_rate = 0.0f;  // per-token substitution probability
};

struct SyntheticSpec {
  std::uint32_t n = 0;  // records per sweep cell when a grid is given
  std::uint32_t dim = 0;
  std::uint64_t seed = 0;
  std::optional<DiscreteFactor> discrete_factor;
  std::optional<GradientFactor> gradient_factor;
  std::vector<Confound> confounds;
  float noise_sigma = 1.0f;
  // Noise sd becomes noise_sigma * temperature_coupling * tau.
  std::optional<float> temperature_coupling;
  // Extra noise factor (1 + top_k_coupling * ln k).
  std::optional<float> top_k_coupling;
  std::optional<SweepGridSpec> sweep;
  float base_norm = 20.0f;  // norm of the shared mean, in noise sigmas
  std::uint32_t frames = 0;  // frames per utterance written to containers; 0 = summaries only
  float frame_sigma = 0.5f;
  std::uint32_t speakers = 1;  // overridden by a "speaker" confound
  std::uint32_t speaker_dim = 32;
  float speaker_noise = 0.05f;
  std::uint32_t reference_samples = kDefaultSpeakerReferenceSamples;
  TranscriptSpec transcript;
  std::string set_id = "synthetic";
};

// Throws invalid_argument naming the offending field.
void validate_spec(const SyntheticSpec& spec);

SyntheticSpec parse_synthetic_spec(std::string_view json_text);
SyntheticSpec read_synthetic_spec(const std::filesystem::path& path);
std::string serialize_synthetic_spec(const SyntheticSpec& spec);

struct PlantedTruth {
  std::string id;
  std::optional<std::uint32_t> discrete_class;
  std::optional<double> discrete_position;  // signed offset along the class direction, in sigmas
  std::optional<double> gradient_value;     // in units of the gradient sd
  std::map<std::string, std::uint32_t> confound_levels;

  bool operator==(const PlantedTruth&) const = default;
};

std::string serialize_truth(const std::vector<PlantedTruth>& truth);
std::vector<PlantedTruth> parse_truth(std::string_view jsonl);

struct SyntheticOutput {
  SyntheticSpec spec;
  Corpus corpus;
  std::vector<AnalysisSet> sets;  // full set first
  std::vector<PlantedTruth> truth;  // aligned with corpus records
  std::map<std::string, FloatMatrix> frames;  // by record id, when spec.frames > 0
  // Held-out "real" speaker embeddings for building references.
  std::map<std::string, std::vector<Embedding>> speaker_samples;
  std::uint32_t round = 0;  // enrolment simulations applied

  const AnalysisSet& full_set() const { return sets.front(); }
};

// Expected total variance of one sweep cell: noise plus planted factors.
double expected_total_variance(const SyntheticSpec& spec, float temperature = 1.0f, std::uint32_t top_k = 50);

SyntheticOutput generate_synthetic(const SyntheticSpec& spec);

enum class EnrolledFactor { discrete, gradient, automatic };

// Regenerates every record with its enrolled-factor value pulled towards its
// label group's mean by `shrink` (group variance scaled by shrink^2) and
// fresh noise. Other factors are kept. Returns one fixed-input set per label
// ("<set>/<label>") after the full set.
SyntheticOutput simulate_enrolment_effect(const SyntheticOutput& previous,
                                          const std::map<std::string, std::string>& relabel, double shrink,
                                          EnrolledFactor factor = EnrolledFactor::automatic);

std::vector<SpeakerReference> synthetic_speaker_references(const SyntheticOutput& output, std::uint64_t seed = 0);

// Store plus truth.jsonl, spec.json, state.json and refs.json.
void write_synthetic(const SyntheticOutput& output, const std::filesystem::path& root);
SyntheticOutput read_synthetic(const std::filesystem::path& root);

}  // namespace enrolkit
