#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "enrolkit/corpus.hpp"
#include "enrolkit/f0.hpp"
#include "enrolkit/text.hpp"

namespace enrolkit {

// Similarity at or above which a synthetic voice is judged a perceptual
// match for a real speaker.
inline constexpr double kSpeakerMatchThreshold = 0.75;

// Real utterances averaged per speaker reference.
inline constexpr std::uint32_t kDefaultSpeakerReferenceSamples = 300;

// Throws on zero-norm operands (naming "a" or "b") or dimension mismatch.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

struct DiversityScore {
  double value = 0.0;  // in [0, 2]
  std::uint32_t n = 0;
};

// Mean of (1 - cos) over all ordered pairs i != j. Uses Neumaier-compensated
// accumulation over fixed row blocks, so the result does not depend on how
// the pair loop is scheduled.
DiversityScore diversity_score(std::span<const Embedding> embeddings);

// Word-level Levenshtein distance with unit costs.
std::size_t edit_distance(std::span<const std::string> reference,
                          std::span<const std::string> hypothesis);

// edit_distance / |reference|; not clipped at 1.
double wer(std::span<const std::string> reference, std::span<const std::string> hypothesis);

struct SpeakerReference {
  std::string speaker;
  Embedding mean_embedding;
  std::uint32_t n_samples = 0;
  std::uint64_t seed = 0;

  bool operator==(const SpeakerReference&) const = default;
};

// Mean of min(n, available) embeddings drawn without replacement.
SpeakerReference build_speaker_reference(std::string speaker, std::span<const Embedding> embeddings,
                                         std::uint32_t n = kDefaultSpeakerReferenceSamples,
                                         std::uint64_t seed = 0);

// Cosine similarity to the reference mean (0..1 in practice for speaker
// encoders; reported as similarity, not distance).
double speaker_similarity(std::span<const float> sample, const SpeakerReference& ref);

inline bool is_perceptual_match(double similarity) {
  return similarity >= kSpeakerMatchThreshold;
}

// Argmax similarity; ties go to the lexicographically smallest speaker.
const std::string& best_matching_speaker(std::span<const float> sample,
                                         std::span<const SpeakerReference> refs);

std::vector<SpeakerReference> parse_speaker_references(std::string_view json_text);
std::string serialize_speaker_references(std::span<const SpeakerReference> refs);
std::vector<SpeakerReference> read_speaker_references(const std::filesystem::path& path);

struct F0EnsembleSummary {
  std::uint32_t n_points = 0;
  std::vector<double> quantile_levels;
  Eigen::MatrixXd grid;  // levels x n_points, Hz
  std::uint32_t n_contours = 0;
  std::vector<std::size_t> skipped;  // input indices with < 2 usable voiced frames
};

// Each contour's voiced frames are mapped to [0, 1] in time, linearly
// interpolated at n_points evenly spaced positions, and summarised by
// empirical quantiles (linear interpolation between order statistics).
F0EnsembleSummary f0_ensemble_summary(std::span<const F0Contour> contours, std::uint32_t n_points,
                                      std::vector<double> levels);

// Pearson correlation; nullopt if either column is constant.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct FeatureCorrelation {
  std::string name;
  double r = 0.0;
};

struct CorrelationReport {
  std::vector<FeatureCorrelation> ranked;  // by |r| descending, then name
  std::vector<std::string> undefined;      // constant columns
};

CorrelationReport feature_pc_correlation(const std::map<std::string, std::vector<double>>& features,
                                         std::span<const double> pc_scores);

}  // namespace enrolkit
