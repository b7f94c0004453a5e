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
#include "enrolkit/csv.hpp"
#include "enrolkit/projection.hpp"

namespace enrolkit {

inline constexpr std::uint32_t kDefaultKmeansRestarts = 10;
inline constexpr std::uint32_t kDefaultKmeansMaxIter = 300;
// Members averaged into each bin/cluster exemplar.
inline constexpr std::uint32_t kDefaultExemplarSamples = 50;

struct ClusterModel {
  std::uint32_t k = 0;
  Eigen::MatrixXd centroids;  // k x P, projection space
  std::vector<std::uint32_t> assignments;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t restart = 0;  // winning restart
  std::uint32_t iterations = 0;

  std::vector<std::uint32_t> sizes() const;
};

// Lloyd iterations from k-means++ seeding, best of `n_init` restarts by
// (inertia, restart index). Restart r uses seed + r. An emptied cluster is
// reseeded at the point farthest from its assigned centroid. Converged
// restarts are refined by single-point transfers; inputs with k^N <= 65536
// are also solved exactly and the better partition is kept.
ClusterModel kmeans(const Eigen::MatrixXd& points, std::uint32_t k, std::uint64_t seed,
                    std::uint32_t max_iter = kDefaultKmeansMaxIter,
                    std::uint32_t n_init = kDefaultKmeansRestarts);

// Relabels clusters so centroids are in lexicographic coordinate order
// (PC1 first). The partition is unchanged.
ClusterModel order_clusters(ClusterModel model);

enum class BinMode { equal_width, equal_count };

std::string_view to_string(BinMode mode);
BinMode parse_bin_mode(std::string_view name);

struct BinSpec {
  std::uint32_t axis = 0;
  std::uint32_t n_bins = 0;
  BinMode mode = BinMode::equal_width;
  std::vector<double> edges;  // n_bins + 1, strictly ascending
  std::vector<std::uint32_t> assignments;
  std::vector<std::string> labels;

  // Half-open bins, last closed; out-of-range scores clamp to the end bins.
  std::uint32_t bin_of(double score) const;
  std::vector<std::uint32_t> sizes() const;
};

// "low/medium/high intensity" for three bins, "bin i" otherwise.
std::vector<std::string> default_bin_labels(std::uint32_t n_bins);

BinSpec bin_axis(const Projection& projection, std::uint32_t axis, std::uint32_t n_bins,
                 BinMode mode = BinMode::equal_width);

// Mean of min(sample_n, members) members drawn without replacement.
Embedding exemplar_mean(std::span<const Embedding> members,
                        std::uint32_t sample_n = kDefaultExemplarSamples, std::uint64_t seed = 0);

enum class GroupKind { cluster, bin };

struct ExemplarProvenance {
  std::uint32_t iteration = 0;
  GroupKind kind = GroupKind::cluster;
  std::uint32_t index = 0;
  std::uint32_t sample_n = kDefaultExemplarSamples;
  std::uint64_t seed = 0;

  bool operator==(const ExemplarProvenance&) const = default;
};

struct ExemplarLabel {
  std::string label_id;
  std::string phrase;
  Embedding exemplar;  // original embedding space
  ExemplarProvenance provenance;

  bool operator==(const ExemplarLabel&) const = default;
};

std::string serialize_labels(std::span<const ExemplarLabel> labels);
std::vector<ExemplarLabel> parse_labels(std::string_view json_text);
std::vector<ExemplarLabel> read_labels(const std::filesystem::path& path);

struct ExemplarAssignment {
  std::string label_id;
  double cosine_distance = 0.0;
};

// Label with the lowest cosine distance; ties go to the smallest label_id.
ExemplarAssignment assign_by_exemplar(std::span<const float> embedding,
                                      std::span<const ExemplarLabel> labels);

inline constexpr std::string_view kNeutralCategory = "Neutral";
inline constexpr std::string_view kLowIntensityCategory = "Emotion - low intensity";
inline constexpr std::string_view kHighIntensityCategory = "Emotion - high intensity";
// Emotional utterances above this intensity count as high intensity.
inline constexpr int kHighIntensityAbove = 3;

// nullopt when no emotion is annotated.
std::optional<std::string> categorize_ground_truth(const GroundTruthLabels& labels);

struct ConfusionTable {
  std::vector<std::string> row_names;  // ground-truth categories
  std::vector<std::string> col_names;  // assigned labels
  Eigen::MatrixXd percentages;         // rows sum to 100
  std::vector<std::size_t> row_counts;
};

// Row-normalised percentages over ids present in both maps. Rows use the
// canonical Neutral/low/high order, then any other category by name;
// columns default to sorted label ids.
ConfusionTable confusion_table(const std::map<std::string, std::string>& assignments,
                               const std::map<std::string, std::string>& ground_truth,
                               std::vector<std::string> column_order = {});

csv::Table confusion_csv(const ConfusionTable& table);

// Partition agreement measures used when validating against planted truth.
double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);
double cluster_purity(std::span<const std::uint32_t> clusters, std::span<const std::uint32_t> truth);

}  // namespace enrolkit
