#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enrolkit/corpus.hpp"
#include "enrolkit/discovery.hpp"
#include "enrolkit/projection.hpp"

namespace enrolkit {

struct LabelTemplate {
  std::string label_id;
  std::string text;    // placeholders {speaker} and {phrase}
  std::string phrase;  // substituted for {phrase}

  bool operator==(const LabelTemplate&) const = default;
};

inline constexpr std::string_view kBinTemplate = "{speaker} speaks at a {phrase}";
inline constexpr std::string_view kClusterTemplate = "{speaker} speaks in {phrase}";

std::string render_label_phrase(const LabelTemplate& label, std::string_view speaker);

// Appends `phrase` (first letter upper-cased) to `prompt`. A ". " separator
// is used unless the prompt already ends in terminal punctuation.
std::string append_phrase(std::string_view prompt, std::string_view phrase);

// Rewrites the prompts of relabelled records and records the label family on
// each. Records outside `relabel` are untouched. A family already enrolled
// on a record is a conflict.
Corpus augment_prompts(const Corpus& corpus, const std::map<std::string, std::string>& relabel,
                       const std::map<std::string, LabelTemplate>& templates,
                       const std::string& family, std::uint32_t iteration);

enum class DecisionKind { discrete, continuous };

struct Decision {
  DecisionKind kind = DecisionKind::discrete;
  std::uint32_t k = 2;
  std::uint32_t axis = 0;
  std::uint32_t n_bins = 3;
  BinMode mode = BinMode::equal_width;

  std::uint32_t n_groups() const { return kind == DecisionKind::discrete ? k : n_bins; }
  bool operator==(const Decision&) const = default;
};

// "discrete:k=2" or "continuous:axis=0,bins=3[,mode=equal_count]".
Decision parse_decision(std::string_view text);
std::string to_string(const Decision& decision);

struct GroupName {
  std::string label_id;
  std::string phrase;
  std::string template_text;

  bool operator==(const GroupName&) const = default;
};

// Bin groups are named after the default bin labels ("low-intensity" ...),
// clusters "cluster-1" ...
std::vector<GroupName> default_group_names(const Decision& decision);

struct IterationParams {
  std::uint64_t seed = 0;
  std::uint32_t sample_n = kDefaultExemplarSamples;
  std::uint32_t n_components = kDefaultComponents;
  std::uint32_t index = 1;
  std::string family;  // defaults to "iteration-<index>"

  std::string family_name() const;
};

struct EnrolmentIteration {
  std::uint32_t index = 1;
  std::string analysis_set_id;
  Decision decision;
  std::string family;
  std::vector<ExemplarLabel> labels;
  std::vector<std::uint32_t> group_sizes;
  double total_variance = 0.0;
  double top2_ratio = 0.0;
  std::string manifest_ref;
};

std::string serialize_iteration(const EnrolmentIteration& iteration);
EnrolmentIteration parse_iteration(std::string_view json_text);
EnrolmentIteration read_iteration(const std::filesystem::path& path);

struct IterationResult {
  EnrolmentIteration iteration;
  PcaModel pca;
  Projection projection;
  std::vector<std::uint32_t> groups;  // per analysis-set member
  std::map<std::string, std::string> relabel;
  Corpus augmented;
};

// Groups of an analysis set under a decision, in canonical order: clusters
// sorted by centroid along PC1, bins low to high.
struct GroupPreview {
  PcaModel pca;
  Projection projection;
  std::vector<std::uint32_t> groups;
  std::vector<std::uint32_t> sizes;
  // Member nearest each group centre in projection space.
  std::vector<std::string> exemplar_ids;
};

GroupPreview preview_groups(const Corpus& analysis, const AnalysisSet& set, const Decision& decision,
                            const IterationParams& params);

// One enrolment iteration: fixed-input check, PCA, grouping, exemplar means
// in embedding space, relabelling of `training` and prompt augmentation.
// Training records without embeddings pass through unlabelled.
IterationResult run_iteration(const Corpus& analysis, const AnalysisSet& set, const Corpus& training,
                              const Decision& decision, const std::vector<GroupName>& names,
                              const IterationParams& params);

// Store layout written by `enrolkit enrol`: manifest.jsonl and sets.json
// (a complete store), labels.json and iteration.json.
void write_iteration(const IterationResult& result, const std::vector<AnalysisSet>& sets,
                     const std::filesystem::path& out_dir);

struct TrajectoryPoint {
  std::uint32_t index = 0;
  std::string grouping;  // what the values were averaged over
  std::uint32_t n_sets = 1;
  double total_variance = 0.0;
  double top2_ratio = 0.0;
  std::optional<double> delta;
  bool increased = false;
};

struct TrajectoryReport {
  std::vector<TrajectoryPoint> points;
  bool decreasing = true;
};

// Iterations sharing an index are averaged into one point.
TrajectoryReport variance_trajectory(std::span<const EnrolmentIteration> iterations,
                                     const std::map<std::uint32_t, std::string>& groupings = {});

csv::Table trajectory_table(const TrajectoryReport& report);

}  // namespace enrolkit
