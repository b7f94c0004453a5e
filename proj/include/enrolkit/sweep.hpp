#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "enrolkit/corpus.hpp"
#include "enrolkit/csv.hpp"
#include "enrolkit/metrics.hpp"

namespace enrolkit {

// Operating point recommended for the generation sweep.
inline constexpr float kRecommendedTemperature = 1.2f;
inline constexpr std::uint32_t kRecommendedTopK = 100;

struct SweepCell {
  float temperature = 0.0f;
  std::uint32_t top_k = 0;
  double diversity = 0.0;  // 0 when n < 2
  std::optional<double> mean_wer;
  std::optional<double> mean_speaker_sim;
  std::uint32_t n = 0;
  bool too_small = false;  // n < 2, diversity undefined
  bool recommended = false;
};

struct SweepOptions {
  bool wer = true;
  bool speaker_sim = true;
};

// Cells sorted by (temperature, top_k); keys compare the stored floats
// exactly. Requested statistics fail on records missing their inputs.
std::vector<SweepCell> aggregate_sweep(const Corpus& corpus, std::span<const SpeakerReference> refs,
                                       const SweepOptions& options = {});

inline constexpr std::string_view kSweepMetrics[] = {"diversity", "wer", "speaker_sim", "n"};

double cell_metric(const SweepCell& cell, std::string_view metric);

// Rows: temperature ascending; columns: top_k ascending; missing cells empty.
csv::Table heatmap_table(std::span<const SweepCell> grid, std::string_view metric);
void emit_heatmap(std::span<const SweepCell> grid, std::string_view metric, const std::filesystem::path& path);

// One row per cell with an operating_point column marking the recommended cell.
csv::Table cells_table(std::span<const SweepCell> grid);

}  // namespace enrolkit
