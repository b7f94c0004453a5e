#include "enrolkit/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "enrolkit/error.hpp"
#include "enrolkit/projection.hpp"

namespace enrolkit {

std::vector<SweepCell> aggregate_sweep(const Corpus& corpus, std::span<const SpeakerReference> refs,
                                       const SweepOptions& options) {
  std::map<std::string, const SpeakerReference*> by_speaker;
  for (const auto& r : refs) by_speaker[r.speaker] = &r;

  // Record order within a cell is fixed by id so the result does not depend
  // on manifest order.
  std::map<std::pair<float, std::uint32_t>, std::vector<const UtteranceRecord*>> cells;
  for (const auto& r : corpus.records()) {
    if (!r.generation) fail(Errc::missing_field, "sweep: record '" + r.id + "' has no generation config");
    cells[{r.generation->temperature, r.generation->top_k}].push_back(&r);
  }

  std::vector<SweepCell> grid;
  for (auto& [key, members] : cells) {
    std::sort(members.begin(), members.end(),
              [](const UtteranceRecord* a, const UtteranceRecord* b) { return a->id < b->id; });
    SweepCell cell;
    cell.temperature = key.first;
    cell.top_k = key.second;
    cell.n = static_cast<std::uint32_t>(members.size());
    cell.recommended = key.first == kRecommendedTemperature && key.second == kRecommendedTopK;

    std::vector<Embedding> embeddings;
    for (const auto* r : members) {
      if (!r->summary_embedding && !r->frame_embeddings_ref) {
        fail(Errc::missing_field, "sweep: record '" + r->id + "' has no embedding");
      }
      embeddings.push_back(summary_embedding_of(corpus, *r));
    }
    if (cell.n < 2) {
      cell.too_small = true;
    } else {
      cell.diversity = diversity_score(embeddings).value;
    }

    if (options.wer) {
      double total = 0.0;
      for (const auto* r : members) {
        if (!r->reference_transcript || !r->hypothesis_transcript) {
          fail(Errc::missing_field, "sweep: record '" + r->id + "' lacks transcripts for WER");
        }
        total += wer(*r->reference_transcript, *r->hypothesis_transcript);
      }
      cell.mean_wer = total / static_cast<double>(members.size());
    }
    if (options.speaker_sim) {
      double total = 0.0;
      for (const auto* r : members) {
        if (!r->speaker_embedding) fail(Errc::missing_field, "sweep: record '" + r->id + "' has no speaker embedding");
        auto it = by_speaker.find(r->speaker);
        if (it == by_speaker.end()) fail(Errc::not_found, "sweep: no speaker reference for '" + r->speaker + "'");
        total += speaker_similarity(*r->speaker_embedding, *it->second);
      }
      cell.mean_speaker_sim = total / static_cast<double>(members.size());
    }
    grid.push_back(std::move(cell));
  }
  return grid;
}

double cell_metric(const SweepCell& cell, std::string_view metric) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (metric == "diversity") return cell.too_small ? nan : cell.diversity;
  if (metric == "wer") return cell.mean_wer.value_or(nan);
  if (metric == "speaker_sim") return cell.mean_speaker_sim.value_or(nan);
  if (metric == "n") return cell.n;
  fail(Errc::invalid_argument, "unknown sweep metric '" + std::string(metric) + "'");
}

csv::Table heatmap_table(std::span<const SweepCell> grid, std::string_view metric) {
  if (grid.empty()) fail(Errc::invalid_argument, "heatmap: empty grid");
  cell_metric(grid.front(), metric);
  std::set<float> temperatures;
  std::set<std::uint32_t> top_ks;
  std::map<std::pair<float, std::uint32_t>, const SweepCell*> lookup;
  for (const auto& c : grid) {
    temperatures.insert(c.temperature);
    top_ks.insert(c.top_k);
    lookup[{c.temperature, c.top_k}] = &c;
  }
  csv::Table t;
  t.header.push_back("temperature\\top_k");
  for (auto k : top_ks) t.header.push_back(std::to_string(k));
  for (float tau : temperatures) {
    std::vector<std::string> row{csv::number(tau)};
    for (auto k : top_ks) {
      auto it = lookup.find({tau, k});
      row.push_back(it == lookup.end() ? "" : csv::number(cell_metric(*it->second, metric)));
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

void emit_heatmap(std::span<const SweepCell> grid, std::string_view metric, const std::filesystem::path& path) {
  csv::write(heatmap_table(grid, metric), path);
}

csv::Table cells_table(std::span<const SweepCell> grid) {
  csv::Table t;
  t.header = {"temperature", "top_k", "n", "diversity", "mean_wer", "mean_speaker_sim", "flag", "operating_point"};
  for (const auto& c : grid) {
    t.rows.push_back({csv::number(c.temperature), std::to_string(c.top_k), std::to_string(c.n),
                      c.too_small ? "" : csv::number(c.diversity), c.mean_wer ? csv::number(*c.mean_wer) : "",
                      c.mean_speaker_sim ? csv::number(*c.mean_speaker_sim) : "", c.too_small ? "n<2" : "",
                      c.recommended ? "recommended" : ""});
  }
  return t;
}

}  // namespace enrolkit
