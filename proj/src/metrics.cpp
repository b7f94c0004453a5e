#include "enrolkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

#include "enrolkit/error.hpp"
#include "enrolkit/random.hpp"
#include "json.hpp"

namespace enrolkit {

namespace {

// Neumaier's variant of Kahan summation.
struct CompensatedSum {
  double sum = 0.0;
  double compensation = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      compensation += (sum - t) + x;
    } else {
      compensation += (x - t) + sum;
    }
    sum = t;
  }

  double value() const { return sum + compensation; }
};

double norm(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(Errc::dimension_mismatch, "cosine_similarity: dimensions " + std::to_string(a.size()) +
                                       " and " + std::to_string(b.size()));
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (!(na > 0.0)) fail(Errc::invalid_argument, "cosine_similarity: operand a has zero norm");
  if (!(nb > 0.0)) fail(Errc::invalid_argument, "cosine_similarity: operand b has zero norm");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

DiversityScore diversity_score(std::span<const Embedding> embeddings) {
  const std::size_t n = embeddings.size();
  if (n < 2) fail(Errc::invalid_argument, "diversity_score: need at least 2 embeddings");
  const std::size_t dim = embeddings.front().size();
  Eigen::MatrixXd unit(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = embeddings[i];
    if (e.size() != dim) {
      fail(Errc::dimension_mismatch, "diversity_score: embedding " + std::to_string(i) + " has dim " +
                                         std::to_string(e.size()) + ", expected " + std::to_string(dim));
    }
    const double len = norm(e);
    if (!(len > 0.0)) {
      fail(Errc::invalid_argument, "diversity_score: embedding " + std::to_string(i) + " has zero norm");
    }
    for (std::size_t d = 0; d < dim; ++d) {
      unit(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = e[d] / len;
    }
  }

  // Unordered pairs, doubled: the ordered double sum is symmetric.
  constexpr Eigen::Index kBlock = 256;
  const auto rows = static_cast<Eigen::Index>(n);
  CompensatedSum total;
  for (Eigen::Index start = 0; start < rows; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, rows - start);
    const Eigen::MatrixXd gram = unit.middleRows(start, len) * unit.transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
      const Eigen::Index row = start + i;
      CompensatedSum row_sum;
      for (Eigen::Index j = row + 1; j < rows; ++j) {
        row_sum.add(1.0 - std::clamp(gram(i, j), -1.0, 1.0));
      }
      total.add(row_sum.value());
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  DiversityScore score;
  score.value = std::clamp(total.value() / pairs, 0.0, 2.0);
  score.n = static_cast<std::uint32_t>(n);
  return score;
}

std::size_t edit_distance(std::span<const std::string> reference,
                          std::span<const std::string> hypothesis) {
  std::vector<std::size_t> prev(hypothesis.size() + 1);
  std::vector<std::size_t> curr(hypothesis.size() + 1);
  for (std::size_t j = 0; j <= hypothesis.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= reference.size(); ++i) {
    curr[0] = i;
    for (std::size_t j = 1; j <= hypothesis.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (reference[i - 1] == hypothesis[j - 1] ? 0 : 1);
      curr[j] = std::min({sub, prev[j] + 1, curr[j - 1] + 1});
    }
    std::swap(prev, curr);
  }
  return prev[hypothesis.size()];
}

double wer(std::span<const std::string> reference, std::span<const std::string> hypothesis) {
  if (reference.empty()) fail(Errc::invalid_argument, "wer: reference is empty");
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

SpeakerReference build_speaker_reference(std::string speaker, std::span<const Embedding> embeddings,
                                         std::uint32_t n, std::uint64_t seed) {
  if (embeddings.empty()) {
    fail(Errc::invalid_argument, "build_speaker_reference: no embeddings for '" + speaker + "'");
  }
  if (n == 0) fail(Errc::invalid_argument, "build_speaker_reference: n must be >= 1");
  const std::size_t dim = embeddings.front().size();
  const auto picked = sample_without_replacement(embeddings.size(), n, seed);
  std::vector<double> acc(dim, 0.0);
  for (std::size_t idx : picked) {
    const auto& e = embeddings[idx];
    if (e.size() != dim) fail(Errc::dimension_mismatch, "build_speaker_reference: ragged embeddings");
    for (std::size_t d = 0; d < dim; ++d) acc[d] += e[d];
  }
  SpeakerReference ref;
  ref.speaker = std::move(speaker);
  ref.mean_embedding.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    ref.mean_embedding[d] = static_cast<float>(acc[d] / static_cast<double>(picked.size()));
  }
  ref.n_samples = static_cast<std::uint32_t>(picked.size());
  ref.seed = seed;
  return ref;
}

double speaker_similarity(std::span<const float> sample, const SpeakerReference& ref) {
  return cosine_similarity(sample, ref.mean_embedding);
}

const std::string& best_matching_speaker(std::span<const float> sample,
                                         std::span<const SpeakerReference> refs) {
  if (refs.empty()) fail(Errc::invalid_argument, "best_matching_speaker: no speaker references");
  const SpeakerReference* best = nullptr;
  double best_sim = 0.0;
  for (const auto& ref : refs) {
    const double sim = speaker_similarity(sample, ref);
    if (!best || sim > best_sim || (sim == best_sim && ref.speaker < best->speaker)) {
      best = &ref;
      best_sim = sim;
    }
  }
  return best->speaker;
}

std::vector<SpeakerReference> parse_speaker_references(std::string_view json_text) {
  using json = nlohmann::json;
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(Errc::parse_error, std::string("speaker references: ") + e.what());
  }
  if (!root.is_array()) fail(Errc::parse_error, "speaker references: expected a JSON array");
  std::vector<SpeakerReference> refs;
  for (const auto& j : root) {
    SpeakerReference ref;
    try {
      ref.speaker = j.at("speaker").get<std::string>();
      for (const auto& x : j.at("mean_embedding")) ref.mean_embedding.push_back(static_cast<float>(x.get<double>()));
      ref.n_samples = j.at("n_samples").get<std::uint32_t>();
      ref.seed = j.value("seed", std::uint64_t{0});
    } catch (const json::exception& e) {
      fail(Errc::parse_error, std::string("speaker references: ") + e.what());
    }
    if (ref.n_samples < 1) fail(Errc::parse_error, "speaker reference '" + ref.speaker + "': n_samples < 1");
    for (float x : ref.mean_embedding) {
      if (!std::isfinite(x)) fail(Errc::parse_error, "speaker reference '" + ref.speaker + "' is not finite");
    }
    refs.push_back(std::move(ref));
  }
  return refs;
}

std::string serialize_speaker_references(std::span<const SpeakerReference> refs) {
  nlohmann::ordered_json root = nlohmann::ordered_json::array();
  for (const auto& ref : refs) {
    nlohmann::ordered_json j;
    j["speaker"] = ref.speaker;
    j["n_samples"] = ref.n_samples;
    j["seed"] = ref.seed;
    auto& mean = j["mean_embedding"] = nlohmann::ordered_json::array();
    for (float x : ref.mean_embedding) mean.push_back(static_cast<double>(x));
    root.push_back(std::move(j));
  }
  return root.dump() + "\n";
}

std::vector<SpeakerReference> read_speaker_references(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_speaker_references(buffer.str());
}

namespace {

// Linear interpolation between order statistics of sorted values.
double sorted_quantile(const std::vector<double>& sorted, double level) {
  const double h = level * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::optional<std::vector<double>> resample_voiced(const F0Contour& contour, std::uint32_t n_points) {
  std::vector<std::pair<double, double>> voiced;
  for (const auto& f : contour) {
    if (f.voiced) voiced.emplace_back(f.time_s, f.f0_hz);
  }
  if (voiced.size() < 2) return std::nullopt;
  std::stable_sort(voiced.begin(), voiced.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const double t0 = voiced.front().first;
  const double span = voiced.back().first - t0;
  if (!(span > 0.0)) return std::nullopt;
  std::vector<double> out(n_points);
  std::size_t seg = 0;
  for (std::uint32_t p = 0; p < n_points; ++p) {
    const double target = t0 + span * static_cast<double>(p) / static_cast<double>(n_points - 1);
    while (seg + 2 < voiced.size() && voiced[seg + 1].first < target) ++seg;
    const auto& [ta, fa] = voiced[seg];
    const auto& [tb, fb] = voiced[seg + 1];
    if (p == n_points - 1) {
      out[p] = voiced.back().second;
    } else if (tb > ta) {
      const double w = std::clamp((target - ta) / (tb - ta), 0.0, 1.0);
      out[p] = fa + w * (fb - fa);
    } else {
      out[p] = fa;
    }
  }
  return out;
}

}  // namespace

F0EnsembleSummary f0_ensemble_summary(std::span<const F0Contour> contours, std::uint32_t n_points,
                                      std::vector<double> levels) {
  if (n_points < 2) fail(Errc::invalid_argument, "f0_ensemble_summary: n_points must be >= 2");
  if (levels.empty()) fail(Errc::invalid_argument, "f0_ensemble_summary: no quantile levels");
  for (double q : levels) {
    if (!(q > 0.0 && q < 1.0)) {
      fail(Errc::invalid_argument, "f0_ensemble_summary: quantile levels must lie in (0, 1)");
    }
  }
  std::sort(levels.begin(), levels.end());

  F0EnsembleSummary summary;
  summary.n_points = n_points;
  summary.quantile_levels = levels;
  std::vector<std::vector<double>> resampled;
  for (std::size_t i = 0; i < contours.size(); ++i) {
    if (auto r = resample_voiced(contours[i], n_points)) {
      resampled.push_back(std::move(*r));
    } else {
      summary.skipped.push_back(i);
    }
  }
  if (resampled.empty()) {
    fail(Errc::invalid_argument, "f0_ensemble_summary: no contour has at least 2 voiced frames");
  }
  summary.n_contours = static_cast<std::uint32_t>(resampled.size());
  summary.grid.resize(static_cast<Eigen::Index>(levels.size()), n_points);
  std::vector<double> column(resampled.size());
  for (std::uint32_t p = 0; p < n_points; ++p) {
    for (std::size_t c = 0; c < resampled.size(); ++c) column[c] = resampled[c][p];
    std::sort(column.begin(), column.end());
    for (std::size_t q = 0; q < levels.size(); ++q) {
      summary.grid(static_cast<Eigen::Index>(q), p) = sorted_quantile(column, levels[q]);
    }
  }
  return summary;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    fail(Errc::dimension_mismatch, "pearson: lengths " + std::to_string(x.size()) + " and " +
                                       std::to_string(y.size()));
  }
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationReport feature_pc_correlation(const std::map<std::string, std::vector<double>>& features,
                                         std::span<const double> pc_scores) {
  if (pc_scores.size() < 3) {
    fail(Errc::invalid_argument, "feature_pc_correlation: need at least 3 samples");
  }
  CorrelationReport report;
  for (const auto& [name, column] : features) {
    if (column.size() != pc_scores.size()) {
      fail(Errc::dimension_mismatch, "feature_pc_correlation: feature '" + name + "' has " +
                                         std::to_string(column.size()) + " values, scores have " +
                                         std::to_string(pc_scores.size()));
    }
    if (auto r = pearson(column, pc_scores)) {
      report.ranked.push_back({name, *r});
    } else {
      report.undefined.push_back(name);
    }
  }
  std::sort(report.ranked.begin(), report.ranked.end(),
            [](const FeatureCorrelation& a, const FeatureCorrelation& b) {
              const double ra = std::abs(a.r), rb = std::abs(b.r);
              if (ra != rb) return ra > rb;
              return a.name < b.name;
            });
  return report;
}

}  // namespace enrolkit
