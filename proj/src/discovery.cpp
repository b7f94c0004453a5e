#include "enrolkit/discovery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "enrolkit/error.hpp"
#include "enrolkit/metrics.hpp"
#include "enrolkit/random.hpp"
#include "json.hpp"

namespace enrolkit {

namespace {

using Index = Eigen::Index;

std::vector<std::uint32_t> nearest_centroids(const Eigen::MatrixXd& points,
                                             const Eigen::MatrixXd& centroids) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t arg = 0;
    for (Index c = 0; c < centroids.rows(); ++c) {
      const double d = (points.row(i) - centroids.row(c)).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::uint32_t>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

Eigen::MatrixXd plus_plus_init(const Eigen::MatrixXd& points, std::uint32_t k, Rng& rng) {
  const Index n = points.rows();
  Eigen::MatrixXd centroids(k, points.cols());
  std::vector<bool> chosen(static_cast<std::size_t>(n), false);
  Index first = static_cast<Index>(rng.uniform_below(static_cast<std::uint64_t>(n)));
  centroids.row(0) = points.row(first);
  chosen[static_cast<std::size_t>(first)] = true;
  Eigen::VectorXd dist2 = (points.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (std::uint32_t c = 1; c < k; ++c) {
    const double total = dist2.sum();
    Index pick = -1;
    if (total > 0.0) {
      const double target = rng.uniform01() * total;
      double acc = 0.0;
      for (Index i = 0; i < n; ++i) {
        acc += dist2[i];
        if (dist2[i] > 0.0 && acc > target) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {
        for (Index i = n - 1; i >= 0; --i) {
          if (dist2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // All remaining mass is zero (duplicates): take an unchosen point.
      std::vector<Index> free;
      for (Index i = 0; i < n; ++i) {
        if (!chosen[static_cast<std::size_t>(i)]) free.push_back(i);
      }
      pick = free[rng.uniform_below(free.size())];
    }
    chosen[static_cast<std::size_t>(pick)] = true;
    centroids.row(c) = points.row(pick);
    dist2 = dist2.cwiseMin((points.rowwise() - centroids.row(c)).rowwise().squaredNorm());
  }
  return centroids;
}

// Recomputes centroids as member means; empty clusters take the point
// farthest from its current centroid (from a cluster that can spare it).
void update_centroids(const Eigen::MatrixXd& points, Eigen::MatrixXd& centroids,
                      std::vector<std::uint32_t>& assignments) {
  const auto k = static_cast<std::size_t>(centroids.rows());
  std::vector<std::size_t> counts(k, 0);
  for (auto a : assignments) ++counts[a];
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] > 0) continue;
    double far = -1.0;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < assignments.size(); ++i) {
      if (counts[assignments[i]] < 2) continue;
      const double d = (points.row(static_cast<Index>(i)) - centroids.row(assignments[i])).squaredNorm();
      if (d > far) {
        far = d;
        pick = i;
      }
    }
    --counts[assignments[pick]];
    assignments[pick] = static_cast<std::uint32_t>(c);
    counts[c] = 1;
    centroids.row(static_cast<Index>(c)) = points.row(static_cast<Index>(pick));
  }
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Index>(k), points.cols());
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    sums.row(assignments[i]) += points.row(static_cast<Index>(i));
  }
  for (std::size_t c = 0; c < k; ++c) {
    centroids.row(static_cast<Index>(c)) = sums.row(static_cast<Index>(c)) / static_cast<double>(counts[c]);
  }
}

double inertia_of(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centroids,
                  const std::vector<std::uint32_t>& assignments) {
  double total = 0.0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    total += (points.row(static_cast<Index>(i)) - centroids.row(assignments[i])).squaredNorm();
  }
  return total;
}

// Single-point transfers that lower the inertia, accounting for the centroid
// shift of both clusters. Lloyd's nearest-centroid rule misses these.
bool transfer_pass(const Eigen::MatrixXd& points, Eigen::MatrixXd& centroids,
                   std::vector<std::uint32_t>& assignments) {
  const auto k = static_cast<std::size_t>(centroids.rows());
  std::vector<double> counts(k, 0.0);
  for (auto a : assignments) counts[a] += 1.0;
  bool moved = false;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    const std::uint32_t from = assignments[i];
    if (counts[from] < 2.0) continue;
    const auto x = points.row(static_cast<Index>(i));
    const double leave = counts[from] / (counts[from] - 1.0) * (x - centroids.row(from)).squaredNorm();
    double best = leave;
    std::uint32_t to = from;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == from) continue;
      const double join = counts[c] / (counts[c] + 1.0) * (x - centroids.row(static_cast<Index>(c))).squaredNorm();
      if (join < best - 1e-12 * leave) {
        best = join;
        to = static_cast<std::uint32_t>(c);
      }
    }
    if (to == from) continue;
    centroids.row(from) = (centroids.row(from) * counts[from] - x) / (counts[from] - 1.0);
    centroids.row(to) = (centroids.row(to) * counts[to] + x) / (counts[to] + 1.0);
    counts[from] -= 1.0;
    counts[to] += 1.0;
    assignments[i] = to;
    moved = true;
  }
  return moved;
}

ClusterModel lloyd(const Eigen::MatrixXd& points, std::uint32_t k, std::uint64_t seed,
                   std::uint32_t max_iter) {
  Rng rng(seed);
  ClusterModel model;
  model.k = k;
  model.seed = seed;
  model.centroids = plus_plus_init(points, k, rng);
  model.assignments = nearest_centroids(points, model.centroids);
  for (std::uint32_t it = 0; it < max_iter; ++it) {
    model.iterations = it + 1;
    update_centroids(points, model.centroids, model.assignments);
    auto next = nearest_centroids(points, model.centroids);
    if (next == model.assignments) break;
    model.assignments = std::move(next);
  }
  update_centroids(points, model.centroids, model.assignments);
  for (std::uint32_t pass = 0; pass < max_iter && transfer_pass(points, model.centroids, model.assignments); ++pass) {
  }
  update_centroids(points, model.centroids, model.assignments);
  model.inertia = inertia_of(points, model.centroids, model.assignments);
  return model;
}

// Inputs with at most this many labelings are solved exactly.
constexpr double kExactSearchLimit = 1 << 16;

// Minimum-inertia partition into exactly k non-empty clusters, by
// enumerating restricted-growth labelings.
std::vector<std::uint32_t> exact_partition(const Eigen::MatrixXd& points, std::uint32_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  std::vector<std::uint32_t> labels(n, 0), best;
  double best_inertia = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd centroids(k, points.cols());
  auto visit = [&](auto&& self, std::size_t i, std::uint32_t used) -> void {
    if (n - i < k - used) return;
    if (i == n) {
      auto a = labels;
      update_centroids(points, centroids, a);
      const double inertia = inertia_of(points, centroids, a);
      if (inertia < best_inertia) {
        best_inertia = inertia;
        best = labels;
      }
      return;
    }
    for (std::uint32_t c = 0; c <= std::min(used, k - 1); ++c) {
      labels[i] = c;
      self(self, i + 1, std::max(used, c + 1));
    }
  };
  visit(visit, 0, 0);
  return best;
}

}  // namespace

std::vector<std::uint32_t> ClusterModel::sizes() const {
  std::vector<std::uint32_t> out(k, 0);
  for (auto a : assignments) ++out[a];
  return out;
}

ClusterModel kmeans(const Eigen::MatrixXd& points, std::uint32_t k, std::uint64_t seed,
                    std::uint32_t max_iter, std::uint32_t n_init) {
  if (k < 2) fail(Errc::invalid_argument, "kmeans: k must be >= 2");
  if (points.rows() < static_cast<Index>(k)) {
    fail(Errc::invalid_argument, "kmeans: " + std::to_string(points.rows()) +
                                     " points for k = " + std::to_string(k));
  }
  if (n_init < 1) fail(Errc::invalid_argument, "kmeans: n_init must be >= 1");
  if (!points.allFinite()) fail(Errc::invalid_argument, "kmeans: non-finite input");
  std::optional<ClusterModel> best;
  for (std::uint32_t r = 0; r < n_init; ++r) {
    ClusterModel candidate = lloyd(points, k, seed + r, max_iter);
    candidate.restart = r;
    if (!best || candidate.inertia < best->inertia) best = std::move(candidate);
  }
  if (std::pow(static_cast<double>(k), static_cast<double>(points.rows())) <= kExactSearchLimit) {
    ClusterModel exact = *best;
    exact.assignments = exact_partition(points, k);
    exact.iterations = 0;
    update_centroids(points, exact.centroids, exact.assignments);
    exact.inertia = inertia_of(points, exact.centroids, exact.assignments);
    if (exact.inertia < best->inertia * (1.0 - 1e-12)) best = std::move(exact);
  }
  best->seed = seed;
  return std::move(*best);
}

ClusterModel order_clusters(ClusterModel model) {
  std::vector<std::uint32_t> order(model.k);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    for (Index d = 0; d < model.centroids.cols(); ++d) {
      const double x = model.centroids(a, d), y = model.centroids(b, d);
      if (x != y) return x < y;
    }
    return false;
  });
  std::vector<std::uint32_t> new_index(model.k);
  Eigen::MatrixXd centroids(model.centroids.rows(), model.centroids.cols());
  for (std::uint32_t pos = 0; pos < model.k; ++pos) {
    new_index[order[pos]] = pos;
    centroids.row(pos) = model.centroids.row(order[pos]);
  }
  for (auto& a : model.assignments) a = new_index[a];
  model.centroids = std::move(centroids);
  return model;
}

std::string_view to_string(BinMode mode) {
  return mode == BinMode::equal_width ? "equal_width" : "equal_count";
}

BinMode parse_bin_mode(std::string_view name) {
  if (name == "equal_width") return BinMode::equal_width;
  if (name == "equal_count") return BinMode::equal_count;
  fail(Errc::invalid_argument, "unknown bin mode '" + std::string(name) + "'");
}

std::uint32_t BinSpec::bin_of(double score) const {
  if (score <= edges.front()) return 0;
  if (score >= edges.back()) return n_bins - 1;
  const auto it = std::upper_bound(edges.begin() + 1, edges.end() - 1, score);
  return static_cast<std::uint32_t>(it - (edges.begin() + 1));
}

std::vector<std::uint32_t> BinSpec::sizes() const {
  std::vector<std::uint32_t> out(n_bins, 0);
  for (auto a : assignments) ++out[a];
  return out;
}

std::vector<std::string> default_bin_labels(std::uint32_t n_bins) {
  if (n_bins == 3) return {"low intensity", "medium intensity", "high intensity"};
  std::vector<std::string> labels;
  for (std::uint32_t b = 0; b < n_bins; ++b) labels.push_back("bin " + std::to_string(b + 1));
  return labels;
}

BinSpec bin_axis(const Projection& projection, std::uint32_t axis, std::uint32_t n_bins, BinMode mode) {
  if (n_bins < 2) fail(Errc::invalid_argument, "bin_axis: n_bins must be >= 2");
  if (axis >= projection.scores.cols()) {
    fail(Errc::invalid_argument, "bin_axis: axis " + std::to_string(axis) + " but projection has " +
                                     std::to_string(projection.scores.cols()) + " components");
  }
  const Index n = projection.scores.rows();
  if (static_cast<Index>(n_bins) > n) {
    fail(Errc::invalid_argument, "bin_axis: " + std::to_string(n_bins) + " bins for " +
                                     std::to_string(n) + " scores");
  }
  std::vector<double> scores(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) scores[static_cast<std::size_t>(i)] = projection.scores(i, axis);
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front(), hi = sorted.back();
  if (!(hi > lo)) fail(Errc::invalid_argument, "bin_axis: scores on axis " + std::to_string(axis) + " have zero range");

  BinSpec spec;
  spec.axis = axis;
  spec.n_bins = n_bins;
  spec.mode = mode;
  spec.edges.resize(n_bins + 1);
  spec.edges.front() = lo;
  spec.edges.back() = hi;
  for (std::uint32_t b = 1; b < n_bins; ++b) {
    const double q = static_cast<double>(b) / n_bins;
    if (mode == BinMode::equal_width) {
      spec.edges[b] = lo + (hi - lo) * q;
    } else {
      const double h = q * static_cast<double>(sorted.size() - 1);
      const auto i = static_cast<std::size_t>(std::floor(h));
      const std::size_t j = std::min(i + 1, sorted.size() - 1);
      spec.edges[b] = sorted[i] + (h - static_cast<double>(i)) * (sorted[j] - sorted[i]);
    }
  }
  for (std::uint32_t b = 0; b < n_bins; ++b) {
    if (!(spec.edges[b + 1] > spec.edges[b])) {
      fail(Errc::invalid_argument, "bin_axis: degenerate bin edges (repeated values on axis " +
                                       std::to_string(axis) + ")");
    }
  }
  spec.assignments.reserve(scores.size());
  for (double s : scores) spec.assignments.push_back(spec.bin_of(s));
  spec.labels = default_bin_labels(n_bins);
  return spec;
}

Embedding exemplar_mean(std::span<const Embedding> members, std::uint32_t sample_n, std::uint64_t seed) {
  if (members.empty()) fail(Errc::invalid_argument, "exemplar_mean: empty member list");
  if (sample_n == 0) fail(Errc::invalid_argument, "exemplar_mean: sample_n must be >= 1");
  const std::size_t dim = members.front().size();
  const auto picked = sample_without_replacement(members.size(), sample_n, seed);
  std::vector<double> acc(dim, 0.0);
  for (std::size_t idx : picked) {
    if (members[idx].size() != dim) fail(Errc::dimension_mismatch, "exemplar_mean: ragged members");
    for (std::size_t d = 0; d < dim; ++d) acc[d] += members[idx][d];
  }
  Embedding out(dim);
  for (std::size_t d = 0; d < dim; ++d) out[d] = static_cast<float>(acc[d] / static_cast<double>(picked.size()));
  return out;
}

std::string serialize_labels(std::span<const ExemplarLabel> labels) {
  using json = nlohmann::ordered_json;
  json root = json::array();
  for (const auto& l : labels) {
    json j;
    j["label_id"] = l.label_id;
    j["phrase"] = l.phrase;
    j["provenance"] = {{"iteration", l.provenance.iteration},
                       {"kind", l.provenance.kind == GroupKind::cluster ? "cluster" : "bin"},
                       {"index", l.provenance.index},
                       {"sample_n", l.provenance.sample_n},
                       {"seed", l.provenance.seed}};
    json e = json::array();
    for (float x : l.exemplar) e.push_back(static_cast<double>(x));
    j["exemplar"] = std::move(e);
    root.push_back(std::move(j));
  }
  return root.dump() + "\n";
}

std::vector<ExemplarLabel> parse_labels(std::string_view json_text) {
  using json = nlohmann::json;
  std::vector<ExemplarLabel> labels;
  try {
    const json root = json::parse(json_text);
    if (!root.is_array()) fail(Errc::parse_error, "labels: expected a JSON array");
    for (const auto& j : root) {
      ExemplarLabel l;
      l.label_id = j.at("label_id").get<std::string>();
      l.phrase = j.value("phrase", std::string{});
      for (const auto& x : j.at("exemplar")) l.exemplar.push_back(static_cast<float>(x.get<double>()));
      if (auto it = j.find("provenance"); it != j.end()) {
        l.provenance.iteration = it->value("iteration", 0u);
        const auto kind = it->value("kind", std::string("cluster"));
        if (kind != "cluster" && kind != "bin") fail(Errc::parse_error, "labels: unknown kind '" + kind + "'");
        l.provenance.kind = kind == "bin" ? GroupKind::bin : GroupKind::cluster;
        l.provenance.index = it->value("index", 0u);
        l.provenance.sample_n = it->value("sample_n", kDefaultExemplarSamples);
        l.provenance.seed = it->value("seed", std::uint64_t{0});
      }
      labels.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    fail(Errc::parse_error, std::string("labels: ") + e.what());
  }
  return labels;
}

std::vector<ExemplarLabel> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_labels(buffer.str());
}

ExemplarAssignment assign_by_exemplar(std::span<const float> embedding,
                                      std::span<const ExemplarLabel> labels) {
  if (labels.empty()) fail(Errc::invalid_argument, "assign_by_exemplar: no labels");
  const bool zero = std::all_of(embedding.begin(), embedding.end(), [](float x) { return x == 0.0f; });
  if (zero) fail(Errc::invalid_argument, "assign_by_exemplar: embedding has zero norm");
  const ExemplarLabel* best = nullptr;
  double best_distance = 0.0;
  for (const auto& label : labels) {
    double distance = 0.0;
    try {
      distance = 1.0 - cosine_similarity(embedding, label.exemplar);
    } catch (const Error& e) {
      throw Error(e.code(), "assign_by_exemplar: label '" + label.label_id + "': " + e.what());
    }
    if (!best || distance < best_distance ||
        (distance == best_distance && label.label_id < best->label_id)) {
      best = &label;
      best_distance = distance;
    }
  }
  return {best->label_id, best_distance};
}

std::optional<std::string> categorize_ground_truth(const GroundTruthLabels& labels) {
  if (!labels.emotion) return std::nullopt;
  if (*labels.emotion == Emotion::neutral) return std::string(kNeutralCategory);
  if (labels.intensity && *labels.intensity > kHighIntensityAbove) {
    return std::string(kHighIntensityCategory);
  }
  return std::string(kLowIntensityCategory);
}

ConfusionTable confusion_table(const std::map<std::string, std::string>& assignments,
                               const std::map<std::string, std::string>& ground_truth,
                               std::vector<std::string> column_order) {
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::set<std::string> labels;
  std::size_t matched = 0;
  for (const auto& [id, label] : assignments) {
    auto it = ground_truth.find(id);
    if (it == ground_truth.end()) continue;
    ++counts[it->second][label];
    labels.insert(label);
    ++matched;
  }
  if (matched == 0) fail(Errc::invalid_argument, "confusion_table: no ids in common");

  ConfusionTable table;
  for (auto canonical : {kNeutralCategory, kLowIntensityCategory, kHighIntensityCategory}) {
    if (counts.contains(std::string(canonical))) table.row_names.emplace_back(canonical);
  }
  for (const auto& [category, _] : counts) {
    if (std::find(table.row_names.begin(), table.row_names.end(), category) == table.row_names.end()) {
      table.row_names.push_back(category);
    }
  }
  if (column_order.empty()) {
    table.col_names.assign(labels.begin(), labels.end());
  } else {
    for (const auto& l : labels) {
      if (std::find(column_order.begin(), column_order.end(), l) == column_order.end()) {
        fail(Errc::invalid_argument, "confusion_table: label '" + l + "' missing from column order");
      }
    }
    table.col_names = std::move(column_order);
  }
  table.percentages = Eigen::MatrixXd::Zero(static_cast<Index>(table.row_names.size()),
                                            static_cast<Index>(table.col_names.size()));
  for (std::size_t r = 0; r < table.row_names.size(); ++r) {
    const auto& row = counts[table.row_names[r]];
    std::size_t total = 0;
    for (const auto& [_, c] : row) total += c;
    table.row_counts.push_back(total);
    for (std::size_t c = 0; c < table.col_names.size(); ++c) {
      auto it = row.find(table.col_names[c]);
      if (it == row.end()) continue;
      table.percentages(static_cast<Index>(r), static_cast<Index>(c)) =
          100.0 * static_cast<double>(it->second) / static_cast<double>(total);
    }
  }
  return table;
}

csv::Table confusion_csv(const ConfusionTable& table) {
  csv::Table out;
  out.header.push_back("category");
  for (const auto& c : table.col_names) out.header.push_back(c);
  out.header.push_back("n");
  for (std::size_t r = 0; r < table.row_names.size(); ++r) {
    std::vector<std::string> row{table.row_names[r]};
    for (std::size_t c = 0; c < table.col_names.size(); ++c) {
      row.push_back(csv::number(table.percentages(static_cast<Index>(r), static_cast<Index>(c))));
    }
    row.push_back(std::to_string(table.row_counts[r]));
    out.rows.push_back(std::move(row));
  }
  return out;
}

double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.size() != b.size()) fail(Errc::dimension_mismatch, "adjusted_rand_index: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> joint;
  std::map<std::uint32_t, double> rows, cols;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1.0;
    rows[a[i]] += 1.0;
    cols[b[i]] += 1.0;
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& [_, c] : joint) index += pairs(c);
  for (const auto& [_, c] : rows) sum_rows += pairs(c);
  for (const auto& [_, c] : cols) sum_cols += pairs(c);
  const double expected = sum_rows * sum_cols / pairs(static_cast<double>(n));
  const double max_index = 0.5 * (sum_rows + sum_cols);
  if (max_index == expected) return index == expected ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

double cluster_purity(std::span<const std::uint32_t> clusters, std::span<const std::uint32_t> truth) {
  if (clusters.size() != truth.size()) fail(Errc::dimension_mismatch, "cluster_purity: length mismatch");
  if (clusters.empty()) fail(Errc::invalid_argument, "cluster_purity: empty input");
  std::map<std::uint32_t, std::map<std::uint32_t, std::size_t>> counts;
  for (std::size_t i = 0; i < clusters.size(); ++i) ++counts[clusters[i]][truth[i]];
  std::size_t agree = 0;
  for (const auto& [_, row] : counts) {
    std::size_t best = 0;
    for (const auto& [__, c] : row) best = std::max(best, c);
    agree += best;
  }
  return static_cast<double>(agree) / static_cast<double>(clusters.size());
}

}  // namespace enrolkit
