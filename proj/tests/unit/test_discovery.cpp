#include <set>

#include "doctest.h"
#include "enrolkit/discovery.hpp"
#include "enrolkit/error.hpp"
#include "support/oracles.hpp"

using namespace enrolkit;

namespace {

Projection one_axis(const std::vector<double>& values) {
  Projection p;
  p.scores.resize(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) p.scores(static_cast<Eigen::Index>(i), 0) = values[i];
  return p;
}

ExemplarLabel label(std::string id, Embedding e) {
  ExemplarLabel l;
  l.label_id = std::move(id);
  l.exemplar = std::move(e);
  return l;
}

}  // namespace

TEST_CASE("kmeans examples") {
  SUBCASE("separated pairs, any seed") {
    Eigen::MatrixXd x(4, 2);
    x << 0, 0, 10, 0, 0.1, 0, 10.1, 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto m = kmeans(x, 2, seed);
      CHECK(m.assignments[0] == m.assignments[2]);
      CHECK(m.assignments[1] == m.assignments[3]);
      CHECK(m.assignments[0] != m.assignments[1]);
    }
  }
  SUBCASE("1-d points") {
    Eigen::MatrixXd x(4, 1);
    x << 0, 1, 9, 10;
    const auto m = kmeans(x, 2, 1);
    CHECK(m.inertia == doctest::Approx(1.0));
    CHECK(m.inertia == doctest::Approx(oracle::best_partition_inertia(x, 2)));
    CHECK(m.assignments[0] == m.assignments[1]);
    CHECK(m.assignments[2] == m.assignments[3]);
  }
  SUBCASE("k equals N") {
    Eigen::MatrixXd x(3, 2);
    x << 0, 0, 1, 1, 5, 2;
    const auto m = kmeans(x, 3, 4);
    CHECK(m.inertia == doctest::Approx(0.0));
    CHECK(std::set<std::uint32_t>(m.assignments.begin(), m.assignments.end()).size() == 3);
  }
  SUBCASE("errors") {
    Eigen::MatrixXd x(2, 1);
    x << 0, 1;
    CHECK_THROWS_AS(kmeans(x, 3, 0), Error);
    CHECK_THROWS_AS(kmeans(x, 1, 0), Error);
  }
}

TEST_CASE("kmeans model invariants on random data") {
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    const auto n = static_cast<Eigen::Index>(3 + rng.uniform_below(6));
    const auto k = static_cast<std::uint32_t>(2 + rng.uniform_below(std::min<std::uint64_t>(2, n - 1)));
    Eigen::MatrixXd x = fixture::random_matrix(rng, n, 2);
    if (trial % 5 == 0) x.row(1) = x.row(0);  // duplicated points
    const auto m = kmeans(x, k, trial);

    std::vector<int> labels(m.assignments.begin(), m.assignments.end());
    CHECK(m.inertia == doctest::Approx(oracle::partition_inertia(x, labels, static_cast<int>(k))).epsilon(1e-9));
    for (auto s : m.sizes()) CHECK(s > 0);
    for (auto a : m.assignments) CHECK(a < k);
    // Lloyd fixed point: each point sits with its nearest centroid
    for (Eigen::Index i = 0; i < n; ++i) {
      const double own = (x.row(i) - m.centroids.row(m.assignments[i])).squaredNorm();
      for (std::uint32_t c = 0; c < k; ++c) CHECK(own <= (x.row(i) - m.centroids.row(c)).squaredNorm() + 1e-9);
    }
    // determinism
    CHECK(kmeans(x, k, trial).assignments == m.assignments);
  }
}

TEST_CASE("cluster ordering is canonical") {
  Eigen::MatrixXd x(6, 2);
  x << 5, 0, 5.1, 0, -5, 1, -5.1, 1, 0, 9, 0.1, 9;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto m = order_clusters(kmeans(x, 3, seed));
    CHECK(m.assignments == std::vector<std::uint32_t>{2, 2, 0, 0, 1, 1});
    for (Eigen::Index c = 1; c < 3; ++c) CHECK(m.centroids(c - 1, 0) <= m.centroids(c, 0));
  }
}

TEST_CASE("bin_axis examples") {
  SUBCASE("ten values, two equal-width bins") {
    const auto spec = bin_axis(one_axis({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}), 0, 2);
    CHECK(spec.edges == std::vector<double>{0, 4.5, 9});
    CHECK(spec.sizes() == std::vector<std::uint32_t>{5, 5});
    CHECK(spec.labels == std::vector<std::string>{"bin 1", "bin 2"});
  }
  SUBCASE("outlier separates the modes") {
    const auto p = one_axis({0, 1, 2, 100});
    CHECK(bin_axis(p, 0, 2, BinMode::equal_width).sizes() == std::vector<std::uint32_t>{3, 1});
    CHECK(bin_axis(p, 0, 2, BinMode::equal_count).sizes() == std::vector<std::uint32_t>{2, 2});
  }
  SUBCASE("three bins get intensity labels") {
    const auto spec = bin_axis(one_axis({0, 1, 2, 3, 4, 5}), 0, 3);
    CHECK(spec.labels == std::vector<std::string>{"low intensity", "medium intensity", "high intensity"});
    CHECK(spec.assignments == std::vector<std::uint32_t>{0, 0, 1, 1, 2, 2});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(bin_axis(one_axis({2, 2, 2}), 0, 2), Error);
    CHECK_THROWS_AS(bin_axis(one_axis({0, 1}), 0, 3), Error);
    CHECK_THROWS_AS(bin_axis(one_axis({0, 1, 2}), 1, 2), Error);
    CHECK_THROWS_AS(bin_axis(one_axis({0, 1, 2}), 0, 1), Error);
    CHECK_THROWS_AS(bin_axis(one_axis({0, 0, 0, 0, 1}), 0, 4, BinMode::equal_count), Error);
  }
}

TEST_CASE("bins are monotone and consistent with edges") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.uniform_below(60);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal() * 3;
    const auto n_bins = static_cast<std::uint32_t>(2 + rng.uniform_below(4));
    const auto mode = trial % 2 ? BinMode::equal_count : BinMode::equal_width;
    const auto spec = bin_axis(one_axis(v), 0, n_bins, mode);
    REQUIRE(spec.edges.size() == n_bins + 1);
    for (std::size_t e = 1; e < spec.edges.size(); ++e) CHECK(spec.edges[e - 1] < spec.edges[e]);
    for (std::size_t i = 0; i < n; ++i) {
      const auto b = spec.assignments[i];
      CHECK(v[i] >= spec.edges[b]);
      if (b + 1 < n_bins) CHECK(v[i] < spec.edges[b + 1]);
      else CHECK(v[i] <= spec.edges[b + 1]);
      for (std::size_t j = 0; j < n; ++j)
        if (v[i] < v[j]) CHECK(spec.assignments[i] <= spec.assignments[j]);
    }
    CHECK(spec.bin_of(spec.edges.front() - 100) == 0);
    CHECK(spec.bin_of(spec.edges.back() + 100) == n_bins - 1);
  }
}

TEST_CASE("exemplar means") {
  const std::vector<Embedding> one{{3, 4}};
  CHECK(exemplar_mean(one, 50, 1) == Embedding{3, 4});

  const std::vector<Embedding> few{{0, 0}, {2, 0}, {4, 6}};
  CHECK(exemplar_mean(few, 50, 9) == Embedding{2, 2});

  Rng rng(44);
  std::vector<Embedding> many;
  for (int i = 0; i < 120; ++i) many.push_back(fixture::random_vector(rng, 4));
  const auto got = exemplar_mean(many, 50, 777);
  CHECK(got == exemplar_mean(many, 50, 777));
  const auto perm = oracle::seeded_shuffle(many.size(), 777);
  for (int j = 0; j < 4; ++j) {
    double acc = 0;
    for (int i = 0; i < 50; ++i) acc += many[perm[i]][j];
    CHECK(got[j] == doctest::Approx(acc / 50).epsilon(1e-6));
  }
  CHECK_THROWS_AS(exemplar_mean(std::vector<Embedding>{}, 50, 0), Error);
}

TEST_CASE("assign by exemplar") {
  const std::vector<ExemplarLabel> labels{label("b", {0, 1}), label("a", {1, 0})};
  const auto hit = assign_by_exemplar(Embedding{0.0f, 2.0f}, labels);
  CHECK(hit.label_id == "b");
  CHECK(hit.cosine_distance == doctest::Approx(0.0));
  CHECK(assign_by_exemplar(Embedding{1.0f, 0.1f}, labels).label_id == "a");

  const std::vector<ExemplarLabel> twins{label("z", {1, 1}), label("m", {1, 1})};
  CHECK(assign_by_exemplar(Embedding{1.0f, 1.0f}, twins).label_id == "m");

  CHECK_THROWS_AS(assign_by_exemplar(Embedding{0.0f, 0.0f}, labels), Error);
  CHECK_THROWS_AS(assign_by_exemplar(Embedding{1.0f, 0.0f}, std::vector<ExemplarLabel>{}), Error);

  Rng rng(6);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ExemplarLabel> ls;
    for (int l = 0; l < 4; ++l) ls.push_back(label("l" + std::to_string(l), fixture::random_vector(rng, 5)));
    auto e = fixture::random_vector(rng, 5);
    const auto base = assign_by_exemplar(e, ls);
    const float scale = static_cast<float>(0.01 + 100 * rng.uniform01());
    for (auto& x : e) x *= scale;
    CHECK(assign_by_exemplar(e, ls).label_id == base.label_id);
  }
}

TEST_CASE("labels JSON round trip") {
  ExemplarLabel l = label("low-intensity", {0.5f, -0.25f});
  l.phrase = "low intensity";
  l.provenance = {2, GroupKind::bin, 0, 50, 99};
  const std::vector<ExemplarLabel> labels{l, label("cluster-1", {1, 2})};
  CHECK(parse_labels(serialize_labels(labels)) == labels);
}

TEST_CASE("ground-truth categories") {
  CHECK(categorize_ground_truth({Emotion::neutral, std::nullopt}) == std::string(kNeutralCategory));
  CHECK(categorize_ground_truth({Emotion::angry, 3}) == std::string(kLowIntensityCategory));
  CHECK(categorize_ground_truth({Emotion::angry, 4}) == std::string(kHighIntensityCategory));
  CHECK(categorize_ground_truth({Emotion::happy, 1}) == std::string(kLowIntensityCategory));
  CHECK(categorize_ground_truth({Emotion::sad, 5}) == std::string(kHighIntensityCategory));
  CHECK_FALSE(categorize_ground_truth({std::nullopt, std::nullopt}));
}

TEST_CASE("confusion tables") {
  SUBCASE("perfect mapping") {
    const std::map<std::string, std::string> assigned{{"1", "a"}, {"2", "b"}, {"3", "c"}};
    const std::map<std::string, std::string> truth{
        {"1", std::string(kNeutralCategory)}, {"2", std::string(kLowIntensityCategory)}, {"3", std::string(kHighIntensityCategory)}};
    const auto t = confusion_table(assigned, truth);
    CHECK(t.row_names == std::vector<std::string>{"Neutral", "Emotion - low intensity", "Emotion - high intensity"});
    CHECK(t.col_names == std::vector<std::string>{"a", "b", "c"});
    CHECK((t.percentages - 100.0 * Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("uniform split") {
    const std::map<std::string, std::string> assigned{{"1", "a"}, {"2", "b"}, {"3", "c"}};
    const std::map<std::string, std::string> truth{{"1", "Neutral"}, {"2", "Neutral"}, {"3", "Neutral"}, {"4", "Neutral"}};
    const auto t = confusion_table(assigned, truth);
    for (int c = 0; c < 3; ++c) CHECK(t.percentages(0, c) == doctest::Approx(100.0 / 3));
    CHECK(t.row_counts == std::vector<std::size_t>{3});
    const auto csv_table = confusion_csv(t);
    CHECK(csv_table.header == std::vector<std::string>{"category", "a", "b", "c", "n"});
  }
  SUBCASE("rows sum to 100") {
    Rng rng(10);
    const std::vector<std::string> cats{"Neutral", "Emotion - low intensity", "Emotion - high intensity", "Other"};
    for (int trial = 0; trial < 100; ++trial) {
      std::map<std::string, std::string> assigned, truth;
      const auto n = 1 + rng.uniform_below(80);
      for (std::uint64_t i = 0; i < n; ++i) {
        assigned[std::to_string(i)] = "l" + std::to_string(rng.uniform_below(5));
        truth[std::to_string(i)] = cats[rng.uniform_below(cats.size())];
      }
      const auto t = confusion_table(assigned, truth);
      for (Eigen::Index r = 0; r < t.percentages.rows(); ++r) {
        CHECK(t.percentages.row(r).sum() == doctest::Approx(100.0).epsilon(1e-9));
        CHECK(t.percentages.row(r).minCoeff() >= 0.0);
      }
    }
  }
  CHECK_THROWS_AS(confusion_table({{"1", "a"}}, {{"2", "Neutral"}}), Error);
}

TEST_CASE("partition agreement measures") {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 2 + rng.uniform_below(30);
    std::vector<std::uint32_t> a(n), b(n);
    for (auto& x : a) x = static_cast<std::uint32_t>(rng.uniform_below(3));
    for (auto& x : b) x = static_cast<std::uint32_t>(rng.uniform_below(4));
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(oracle::ari_pairs(a, b)).epsilon(1e-9));
    CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
  }
  const std::vector<std::uint32_t> clusters{0, 0, 1, 1}, truth{5, 5, 5, 6};
  CHECK(cluster_purity(clusters, truth) == doctest::Approx(0.75));
}
