#include <fstream>

#include "doctest.h"
#include "enrolkit/enrolment.hpp"
#include "enrolkit/error.hpp"
#include "enrolkit/simulator.hpp"
#include "support/oracles.hpp"

using namespace enrolkit;

namespace {

SyntheticSpec clusters_spec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n = 300;
  spec.dim = 32;
  spec.seed = seed;
  spec.discrete_factor = DiscreteFactor{3, 10.0f};
  return spec;
}

SyntheticSpec gradient_spec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.n = 300;
  spec.dim = 32;
  spec.seed = seed;
  spec.gradient_factor = GradientFactor{5.0f};
  return spec;
}

// Fraction of records whose label maps to the planted class under the best
// one-to-one matching of labels to classes (majority vote per label).
double agreement(const std::map<std::string, std::string>& relabel, const SyntheticOutput& out) {
  std::map<std::string, std::map<std::uint32_t, std::size_t>> counts;
  for (const auto& t : out.truth) ++counts[relabel.at(t.id)][*t.discrete_class];
  std::size_t agree = 0;
  for (const auto& [_, row] : counts) {
    std::size_t best = 0;
    for (const auto& [__, c] : row) best = std::max(best, c);
    agree += best;
  }
  return static_cast<double>(agree) / static_cast<double>(out.truth.size());
}

}  // namespace

TEST_CASE("label phrase rendering") {
  CHECK(render_label_phrase({"high", "{speaker} speaks at a very high intensity", ""}, "Ingrid") ==
        "Ingrid speaks at a very high intensity");
  CHECK(render_label_phrase({"neutral", "{speaker} speaks in a neutral tone", ""}, "Leif") ==
        "Leif speaks in a neutral tone");
  CHECK(render_label_phrase({"low", std::string(kBinTemplate), "low intensity"}, "Ingrid") ==
        "Ingrid speaks at a low intensity");
  CHECK_THROWS_AS(render_label_phrase({"x", "{speaker} has {unknown}", ""}, "A"), Error);
  CHECK_THROWS_AS(render_label_phrase({"x", "speaks softly", ""}, "A"), Error);
  CHECK_THROWS_AS(render_label_phrase({"x", "{speaker} speaks at a {phrase}", ""}, "A"), Error);
  CHECK_THROWS_AS(render_label_phrase({"x", "{speaker} speaks", ""}, ""), Error);
  CHECK_THROWS_AS(render_label_phrase({"x", "{speaker speaks", ""}, "A"), Error);
}

TEST_CASE("appending phrases to prompts") {
  CHECK(append_phrase("Ingrid sounds very clear and close to the microphone", "Ingrid speaks at a very high intensity") ==
        "Ingrid sounds very clear and close to the microphone. Ingrid speaks at a very high intensity");
  CHECK(append_phrase("Clear voice.", "loud") == "Clear voice. Loud");
  CHECK(append_phrase("Is it loud?  ", "yes") == "Is it loud? Yes");
}

TEST_CASE("prompt augmentation") {
  const Corpus corpus({fixture::record("a", {1, 0}), fixture::record("b", {0, 1})}, {});
  const std::map<std::string, LabelTemplate> templates{
      {"high", {"high", "{speaker} speaks at a very high intensity", ""}}};

  SUBCASE("empty relabel map leaves the manifest byte-identical") {
    const Corpus same = augment_prompts(corpus, {}, templates, "f", 1);
    CHECK(serialize_manifest(same) == serialize_manifest(corpus));
  }
  SUBCASE("relabelled records gain the phrase and the family") {
    const Corpus out = augment_prompts(corpus, {{"a", "high"}}, templates, "f", 2);
    CHECK(out.at("a").description_prompt == "Ingrid speaks clearly. Ingrid speaks at a very high intensity");
    REQUIRE(out.at("a").enrolled_labels.size() == 1);
    CHECK(out.at("a").enrolled_labels[0] == EnrolledLabel{"f", "high", 2});
    CHECK(out.at("b") == corpus.at("b"));

    Error conflict(Errc::invalid_argument, "");
    try {
      augment_prompts(out, {{"a", "high"}}, templates, "f", 3);
    } catch (const Error& e) {
      conflict = e;
    }
    CHECK(conflict.code() == Errc::conflict);
    CHECK_NOTHROW(augment_prompts(out, {{"a", "high"}}, templates, "g", 3));
  }
  SUBCASE("unknown ids and labels") {
    try {
      augment_prompts(corpus, {{"zzz", "high"}}, templates, "f", 1);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::not_found);
      CHECK(std::string(e.what()).find("zzz") != std::string::npos);
    }
    CHECK_THROWS_AS(augment_prompts(corpus, {{"a", "nope"}}, templates, "f", 1), Error);
  }
}

TEST_CASE("decision strings") {
  CHECK(parse_decision("discrete:k=3").k == 3);
  const auto c = parse_decision("continuous:axis=1,bins=4,mode=equal_count");
  CHECK(c.kind == DecisionKind::continuous);
  CHECK(c.axis == 1);
  CHECK(c.n_bins == 4);
  CHECK(c.mode == BinMode::equal_count);
  CHECK(parse_decision(to_string(c)) == c);
  CHECK_THROWS_AS(parse_decision("discrete:k=1"), Error);
  CHECK_THROWS_AS(parse_decision("discrete"), Error);
  CHECK_THROWS_AS(parse_decision("fuzzy:k=2"), Error);
  CHECK_THROWS_AS(parse_decision("continuous:bins=3,colour=red"), Error);
}

TEST_CASE("default group names") {
  const auto bins = default_group_names(parse_decision("continuous:axis=0,bins=3"));
  REQUIRE(bins.size() == 3);
  CHECK(bins[0].label_id == "low-intensity");
  CHECK(bins[2].phrase == "high intensity");
  const auto clusters = default_group_names(parse_decision("discrete:k=2"));
  CHECK(clusters[1].label_id == "cluster-2");
}

TEST_CASE("iteration on planted clusters recovers the classes") {
  const auto out = generate_synthetic(clusters_spec(3));
  const Decision d = parse_decision("discrete:k=3");
  IterationParams params;
  params.seed = 5;
  const auto result = run_iteration(out.corpus, out.full_set(), out.corpus, d, default_group_names(d), params);
  CHECK(result.iteration.labels.size() == 3);
  CHECK(result.relabel.size() == out.corpus.size());
  CHECK(agreement(result.relabel, out) >= 0.99);
  CHECK(result.iteration.total_variance == doctest::Approx(total_variance(set_embeddings(out.corpus, out.full_set()))));
  CHECK(result.iteration.top2_ratio <= 1.0);

  for (const auto& r : result.augmented.records()) {
    REQUIRE(r.enrolled_labels.size() == 1);
    CHECK(r.enrolled_labels[0].family == "iteration-1");
    CHECK(r.description_prompt.find(". ") != std::string::npos);
  }

  SUBCASE("deterministic") {
    const auto again = run_iteration(out.corpus, out.full_set(), out.corpus, d, default_group_names(d), params);
    CHECK(serialize_manifest(again.augmented) == serialize_manifest(result.augmented));
    CHECK(serialize_labels(again.iteration.labels) == serialize_labels(result.iteration.labels));
  }
  SUBCASE("exemplar provenance seeds derive from the iteration seed") {
    for (std::uint32_t g = 0; g < 3; ++g) {
      CHECK(result.iteration.labels[g].provenance.seed == derive_seed(5, g));
      CHECK(result.iteration.labels[g].provenance.kind == GroupKind::cluster);
    }
  }
  SUBCASE("name list must match the groups") {
    auto names = default_group_names(d);
    names.pop_back();
    CHECK_THROWS_AS(run_iteration(out.corpus, out.full_set(), out.corpus, d, names, params), Error);
    names = default_group_names(d);
    names[1].label_id = names[0].label_id;
    CHECK_THROWS_AS(run_iteration(out.corpus, out.full_set(), out.corpus, d, names, params), Error);
  }
}

TEST_CASE("continuous iteration gives monotone bins") {
  const auto out = generate_synthetic(gradient_spec(8));
  const Decision d = parse_decision("continuous:axis=0,bins=3");
  const auto preview = preview_groups(out.corpus, out.full_set(), d, {});
  CHECK(preview.sizes.size() == 3);
  CHECK(preview.exemplar_ids.size() == 3);
  for (std::size_t i = 0; i < preview.groups.size(); ++i)
    for (std::size_t j = 0; j < preview.groups.size(); ++j)
      if (preview.projection.scores(i, 0) < preview.projection.scores(j, 0))
        CHECK(preview.groups[i] <= preview.groups[j]);
}

TEST_CASE("iteration refuses sets with varying inputs") {
  auto spec = clusters_spec(1);
  spec.confounds.push_back({"text", 3, 1.0f});
  const auto out = generate_synthetic(spec);
  AnalysisSet set = out.full_set();
  set.fixed_inputs = true;
  set.declared_text = out.corpus.records()[0].text;
  const Decision d = parse_decision("discrete:k=2");
  CHECK_THROWS_AS(run_iteration(out.corpus, set, out.corpus, d, default_group_names(d), {}), Error);
}

TEST_CASE("iteration record round trip and store layout") {
  const auto out = generate_synthetic(clusters_spec(2));
  const Decision d = parse_decision("discrete:k=3");
  const auto result = run_iteration(out.corpus, out.full_set(), out.corpus, d, default_group_names(d), {});
  const auto back = parse_iteration(serialize_iteration(result.iteration));
  CHECK(back.decision == result.iteration.decision);
  CHECK(back.labels == result.iteration.labels);
  CHECK(back.group_sizes == result.iteration.group_sizes);
  CHECK(back.total_variance == result.iteration.total_variance);

  fixture::TempDir dir;
  write_iteration(result, out.sets, dir.path());
  const Store store = open_store(dir.path());
  CHECK(store.corpus == result.augmented);
  CHECK(read_labels(dir.path() / "labels.json") == result.iteration.labels);
  CHECK(read_iteration(dir.path() / "iteration.json").family == "iteration-1");
}

TEST_CASE("variance trajectory") {
  auto make = [](std::uint32_t index, double tv, std::string set = "s") {
    EnrolmentIteration it;
    it.index = index;
    it.total_variance = tv;
    it.analysis_set_id = std::move(set);
    return it;
  };
  SUBCASE("decreasing totals") {
    const std::vector<EnrolmentIteration> its{make(0, 0.513), make(1, 0.413), make(2, 0.353)};
    const auto report = variance_trajectory(its);
    CHECK(report.decreasing);
    REQUIRE(report.points.size() == 3);
    CHECK_FALSE(report.points[0].delta);
    CHECK(*report.points[1].delta == doctest::Approx(-0.100));
    CHECK(*report.points[2].delta == doctest::Approx(-0.060));
  }
  SUBCASE("single iteration") {
    const std::vector<EnrolmentIteration> its{make(1, 0.4)};
    const auto report = variance_trajectory(its);
    CHECK(report.decreasing);
    CHECK_FALSE(report.points[0].delta);
  }
  SUBCASE("increase flagged") {
    const std::vector<EnrolmentIteration> its{make(1, 0.4), make(2, 0.5)};
    const auto report = variance_trajectory(its);
    CHECK_FALSE(report.decreasing);
    CHECK(report.points[1].increased);
    CHECK(trajectory_table(report).rows[1].back() == "not decreasing");
  }
  SUBCASE("same index averages") {
    const std::vector<EnrolmentIteration> its{make(1, 0.5), make(2, 0.2, "a"), make(2, 0.4, "b")};
    const auto report = variance_trajectory(its, {{2, "two clusters"}});
    CHECK(report.points[1].total_variance == doctest::Approx(0.3));
    CHECK(report.points[1].n_sets == 2);
    CHECK(report.points[1].grouping == "two clusters");
  }
}
