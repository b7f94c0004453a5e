#include <fstream>
#include <set>

#include "doctest.h"
#include "enrolkit/discovery.hpp"
#include "enrolkit/error.hpp"
#include "enrolkit/simulator.hpp"
#include "support/oracles.hpp"

using namespace enrolkit;

namespace {

SyntheticSpec base_spec() {
  SyntheticSpec spec;
  spec.n = 400;
  spec.dim = 24;
  spec.seed = 17;
  return spec;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("spec validation") {
  auto spec = base_spec();
  CHECK_THROWS_AS(validate_spec(spec), Error);  // no factor
  spec.gradient_factor = GradientFactor{};
  CHECK_NOTHROW(validate_spec(spec));

  auto zero = spec;
  zero.n = 0;
  CHECK_THROWS_AS(generate_synthetic(zero), Error);

  auto cramped = spec;
  cramped.dim = 2;
  cramped.discrete_factor = DiscreteFactor{};
  CHECK_THROWS_AS(validate_spec(cramped), Error);

  auto dup = spec;
  dup.confounds = {{"text", 2, 1}, {"text", 3, 1}};
  CHECK_THROWS_AS(validate_spec(dup), Error);

  CHECK_THROWS_AS(parse_synthetic_spec(R"({"n":1,"dim":4,"gradient_factor":{},"noise":2})"), Error);
}

TEST_CASE("spec JSON round trip") {
  auto spec = base_spec();
  spec.discrete_factor = DiscreteFactor{3, 8.0f};
  spec.confounds = {{"speaker", 4, 2.5f}};
  spec.temperature_coupling = 1.0f;
  spec.sweep = SweepGridSpec{{0.5f, 1.2f}, {50, 100}};
  spec.frames = 3;
  const auto back = parse_synthetic_spec(serialize_synthetic_spec(spec));
  CHECK(serialize_synthetic_spec(back) == serialize_synthetic_spec(spec));
  CHECK(back.sweep->top_ks == std::vector<std::uint32_t>{50, 100});
  CHECK(back.confounds[0].offset_scale == 2.5f);
}

TEST_CASE("generation is deterministic and keyed by seed") {
  auto spec = base_spec();
  spec.discrete_factor = DiscreteFactor{};
  spec.frames = 2;
  spec.n = 20;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(serialize_manifest(a.corpus) == serialize_manifest(b.corpus));
  CHECK(serialize_truth(a.truth) == serialize_truth(b.truth));

  fixture::TempDir da, db;
  write_synthetic(a, da.path());
  write_synthetic(b, db.path());
  for (const auto& entry : std::filesystem::recursive_directory_iterator(da.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), da.path());
    CHECK(slurp(entry.path()) == slurp(db.path() / rel));
  }

  spec.seed += 1;
  CHECK(serialize_manifest(generate_synthetic(spec).corpus) != serialize_manifest(a.corpus));
}

TEST_CASE("synthetic store round trip") {
  auto spec = base_spec();
  spec.gradient_factor = GradientFactor{};
  spec.frames = 3;
  spec.n = 12;
  const auto out = generate_synthetic(spec);
  fixture::TempDir dir;
  write_synthetic(out, dir.path());
  const auto back = read_synthetic(dir.path());
  CHECK(back.corpus == out.corpus);
  CHECK(back.truth == out.truth);
  CHECK(back.sets == out.sets);
  CHECK(back.frames.size() == 12);
  CHECK(back.frames.at("utt-000003") == out.frames.at("utt-000003"));

  const Store store = open_store(dir.path());
  for (const auto& r : store.corpus.records()) {
    const auto frames = store.corpus.load_frames(r.id);
    CHECK(frames.rows() == 3);
  }
}

TEST_CASE("planted discrete classes are recovered") {
  auto spec = base_spec();
  spec.discrete_factor = DiscreteFactor{3, 10.0f};
  const auto out = generate_synthetic(spec);
  const auto x = set_embeddings(out.corpus, out.full_set());
  const auto proj = project(fit_pca(x, 3), x);
  const auto model = kmeans(proj.scores, 3, 1);
  std::vector<std::uint32_t> truth;
  for (const auto& t : out.truth) truth.push_back(*t.discrete_class);
  CHECK(adjusted_rand_index(model.assignments, truth) >= 0.99);
}

TEST_CASE("planted gradient aligns with PC1") {
  auto spec = base_spec();
  spec.gradient_factor = GradientFactor{5.0f};
  const auto out = generate_synthetic(spec);
  const auto x = set_embeddings(out.corpus, out.full_set());
  const auto proj = project(fit_pca(x, 2), x);
  std::vector<double> pc1(proj.scores.rows()), g;
  for (Eigen::Index i = 0; i < proj.scores.rows(); ++i) pc1[i] = proj.scores(i, 0);
  for (const auto& t : out.truth) g.push_back(*t.gradient_value);
  CHECK(std::abs(oracle::pearson(pc1, g)) >= 0.95);
}

TEST_CASE("total variance follows the planted model") {
  auto spec = base_spec();
  spec.n = 4000;
  spec.discrete_factor = DiscreteFactor{2, 6.0f};
  spec.gradient_factor = GradientFactor{3.0f};
  spec.confounds = {{"mood", 4, 1.5f}};
  const auto out = generate_synthetic(spec);
  const double observed = total_variance(set_embeddings(out.corpus, out.full_set()));
  CHECK(observed == doctest::Approx(expected_total_variance(spec)).epsilon(0.05));
}

TEST_CASE("sweep cells and noise coupling") {
  auto spec = base_spec();
  spec.n = 50;
  spec.gradient_factor = GradientFactor{1.0f};
  spec.temperature_coupling = 1.0f;
  spec.sweep = SweepGridSpec{{0.5f, 1.0f}, {10, 100}};
  const auto out = generate_synthetic(spec);
  CHECK(out.corpus.size() == 200);
  REQUIRE(out.sets.size() == 5);
  CHECK(out.sets[1].id == "synthetic/tau=0.5,k=10");
  CHECK(out.sets[1].utterance_ids.size() == 50);
  CHECK(out.sets[1].fixed_inputs);
  CHECK(expected_total_variance(spec, 1.0f, 10) > expected_total_variance(spec, 0.5f, 10));
}

TEST_CASE("speaker and text confounds set record inputs") {
  auto spec = base_spec();
  spec.confounds = {{"speaker", 3, 2.0f}, {"text", 2, 2.0f}};
  const auto out = generate_synthetic(spec);
  std::set<std::string> speakers, texts;
  for (const auto& r : out.corpus.records()) {
    speakers.insert(r.speaker);
    texts.insert(r.text);
  }
  CHECK(speakers.size() == 3);
  CHECK(texts.size() == 2);
  CHECK_FALSE(out.full_set().fixed_inputs);
  for (std::size_t i = 0; i < out.truth.size(); ++i) {
    CHECK(out.corpus.records()[i].speaker == "speaker-" + std::to_string(out.truth[i].confound_levels.at("speaker") + 1));
  }
}

TEST_CASE("transcripts and corruption") {
  auto spec = base_spec();
  spec.gradient_factor = GradientFactor{};
  spec.transcript.corruption_rate = 0.0f;
  auto clean = generate_synthetic(spec);
  for (const auto& r : clean.corpus.records()) CHECK(*r.reference_transcript == *r.hypothesis_transcript);

  spec.transcript.corruption_rate = 0.5f;
  auto noisy = generate_synthetic(spec);
  double total = 0;
  for (const auto& r : noisy.corpus.records()) total += wer(*r.reference_transcript, *r.hypothesis_transcript);
  CHECK(total / noisy.corpus.size() == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("enrolment effect") {
  auto spec = base_spec();
  spec.n = 2000;
  spec.gradient_factor = GradientFactor{5.0f};
  const auto out = generate_synthetic(spec);
  std::map<std::string, std::string> relabel;
  for (const auto& t : out.truth) relabel[t.id] = *t.gradient_value < 0 ? "low" : "high";
  const double before = total_variance(set_embeddings(out.corpus, out.full_set()));

  SUBCASE("shrink of one keeps the variance") {
    const auto same = simulate_enrolment_effect(out, relabel, 1.0);
    CHECK(same.round == 1);
    const double after = total_variance(set_embeddings(same.corpus, same.full_set()));
    CHECK(after == doctest::Approx(before).epsilon(0.05));
  }
  SUBCASE("shrinking the dominant factor lowers the variance") {
    const auto next = simulate_enrolment_effect(out, relabel, 0.5);
    const double after = total_variance(set_embeddings(next.corpus, next.full_set()));
    CHECK(after < before);
    REQUIRE(next.sets.size() == 3);
    CHECK(next.sets[1].id == "synthetic/high");
    CHECK(next.sets[2].id == "synthetic/low");
    // within each label the planted spread halves
    for (const auto& t : next.truth) CHECK(std::isfinite(*t.gradient_value));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(simulate_enrolment_effect(out, relabel, 0.0), Error);
    CHECK_THROWS_AS(simulate_enrolment_effect(out, relabel, 1.5), Error);
    CHECK_THROWS_AS(simulate_enrolment_effect(out, relabel, 0.5, EnrolledFactor::discrete), Error);
    auto partial = relabel;
    partial.erase(partial.begin());
    CHECK_THROWS_AS(simulate_enrolment_effect(out, partial, 0.5), Error);
  }
}

TEST_CASE("synthetic speakers match themselves") {
  auto spec = base_spec();
  spec.gradient_factor = GradientFactor{};
  spec.speakers = 7;
  const auto out = generate_synthetic(spec);
  const auto refs = synthetic_speaker_references(out);
  REQUIRE(refs.size() == 7);
  for (const auto& r : out.corpus.records()) CHECK(best_matching_speaker(*r.speaker_embedding, refs) == r.speaker);
}
