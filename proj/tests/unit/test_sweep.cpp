#include "doctest.h"
#include "enrolkit/error.hpp"
#include "enrolkit/simulator.hpp"
#include "enrolkit/sweep.hpp"
#include "support/oracles.hpp"

using namespace enrolkit;

namespace {

UtteranceRecord cell_record(std::string id, float tau, std::uint32_t k, Embedding e) {
  auto r = fixture::record(std::move(id), std::move(e));
  r.generation = GenerationConfig{tau, k, {}};
  r.reference_transcript = TokenList{"a", "b", "c"};
  r.hypothesis_transcript = TokenList{"a", "b", "c"};
  r.speaker_embedding = Embedding{1, 0};
  return r;
}

const std::vector<SpeakerReference> kRefs{{"Ingrid", {1, 0}, 1, 0}};

}  // namespace

TEST_CASE("trivial cell") {
  std::vector<UtteranceRecord> rs;
  for (int i = 0; i < 4; ++i) rs.push_back(cell_record("r" + std::to_string(i), 1.0f, 50, {1, 2}));
  const auto grid = aggregate_sweep(Corpus(rs, {}), kRefs);
  REQUIRE(grid.size() == 1);
  CHECK(std::abs(grid[0].diversity) < 1e-12);
  CHECK(*grid[0].mean_wer == 0.0);
  CHECK(*grid[0].mean_speaker_sim == doctest::Approx(1.0));
  CHECK_FALSE(grid[0].recommended);
}

TEST_CASE("cells are grouped, ordered and flagged") {
  std::vector<UtteranceRecord> rs{cell_record("a", 1.2f, 100, {1, 0}), cell_record("b", 1.2f, 100, {0, 1}),
                                  cell_record("c", 0.7f, 100, {1, 0}), cell_record("d", 0.7f, 100, {1, 1}),
                                  cell_record("e", 0.7f, 10, {1, 0})};
  const auto grid = aggregate_sweep(Corpus(rs, {}), kRefs);
  REQUIRE(grid.size() == 3);
  CHECK(grid[0].temperature == 0.7f);
  CHECK(grid[0].top_k == 10);
  CHECK(grid[0].too_small);
  CHECK(grid[1].top_k == 100);
  CHECK(grid[2].recommended);
  CHECK(grid[2].diversity == doctest::Approx(1.0));

  const auto cells = cells_table(grid);
  CHECK(cells.rows[2].back() == "recommended");
  CHECK(cells.rows[0][cells.column("flag")] == "n<2");

  SUBCASE("heatmap shape and values") {
    const auto t = heatmap_table(grid, "diversity");
    CHECK(t.header == std::vector<std::string>{"temperature\\top_k", "10", "100"});
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0][0] == "0.7");
    CHECK(t.rows[0][1] == "nan");
    CHECK(t.rows[0][2] == csv::number(grid[1].diversity));
    CHECK(t.rows[1][1] == "");
    CHECK(t.rows[1][2] == "1");
  }
  SUBCASE("unknown metric") { CHECK_THROWS_AS(heatmap_table(grid, "loudness"), Error); }
  SUBCASE("optional statistics") {
    SweepOptions options;
    options.speaker_sim = false;
    const auto g = aggregate_sweep(Corpus(rs, {}), {}, options);
    CHECK_FALSE(g[0].mean_speaker_sim);
    CHECK_THROWS_AS(aggregate_sweep(Corpus(rs, {}), {}), Error);
  }
}

TEST_CASE("2x2 grid gives a 3x3 heatmap") {
  std::vector<UtteranceRecord> rs;
  int i = 0;
  for (float tau : {0.5f, 1.0f})
    for (std::uint32_t k : {10u, 50u})
      for (int j = 0; j < 3; ++j) rs.push_back(cell_record("r" + std::to_string(i++), tau, k, {1.0f, j * 0.5f}));
  const auto grid = aggregate_sweep(Corpus(rs, {}), kRefs);
  const auto t = heatmap_table(grid, "diversity");
  CHECK(t.header.size() == 3);
  CHECK(t.rows.size() == 2);
  for (const auto& row : t.rows) CHECK(row.size() == 3);
  CHECK(heatmap_table(grid, "n").rows[1][2] == "3");
}

TEST_CASE("order of records does not change the result") {
  auto spec = SyntheticSpec{};
  spec.n = 30;
  spec.dim = 8;
  spec.seed = 3;
  spec.gradient_factor = GradientFactor{};
  spec.sweep = SweepGridSpec{{0.8f, 1.2f}, {50, 100}};
  spec.temperature_coupling = 1.0f;
  const auto out = generate_synthetic(spec);
  auto records = out.corpus.records();
  std::reverse(records.begin(), records.end());
  const auto refs = synthetic_speaker_references(out);
  const auto a = aggregate_sweep(out.corpus, refs);
  const auto b = aggregate_sweep(Corpus(records, {}), refs);
  REQUIRE(a.size() == 4);
  for (std::size_t c = 0; c < a.size(); ++c) {
    CHECK(a[c].diversity == b[c].diversity);
    CHECK(*a[c].mean_wer == *b[c].mean_wer);
  }
  CHECK(a[3].recommended);
}

TEST_CASE("diversity grows with temperature under noise coupling") {
  SyntheticSpec spec;
  spec.n = 200;
  spec.dim = 16;
  spec.seed = 21;
  spec.gradient_factor = GradientFactor{1.0f};
  spec.temperature_coupling = 1.0f;
  spec.sweep = SweepGridSpec{{0.4f, 0.8f, 1.2f, 1.6f}, {50}};
  const auto out = generate_synthetic(spec);
  const auto grid = aggregate_sweep(out.corpus, synthetic_speaker_references(out));
  for (std::size_t c = 1; c < grid.size(); ++c) CHECK(grid[c].diversity > grid[c - 1].diversity);
}
