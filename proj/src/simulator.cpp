#include "enrolkit/simulator.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "enrolkit/csv.hpp"
#include "enrolkit/error.hpp"
#include "enrolkit/random.hpp"
#include "json.hpp"

namespace enrolkit {

namespace fs = std::filesystem;

namespace {

enum Salt : std::uint64_t { kDirections = 1, kSpeakers, kTexts, kReferences, kRecords };

std::uint64_t stream(std::uint64_t seed, std::uint64_t salt, std::uint64_t index) {
  return derive_seed(derive_seed(seed, salt), index);
}

std::uint64_t record_salt(std::uint32_t round) { return kRecords + 16ull * round; }

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

const Confound* find_confound(const SyntheticSpec& spec, std::string_view name) {
  for (const auto& c : spec.confounds) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

std::uint32_t speaker_count(const SyntheticSpec& spec) {
  const Confound* c = find_confound(spec, "speaker");
  return c ? c->levels : spec.speakers;
}

std::uint32_t direction_count(const SyntheticSpec& spec) {
  return 1u + (spec.discrete_factor ? 1u : 0u) + (spec.gradient_factor ? 1u : 0u) +
         static_cast<std::uint32_t>(spec.confounds.size());
}

std::vector<Eigen::VectorXd> orthonormal_directions(std::uint32_t count, std::uint32_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::VectorXd> dirs;
  while (dirs.size() < count) {
    Eigen::VectorXd v(dim);
    for (std::uint32_t d = 0; d < dim; ++d) v[d] = rng.normal();
    for (const auto& u : dirs) v -= v.dot(u) * u;
    const double len = v.norm();
    if (len < 1e-8) continue;
    dirs.push_back(v / len);
  }
  return dirs;
}

Embedding random_unit(std::uint32_t dim, Rng& rng) {
  Eigen::VectorXd v(dim);
  for (std::uint32_t d = 0; d < dim; ++d) v[d] = rng.normal();
  v.normalize();
  Embedding out(dim);
  for (std::uint32_t d = 0; d < dim; ++d) out[d] = static_cast<float>(v[d]);
  return out;
}

double noise_multiplier(const SyntheticSpec& spec, float temperature, std::uint32_t top_k) {
  double m = 1.0;
  if (spec.temperature_coupling) m *= static_cast<double>(*spec.temperature_coupling) * temperature;
  if (spec.top_k_coupling) m *= 1.0 + static_cast<double>(*spec.top_k_coupling) * std::log(static_cast<double>(top_k));
  return m;
}

std::string record_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "utt-%06zu", index);
  return buf;
}

// Deterministic pieces shared by generation and regeneration.
struct Geometry {
  Eigen::VectorXd base;
  std::optional<Eigen::VectorXd> discrete_dir;
  std::optional<Eigen::VectorXd> gradient_dir;
  std::vector<Eigen::VectorXd> confound_dirs;
  std::vector<Embedding> speaker_dirs;
  std::vector<TokenList> texts;
};

Geometry build_geometry(const SyntheticSpec& spec) {
  Geometry g;
  const auto dirs = orthonormal_directions(direction_count(spec), spec.dim, stream(spec.seed, kDirections, 0));
  std::size_t next = 0;
  const double sigma = spec.noise_sigma;
  g.base = dirs[next++] * (spec.base_norm * sigma);
  if (spec.discrete_factor) g.discrete_dir = dirs[next++];
  if (spec.gradient_factor) g.gradient_dir = dirs[next++];
  for (std::size_t c = 0; c < spec.confounds.size(); ++c) g.confound_dirs.push_back(dirs[next++]);

  Rng speaker_rng(stream(spec.seed, kSpeakers, 0));
  for (std::uint32_t s = 0; s < speaker_count(spec); ++s) g.speaker_dirs.push_back(random_unit(spec.speaker_dim, speaker_rng));

  const Confound* text = find_confound(spec, "text");
  const std::uint32_t n_texts = text ? text->levels : 1;
  for (std::uint32_t t = 0; t < n_texts; ++t) {
    Rng rng(stream(spec.seed, kTexts, t));
    TokenList tokens;
    for (std::uint32_t w = 0; w < spec.transcript.length; ++w) {
      tokens.push_back("w" + std::to_string(rng.uniform_below(spec.transcript.vocabulary)));
    }
    g.texts.push_back(std::move(tokens));
  }
  return g;
}

// Mean embedding (no noise) given the planted values.
Eigen::VectorXd planted_mean(const SyntheticSpec& spec, const Geometry& g, const PlantedTruth& t) {
  const double sigma = spec.noise_sigma;
  Eigen::VectorXd x = g.base;
  if (g.discrete_dir) x += (*t.discrete_position * sigma) * *g.discrete_dir;
  if (g.gradient_dir) x += (spec.gradient_factor->strength * sigma * *t.gradient_value) * *g.gradient_dir;
  for (std::size_t c = 0; c < spec.confounds.size(); ++c) {
    const auto& conf = spec.confounds[c];
    const double centred = t.confound_levels.at(conf.name) - (conf.levels - 1) / 2.0;
    x += (centred * conf.offset_scale * sigma) * g.confound_dirs[c];
  }
  return x;
}

std::map<std::string, std::vector<Embedding>> speaker_samples(const SyntheticSpec& spec, const Geometry& g) {
  std::map<std::string, std::vector<Embedding>> out;
  for (std::uint32_t s = 0; s < g.speaker_dirs.size(); ++s) {
    Rng rng(stream(spec.seed, kReferences, s));
    auto& samples = out["speaker-" + std::to_string(s + 1)];
    for (std::uint32_t j = 0; j < spec.reference_samples; ++j) {
      Embedding v = g.speaker_dirs[s];
      for (auto& x : v) x = static_cast<float>(x + spec.speaker_noise * rng.normal());
      samples.push_back(std::move(v));
    }
  }
  return out;
}

struct Noisy {
  Embedding summary;
  std::optional<FloatMatrix> frames;
};

Noisy add_noise(const SyntheticSpec& spec, const Eigen::VectorXd& mean, double sd, Rng& rng) {
  Noisy out;
  Eigen::VectorXd x = mean;
  for (std::uint32_t d = 0; d < spec.dim; ++d) x[d] += sd * rng.normal();
  out.summary.resize(spec.dim);
  for (std::uint32_t d = 0; d < spec.dim; ++d) out.summary[d] = static_cast<float>(x[d]);
  if (spec.frames > 0) {
    FloatMatrix f(spec.frames, spec.dim);
    const double frame_sd = spec.frame_sigma * sd;
    for (std::uint32_t t = 0; t < spec.frames; ++t) {
      for (std::uint32_t d = 0; d < spec.dim; ++d) f(t, d) = static_cast<float>(x[d] + frame_sd * rng.normal());
    }
    // The stored summary is the frame mean so containers and manifest agree.
    const Eigen::RowVectorXd pooled = f.cast<double>().colwise().mean();
    for (std::uint32_t d = 0; d < spec.dim; ++d) out.summary[d] = static_cast<float>(pooled[d]);
    out.frames = std::move(f);
  }
  return out;
}

std::vector<AnalysisSet> build_sets(const SyntheticSpec& spec, const Corpus& corpus) {
  std::vector<const UtteranceRecord*> all;
  for (const auto& r : corpus.records()) all.push_back(&r);
  std::vector<AnalysisSet> sets{make_analysis_set(spec.set_id, all)};
  if (spec.sweep) {
    std::map<std::pair<float, std::uint32_t>, std::vector<const UtteranceRecord*>> cells;
    for (const auto* r : all) cells[{r->generation->temperature, r->generation->top_k}].push_back(r);
    for (const auto& [key, members] : cells) {
      sets.push_back(make_analysis_set(spec.set_id + "/tau=" + csv::number(key.first) + ",k=" +
                                           std::to_string(key.second),
                                       members));
    }
  }
  return sets;
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::io_error, "write failed: " + path.string());
}

}  // namespace

void validate_spec(const SyntheticSpec& spec) {
  auto bad = [](const std::string& what) { fail(Errc::invalid_argument, "synthetic spec: " + what); };
  if (spec.n == 0) bad("n must be >= 1");
  if (spec.dim == 0) bad("dim must be >= 1");
  if (!spec.discrete_factor && !spec.gradient_factor && spec.confounds.empty()) {
    bad("at least one factor or confound is required");
  }
  if (!(std::isfinite(spec.noise_sigma) && spec.noise_sigma > 0.0f)) bad("noise_sigma must be > 0");
  if (!finite_nonneg(spec.base_norm)) bad("base_norm must be finite and >= 0");
  if (spec.discrete_factor) {
    if (spec.discrete_factor->k < 2) bad("discrete_factor.k must be >= 2");
    if (!finite_nonneg(spec.discrete_factor->separation)) bad("discrete_factor.separation must be finite and >= 0");
  }
  if (spec.gradient_factor && !finite_nonneg(spec.gradient_factor->strength)) {
    bad("gradient_factor.strength must be finite and >= 0");
  }
  std::set<std::string> names;
  for (const auto& c : spec.confounds) {
    if (c.name.empty()) bad("confound without a name");
    if (!names.insert(c.name).second) bad("duplicate confound '" + c.name + "'");
    if (c.levels < 1) bad("confound '" + c.name + "' needs >= 1 level");
    if (!finite_nonneg(c.offset_scale)) bad("confound '" + c.name + "' offset_scale must be finite and >= 0");
  }
  if (spec.temperature_coupling && !finite_nonneg(*spec.temperature_coupling)) bad("temperature_coupling must be finite and >= 0");
  if (spec.top_k_coupling && !finite_nonneg(*spec.top_k_coupling)) bad("top_k_coupling must be finite and >= 0");
  if (spec.sweep) {
    if (spec.sweep->temperatures.empty() || spec.sweep->top_ks.empty()) bad("sweep grid must be non-empty");
    for (float t : spec.sweep->temperatures) {
      if (!(std::isfinite(t) && t > 0.0f)) bad("sweep temperatures must be > 0");
    }
    for (auto k : spec.sweep->top_ks) {
      if (k < 1) bad("sweep top_ks must be >= 1");
    }
  }
  if (direction_count(spec) > spec.dim) {
    bad("dim " + std::to_string(spec.dim) + " too small for " + std::to_string(direction_count(spec)) +
        " orthogonal directions");
  }
  if (!finite_nonneg(spec.frame_sigma)) bad("frame_sigma must be finite and >= 0");
  if (speaker_count(spec) < 1) bad("speakers must be >= 1");
  if (spec.speaker_dim < 2) bad("speaker_dim must be >= 2");
  if (!finite_nonneg(spec.speaker_noise)) bad("speaker_noise must be finite and >= 0");
  if (spec.transcript.length < 1) bad("transcript.length must be >= 1");
  if (spec.transcript.vocabulary < 2) bad("transcript.vocabulary must be >= 2");
  if (!(spec.transcript.corruption_rate >= 0.0f && spec.transcript.corruption_rate <= 1.0f)) {
    bad("transcript.corruption_rate must be in [0, 1]");
  }
  if (spec.set_id.empty()) bad("set_id must be non-empty");
}

SyntheticSpec parse_synthetic_spec(std::string_view json_text) {
  using json = nlohmann::json;
  static const std::set<std::string> known = {
      "n", "dim", "seed", "discrete_factor", "gradient_factor", "confounds", "noise_sigma",
      "temperature_coupling", "top_k_coupling", "sweep", "base_norm", "frames", "frame_sigma", "speakers",
      "speaker_dim", "speaker_noise", "reference_samples", "transcript", "set_id"};
  SyntheticSpec spec;
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) fail(Errc::parse_error, "synthetic spec: expected a JSON object");
    for (const auto& [key, _] : j.items()) {
      if (!known.contains(key)) fail(Errc::parse_error, "synthetic spec: unknown key '" + key + "'");
    }
    spec.n = j.at("n").get<std::uint32_t>();
    spec.dim = j.at("dim").get<std::uint32_t>();
    read_opt(j, "seed", spec.seed);
    if (auto it = j.find("discrete_factor"); it != j.end() && !it->is_null()) {
      DiscreteFactor f;
      f.k = it->at("k").get<std::uint32_t>();
      read_opt(*it, "separation", f.separation);
      spec.discrete_factor = f;
    }
    if (auto it = j.find("gradient_factor"); it != j.end() && !it->is_null()) {
      GradientFactor f;
      read_opt(*it, "strength", f.strength);
      spec.gradient_factor = f;
    }
    if (auto it = j.find("confounds"); it != j.end()) {
      for (const auto& c : *it) {
        Confound conf;
        conf.name = c.at("name").get<std::string>();
        conf.levels = c.at("levels").get<std::uint32_t>();
        read_opt(c, "offset_scale", conf.offset_scale);
        spec.confounds.push_back(std::move(conf));
      }
    }
    read_opt(j, "noise_sigma", spec.noise_sigma);
    if (auto it = j.find("temperature_coupling"); it != j.end() && !it->is_null()) spec.temperature_coupling = it->get<float>();
    if (auto it = j.find("top_k_coupling"); it != j.end() && !it->is_null()) spec.top_k_coupling = it->get<float>();
    if (auto it = j.find("sweep"); it != j.end() && !it->is_null()) {
      SweepGridSpec grid;
      grid.temperatures = it->at("temperatures").get<std::vector<float>>();
      grid.top_ks = it->at("top_ks").get<std::vector<std::uint32_t>>();
      spec.sweep = std::move(grid);
    }
    read_opt(j, "base_norm", spec.base_norm);
    read_opt(j, "frames", spec.frames);
    read_opt(j, "frame_sigma", spec.frame_sigma);
    read_opt(j, "speakers", spec.speakers);
    read_opt(j, "speaker_dim", spec.speaker_dim);
    read_opt(j, "speaker_noise", spec.speaker_noise);
    read_opt(j, "reference_samples", spec.reference_samples);
    if (auto it = j.find("transcript"); it != j.end()) {
      read_opt(*it, "length", spec.transcript.length);
      read_opt(*it, "vocabulary", spec.transcript.vocabulary);
      read_opt(*it, "corruption_rate", spec.transcript.corruption_rate);
    }
    read_opt(j, "set_id", spec.set_id);
  } catch (const json::exception& e) {
    fail(Errc::parse_error, std::string("synthetic spec: ") + e.what());
  }
  validate_spec(spec);
  return spec;
}

SyntheticSpec read_synthetic_spec(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_synthetic_spec(buffer.str());
}

std::string serialize_synthetic_spec(const SyntheticSpec& spec) {
  using json = nlohmann::ordered_json;
  json j;
  j["n"] = spec.n;
  j["dim"] = spec.dim;
  j["seed"] = spec.seed;
  if (spec.discrete_factor) {
    j["discrete_factor"] = {{"k", spec.discrete_factor->k},
                            {"separation", static_cast<double>(spec.discrete_factor->separation)}};
  }
  if (spec.gradient_factor) {
    j["gradient_factor"] = {{"strength", static_cast<double>(spec.gradient_factor->strength)}};
  }
  json confounds = json::array();
  for (const auto& c : spec.confounds) {
    confounds.push_back({{"name", c.name}, {"levels", c.levels}, {"offset_scale", static_cast<double>(c.offset_scale)}});
  }
  j["confounds"] = std::move(confounds);
  j["noise_sigma"] = static_cast<double>(spec.noise_sigma);
  if (spec.temperature_coupling) j["temperature_coupling"] = static_cast<double>(*spec.temperature_coupling);
  if (spec.top_k_coupling) j["top_k_coupling"] = static_cast<double>(*spec.top_k_coupling);
  if (spec.sweep) {
    json temps = json::array();
    for (float t : spec.sweep->temperatures) temps.push_back(static_cast<double>(t));
    j["sweep"] = {{"temperatures", std::move(temps)}, {"top_ks", spec.sweep->top_ks}};
  }
  j["base_norm"] = static_cast<double>(spec.base_norm);
  j["frames"] = spec.frames;
  j["frame_sigma"] = static_cast<double>(spec.frame_sigma);
  j["speakers"] = spec.speakers;
  j["speaker_dim"] = spec.speaker_dim;
  j["speaker_noise"] = static_cast<double>(spec.speaker_noise);
  j["reference_samples"] = spec.reference_samples;
  j["transcript"] = {{"length", spec.transcript.length},
                     {"vocabulary", spec.transcript.vocabulary},
                     {"corruption_rate", static_cast<double>(spec.transcript.corruption_rate)}};
  j["set_id"] = spec.set_id;
  return j.dump(2) + "\n";
}

std::string serialize_truth(const std::vector<PlantedTruth>& truth) {
  using json = nlohmann::ordered_json;
  std::string out;
  for (const auto& t : truth) {
    json j;
    j["id"] = t.id;
    if (t.discrete_class) j["discrete_class"] = *t.discrete_class;
    if (t.discrete_position) j["discrete_position"] = *t.discrete_position;
    if (t.gradient_value) j["gradient_value"] = *t.gradient_value;
    j["confound_levels"] = t.confound_levels;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PlantedTruth> parse_truth(std::string_view jsonl) {
  using json = nlohmann::json;
  std::vector<PlantedTruth> truth;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      PlantedTruth t;
      t.id = j.at("id").get<std::string>();
      if (j.contains("discrete_class")) t.discrete_class = j["discrete_class"].get<std::uint32_t>();
      if (j.contains("discrete_position")) t.discrete_position = j["discrete_position"].get<double>();
      if (j.contains("gradient_value")) t.gradient_value = j["gradient_value"].get<double>();
      if (j.contains("confound_levels")) {
        t.confound_levels = j["confound_levels"].get<std::map<std::string, std::uint32_t>>();
      }
      truth.push_back(std::move(t));
    } catch (const json::exception& e) {
      fail(Errc::parse_error, "truth line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return truth;
}

double expected_total_variance(const SyntheticSpec& spec, float temperature, std::uint32_t top_k) {
  const double sigma2 = static_cast<double>(spec.noise_sigma) * spec.noise_sigma;
  const double m = noise_multiplier(spec, temperature, top_k);
  double total = sigma2 * m * m * spec.dim;
  if (spec.discrete_factor) {
    const double k = spec.discrete_factor->k, s = spec.discrete_factor->separation;
    total += sigma2 * s * s * (k * k - 1.0) / 12.0;
  }
  if (spec.gradient_factor) total += sigma2 * spec.gradient_factor->strength * spec.gradient_factor->strength;
  for (const auto& c : spec.confounds) {
    const double l = c.levels, s = c.offset_scale;
    total += sigma2 * s * s * (l * l - 1.0) / 12.0;
  }
  return total;
}

SyntheticOutput generate_synthetic(const SyntheticSpec& spec) {
  validate_spec(spec);
  const Geometry geometry = build_geometry(spec);
  const Confound* speaker_conf = find_confound(spec, "speaker");
  const Confound* text_conf = find_confound(spec, "text");
  const std::uint32_t n_speakers = speaker_count(spec);

  std::vector<std::pair<float, std::uint32_t>> cells;
  if (spec.sweep) {
    for (float t : spec.sweep->temperatures) {
      for (auto k : spec.sweep->top_ks) cells.emplace_back(t, k);
    }
  } else {
    cells.emplace_back(1.0f, 50u);
  }

  SyntheticOutput out;
  out.spec = spec;
  std::vector<UtteranceRecord> records;
  records.reserve(static_cast<std::size_t>(spec.n) * cells.size());
  std::size_t index = 0;
  for (const auto& [temperature, top_k] : cells) {
    const double multiplier = noise_multiplier(spec, temperature, top_k);
    for (std::uint32_t i = 0; i < spec.n; ++i, ++index) {
      Rng rng(stream(spec.seed, record_salt(0), index));
      PlantedTruth t;
      t.id = record_id(index);
      if (spec.discrete_factor) {
        const auto k = spec.discrete_factor->k;
        t.discrete_class = static_cast<std::uint32_t>(rng.uniform_below(k));
        t.discrete_position = (*t.discrete_class - (k - 1) / 2.0) * spec.discrete_factor->separation;
      }
      if (spec.gradient_factor) t.gradient_value = rng.normal();
      for (const auto& c : spec.confounds) {
        t.confound_levels[c.name] = static_cast<std::uint32_t>(rng.uniform_below(c.levels));
      }
      std::uint32_t speaker = 0;
      if (speaker_conf) {
        speaker = t.confound_levels.at("speaker");
      } else if (n_speakers > 1) {
        speaker = static_cast<std::uint32_t>(rng.uniform_below(n_speakers));
      }
      const std::uint32_t text = text_conf ? t.confound_levels.at("text") : 0;

      Noisy noisy = add_noise(spec, planted_mean(spec, geometry, t), spec.noise_sigma * multiplier, rng);

      UtteranceRecord r;
      r.id = t.id;
      r.speaker = "speaker-" + std::to_string(speaker + 1);
      r.text = join(geometry.texts[text], " ");
      r.description_prompt = r.speaker + " speaks clearly at a moderate pace";
      r.generation = GenerationConfig{temperature, top_k, {}};
      r.summary_embedding = std::move(noisy.summary);
      if (noisy.frames) {
        r.summary_source_frames = spec.frames;
        r.frame_embeddings_ref = "frames/" + r.id + ".semb";
        out.frames[r.id] = std::move(*noisy.frames);
      }
      Embedding voice = geometry.speaker_dirs[speaker];
      const double voice_sd = spec.speaker_noise * multiplier;
      for (auto& v : voice) v = static_cast<float>(v + voice_sd * rng.normal());
      r.speaker_embedding = std::move(voice);
      r.reference_transcript = geometry.texts[text];
      TokenList hyp = geometry.texts[text];
      for (auto& token : hyp) {
        if (rng.uniform01() < spec.transcript.corruption_rate) {
          const auto current = static_cast<std::uint64_t>(std::stoul(token.substr(1)));
          auto other = rng.uniform_below(spec.transcript.vocabulary - 1);
          if (other >= current) ++other;
          token = "w" + std::to_string(other);
        }
      }
      r.hypothesis_transcript = std::move(hyp);
      records.push_back(std::move(r));
      out.truth.push_back(std::move(t));
    }
  }
  out.corpus = Corpus(std::move(records), {});
  out.sets = build_sets(spec, out.corpus);

  out.speaker_samples = speaker_samples(spec, geometry);
  return out;
}

SyntheticOutput simulate_enrolment_effect(const SyntheticOutput& previous,
                                          const std::map<std::string, std::string>& relabel, double shrink,
                                          EnrolledFactor factor) {
  if (!(shrink > 0.0 && shrink <= 1.0)) {
    fail(Errc::invalid_argument, "simulate_enrolment_effect: shrink " + std::to_string(shrink) + " outside (0, 1]");
  }
  const SyntheticSpec& spec = previous.spec;
  if (factor == EnrolledFactor::automatic) {
    if (spec.discrete_factor && spec.gradient_factor) {
      const double k = spec.discrete_factor->k, s = spec.discrete_factor->separation;
      const double g = spec.gradient_factor->strength;
      factor = s * s * (k * k - 1.0) / 12.0 >= g * g ? EnrolledFactor::discrete : EnrolledFactor::gradient;
    } else if (spec.discrete_factor) {
      factor = EnrolledFactor::discrete;
    } else if (spec.gradient_factor) {
      factor = EnrolledFactor::gradient;
    } else {
      fail(Errc::invalid_argument, "simulate_enrolment_effect: spec has no factor to enrol");
    }
  }
  if (factor == EnrolledFactor::discrete && !spec.discrete_factor) {
    fail(Errc::invalid_argument, "simulate_enrolment_effect: spec has no discrete factor");
  }
  if (factor == EnrolledFactor::gradient && !spec.gradient_factor) {
    fail(Errc::invalid_argument, "simulate_enrolment_effect: spec has no gradient factor");
  }
  for (const auto& id : previous.full_set().utterance_ids) {
    if (!relabel.contains(id)) fail(Errc::invalid_argument, "simulate_enrolment_effect: relabel does not cover '" + id + "'");
  }

  auto value = [&](PlantedTruth& t) -> double& {
    return factor == EnrolledFactor::discrete ? *t.discrete_position : *t.gradient_value;
  };

  SyntheticOutput out;
  out.spec = spec;
  out.round = previous.round + 1;
  out.truth = previous.truth;
  out.speaker_samples = previous.speaker_samples;

  std::map<std::string, std::pair<double, std::size_t>> sums;
  for (auto& t : out.truth) {
    auto it = relabel.find(t.id);
    if (it == relabel.end()) continue;
    auto& [sum, count] = sums[it->second];
    sum += value(t);
    ++count;
  }
  for (auto& t : out.truth) {
    auto it = relabel.find(t.id);
    if (it == relabel.end()) continue;
    const auto& [sum, count] = sums[it->second];
    const double mean = sum / static_cast<double>(count);
    value(t) = mean + shrink * (value(t) - mean);
  }

  const Geometry geometry = build_geometry(spec);
  std::vector<UtteranceRecord> records = previous.corpus.records();
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    Rng rng(stream(spec.seed, record_salt(out.round), i));
    const double multiplier = noise_multiplier(spec, r.generation->temperature, r.generation->top_k);
    Noisy noisy = add_noise(spec, planted_mean(spec, geometry, out.truth[i]), spec.noise_sigma * multiplier, rng);
    r.summary_embedding = std::move(noisy.summary);
    if (noisy.frames) out.frames[r.id] = std::move(*noisy.frames);
  }
  out.corpus = Corpus(std::move(records), {});

  out.sets = {previous.full_set()};
  std::map<std::string, std::vector<const UtteranceRecord*>> groups;
  for (const auto& id : previous.full_set().utterance_ids) groups[relabel.at(id)].push_back(&out.corpus.at(id));
  for (const auto& [label, members] : groups) {
    out.sets.push_back(make_analysis_set(previous.full_set().id + "/" + label, members));
  }
  return out;
}

std::vector<SpeakerReference> synthetic_speaker_references(const SyntheticOutput& output, std::uint64_t seed) {
  std::vector<SpeakerReference> refs;
  for (const auto& [speaker, samples] : output.speaker_samples) {
    refs.push_back(build_speaker_reference(speaker, samples, output.spec.reference_samples, seed));
  }
  return refs;
}

void write_synthetic(const SyntheticOutput& output, const fs::path& root) {
  fs::create_directories(root);
  if (!output.frames.empty()) {
    fs::create_directories(root / "frames");
    for (const auto& [id, frames] : output.frames) write_embedding_container(frames, root / "frames" / (id + ".semb"));
  }
  save_store(output.corpus, output.sets, root);
  write_text(root / "truth.jsonl", serialize_truth(output.truth));
  write_text(root / "spec.json", serialize_synthetic_spec(output.spec));
  write_text(root / "state.json", nlohmann::json{{"round", output.round}}.dump() + "\n");
  const auto refs = synthetic_speaker_references(output);
  write_text(root / "refs.json", serialize_speaker_references(refs));
}

SyntheticOutput read_synthetic(const fs::path& root) {
  SyntheticOutput out;
  out.spec = read_synthetic_spec(root / "spec.json");
  Store store = open_store(root);
  std::ifstream in(root / "truth.jsonl", std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + (root / "truth.jsonl").string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  out.truth = parse_truth(buffer.str());
  if (out.truth.size() != store.corpus.size()) {
    fail(Errc::parse_error, "truth.jsonl has " + std::to_string(out.truth.size()) + " rows for " +
                                std::to_string(store.corpus.size()) + " records");
  }
  for (std::size_t i = 0; i < out.truth.size(); ++i) {
    if (out.truth[i].id != store.corpus.records()[i].id) {
      fail(Errc::parse_error, "truth.jsonl row " + std::to_string(i + 1) + " is not aligned with the manifest");
    }
  }
  if (std::ifstream state(root / "state.json"); state) {
    const auto j = nlohmann::json::parse(state, nullptr, false);
    if (!j.is_discarded()) out.round = j.value("round", 0u);
  }
  for (const auto& r : store.corpus.records()) {
    if (r.frame_embeddings_ref) out.frames[r.id] = store.corpus.load_frames(r.id);
  }
  out.corpus = Corpus(store.corpus.records(), {});
  out.sets = std::move(store.sets);
  if (out.sets.empty()) fail(Errc::parse_error, "synthetic store has no analysis sets");
  out.speaker_samples = speaker_samples(out.spec, build_geometry(out.spec));
  return out;
}

}  // namespace enrolkit
