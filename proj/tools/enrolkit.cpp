#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "enrolkit/csv.hpp"
#include "enrolkit/discovery.hpp"
#include "enrolkit/enrolment.hpp"
#include "enrolkit/error.hpp"
#include "enrolkit/f0.hpp"
#include "enrolkit/metrics.hpp"
#include "enrolkit/projection.hpp"
#include "enrolkit/serve/http.hpp"
#include "enrolkit/simulator.hpp"
#include "enrolkit/sweep.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace enrolkit;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << text;
}

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text(path, text);
  }
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<const UtteranceRecord*> members(const Store& store, const std::string& set_id) {
  std::vector<const UtteranceRecord*> out;
  if (set_id.empty()) {
    for (const auto& r : store.corpus.records()) out.push_back(&r);
  } else {
    for (const auto& id : store.set(set_id).utterance_ids) out.push_back(&store.corpus.at(id));
  }
  return out;
}

std::map<std::string, std::string> read_relabel(const fs::path& path) {
  const csv::Table t = csv::read(path);
  const auto id = t.column("id"), label = t.column("label_id");
  std::map<std::string, std::string> out;
  for (const auto& row : t.rows) out[row[id]] = row[label];
  return out;
}

std::vector<GroupName> read_names(const fs::path& path, const Decision& decision) {
  const auto j = nlohmann::json::parse(read_text(path));
  std::vector<GroupName> names;
  const std::string fallback(decision.kind == DecisionKind::discrete ? kClusterTemplate : kBinTemplate);
  for (const auto& n : j) {
    GroupName g;
    if (n.is_string()) {
      g.label_id = g.phrase = n.get<std::string>();
    } else {
      g.label_id = n.at("label_id").get<std::string>();
      g.phrase = n.value("phrase", g.label_id);
      g.template_text = n.value("template", std::string{});
    }
    if (g.template_text.empty()) g.template_text = fallback;
    names.push_back(std::move(g));
  }
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"enrolkit: latent-feature discovery and enrolment for prompt-based TTS corpora"};
  app.require_subcommand(1);
  std::string store_path = ".";
  app.add_option("--store", store_path, "Store directory")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Validate a manifest and write a store");
  std::string manifest, out, sets_path;
  ingest->add_option("--manifest", manifest)->required();
  ingest->add_option("--out", out)->required();
  ingest->add_option("--sets", sets_path, "Analysis sets JSON (default: one set 'all')");
  ingest->callback([&] {
    const Corpus corpus = ingest_manifest(manifest);
    std::vector<AnalysisSet> sets;
    if (!sets_path.empty()) {
      sets = parse_sets(read_text(sets_path));
    } else {
      std::vector<const UtteranceRecord*> all;
      for (const auto& r : corpus.records()) all.push_back(&r);
      sets.push_back(make_analysis_set("all", all));
    }
    for (const auto& s : sets) validate_fixed_inputs(s, corpus);
    save_store(corpus, sets, out);
    std::cerr << "ingested " << corpus.size() << " records, " << sets.size() << " set(s)\n";
  });

  // validate
  auto* validate = app.add_subcommand("validate", "Check the fixed-inputs contract of analysis sets");
  std::string set_id;
  validate->add_option("--set", set_id);
  int validate_status = 0;
  validate->callback([&] {
    const Store store = open_store(store_path);
    for (const auto& s : store.sets) {
      if (!set_id.empty() && s.id != set_id) continue;
      const auto violations = validate_fixed_inputs(s, store.corpus);
      std::cout << s.id << ": " << s.utterance_ids.size() << " records, "
                << (s.fixed_inputs ? "fixed inputs" : "inputs not fixed") << ", " << violations.size()
                << " violation(s)\n";
      for (const auto& v : violations) {
        std::cout << "  " << v.utterance_id << " " << v.field << ": '" << v.actual << "' != '" << v.expected << "'\n";
      }
      if (!violations.empty()) validate_status = 1;
    }
    if (!set_id.empty()) store.set(set_id);
  });

  // diversity
  auto* diversity = app.add_subcommand("diversity", "Mean pairwise cosine distance of a set");
  diversity->add_option("--set", set_id);
  diversity->callback([&] {
    const Store store = open_store(store_path);
    std::vector<Embedding> rows;
    for (const auto* r : members(store, set_id)) rows.push_back(summary_embedding_of(store.corpus, *r));
    const auto d = diversity_score(rows);
    std::cout << csv::format({{"set", "n", "diversity"},
                              {{set_id.empty() ? "*" : set_id, std::to_string(d.n), csv::number(d.value)}}});
  });

  // wer
  auto* wer_cmd = app.add_subcommand("wer", "Word error rate per record");
  wer_cmd->add_option("--set", set_id);
  wer_cmd->add_option("--out", out);
  wer_cmd->callback([&] {
    const Store store = open_store(store_path);
    csv::Table t;
    t.header = {"id", "wer", "edits", "reference_length"};
    double total = 0.0;
    std::size_t n = 0;
    for (const auto* r : members(store, set_id)) {
      if (!r->reference_transcript || !r->hypothesis_transcript) {
        fail(Errc::missing_field, "record '" + r->id + "' lacks transcripts");
      }
      const double w = wer(*r->reference_transcript, *r->hypothesis_transcript);
      t.rows.push_back({r->id, csv::number(w),
                        std::to_string(edit_distance(*r->reference_transcript, *r->hypothesis_transcript)),
                        std::to_string(r->reference_transcript->size())});
      total += w;
      ++n;
    }
    emit(out, csv::format(t));
    if (n > 0) std::cerr << "mean WER " << csv::number(total / static_cast<double>(n)) << " over " << n << "\n";
  });

  // speaker-sim
  auto* sim = app.add_subcommand("speaker-sim", "Speaker similarity against references");
  std::string refs_path;
  sim->add_option("--set", set_id);
  sim->add_option("--refs", refs_path)->required();
  sim->add_option("--out", out);
  sim->callback([&] {
    const Store store = open_store(store_path);
    const auto refs = read_speaker_references(refs_path);
    std::map<std::string, const SpeakerReference*> by_speaker;
    for (const auto& r : refs) by_speaker[r.speaker] = &r;
    csv::Table t;
    t.header = {"id", "speaker", "similarity", "match", "best_match"};
    for (const auto* r : members(store, set_id)) {
      if (!r->speaker_embedding) fail(Errc::missing_field, "record '" + r->id + "' has no speaker embedding");
      auto it = by_speaker.find(r->speaker);
      if (it == by_speaker.end()) fail(Errc::not_found, "no reference for speaker '" + r->speaker + "'");
      const double s = speaker_similarity(*r->speaker_embedding, *it->second);
      t.rows.push_back({r->id, r->speaker, csv::number(s), is_perceptual_match(s) ? "1" : "0",
                        best_matching_speaker(*r->speaker_embedding, refs)});
    }
    emit(out, csv::format(t));
  });

  // refs
  auto* refs_cmd = app.add_subcommand("refs", "Build per-speaker reference embeddings");
  std::uint32_t ref_n = kDefaultSpeakerReferenceSamples;
  std::uint64_t seed = 0;
  refs_cmd->add_option("--set", set_id);
  refs_cmd->add_option("--n", ref_n)->capture_default_str();
  refs_cmd->add_option("--seed", seed)->capture_default_str();
  refs_cmd->add_option("--out", out)->required();
  refs_cmd->callback([&] {
    const Store store = open_store(store_path);
    std::map<std::string, std::vector<Embedding>> by_speaker;
    for (const auto* r : members(store, set_id)) {
      if (r->speaker_embedding) by_speaker[r->speaker].push_back(*r->speaker_embedding);
    }
    std::vector<SpeakerReference> refs;
    for (const auto& [speaker, rows] : by_speaker) refs.push_back(build_speaker_reference(speaker, rows, ref_n, seed));
    write_text(out, serialize_speaker_references(refs));
  });

  // pca
  auto* pca = app.add_subcommand("pca", "Fit PCA on a set and write model and scores");
  std::uint32_t components = kDefaultComponents;
  std::string scores_path;
  pca->add_option("--set", set_id)->required();
  pca->add_option("--components", components)->capture_default_str();
  pca->add_option("--out", out)->required();
  pca->add_option("--scores", scores_path);
  pca->callback([&] {
    const Store store = open_store(store_path);
    const auto& set = store.set(set_id);
    const Eigen::MatrixXd x = set_embeddings(store.corpus, set);
    const PcaModel model = fit_pca(x, components);
    write_text(out, serialize_pca(model));
    if (!scores_path.empty()) {
      Projection p = project(model, x);
      p.ids = set.utterance_ids;
      csv::write(scores_table(p), scores_path);
    }
    std::cout << "total_variance " << csv::number(model.total_variance);
    for (Eigen::Index c = 0; c < model.n_components(); ++c) {
      std::cout << (c == 0 ? "\nratios " : " ") << csv::number(model.explained_variance_ratio[c]);
    }
    std::cout << "\n";
  });

  // cluster
  auto* cluster = app.add_subcommand("cluster", "K-means on projection scores");
  std::uint32_t k = 2;
  cluster->add_option("--scores", scores_path)->required();
  cluster->add_option("--k", k)->required();
  cluster->add_option("--seed", seed)->capture_default_str();
  cluster->add_option("--out", out);
  cluster->callback([&] {
    const Projection p = parse_scores_table(csv::read(scores_path));
    const ClusterModel model = order_clusters(kmeans(p.scores, k, seed));
    csv::Table t;
    t.header = {"id", "cluster"};
    for (std::size_t i = 0; i < p.ids.size(); ++i) t.rows.push_back({p.ids[i], std::to_string(model.assignments[i])});
    emit(out, csv::format(t));
    std::cerr << "inertia " << csv::number(model.inertia) << "\n";
  });

  // bin
  auto* bin = app.add_subcommand("bin", "Discretise one projection axis");
  std::uint32_t axis = 0, bins = 3;
  std::string mode = "equal_width";
  bin->add_option("--scores", scores_path)->required();
  bin->add_option("--axis", axis)->capture_default_str();
  bin->add_option("--bins", bins)->capture_default_str();
  bin->add_option("--mode", mode)->capture_default_str();
  bin->add_option("--out", out);
  bin->callback([&] {
    const Projection p = parse_scores_table(csv::read(scores_path));
    const BinSpec spec = bin_axis(p, axis, bins, parse_bin_mode(mode));
    csv::Table t;
    t.header = {"id", "bin", "label"};
    for (std::size_t i = 0; i < p.ids.size(); ++i) {
      t.rows.push_back({p.ids[i], std::to_string(spec.assignments[i]), spec.labels[spec.assignments[i]]});
    }
    emit(out, csv::format(t));
    std::cerr << "edges";
    for (double e : spec.edges) std::cerr << " " << csv::number(e);
    std::cerr << "\n";
  });

  // relabel
  auto* relabel = app.add_subcommand("relabel", "Assign corpus records to the nearest exemplar");
  std::string corpus_path, exemplars;
  relabel->add_option("--corpus", corpus_path, "Store to relabel (default --store)");
  relabel->add_option("--exemplars", exemplars)->required();
  relabel->add_option("--out", out);
  relabel->callback([&] {
    const Store store = open_store(corpus_path.empty() ? store_path : corpus_path);
    const auto labels = read_labels(exemplars);
    csv::Table t;
    t.header = {"id", "label_id", "cosine_distance"};
    for (const auto& r : store.corpus.records()) {
      if (!r.summary_embedding && !r.frame_embeddings_ref) continue;
      const auto a = assign_by_exemplar(summary_embedding_of(store.corpus, r), labels);
      t.rows.push_back({r.id, a.label_id, csv::number(a.cosine_distance)});
    }
    emit(out, csv::format(t));
  });

  // confuse
  auto* confuse = app.add_subcommand("confuse", "Confusion table of assigned labels against ground truth");
  std::string relabel_path, truth_path;
  confuse->add_option("--relabel", relabel_path)->required();
  confuse->add_option("--truth", truth_path, "Store with ground-truth labels (default --store)");
  confuse->add_option("--out", out);
  confuse->callback([&] {
    const Store store = open_store(truth_path.empty() ? store_path : truth_path);
    std::map<std::string, std::string> truth;
    for (const auto& r : store.corpus.records()) {
      if (!r.ground_truth) continue;
      if (auto c = categorize_ground_truth(*r.ground_truth)) truth[r.id] = *c;
    }
    emit(out, csv::format(confusion_csv(confusion_table(read_relabel(relabel_path), truth))));
  });

  // enrol
  auto* enrol = app.add_subcommand("enrol", "Run one enrolment iteration");
  std::string decision_text, names_path, training_path, family;
  std::uint32_t sample_n = kDefaultExemplarSamples, index = 1;
  enrol->add_option("--set", set_id)->required();
  enrol->add_option("--decision", decision_text, "discrete:k=2 | continuous:axis=0,bins=3[,mode=...]")->required();
  enrol->add_option("--seed", seed)->capture_default_str();
  enrol->add_option("--names", names_path, "JSON array of group names");
  enrol->add_option("--training", training_path, "Store to relabel (default --store)");
  enrol->add_option("--sample-n", sample_n)->capture_default_str();
  enrol->add_option("--components", components)->capture_default_str();
  enrol->add_option("--index", index)->capture_default_str();
  enrol->add_option("--family", family);
  enrol->add_option("--out", out)->required();
  enrol->callback([&] {
    const Store store = open_store(store_path);
    const Store training = training_path.empty() ? store : open_store(training_path);
    const Decision decision = parse_decision(decision_text);
    const auto names = names_path.empty() ? default_group_names(decision) : read_names(names_path, decision);
    IterationParams params{seed, sample_n, components, index, family};
    const IterationResult result =
        run_iteration(store.corpus, store.set(set_id), training.corpus, decision, names, params);
    write_iteration(result, training.sets, out);
    std::cout << "total_variance " << csv::number(result.iteration.total_variance) << "\ntop2_ratio "
              << csv::number(result.iteration.top2_ratio) << "\nrelabelled " << result.relabel.size() << "\n";
  });

  // trajectory
  auto* trajectory = app.add_subcommand("trajectory", "Variance trajectory over iteration records");
  std::vector<std::string> iteration_files, groupings;
  trajectory->add_option("iterations", iteration_files, "iteration.json files")->required();
  trajectory->add_option("--grouping", groupings, "index=label describing what an iteration averages over");
  trajectory->add_option("--out", out);
  int trajectory_status = 0;
  trajectory->callback([&] {
    std::vector<EnrolmentIteration> its;
    for (const auto& f : iteration_files) its.push_back(read_iteration(f));
    std::map<std::uint32_t, std::string> labels;
    for (const auto& g : groupings) {
      const auto eq = g.find('=');
      if (eq == std::string::npos) fail(Errc::invalid_argument, "--grouping expects index=label");
      labels[static_cast<std::uint32_t>(std::stoul(g.substr(0, eq)))] = g.substr(eq + 1);
    }
    const auto report = variance_trajectory(its, labels);
    emit(out, csv::format(trajectory_table(report)));
    if (!report.decreasing) trajectory_status = 2;
  });

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Aggregate a temperature/top-k sweep into heatmaps");
  std::string metrics = "diversity,wer,speaker_sim";
  sweep->add_option("--corpus", corpus_path, "Store (default --store)");
  sweep->add_option("--refs", refs_path);
  sweep->add_option("--out", out)->required();
  sweep->add_option("--metrics", metrics)->capture_default_str();
  sweep->callback([&] {
    const Store store = open_store(corpus_path.empty() ? store_path : corpus_path);
    const auto wanted = split(metrics, ',');
    SweepOptions options;
    options.wer = std::find(wanted.begin(), wanted.end(), "wer") != wanted.end();
    options.speaker_sim = std::find(wanted.begin(), wanted.end(), "speaker_sim") != wanted.end();
    std::vector<SpeakerReference> refs;
    if (options.speaker_sim) {
      if (refs_path.empty()) fail(Errc::invalid_argument, "speaker_sim needs --refs");
      refs = read_speaker_references(refs_path);
    }
    const auto grid = aggregate_sweep(store.corpus, refs, options);
    for (const auto& m : wanted) cell_metric(grid.front(), m);
    fs::create_directories(out);
    for (const auto& m : wanted) emit_heatmap(grid, m, fs::path(out) / (m + ".csv"));
    csv::write(cells_table(grid), fs::path(out) / "cells.csv");
  });

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic store with planted structure");
  std::string spec_path;
  simulate->add_option("--spec", spec_path)->required();
  simulate->add_option("--out", out)->required();
  simulate->callback([&] {
    const auto output = generate_synthetic(read_synthetic_spec(spec_path));
    write_synthetic(output, out);
    std::cerr << "generated " << output.corpus.size() << " records\n";
  });

  // simulate-enrol
  auto* sim_enrol = app.add_subcommand("simulate-enrol", "Simulate fine-tuning on an enrolled label");
  double shrink = 0.5;
  std::string factor = "auto";
  sim_enrol->add_option("--relabel", relabel_path, "CSV with id,label_id (e.g. from relabel)")->required();
  sim_enrol->add_option("--shrink", shrink)->capture_default_str();
  sim_enrol->add_option("--factor", factor, "discrete | gradient | auto")->capture_default_str();
  sim_enrol->add_option("--out", out)->required();
  sim_enrol->callback([&] {
    const auto previous = read_synthetic(store_path);
    EnrolledFactor f = EnrolledFactor::automatic;
    if (factor == "discrete") {
      f = EnrolledFactor::discrete;
    } else if (factor == "gradient") {
      f = EnrolledFactor::gradient;
    } else if (factor != "auto") {
      fail(Errc::invalid_argument, "unknown factor '" + factor + "'");
    }
    write_synthetic(simulate_enrolment_effect(previous, read_relabel(relabel_path), shrink, f), out);
  });

  // f0
  auto* f0 = app.add_subcommand("f0", "Quantile summary of F0 contours in a set");
  std::uint32_t points = 100;
  std::string levels = "0.1,0.25,0.5,0.75,0.9";
  f0->add_option("--set", set_id);
  f0->add_option("--points", points)->capture_default_str();
  f0->add_option("--levels", levels)->capture_default_str();
  f0->add_option("--out", out);
  f0->callback([&] {
    const Store store = open_store(store_path);
    std::vector<F0Contour> contours;
    for (const auto* r : members(store, set_id)) {
      if (r->f0_contour_ref) contours.push_back(read_f0_contour(store.corpus.resolve(*r->f0_contour_ref)));
    }
    std::vector<double> qs;
    for (const auto& l : split(levels, ',')) qs.push_back(csv::parse_double(l));
    const auto summary = f0_ensemble_summary(contours, points, qs);
    csv::Table t;
    t.header.push_back("position");
    for (double q : summary.quantile_levels) t.header.push_back("q" + csv::number(q));
    for (std::uint32_t p = 0; p < summary.n_points; ++p) {
      std::vector<std::string> row{csv::number(points > 1 ? static_cast<double>(p) / (points - 1) : 0.0)};
      for (Eigen::Index l = 0; l < summary.grid.rows(); ++l) row.push_back(csv::number(summary.grid(l, p)));
      t.rows.push_back(std::move(row));
    }
    emit(out, csv::format(t));
    std::cerr << summary.n_contours << " contours, " << summary.skipped.size() << " skipped\n";
  });

  // correlate
  auto* correlate = app.add_subcommand("correlate", "Correlate acoustic features with a principal component");
  std::uint32_t component = 0;
  correlate->add_option("--set", set_id)->required();
  correlate->add_option("--component", component, "0-based component index")->capture_default_str();
  correlate->add_option("--out", out);
  correlate->callback([&] {
    const Store store = open_store(store_path);
    const auto& set = store.set(set_id);
    const Eigen::MatrixXd x = set_embeddings(store.corpus, set);
    const PcaModel model = fit_pca(x, component + 1);
    const Projection p = project(model, x);
    std::vector<double> scores(p.scores.rows());
    for (Eigen::Index i = 0; i < p.scores.rows(); ++i) scores[i] = p.scores(i, component);
    std::map<std::string, std::vector<double>> features;
    for (std::size_t i = 0; i < set.utterance_ids.size(); ++i) {
      const auto& r = store.corpus.at(set.utterance_ids[i]);
      if (!r.acoustic_features) fail(Errc::missing_field, "record '" + r.id + "' has no acoustic_features");
      for (const auto& [name, v] : *r.acoustic_features) features[name].push_back(v);
    }
    for (const auto& [name, column] : features) {
      if (column.size() != scores.size()) fail(Errc::missing_field, "feature '" + name + "' missing on some records");
    }
    const auto report = feature_pc_correlation(features, scores);
    csv::Table t;
    t.header = {"feature", "pearson_r"};
    for (const auto& f : report.ranked) t.rows.push_back({f.name, csv::number(f.r)});
    for (const auto& name : report.undefined) t.rows.push_back({name, ""});
    emit(out, csv::format(t));
  });

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API for the explorer");
  serve::ServeConfig config;
  std::string static_dir, session_dir;
  serve_cmd->add_option("--port", config.port)->capture_default_str();
  serve_cmd->add_option("--host", config.host)->capture_default_str();
  serve_cmd->add_option("--static", static_dir);
  serve_cmd->add_option("--sessions", session_dir, "Directory for session snapshots");
  int serve_status = 0;
  serve_cmd->callback([&] {
    config.store = store_path;
    if (!static_dir.empty()) config.static_dir = static_dir;
    if (!session_dir.empty()) config.session_dir = session_dir;
    serve_status = serve::run_server(config);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "enrolkit: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "enrolkit: " << e.what() << "\n";
    return 1;
  }
  return validate_status | trajectory_status | serve_status;
}
