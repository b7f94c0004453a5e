#include "enrolkit/enrolment.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "enrolkit/error.hpp"
#include "enrolkit/random.hpp"
#include "json.hpp"

namespace enrolkit {

namespace fs = std::filesystem;

namespace {

std::string slug(std::string_view text) {
  std::string out;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      out.push_back(static_cast<char>(std::tolower(u)));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

std::string sentence_case(std::string text) {
  if (!text.empty() && text[0] >= 'a' && text[0] <= 'z') text[0] = static_cast<char>(text[0] - 'a' + 'A');
  return text;
}

bool ends_with_terminal(std::string_view text) {
  if (text.empty()) return false;
  const char last = text.back();
  return last == '.' || last == '!' || last == '?';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << text;
  if (!out) fail(Errc::io_error, "write failed: " + path.string());
}

struct Analysis {
  std::vector<Embedding> embeddings;  // set order, original space
  GroupPreview preview;
};

Analysis analyse(const Corpus& corpus, const AnalysisSet& set, const Decision& decision,
                 const IterationParams& params) {
  const auto violations = validate_fixed_inputs(set, corpus);
  if (!violations.empty()) {
    const auto& v = violations.front();
    fail(Errc::invalid_argument, "analysis set '" + set.id + "' violates fixed inputs: record '" +
                                     v.utterance_id + "' has " + v.field + " '" + v.actual +
                                     "', expected '" + v.expected + "' (" +
                                     std::to_string(violations.size()) + " violation(s))");
  }
  if (decision.kind == DecisionKind::discrete && decision.k < 2) {
    fail(Errc::invalid_argument, "decision: k must be >= 2");
  }
  if (decision.kind == DecisionKind::continuous && decision.n_bins < 2) {
    fail(Errc::invalid_argument, "decision: n_bins must be >= 2");
  }

  Analysis a;
  a.embeddings.reserve(set.utterance_ids.size());
  for (const auto& id : set.utterance_ids) a.embeddings.push_back(summary_embedding_of(corpus, corpus.at(id)));
  const Eigen::MatrixXd x = to_matrix(a.embeddings);
  if (x.rows() < 2) fail(Errc::invalid_argument, "analysis set '" + set.id + "' has fewer than 2 members");

  // Fit at least two components so the top-2 ratio is always available.
  const Eigen::Index max_components = std::min<Eigen::Index>(x.rows() - 1, x.cols());
  if (params.n_components < 1 || params.n_components > max_components) {
    fail(Errc::invalid_argument, "n_components " + std::to_string(params.n_components) + " outside [1, " +
                                     std::to_string(max_components) + "]");
  }
  const auto fit_components = static_cast<std::uint32_t>(
      std::min<Eigen::Index>(std::max<std::uint32_t>(params.n_components, 2), max_components));
  auto& p = a.preview;
  p.pca = fit_pca(x, fit_components);
  p.projection = project(p.pca, x);
  p.projection.scores = p.projection.scores.leftCols(params.n_components).eval();
  p.projection.set_id = set.id;
  p.projection.ids = set.utterance_ids;

  std::uint32_t n_groups = decision.n_groups();
  if (decision.kind == DecisionKind::discrete) {
    const ClusterModel model = order_clusters(kmeans(p.projection.scores, decision.k, params.seed));
    p.groups = model.assignments;
  } else {
    p.groups = bin_axis(p.projection, decision.axis, decision.n_bins, decision.mode).assignments;
  }

  p.sizes.assign(n_groups, 0);
  Eigen::MatrixXd centres = Eigen::MatrixXd::Zero(n_groups, p.projection.scores.cols());
  for (std::size_t i = 0; i < p.groups.size(); ++i) {
    ++p.sizes[p.groups[i]];
    centres.row(p.groups[i]) += p.projection.scores.row(static_cast<Eigen::Index>(i));
  }
  p.exemplar_ids.assign(n_groups, "");
  std::vector<double> best(n_groups, std::numeric_limits<double>::infinity());
  for (std::uint32_t g = 0; g < n_groups; ++g) {
    if (p.sizes[g] > 0) centres.row(g) /= static_cast<double>(p.sizes[g]);
  }
  for (std::size_t i = 0; i < p.groups.size(); ++i) {
    const auto g = p.groups[i];
    const double d = (p.projection.scores.row(static_cast<Eigen::Index>(i)) - centres.row(g)).squaredNorm();
    if (d < best[g]) {
      best[g] = d;
      p.exemplar_ids[g] = set.utterance_ids[i];
    }
  }
  return a;
}

}  // namespace

std::string render_label_phrase(const LabelTemplate& label, std::string_view speaker) {
  if (speaker.empty()) fail(Errc::invalid_argument, "render_label_phrase: empty speaker");
  const std::string& t = label.text;
  if (t.find("{speaker}") == std::string::npos) {
    fail(Errc::invalid_argument, "template for '" + label.label_id + "' lacks {speaker}");
  }
  std::string out;
  std::size_t pos = 0;
  while (pos < t.size()) {
    const std::size_t open = t.find('{', pos);
    if (open == std::string::npos) {
      out.append(t, pos, std::string::npos);
      break;
    }
    out.append(t, pos, open - pos);
    const std::size_t close = t.find('}', open);
    if (close == std::string::npos) {
      fail(Errc::invalid_argument, "template for '" + label.label_id + "': unterminated placeholder");
    }
    const std::string name = t.substr(open + 1, close - open - 1);
    if (name == "speaker") {
      out.append(speaker);
    } else if (name == "phrase") {
      if (label.phrase.empty()) {
        fail(Errc::invalid_argument, "template for '" + label.label_id + "' uses {phrase} but no phrase is set");
      }
      out.append(label.phrase);
    } else {
      fail(Errc::invalid_argument, "template for '" + label.label_id + "': unknown placeholder {" + name + "}");
    }
    pos = close + 1;
  }
  if (out.empty()) fail(Errc::invalid_argument, "template for '" + label.label_id + "' renders empty");
  return out;
}

std::string append_phrase(std::string_view prompt, std::string_view phrase) {
  std::string_view base = prompt;
  while (!base.empty() && (base.back() == ' ' || base.back() == '\t')) base.remove_suffix(1);
  const std::string cased = sentence_case(std::string(phrase));
  if (base.empty()) return cased;
  std::string out(base);
  out += ends_with_terminal(base) ? " " : ". ";
  out += cased;
  return out;
}

Corpus augment_prompts(const Corpus& corpus, const std::map<std::string, std::string>& relabel,
                       const std::map<std::string, LabelTemplate>& templates, const std::string& family,
                       std::uint32_t iteration) {
  if (relabel.empty()) return corpus;
  if (family.empty()) fail(Errc::invalid_argument, "augment_prompts: empty label family");
  for (const auto& [id, label] : relabel) {
    if (!corpus.find(id)) fail(Errc::not_found, "augment_prompts: id '" + id + "' not in corpus");
    if (!templates.contains(label)) fail(Errc::not_found, "augment_prompts: no template for label '" + label + "'");
  }
  std::vector<UtteranceRecord> records = corpus.records();
  for (auto& r : records) {
    auto it = relabel.find(r.id);
    if (it == relabel.end()) continue;
    for (const auto& enrolled : r.enrolled_labels) {
      if (enrolled.family == family) {
        fail(Errc::conflict, "record '" + r.id + "' already enrolled in label family '" + family + "'");
      }
    }
    const LabelTemplate& tmpl = templates.at(it->second);
    r.description_prompt = append_phrase(r.description_prompt, render_label_phrase(tmpl, r.speaker));
    r.enrolled_labels.push_back({family, it->second, iteration});
  }
  return Corpus(std::move(records), corpus.base_dir());
}

Decision parse_decision(std::string_view text) {
  const auto colon = text.find(':');
  const std::string kind(text.substr(0, colon));
  Decision d;
  if (kind == "discrete") {
    d.kind = DecisionKind::discrete;
  } else if (kind == "continuous") {
    d.kind = DecisionKind::continuous;
  } else {
    fail(Errc::invalid_argument, "decision: unknown kind '" + kind + "'");
  }
  std::set<std::string> seen;
  if (colon != std::string_view::npos) {
    std::stringstream params{std::string(text.substr(colon + 1))};
    std::string item;
    while (std::getline(params, item, ',')) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) fail(Errc::invalid_argument, "decision: expected key=value, got '" + item + "'");
      const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
      seen.insert(key);
      auto as_u32 = [&] {
        try {
          std::size_t used = 0;
          const unsigned long v = std::stoul(value, &used);
          if (used != value.size()) throw std::invalid_argument(value);
          return static_cast<std::uint32_t>(v);
        } catch (const std::exception&) {
          fail(Errc::invalid_argument, "decision: bad value for " + key + ": '" + value + "'");
        }
      };
      if (d.kind == DecisionKind::discrete && key == "k") {
        d.k = as_u32();
      } else if (d.kind == DecisionKind::continuous && key == "axis") {
        d.axis = as_u32();
      } else if (d.kind == DecisionKind::continuous && key == "bins") {
        d.n_bins = as_u32();
      } else if (d.kind == DecisionKind::continuous && key == "mode") {
        d.mode = parse_bin_mode(value);
      } else {
        fail(Errc::invalid_argument, "decision: unknown parameter '" + key + "' for " + kind);
      }
    }
  }
  if (d.kind == DecisionKind::discrete && !seen.contains("k")) fail(Errc::invalid_argument, "decision: discrete needs k");
  if (d.kind == DecisionKind::discrete && d.k < 2) fail(Errc::invalid_argument, "decision: k must be >= 2");
  if (d.kind == DecisionKind::continuous && d.n_bins < 2) fail(Errc::invalid_argument, "decision: bins must be >= 2");
  return d;
}

std::string to_string(const Decision& decision) {
  if (decision.kind == DecisionKind::discrete) return "discrete:k=" + std::to_string(decision.k);
  return "continuous:axis=" + std::to_string(decision.axis) + ",bins=" + std::to_string(decision.n_bins) +
         ",mode=" + std::string(to_string(decision.mode));
}

std::vector<GroupName> default_group_names(const Decision& decision) {
  std::vector<GroupName> names;
  if (decision.kind == DecisionKind::continuous) {
    for (const auto& label : default_bin_labels(decision.n_bins)) {
      names.push_back({slug(label), label, std::string(kBinTemplate)});
    }
  } else {
    for (std::uint32_t g = 0; g < decision.k; ++g) {
      const std::string n = std::to_string(g + 1);
      names.push_back({"cluster-" + n, "cluster " + n, std::string(kClusterTemplate)});
    }
  }
  return names;
}

std::string IterationParams::family_name() const {
  return family.empty() ? "iteration-" + std::to_string(index) : family;
}

GroupPreview preview_groups(const Corpus& analysis, const AnalysisSet& set, const Decision& decision,
                            const IterationParams& params) {
  return analyse(analysis, set, decision, params).preview;
}

IterationResult run_iteration(const Corpus& analysis, const AnalysisSet& set, const Corpus& training,
                              const Decision& decision, const std::vector<GroupName>& names,
                              const IterationParams& params) {
  Analysis a = analyse(analysis, set, decision, params);
  const std::uint32_t n_groups = decision.n_groups();
  if (names.size() != n_groups) {
    fail(Errc::invalid_argument, "run_iteration: " + std::to_string(names.size()) + " names for " +
                                     std::to_string(n_groups) + " groups");
  }
  std::set<std::string> ids;
  for (const auto& n : names) {
    if (n.label_id.empty()) fail(Errc::invalid_argument, "run_iteration: unnamed group");
    if (!ids.insert(n.label_id).second) fail(Errc::invalid_argument, "run_iteration: duplicate label '" + n.label_id + "'");
  }

  IterationResult result;
  auto& it = result.iteration;
  it.index = params.index;
  it.analysis_set_id = set.id;
  it.decision = decision;
  it.family = params.family_name();
  it.group_sizes = a.preview.sizes;
  it.total_variance = a.preview.pca.total_variance;
  it.top2_ratio = a.preview.pca.leading_ratio(2);
  it.manifest_ref = std::string(kManifestFile);

  std::vector<std::vector<Embedding>> members(n_groups);
  for (std::size_t i = 0; i < a.preview.groups.size(); ++i) members[a.preview.groups[i]].push_back(a.embeddings[i]);
  std::map<std::string, LabelTemplate> templates;
  for (std::uint32_t g = 0; g < n_groups; ++g) {
    if (members[g].empty()) {
      fail(Errc::invalid_argument, "run_iteration: group " + std::to_string(g + 1) + " ('" + names[g].label_id +
                                       "') is empty");
    }
    ExemplarLabel label;
    label.label_id = names[g].label_id;
    label.phrase = names[g].phrase;
    label.provenance.iteration = params.index;
    label.provenance.kind = decision.kind == DecisionKind::discrete ? GroupKind::cluster : GroupKind::bin;
    label.provenance.index = g;
    label.provenance.sample_n = params.sample_n;
    label.provenance.seed = derive_seed(params.seed, g);
    label.exemplar = exemplar_mean(members[g], params.sample_n, label.provenance.seed);
    it.labels.push_back(std::move(label));
    const std::string tmpl = names[g].template_text.empty()
                                 ? std::string(decision.kind == DecisionKind::discrete ? kClusterTemplate : kBinTemplate)
                                 : names[g].template_text;
    templates[names[g].label_id] = {names[g].label_id, tmpl, names[g].phrase};
  }

  for (const auto& r : training.records()) {
    if (!r.summary_embedding && !r.frame_embeddings_ref) continue;
    const Embedding e = summary_embedding_of(training, r);
    result.relabel[r.id] = assign_by_exemplar(e, it.labels).label_id;
  }
  result.augmented = augment_prompts(training, result.relabel, templates, it.family, params.index);
  result.pca = std::move(a.preview.pca);
  result.projection = std::move(a.preview.projection);
  result.groups = std::move(a.preview.groups);
  return result;
}

std::string serialize_iteration(const EnrolmentIteration& iteration) {
  using json = nlohmann::ordered_json;
  json j;
  j["index"] = iteration.index;
  j["analysis_set_id"] = iteration.analysis_set_id;
  json d;
  if (iteration.decision.kind == DecisionKind::discrete) {
    d["kind"] = "discrete";
    d["k"] = iteration.decision.k;
  } else {
    d["kind"] = "continuous";
    d["axis"] = iteration.decision.axis;
    d["n_bins"] = iteration.decision.n_bins;
    d["mode"] = to_string(iteration.decision.mode);
  }
  j["decision"] = std::move(d);
  j["family"] = iteration.family;
  j["total_variance"] = iteration.total_variance;
  j["top2_ratio"] = iteration.top2_ratio;
  j["group_sizes"] = iteration.group_sizes;
  j["manifest_ref"] = iteration.manifest_ref;
  j["labels"] = json::parse(serialize_labels(iteration.labels));
  return j.dump(2) + "\n";
}

EnrolmentIteration parse_iteration(std::string_view json_text) {
  using json = nlohmann::json;
  EnrolmentIteration it;
  try {
    const json j = json::parse(json_text);
    it.index = j.at("index").get<std::uint32_t>();
    it.analysis_set_id = j.value("analysis_set_id", std::string{});
    const auto& d = j.at("decision");
    const auto kind = d.at("kind").get<std::string>();
    if (kind == "discrete") {
      it.decision.kind = DecisionKind::discrete;
      it.decision.k = d.at("k").get<std::uint32_t>();
    } else if (kind == "continuous") {
      it.decision.kind = DecisionKind::continuous;
      it.decision.axis = d.at("axis").get<std::uint32_t>();
      it.decision.n_bins = d.at("n_bins").get<std::uint32_t>();
      it.decision.mode = parse_bin_mode(d.value("mode", std::string("equal_width")));
    } else {
      fail(Errc::parse_error, "iteration: unknown decision kind '" + kind + "'");
    }
    it.family = j.value("family", std::string{});
    it.total_variance = j.at("total_variance").get<double>();
    it.top2_ratio = j.at("top2_ratio").get<double>();
    it.group_sizes = j.value("group_sizes", std::vector<std::uint32_t>{});
    it.manifest_ref = j.value("manifest_ref", std::string{});
    if (auto l = j.find("labels"); l != j.end()) it.labels = parse_labels(l->dump());
  } catch (const json::exception& e) {
    fail(Errc::parse_error, std::string("iteration: ") + e.what());
  }
  return it;
}

EnrolmentIteration read_iteration(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_iteration(buffer.str());
}

void write_iteration(const IterationResult& result, const std::vector<AnalysisSet>& sets, const fs::path& out_dir) {
  save_store(result.augmented, sets, out_dir);
  write_text(out_dir / "labels.json", serialize_labels(result.iteration.labels));
  write_text(out_dir / "iteration.json", serialize_iteration(result.iteration));
}

TrajectoryReport variance_trajectory(std::span<const EnrolmentIteration> iterations,
                                     const std::map<std::uint32_t, std::string>& groupings) {
  if (iterations.empty()) fail(Errc::invalid_argument, "variance_trajectory: no iterations");
  std::map<std::uint32_t, std::vector<const EnrolmentIteration*>> by_index;
  for (const auto& it : iterations) by_index[it.index].push_back(&it);

  TrajectoryReport report;
  for (const auto& [index, group] : by_index) {
    TrajectoryPoint p;
    p.index = index;
    p.n_sets = static_cast<std::uint32_t>(group.size());
    for (const auto* it : group) {
      p.total_variance += it->total_variance;
      p.top2_ratio += it->top2_ratio;
    }
    p.total_variance /= static_cast<double>(group.size());
    p.top2_ratio /= static_cast<double>(group.size());
    if (auto g = groupings.find(index); g != groupings.end()) {
      p.grouping = g->second;
    } else if (group.size() == 1) {
      p.grouping = group.front()->analysis_set_id;
    } else {
      p.grouping = "mean of " + std::to_string(group.size()) + " sets";
    }
    if (!report.points.empty()) {
      p.delta = p.total_variance - report.points.back().total_variance;
      p.increased = *p.delta >= 0.0;
      if (p.increased) report.decreasing = false;
    }
    report.points.push_back(std::move(p));
  }
  return report;
}

csv::Table trajectory_table(const TrajectoryReport& report) {
  csv::Table t;
  t.header = {"index", "grouping", "n_sets", "total_variance", "top2_ratio", "delta", "flag"};
  for (const auto& p : report.points) {
    t.rows.push_back({std::to_string(p.index), p.grouping, std::to_string(p.n_sets), csv::number(p.total_variance),
                      csv::number(p.top2_ratio), p.delta ? csv::number(*p.delta) : "",
                      p.increased ? "not decreasing" : ""});
  }
  return t;
}

}  // namespace enrolkit
