#include "enrolkit/projection.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "enrolkit/error.hpp"
#include "json.hpp"

namespace enrolkit {

SummaryEmbedding summarize(const FloatMatrix& frames) {
  if (frames.rows() == 0) fail(Errc::invalid_argument, "summarize: no frames");
  SummaryEmbedding out;
  const Eigen::RowVectorXd mean = frames.cast<double>().colwise().mean();
  out.vector.resize(static_cast<std::size_t>(mean.size()));
  for (Eigen::Index d = 0; d < mean.size(); ++d) out.vector[d] = static_cast<float>(mean[d]);
  out.source_frames = static_cast<std::uint32_t>(frames.rows());
  return out;
}

Embedding summary_embedding_of(const Corpus& corpus, const UtteranceRecord& record) {
  if (record.summary_embedding) return *record.summary_embedding;
  if (record.frame_embeddings_ref) return summarize(corpus.load_frames(record.id)).vector;
  fail(Errc::missing_field, "record '" + record.id + "' has neither summary_embedding nor frame_embeddings_ref");
}

Eigen::MatrixXd to_matrix(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) return {};
  const std::size_t dim = embeddings.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(embeddings.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].size() != dim) {
      fail(Errc::dimension_mismatch, "embedding " + std::to_string(i) + " has dim " +
                                         std::to_string(embeddings[i].size()) + ", expected " +
                                         std::to_string(dim));
    }
    for (std::size_t d = 0; d < dim; ++d) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = embeddings[i][d];
    }
  }
  return m;
}

Eigen::MatrixXd set_embeddings(const Corpus& corpus, const AnalysisSet& set) {
  std::vector<Embedding> rows;
  rows.reserve(set.utterance_ids.size());
  for (const auto& id : set.utterance_ids) rows.push_back(summary_embedding_of(corpus, corpus.at(id)));
  try {
    return to_matrix(rows);
  } catch (const Error& e) {
    throw Error(e.code(), "analysis set '" + set.id + "': " + e.what());
  }
}

double PcaModel::leading_ratio(Eigen::Index count) const {
  const Eigen::Index k = std::min(count, explained_variance_ratio.size());
  return k > 0 ? explained_variance_ratio.head(k).sum() : 0.0;
}

double total_variance(const Eigen::MatrixXd& embeddings) {
  if (embeddings.rows() < 2) fail(Errc::invalid_argument, "total_variance: need at least 2 rows");
  const Eigen::RowVectorXd mean = embeddings.colwise().mean();
  const Eigen::MatrixXd centred = embeddings.rowwise() - mean;
  return centred.squaredNorm() / static_cast<double>(embeddings.rows() - 1);
}

PcaModel fit_pca(const Eigen::MatrixXd& embeddings, std::uint32_t n_components) {
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index d = embeddings.cols();
  if (n < 2) fail(Errc::invalid_argument, "fit_pca: need at least 2 embeddings");
  const Eigen::Index max_components = std::min(n - 1, d);
  if (n_components < 1 || n_components > max_components) {
    fail(Errc::invalid_argument, "fit_pca: n_components " + std::to_string(n_components) +
                                     " outside [1, " + std::to_string(max_components) + "]");
  }
  if (!embeddings.allFinite()) fail(Errc::invalid_argument, "fit_pca: non-finite input");

  PcaModel model;
  model.n_samples = static_cast<std::uint32_t>(n);
  model.mean = embeddings.colwise().mean().transpose();
  const Eigen::MatrixXd centred = embeddings.rowwise() - model.mean.transpose();
  const double denom = static_cast<double>(n - 1);
  model.total_variance = centred.squaredNorm() / denom;

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centred, Eigen::ComputeThinV);
  const Eigen::VectorXd& singular = svd.singularValues();
  const Eigen::Index k = n_components;
  model.components = svd.matrixV().leftCols(k).transpose();
  model.eigenvalues = singular.head(k).array().square() / denom;

  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double a = std::abs(model.components(c, j));
      if (a > best) {
        best = a;
        pivot = j;
      }
    }
    if (model.components(c, pivot) < 0.0) model.components.row(c) *= -1.0;
  }

  if (model.total_variance > 0.0) {
    model.explained_variance_ratio = model.eigenvalues / model.total_variance;
  } else {
    model.explained_variance_ratio = Eigen::VectorXd::Zero(k);
  }
  return model;
}

Projection project(const PcaModel& model, const Eigen::MatrixXd& embeddings) {
  if (embeddings.cols() != model.dim()) {
    fail(Errc::dimension_mismatch, "project: embedding dim " + std::to_string(embeddings.cols()) +
                                       " != model dim " + std::to_string(model.dim()));
  }
  Projection out;
  out.scores = (embeddings.rowwise() - model.mean.transpose()) * model.components.transpose();
  return out;
}

std::string serialize_pca(const PcaModel& model) {
  using json = nlohmann::ordered_json;
  auto vec = [](const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  };
  json j;
  j["n_samples"] = model.n_samples;
  j["total_variance"] = model.total_variance;
  j["eigenvalues"] = vec(model.eigenvalues);
  j["explained_variance_ratio"] = vec(model.explained_variance_ratio);
  j["mean"] = vec(model.mean);
  json comps = json::array();
  for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
    comps.push_back(vec(model.components.row(r).transpose()));
  }
  j["components"] = std::move(comps);
  return j.dump(2) + "\n";
}

PcaModel parse_pca(std::string_view json_text) {
  using json = nlohmann::json;
  auto vec = [](const json& a) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
  };
  PcaModel model;
  try {
    const json j = json::parse(json_text);
    model.n_samples = j.value("n_samples", 0u);
    model.total_variance = j.at("total_variance").get<double>();
    model.eigenvalues = vec(j.at("eigenvalues"));
    model.mean = vec(j.at("mean"));
    const auto& comps = j.at("components");
    model.components.resize(static_cast<Eigen::Index>(comps.size()), model.mean.size());
    for (std::size_t r = 0; r < comps.size(); ++r) {
      if (comps[r].size() != static_cast<std::size_t>(model.mean.size())) {
        fail(Errc::dimension_mismatch, "pca model: component " + std::to_string(r) + " has wrong dim");
      }
      model.components.row(static_cast<Eigen::Index>(r)) = vec(comps[r]).transpose();
    }
    if (auto it = j.find("explained_variance_ratio"); it != j.end()) {
      model.explained_variance_ratio = vec(*it);
    } else if (model.total_variance > 0.0) {
      model.explained_variance_ratio = model.eigenvalues / model.total_variance;
    } else {
      model.explained_variance_ratio = Eigen::VectorXd::Zero(model.eigenvalues.size());
    }
  } catch (const json::exception& e) {
    fail(Errc::parse_error, std::string("pca model: ") + e.what());
  }
  if (model.eigenvalues.size() != model.components.rows()) {
    fail(Errc::parse_error, "pca model: eigenvalue count does not match components");
  }
  return model;
}

csv::Table scores_table(const Projection& projection) {
  csv::Table table;
  table.header.push_back("id");
  for (Eigen::Index c = 0; c < projection.scores.cols(); ++c) {
    table.header.push_back("pc" + std::to_string(c + 1));
  }
  for (Eigen::Index r = 0; r < projection.scores.rows(); ++r) {
    std::vector<std::string> row;
    const auto idx = static_cast<std::size_t>(r);
    row.push_back(idx < projection.ids.size() ? projection.ids[idx] : std::to_string(r));
    for (Eigen::Index c = 0; c < projection.scores.cols(); ++c) {
      row.push_back(csv::number(projection.scores(r, c)));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

Projection parse_scores_table(const csv::Table& table) {
  if (table.header.empty() || table.header.front() != "id") {
    fail(Errc::parse_error, "scores: first column must be 'id'");
  }
  Projection p;
  const auto k = static_cast<Eigen::Index>(table.header.size() - 1);
  p.scores.resize(static_cast<Eigen::Index>(table.rows.size()), k);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    p.ids.push_back(table.rows[r][0]);
    for (Eigen::Index c = 0; c < k; ++c) {
      p.scores(static_cast<Eigen::Index>(r), c) =
          csv::parse_double(table.rows[r][static_cast<std::size_t>(c + 1)]);
    }
  }
  return p;
}

}  // namespace enrolkit
