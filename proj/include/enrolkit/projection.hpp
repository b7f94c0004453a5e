#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "enrolkit/corpus.hpp"
#include "enrolkit/csv.hpp"

namespace enrolkit {

inline constexpr std::uint32_t kDefaultComponents = 3;

struct SummaryEmbedding {
  Embedding vector;
  std::uint32_t source_frames = 0;
};

// Column-wise arithmetic mean of T >= 1 frames.
SummaryEmbedding summarize(const FloatMatrix& frames);

// Stored summary if present, otherwise pooled from the frame container.
Embedding summary_embedding_of(const Corpus& corpus, const UtteranceRecord& record);

// N x D matrix of summary embeddings for the set members, in set order.
Eigen::MatrixXd set_embeddings(const Corpus& corpus, const AnalysisSet& set);
Eigen::MatrixXd to_matrix(std::span<const Embedding> embeddings);

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // K x D, orthonormal rows
  Eigen::VectorXd eigenvalues;  // descending, K kept
  Eigen::VectorXd explained_variance_ratio;
  double total_variance = 0.0;  // trace of the sample covariance, all components
  std::uint32_t n_samples = 0;

  Eigen::Index dim() const { return mean.size(); }
  Eigen::Index n_components() const { return components.rows(); }
  // Sum of the first `count` ratios (clipped to the kept components).
  double leading_ratio(Eigen::Index count) const;
};

// Thin SVD of the centred data; covariance normalised by 1/(N-1). Each
// component is signed so its largest-magnitude coordinate is positive
// (lowest index wins ties).
PcaModel fit_pca(const Eigen::MatrixXd& embeddings, std::uint32_t n_components = kDefaultComponents);

struct Projection {
  Eigen::MatrixXd scores;  // N x K
  std::string set_id;
  std::string model_ref;
  std::vector<std::string> ids;  // row labels, may be empty
};

Projection project(const PcaModel& model, const Eigen::MatrixXd& embeddings);

// Trace of the 1/(N-1) sample covariance.
double total_variance(const Eigen::MatrixXd& embeddings);

std::string serialize_pca(const PcaModel& model);
PcaModel parse_pca(std::string_view json_text);

// id,pc1,...,pcK with 6 significant digits.
csv::Table scores_table(const Projection& projection);
Projection parse_scores_table(const csv::Table& table);

}  // namespace enrolkit
