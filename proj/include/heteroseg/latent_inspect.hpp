#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "heteroseg/data_pipeline.hpp"

namespace heteroseg {

class SegmentationModel;

struct LatentRecord {
  std::string sample_id;
  std::string center_id;
  std::vector<double> vector;
};

// One record per test-split sample of every dataset, in dataset order.
std::vector<LatentRecord> collect_latents(SegmentationModel& model, const std::vector<CenterDataset>& datasets);
// Same, after every record is rescaled to the given lung bounding-box area.
std::vector<LatentRecord> rescaled_latents(SegmentationModel& model, const std::vector<CenterDataset>& datasets,
                                           double target_area);

enum class EmbedMethod { kPCA, kExternal };

// EXTERNAL: `command` is run through the shell with {in} replaced by a CSV of
// the latent vectors (header v0..vk) and {out} by the path where it must
// write N rows of "x,y" (an optional header line is skipped).
struct ExternalReducer {
  std::string command;
  std::filesystem::path workdir;
};

struct EmbeddingResult {
  EmbedMethod method = EmbedMethod::kPCA;
  Eigen::MatrixX2d points;
  // PCA only: eigenvalues of the sample covariance, descending.
  Eigen::VectorXd eigenvalues;
};

EmbeddingResult embed_2d(const std::vector<LatentRecord>& records, EmbedMethod method = EmbedMethod::kPCA,
                         const ExternalReducer* external = nullptr);
EmbeddingResult embed_pca(const Eigen::MatrixXd& x);

// Mean silhouette coefficient (Euclidean) of the label partition.
double cluster_score(const Eigen::MatrixXd& x, const std::vector<std::string>& labels);
double cluster_score(const std::vector<LatentRecord>& records);

Eigen::MatrixXd latent_matrix(const std::vector<LatentRecord>& records);

void write_latents_csv(std::ostream& os, const std::vector<LatentRecord>& records);
void write_embedding_csv(std::ostream& os, const std::vector<LatentRecord>& records, const EmbeddingResult& embedding);
// Scatter plot of the embedding, one color per center.
void write_scatter_svg(std::ostream& os, const std::vector<LatentRecord>& records, const EmbeddingResult& embedding,
                       const std::string& title);

}  // namespace heteroseg
