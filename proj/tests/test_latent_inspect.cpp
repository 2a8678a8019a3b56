#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "heteroseg/latent_inspect.hpp"
#include "oracles.hpp"

using namespace heteroseg;

namespace {

std::vector<LatentRecord> to_records(const Eigen::MatrixXd& x, const std::vector<std::string>& labels) {
  std::vector<LatentRecord> out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    LatentRecord r{"s" + std::to_string(i), labels[i], {}};
    for (Eigen::Index k = 0; k < x.cols(); ++k) r.vector.push_back(x(i, k));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<std::vector<double>> rows_of(const Eigen::MatrixXd& x) {
  std::vector<std::vector<double>> out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index k = 0; k < x.cols(); ++k) out[i].push_back(x(i, k));
  return out;
}

Eigen::MatrixXd random_orthogonal(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd a(d, d);
  for (int i = 0; i < d * d; ++i) a.data()[i] = n(rng);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
}

}  // namespace

TEST_CASE("silhouette matches the brute-force oracle") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 120; ++trial) {
    const int k = std::uniform_int_distribution<int>(2, 4)(rng);
    const int size = std::uniform_int_distribution<int>(2 * k, trial < 5 ? 200 : 40)(rng);
    const int d = std::uniform_int_distribution<int>(1, 6)(rng);
    Eigen::MatrixXd x(size, d);
    std::vector<std::string> labels(size);
    for (int i = 0; i < size; ++i) {
      labels[i] = "c" + std::to_string(i < 2 * k ? i % k : std::uniform_int_distribution<int>(0, k - 1)(rng));
      for (int j = 0; j < d; ++j) x(i, j) = n(rng) + (i % k) * 0.5;
    }
    CHECK(cluster_score(x, labels) == doctest::Approx(oracle::silhouette(rows_of(x), labels)).epsilon(1e-9));
  }
}

TEST_CASE("silhouette examples") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 0.01);
  Eigen::MatrixXd x(40, 3);
  std::vector<std::string> labels;
  for (int i = 0; i < 40; ++i) {
    for (int j = 0; j < 3; ++j) x(i, j) = n(rng) + (i < 20 ? 0.0 : 10.0);
    labels.push_back(i < 20 ? "a" : "b");
  }
  CHECK(cluster_score(x, labels) > 0.9);

  std::normal_distribution<double> wide;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 r(seed);
    Eigen::MatrixXd blob(200, 4);
    for (int i = 0; i < blob.size(); ++i) blob.data()[i] = wide(r);
    std::vector<std::string> random_labels;
    for (int i = 0; i < 200; ++i) random_labels.push_back(std::bernoulli_distribution(0.5)(r) ? "a" : "b");
    CHECK(std::abs(cluster_score(blob, random_labels)) < 0.1);
  }

  CHECK_THROWS(cluster_score(x, std::vector<std::string>(40, "a")));
  auto single = labels;
  single[0] = "lonely";
  CHECK_THROWS(cluster_score(x, single));
}

TEST_CASE("silhouette is invariant to rotation and translation") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd x(30, 5);
    std::vector<std::string> labels;
    for (int i = 0; i < 30; ++i) {
      for (int j = 0; j < 5; ++j) x(i, j) = n(rng) + (i % 3);
      labels.push_back(std::to_string(i % 3));
    }
    Eigen::RowVectorXd shift(5);
    for (int j = 0; j < 5; ++j) shift(j) = 10 * n(rng);
    const Eigen::MatrixXd moved = (x * random_orthogonal(5, rng)).rowwise() + shift;
    CHECK(cluster_score(moved, labels) == doctest::Approx(cluster_score(x, labels)).epsilon(1e-9));
  }
}

TEST_CASE("PCA embedding") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n;

  // Rank-one data.
  Eigen::VectorXd dir(10);
  for (int j = 0; j < 10; ++j) dir(j) = n(rng);
  Eigen::MatrixXd line(20, 10);
  for (int i = 0; i < 20; ++i) line.row(i) = n(rng) * dir.transpose();
  auto e = embed_pca(line);
  CHECK(e.points.col(1).squaredNorm() < 1e-18 * e.points.col(0).squaredNorm() + 1e-20);

  Eigen::MatrixXd same = Eigen::MatrixXd::Ones(5, 4);
  auto s = embed_pca(same);
  CHECK(s.points.isApprox(Eigen::MatrixXd::Zero(5, 2)));

  // Reconstruction error equals the trailing eigenvalue mass.
  Eigen::MatrixXd x(50, 8);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = n(rng) * (1 + i % 8);
  auto p = embed_pca(x);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> oracle_eig(
      ((x.rowwise() - x.colwise().mean()).transpose() * (x.rowwise() - x.colwise().mean())) / 49.0);
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd basis = oracle_eig.eigenvectors().rightCols(2);
  const Eigen::MatrixXd span_recon = centered * basis * basis.transpose();
  const double err = (centered - span_recon).squaredNorm() / 49.0;
  double trailing = 0;
  for (int k = 0; k < 6; ++k) trailing += oracle_eig.eigenvalues()(k);
  CHECK(err == doctest::Approx(trailing).epsilon(1e-9));
  CHECK(p.points.squaredNorm() / 49.0 ==
        doctest::Approx(oracle_eig.eigenvalues()(7) + oracle_eig.eigenvalues()(6)).epsilon(1e-9));

  // Orthogonal transforms of the input change the embedding only by per-axis sign.
  const auto q = random_orthogonal(8, rng);
  auto pq = embed_pca(x * q);
  for (int c = 0; c < 2; ++c) {
    const double sign = pq.points.col(c).dot(p.points.col(c)) < 0 ? -1.0 : 1.0;
    CHECK((sign * pq.points.col(c) - p.points.col(c)).norm() < 1e-8 * p.points.col(c).norm());
  }

  CHECK_THROWS(embed_pca(x.topRows(2)));
  CHECK_THROWS(embed_pca(x.leftCols(1)));
}

TEST_CASE("external reducer hook") {
  Eigen::MatrixXd x(4, 3);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9, 1, 1, 1;
  auto recs = to_records(x, {"a", "a", "b", "b"});
  const auto dir = std::filesystem::temp_directory_path() / "heteroseg_reducer";
  ExternalReducer ext{"awk -F, 'NR>1 {print $1\",\"$3}' {in} > {out}", dir};
  auto e = embed_2d(recs, EmbedMethod::kExternal, &ext);
  CHECK(e.method == EmbedMethod::kExternal);
  CHECK(e.points(1, 0) == 4.0);
  CHECK(e.points(1, 1) == 6.0);
  ExternalReducer broken{"true", dir};
  CHECK_THROWS(embed_2d(recs, EmbedMethod::kExternal, &broken));
  CHECK_THROWS(embed_2d(recs, EmbedMethod::kExternal, nullptr));
  std::filesystem::remove_all(dir);
}

TEST_CASE("latent CSV and scatter output") {
  Eigen::MatrixXd x(4, 2);
  x << 0, 1, 2, 3, 4, 5, 6, 7;
  auto recs = to_records(x, {"a", "a", "b", "b"});
  std::ostringstream csv;
  write_latents_csv(csv, recs);
  CHECK(csv.str() == "id,center,v0,v1\ns0,a,0,1\ns1,a,2,3\ns2,b,4,5\ns3,b,6,7\n");
  auto e = embed_2d(recs);
  std::ostringstream svg;
  write_scatter_svg(svg, recs, e, "test");
  CHECK(svg.str().find("<svg") == 0);
  CHECK(cluster_score(recs) == doctest::Approx(oracle::silhouette(rows_of(x), {"a", "a", "b", "b"})));
}
