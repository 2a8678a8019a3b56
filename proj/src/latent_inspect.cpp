#include "heteroseg/latent_inspect.hpp"

#include <algorithm>
#include <array>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace heteroseg {

Eigen::MatrixXd latent_matrix(const std::vector<LatentRecord>& records) {
  if (records.empty()) return {};
  const auto dim = static_cast<Eigen::Index>(records.front().vector.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), dim);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (static_cast<Eigen::Index>(records[i].vector.size()) != dim)
      throw std::invalid_argument("latent vectors have different lengths");
    for (Eigen::Index k = 0; k < dim; ++k) x(static_cast<Eigen::Index>(i), k) = records[i].vector[k];
  }
  return x;
}

EmbeddingResult embed_pca(const Eigen::MatrixXd& x) {
  if (x.rows() < 3) throw std::invalid_argument("embedding needs at least 3 records");
  if (x.cols() < 2) throw std::invalid_argument("embedding needs vectors of dimension >= 2");
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigen sorts ascending.
  const Eigen::Index d = cov.rows();
  EmbeddingResult out;
  out.method = EmbedMethod::kPCA;
  out.eigenvalues = eig.eigenvalues().reverse();
  Eigen::MatrixXd basis(d, 2);
  basis.col(0) = eig.eigenvectors().col(d - 1);
  basis.col(1) = eig.eigenvectors().col(d - 2);
  out.points = centered * basis;
  return out;
}

namespace {

EmbeddingResult embed_external(const std::vector<LatentRecord>& records, const ExternalReducer& ext) {
  std::filesystem::create_directories(ext.workdir);
  const auto in_path = ext.workdir / "reducer_input.csv";
  const auto out_path = ext.workdir / "reducer_output.csv";
  {
    std::ofstream os(in_path);
    const auto x = latent_matrix(records);
    for (Eigen::Index k = 0; k < x.cols(); ++k) os << (k ? "," : "") << 'v' << k;
    os << '\n';
    os.precision(17);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index k = 0; k < x.cols(); ++k) os << (k ? "," : "") << x(i, k);
      os << '\n';
    }
  }
  std::filesystem::remove(out_path);
  std::string cmd = ext.command;
  for (const auto& [key, value] : {std::pair<std::string, std::string>{"{in}", in_path.string()},
                                   {"{out}", out_path.string()}}) {
    for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + value.size()))
      cmd.replace(pos, key.size(), value);
  }
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("external reducer failed: " + cmd);
  std::ifstream is(out_path);
  if (!is) throw std::runtime_error("external reducer wrote no output");
  std::vector<std::array<double, 2>> pts;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double a, b;
    if (!(ls >> a >> b)) {
      if (pts.empty()) continue;  // header
      throw std::runtime_error("external reducer output has a malformed row");
    }
    pts.push_back({a, b});
  }
  if (pts.size() != records.size())
    throw std::runtime_error("external reducer returned " + std::to_string(pts.size()) + " rows for " +
                             std::to_string(records.size()) + " records");
  EmbeddingResult out;
  out.method = EmbedMethod::kExternal;
  out.points.resize(static_cast<Eigen::Index>(pts.size()), 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    out.points(static_cast<Eigen::Index>(i), 0) = pts[i][0];
    out.points(static_cast<Eigen::Index>(i), 1) = pts[i][1];
  }
  return out;
}

}  // namespace

EmbeddingResult embed_2d(const std::vector<LatentRecord>& records, EmbedMethod method,
                         const ExternalReducer* external) {
  if (records.size() < 3) throw std::invalid_argument("embedding needs at least 3 records");
  if (method == EmbedMethod::kPCA) return embed_pca(latent_matrix(records));
  if (!external) throw std::invalid_argument("EXTERNAL embedding needs a reducer command");
  return embed_external(records, *external);
}

double cluster_score(const Eigen::MatrixXd& x, const std::vector<std::string>& labels) {
  const Eigen::Index n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("one label per vector expected");
  std::map<std::string, int> ids;
  std::vector<int> label(n);
  for (Eigen::Index i = 0; i < n; ++i) label[i] = ids.emplace(labels[i], static_cast<int>(ids.size())).first->second;
  const int k = static_cast<int>(ids.size());
  if (k < 2) throw std::invalid_argument("silhouette needs at least two distinct labels");
  std::vector<int> counts(k, 0);
  for (int l : label) ++counts[l];
  for (const auto& [name, id] : ids)
    if (counts[id] < 2) throw std::invalid_argument("label '" + name + "' has a single member");

  double total = 0;
  std::vector<double> sums(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      sums[label[j]] += (x.row(i) - x.row(j)).norm();
    }
    const double a = sums[label[i]] / (counts[label[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int l = 0; l < k; ++l)
      if (l != label[i]) b = std::min(b, sums[l] / counts[l]);
    const double m = std::max(a, b);
    total += m == 0 ? 0.0 : (b - a) / m;
  }
  return total / static_cast<double>(n);
}

double cluster_score(const std::vector<LatentRecord>& records) {
  std::vector<std::string> labels;
  for (const auto& r : records) labels.push_back(r.center_id);
  return cluster_score(latent_matrix(records), labels);
}

void write_latents_csv(std::ostream& os, const std::vector<LatentRecord>& records) {
  const std::size_t dim = records.empty() ? 0 : records.front().vector.size();
  os << "id,center";
  for (std::size_t k = 0; k < dim; ++k) os << ",v" << k;
  os << '\n';
  os.precision(9);
  for (const auto& r : records) {
    os << r.sample_id << ',' << r.center_id;
    for (double v : r.vector) os << ',' << v;
    os << '\n';
  }
}

void write_embedding_csv(std::ostream& os, const std::vector<LatentRecord>& records, const EmbeddingResult& e) {
  os << "id,center,x,y\n";
  os.precision(9);
  for (std::size_t i = 0; i < records.size(); ++i)
    os << records[i].sample_id << ',' << records[i].center_id << ',' << e.points(static_cast<Eigen::Index>(i), 0)
       << ',' << e.points(static_cast<Eigen::Index>(i), 1) << '\n';
}

void write_scatter_svg(std::ostream& os, const std::vector<LatentRecord>& records, const EmbeddingResult& e,
                       const std::string& title) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  constexpr double kSize = 480, kMargin = 40;
  std::map<std::string, int> color;
  for (const auto& r : records) color.emplace(r.center_id, static_cast<int>(color.size()));
  const Eigen::Vector2d lo = e.points.colwise().minCoeff(), hi = e.points.colwise().maxCoeff();
  auto px = [&](double v, int axis) {
    const double span = std::max(hi[axis] - lo[axis], 1e-12);
    const double t = (v - lo[axis]) / span;
    return axis == 0 ? kMargin + t * (kSize - 2 * kMargin) : kSize - kMargin - t * (kSize - 2 * kMargin);
  };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 140 << "\" height=\"" << kSize << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kMargin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    os << "<circle cx=\"" << px(e.points(row, 0), 0) << "\" cy=\"" << px(e.points(row, 1), 1)
       << "\" r=\"3\" fill-opacity=\"0.7\" fill=\"" << kPalette[color[records[i].center_id] % 6] << "\"/>\n";
  }
  int line = 0;
  for (const auto& [center, c] : color) {
    const double y = kMargin + 20.0 * line++;
    os << "<circle cx=\"" << kSize + 10 << "\" cy=\"" << y << "\" r=\"5\" fill=\"" << kPalette[c % 6] << "\"/>\n";
    os << "<text x=\"" << kSize + 20 << "\" y=\"" << y + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << center << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace heteroseg
