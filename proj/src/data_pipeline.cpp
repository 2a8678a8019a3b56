#include "heteroseg/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "heteroseg/image_io.hpp"

namespace heteroseg {

double landmark_sentinel() { return std::numeric_limits<double>::quiet_NaN(); }

Eigen::MatrixX2d SampleRecord::training_rows(Structure s) const {
  if (!availability.contains(s))
    throw std::logic_error("training read of unavailable " + std::string(to_string(s)) + " rows in " + sample_id);
  return landmarks.rows(s);
}

const BinaryMap& SampleRecord::training_mask(Structure s) const {
  if (!availability.contains(s))
    throw std::logic_error("training read of unavailable " + std::string(to_string(s)) + " mask in " + sample_id);
  return masks.get(s);
}

Eigen::MatrixX2d SampleRecord::eval_rows(Structure s) const {
  if (!ground_truth.contains(s))
    throw std::logic_error("no ground truth for " + std::string(to_string(s)) + " in " + sample_id);
  return landmarks.rows(s);
}

const BinaryMap& SampleRecord::eval_mask(Structure s) const {
  if (!ground_truth.contains(s))
    throw std::logic_error("no ground truth for " + std::string(to_string(s)) + " in " + sample_id);
  return masks.get(s);
}

void derive_masks(SampleRecord& record, const ContourTopology& topology) {
  const int h = record.image.height, w = record.image.width;
  // Unannotated rows are NaN; fill a copy where they are zeroed and blank the
  // corresponding maps afterwards.
  LandmarkSet safe = record.landmarks;
  for (int i = 0; i < safe.coords.rows(); ++i)
    if (!safe.coords.row(i).allFinite()) safe.coords.row(i).setZero();
  record.masks = fill_contours(safe, topology, h, w);
  for (std::size_t k = 0; k < record.masks.structures.size(); ++k)
    if (!record.ground_truth.contains(record.masks.structures[k])) record.masks.maps[k] = BinaryMap(h, w, 0);
}

std::pair<CenterDataset, CenterDataset> split(const CenterDataset& dataset, double fraction, std::uint64_t seed) {
  const std::size_t n = dataset.records.size();
  if (n < 2) throw std::invalid_argument("split needs at least 2 records in " + dataset.center_id);
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("split fraction must lie in (0, 1)");
  auto first_count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  first_count = std::clamp<std::size_t>(first_count, 1, n - 1);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::sort(order.begin(), order.begin() + first_count);
  std::sort(order.begin() + first_count, order.end());

  CenterDataset a{dataset.center_id, dataset.declared, {}};
  CenterDataset b{dataset.center_id, dataset.declared, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = dataset.records[order[i]];
    if (i < first_count) {
      a.records.push_back(rec);
      a.records.back().split = Split::kTrainVal;
    } else {
      b.records.push_back(rec);
      b.records.back().split = Split::kTest;
    }
  }
  return {std::move(a), std::move(b)};
}

CenterDataset remove_labels(const CenterDataset& dataset, Structure structure) {
  if (!dataset.declared.contains(structure))
    throw std::invalid_argument(std::string(to_string(structure)) + " is not available in " + dataset.center_id);
  CenterDataset out = dataset;
  out.declared.erase(structure);
  for (auto& rec : out.records) {
    // Ground truth stays behind as an evaluation-only shadow label.
    rec.ground_truth.insert(structure);
    rec.availability.erase(structure);
  }
  return out;
}

double lung_bbox_area(const SampleRecord& record) {
  const Eigen::MatrixX2d lungs = record.eval_rows(Structure::kLungs);
  const Eigen::RowVector2d lo = lungs.colwise().minCoeff();
  const Eigen::RowVector2d hi = lungs.colwise().maxCoeff();
  return (hi(0) - lo(0)) * (hi(1) - lo(1));
}

SampleRecord normalize_organ_scale(const SampleRecord& record, double target_area, const ContourTopology& topology) {
  if (!(target_area > 0.0)) throw std::invalid_argument("target area must be positive");
  const double area = lung_bbox_area(record);
  if (!(area > 0.0)) throw std::invalid_argument("degenerate lung bounding box in " + record.sample_id);
  const double scale = std::sqrt(target_area / area);

  SampleRecord out = record;
  out.landmarks.coords = ((record.landmarks.coords.array() - 0.5) * scale + 0.5).matrix();

  const Image& src = record.image;
  const int h = src.height, w = src.width;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      // Inverse map of the destination pixel center; clamp-to-edge outside.
      const double sx = (((c + 0.5) / w - 0.5) / scale + 0.5) * w - 0.5;
      const double sy = (((r + 0.5) / h - 0.5) / scale + 0.5) * h - 0.5;
      const double x = std::clamp(sx, 0.0, w - 1.0), y = std::clamp(sy, 0.0, h - 1.0);
      const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = x - x0, fy = y - y0;
      const double top = src.at(y0, x0) * (1 - fx) + src.at(y0, x1) * fx;
      const double bot = src.at(y1, x0) * (1 - fx) + src.at(y1, x1) * fx;
      out.image.at(r, c) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  derive_masks(out, topology);
  return out;
}

SingleSourceSampler::SingleSourceSampler(std::vector<std::size_t> center_sizes, int batch_size, std::uint64_t seed)
    : sizes_(std::move(center_sizes)), batch_size_(batch_size), rng_(seed) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
  if (sizes_.empty()) throw std::invalid_argument("sampler needs at least one center");
  for (auto s : sizes_)
    if (s == 0) throw std::invalid_argument("sampler centers must be non-empty");
}

std::size_t SingleSourceSampler::batches_per_epoch() const {
  std::size_t total = 0;
  for (auto s : sizes_) total += (s + batch_size_ - 1) / batch_size_;
  return total;
}

void SingleSourceSampler::refill() {
  std::vector<SourceBatch> epoch_batches;
  for (std::size_t c = 0; c < sizes_.size(); ++c) {
    std::vector<std::size_t> order(sizes_[c]);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    for (std::size_t start = 0; start < order.size(); start += batch_size_) {
      const std::size_t end = std::min(order.size(), start + batch_size_);
      epoch_batches.push_back({c, {order.begin() + start, order.begin() + end}, epoch_});
    }
  }
  std::shuffle(epoch_batches.begin(), epoch_batches.end(), rng_);
  pending_.insert(pending_.end(), epoch_batches.begin(), epoch_batches.end());
  ++epoch_;
}

SourceBatch SingleSourceSampler::next() {
  if (pending_.empty()) refill();
  SourceBatch b = std::move(pending_.front());
  pending_.pop_front();
  return b;
}

std::vector<DatasetBatch> single_source_batches(const std::vector<CenterDataset>& datasets, int batch_size,
                                                std::uint64_t seed, std::size_t n_batches) {
  std::vector<std::size_t> sizes;
  for (const auto& d : datasets) {
    if (d.records.empty()) throw std::invalid_argument("dataset " + d.center_id + " is empty");
    sizes.push_back(d.records.size());
  }
  SingleSourceSampler sampler(sizes, batch_size, seed);
  std::vector<DatasetBatch> out;
  out.reserve(n_batches);
  for (std::size_t i = 0; i < n_batches; ++i) {
    auto b = sampler.next();
    const auto& d = datasets[b.center];
    DatasetBatch batch{d.center_id, d.declared, {}};
    for (auto idx : b.records) batch.records.push_back(&d.records[idx]);
    out.push_back(std::move(batch));
  }
  return out;
}

LandmarkSet read_landmark_file(const std::filesystem::path& path, std::shared_ptr<const StructureLayout> layout,
                               const LabelAvailability& annotated) {
  std::ifstream in(path);
  if (!in) throw DataError("missing landmark file " + path.string());
  std::vector<std::array<double, 2>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string xs, ys;
    if (!(ls >> xs >> ys)) throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'x y'");
    try {
      rows.push_back({std::stod(xs), std::stod(ys)});
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": unparsable coordinate");
    }
  }
  const int total = layout->total_nodes();
  int compact = 0;
  for (Structure s : annotated.list())
    if (layout->contains(s)) compact += layout->block(s).node_count;

  Eigen::MatrixX2d coords = Eigen::MatrixX2d::Constant(total, 2, landmark_sentinel());
  if (static_cast<int>(rows.size()) == total) {
    for (int i = 0; i < total; ++i)
      if (annotated.contains(layout->structure_of(i))) coords.row(i) << rows[i][0], rows[i][1];
  } else if (static_cast<int>(rows.size()) == compact) {
    std::size_t k = 0;
    for (const auto& b : layout->blocks()) {
      if (!annotated.contains(b.structure)) continue;
      for (int i = 0; i < b.node_count; ++i, ++k) coords.row(b.offset + i) << rows[k][0], rows[k][1];
    }
  } else {
    throw DataError(path.string() + ": " + std::to_string(rows.size()) + " landmark rows, layout expects " +
                    std::to_string(total) + " (or " + std::to_string(compact) + " for the annotated structures)");
  }
  for (int i = 0; i < total; ++i)
    if (annotated.contains(layout->structure_of(i)) && !coords.row(i).allFinite())
      throw DataError(path.string() + ": non-finite coordinate on annotated row " + std::to_string(i));
  return LandmarkSet(std::move(layout), std::move(coords));
}

void write_landmark_file(const std::filesystem::path& path, const LandmarkSet& landmarks) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(9);
  for (int i = 0; i < landmarks.coords.rows(); ++i) {
    if (landmarks.coords.row(i).allFinite())
      out << landmarks.coords(i, 0) << ' ' << landmarks.coords(i, 1) << '\n';
    else
      out << "nan nan\n";
  }
}

ManifestData load_manifest(const std::filesystem::path& path, int input_size) {
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  const auto base = path.parent_path();
  try {
    ContourTopology topology = [&] {
      if (!doc.contains("layout")) return default_synthetic_topology();
      const auto& l = doc["layout"];
      if (l.is_string()) {
        std::ifstream lf(base / l.get<std::string>());
        if (!lf) throw DataError("missing layout file " + (base / l.get<std::string>()).string());
        return topology_from_json(nlohmann::json::parse(lf));
      }
      return topology_from_json(l);
    }();
    if (!doc.contains("centers") || !doc["centers"].is_array() || doc["centers"].empty())
      throw DataError("manifest " + path.string() + " lists no centers");

    ManifestData data{topology, {}};
    for (const auto& c : doc["centers"]) {
      CenterDataset center;
      center.center_id = c.at("id").get<std::string>();
      center.declared = LabelAvailability::from_names(c.at("availability").get<std::vector<std::string>>());
      if (center.declared.empty()) throw DataError("center " + center.center_id + " declares no structures");
      LabelAvailability gt = center.declared;
      if (c.contains("ground_truth"))
        gt = gt | LabelAvailability::from_names(c["ground_truth"].get<std::vector<std::string>>());
      for (Structure s : gt.list())
        if (!topology.layout()->contains(s))
          throw DataError("center " + center.center_id + " annotates " + std::string(to_string(s)) +
                          " which the layout lacks");
      int idx = 0;
      for (const auto& r : c.at("records")) {
        SampleRecord rec;
        rec.center_id = center.center_id;
        rec.sample_id = r.contains("id") ? r["id"].get<std::string>()
                                         : center.center_id + "_" + std::to_string(idx);
        rec.image = resize_bilinear(read_png_gray(base / r.at("image").get<std::string>()), input_size, input_size);
        rec.landmarks = read_landmark_file(base / r.at("landmarks").get<std::string>(), topology.layout(), gt);
        rec.availability = center.declared;
        rec.ground_truth = gt;
        derive_masks(rec, topology);
        center.records.push_back(std::move(rec));
        ++idx;
      }
      data.centers.push_back(std::move(center));
    }
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError("manifest " + path.string() + ": " + e.what());
  }
}

void write_manifest(const std::filesystem::path& dir, const ContourTopology& topology,
                    const std::vector<CenterDataset>& centers) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json doc;
  doc["layout"] = topology_to_json(topology);
  doc["centers"] = nlohmann::json::array();
  for (const auto& c : centers) {
    fs::create_directories(dir / c.center_id);
    nlohmann::json cj;
    cj["id"] = c.center_id;
    cj["availability"] = c.declared.names();
    LabelAvailability gt = c.declared;
    for (const auto& r : c.records) gt = gt | r.ground_truth;
    if (!(gt == c.declared)) cj["ground_truth"] = gt.names();
    cj["records"] = nlohmann::json::array();
    for (const auto& r : c.records) {
      const std::string image = c.center_id + "/" + r.sample_id + ".png";
      const std::string lm = c.center_id + "/" + r.sample_id + ".txt";
      write_png_gray16(dir / image, r.image);
      write_landmark_file(dir / lm, r.landmarks);
      cj["records"].push_back({{"id", r.sample_id}, {"image", image}, {"landmarks", lm}});
    }
    doc["centers"].push_back(std::move(cj));
  }
  std::ofstream out(dir / "manifest.json");
  out << doc.dump(2) << '\n';
}

}  // namespace heteroseg
