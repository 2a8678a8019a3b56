#include "heteroseg/experiment.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "heteroseg/image_io.hpp"

namespace heteroseg {

namespace {

namespace fs = std::filesystem;

std::uint64_t mix(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL;
  for (unsigned char c : tag) h = (h ^ c) * 0x100000001B3ULL;
  return h;
}

std::string one(const std::string& key, const std::vector<std::string>& in) {
  if (in.size() != 1) throw ConfigError(key + " expects a single value");
  return in.front();
}

template <typename T>
T number(const std::string& key, const std::vector<std::string>& in) {
  const auto text = one(key, in);
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_floating_point_v<T>) {
      v = static_cast<T>(std::stod(text, &used));
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!text.empty() && text.front() == '-') throw std::invalid_argument("negative");
      v = static_cast<T>(std::stoull(text, &used));
    } else {
      v = static_cast<T>(std::stoll(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + text + "' is not a valid number");
  }
}

bool boolean(const std::string& key, const std::vector<std::string>& in) {
  const auto text = one(key, in);
  if (text == "true") return true;
  if (text == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<int64_t> widths(const std::string& key, const std::vector<std::string>& in) {
  std::vector<int64_t> out;
  for (const auto& v : in) out.push_back(number<int64_t>(key, {v}));
  if (out.empty()) throw ConfigError(key + " must not be empty");
  return out;
}

fs::path resolve(const fs::path& base, const std::string& text) {
  if (text.empty()) return {};
  fs::path p(text);
  return p.is_absolute() ? p : fs::weakly_canonical(base / p);
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

std::string list(const std::vector<int64_t>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out + "]";
}

std::string real(double v) {
  char buf[32];
  auto s = std::string(buf, std::to_chars(buf, buf + sizeof(buf), v).ptr);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (removal) {
    if (*removal < 1 || *removal > 4) throw ConfigError("removal must be one of Exp1..Exp4");
    if (is_strict(setting) || setting == TrainSetting::kL)
      throw ConfigError("removal experiments require a Full setting (LH_full or LHC_full)");
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0, 1)");
  if (optimizer.val_fraction < 0.0 || optimizer.val_fraction >= 1.0)
    throw ConfigError("val_fraction must lie in [0, 1)");
  if (optimizer.epochs < 1 || optimizer.batch_size < 1 || !(optimizer.lr > 0))
    throw ConfigError("optimizer needs positive lr, epochs and batch_size");
  if (optimizer.w_kl < 0) throw ConfigError("w_kl must be non-negative");
  if (synthetic_samples < 2) throw ConfigError("synthetic_samples must be at least 2");
  if (!manifest.empty() && !synthetic_spec.empty())
    throw ConfigError("data.manifest and data.synthetic_spec are mutually exclusive");
  try {
    auto l = landmark;
    l.input_size = input_size;
    l.validate();
    auto p = pixel;
    p.input_size = input_size;
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string removal_name(int experiment) { return "Exp" + std::to_string(experiment); }

ExperimentConfig parse_experiment_config(std::istream& is, const fs::path& base_dir) {
  ExperimentConfig c;
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(is);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  using Setter = std::function<void(const std::string&, const std::vector<std::string>&)>;
  const std::map<std::string, Setter> setters{
      {"experiment.model", [&](auto& k, auto& v) { c.model = parse_model_kind(one(k, v)); }},
      {"experiment.setting", [&](auto& k, auto& v) { c.setting = parse_setting(one(k, v)); }},
      {"experiment.removal",
       [&](auto& k, auto& v) {
         const auto s = one(k, v);
         if (s == "none" || s.empty()) {
           c.removal.reset();
           return;
         }
         if (s.size() != 4 || s.rfind("Exp", 0) != 0 || s[3] < '1' || s[3] > '4')
           throw ConfigError("experiment.removal must be none or Exp1..Exp4, got '" + s + "'");
         c.removal = s[3] - '0';
       }},
      {"experiment.seed", [&](auto& k, auto& v) { c.seed = number<std::uint64_t>(k, v); }},
      {"experiment.output_dir", [&](auto& k, auto& v) { c.output_dir = resolve(base_dir, one(k, v)); }},
      {"data.manifest", [&](auto& k, auto& v) { c.manifest = resolve(base_dir, one(k, v)); }},
      {"data.synthetic_spec", [&](auto& k, auto& v) { c.synthetic_spec = resolve(base_dir, one(k, v)); }},
      {"data.synthetic_samples", [&](auto& k, auto& v) { c.synthetic_samples = number<int>(k, v); }},
      {"data.synthetic_seed", [&](auto& k, auto& v) { c.synthetic_seed = number<std::uint64_t>(k, v); }},
      {"data.split_fraction", [&](auto& k, auto& v) { c.split_fraction = number<double>(k, v); }},
      {"data.split_seed", [&](auto& k, auto& v) { c.split_seed = number<std::uint64_t>(k, v); }},
      {"data.input_size", [&](auto& k, auto& v) { c.input_size = number<int>(k, v); }},
      {"optimizer.lr", [&](auto& k, auto& v) { c.optimizer.lr = number<double>(k, v); }},
      {"optimizer.epochs", [&](auto& k, auto& v) { c.optimizer.epochs = number<int>(k, v); }},
      {"optimizer.batch_size", [&](auto& k, auto& v) { c.optimizer.batch_size = number<int>(k, v); }},
      {"optimizer.val_fraction", [&](auto& k, auto& v) { c.optimizer.val_fraction = number<double>(k, v); }},
      {"optimizer.model_selection",
       [&](auto& k, auto& v) {
         const auto s = one(k, v);
         if (s != "best_val" && s != "last") throw ConfigError(k + " must be best_val or last");
         c.optimizer.select_best_val = s == "best_val";
       }},
      {"loss.w_kl", [&](auto& k, auto& v) { c.optimizer.w_kl = number<double>(k, v); }},
      {"landmark_model.encoder_channels", [&](auto& k, auto& v) { c.landmark.encoder_channels = widths(k, v); }},
      {"landmark_model.pool_grid", [&](auto& k, auto& v) { c.landmark.pool_grid = number<int>(k, v); }},
      {"landmark_model.latent_dim", [&](auto& k, auto& v) { c.landmark.latent_dim = number<int>(k, v); }},
      {"landmark_model.chebyshev_order", [&](auto& k, auto& v) { c.landmark.chebyshev_order = number<int>(k, v); }},
      {"landmark_model.decoder_channels", [&](auto& k, auto& v) { c.landmark.decoder_channels = widths(k, v); }},
      {"pixel_model.channels", [&](auto& k, auto& v) { c.pixel.channels = widths(k, v); }},
      {"eval.overlays", [&](auto& k, auto& v) { c.overlays = boolean(k, v); }},
  };
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    const auto key = item.fullname();
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, item.inputs);
  }
  c.landmark.input_size = c.input_size;
  c.pixel.input_size = c.input_size;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  return parse_experiment_config(is, fs::absolute(path).parent_path());
}

std::string config_snapshot(const ExperimentConfig& c) {
  auto abs = [](const fs::path& p) { return p.empty() ? std::string() : fs::absolute(p).lexically_normal().string(); };
  std::ostringstream os;
  os << "[experiment]\n"
     << "model = " << quote(to_string(c.model)) << '\n'
     << "setting = " << quote(to_string(c.setting)) << '\n'
     << "removal = " << quote(c.removal ? removal_name(*c.removal) : "none") << '\n'
     << "seed = " << c.seed << '\n'
     << "output_dir = " << quote(abs(c.output_dir)) << "\n\n"
     << "[data]\n"
     << "manifest = " << quote(abs(c.manifest)) << '\n'
     << "synthetic_spec = " << quote(abs(c.synthetic_spec)) << '\n'
     << "synthetic_samples = " << c.synthetic_samples << '\n'
     << "synthetic_seed = " << c.synthetic_seed << '\n'
     << "split_fraction = " << real(c.split_fraction) << '\n'
     << "split_seed = " << c.split_seed << '\n'
     << "input_size = " << c.input_size << "\n\n"
     << "[optimizer]\n"
     << "lr = " << real(c.optimizer.lr) << '\n'
     << "epochs = " << c.optimizer.epochs << '\n'
     << "batch_size = " << c.optimizer.batch_size << '\n'
     << "val_fraction = " << real(c.optimizer.val_fraction) << '\n'
     << "model_selection = " << quote(c.optimizer.select_best_val ? "best_val" : "last") << "\n\n"
     << "[loss]\n"
     << "w_kl = " << real(c.optimizer.w_kl) << "\n\n"
     << "[landmark_model]\n"
     << "encoder_channels = " << list(c.landmark.encoder_channels) << '\n'
     << "pool_grid = " << c.landmark.pool_grid << '\n'
     << "latent_dim = " << c.landmark.latent_dim << '\n'
     << "chebyshev_order = " << c.landmark.chebyshev_order << '\n'
     << "decoder_channels = " << list(c.landmark.decoder_channels) << "\n\n"
     << "[pixel_model]\n"
     << "channels = " << list(c.pixel.channels) << "\n\n"
     << "[eval]\n"
     << "overlays = " << (c.overlays ? "true" : "false") << '\n';
  return os.str();
}

RemovalTarget removal_target(const std::vector<CenterDataset>& centers, int experiment) {
  if (experiment < 1 || experiment > 4) throw ConfigError("removal experiment must be 1..4");
  std::vector<const CenterDataset*> multi;
  for (const auto& c : centers)
    if (c.declared.list().size() >= 2) multi.push_back(&c);
  std::stable_sort(multi.begin(), multi.end(),
                   [](auto* a, auto* b) { return a->declared.list().size() > b->declared.list().size(); });
  if (multi.size() < 2) throw DataError("removal experiments need two centers annotating at least two structures");
  const auto* center = experiment <= 2 ? multi[0] : multi[1];
  const Structure s = experiment % 2 == 1 ? Structure::kLungs : Structure::kHeart;
  if (!center->declared.contains(s))
    throw DataError(removal_name(experiment) + ": center " + center->center_id + " does not annotate " +
                    std::string(to_string(s)));
  return {center->center_id, s};
}

std::vector<CenterDataset> load_source_centers(const ExperimentConfig& c, ContourTopology& topology) {
  if (!c.manifest.empty()) {
    auto data = load_manifest(c.manifest, c.input_size);
    topology = data.topology;
    return std::move(data.centers);
  }
  SyntheticSpec spec;
  if (!c.synthetic_spec.empty()) {
    std::ifstream is(c.synthetic_spec);
    if (!is) throw DataError("missing synthetic spec " + c.synthetic_spec.string());
    try {
      spec = synthetic_spec_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("synthetic spec " + c.synthetic_spec.string() + ": " + e.what());
    }
    if (spec.image_size != c.input_size)
      throw ConfigError("synthetic spec image_size " + std::to_string(spec.image_size) +
                        " differs from data.input_size " + std::to_string(c.input_size));
  } else {
    spec = default_synthetic_spec(c.synthetic_samples, c.synthetic_seed);
    spec.image_size = c.input_size;
  }
  topology = default_synthetic_topology();
  return generate_synthetic_centers(spec, topology);
}

ExperimentData prepare_data(const ExperimentConfig& c) {
  ExperimentData out;
  const auto centers = load_source_centers(c, out.topology);
  if (centers.empty()) throw DataError("no centers in the data source");
  for (const auto& center : centers) {
    auto [train, test] = split(center, c.split_fraction, mix(c.split_seed, center.center_id));
    out.train.push_back(std::move(train));
    out.test.push_back(std::move(test));
  }
  if (c.removal) {
    out.removed = removal_target(out.train, *c.removal);
    for (auto& d : out.train)
      if (d.center_id == out.removed->center_id) d = remove_labels(d, out.removed->structure);
  }
  return out;
}

SegmentationModel build_model(const ExperimentConfig& c, const ContourTopology& topology) {
  const auto task = task_structures(c.setting);
  if (!topology.layout()->as_availability().includes(task))
    throw DataError("the data layout does not contain every structure of setting " + to_string(c.setting));
  auto task_topology = truncate_topology(topology, task);
  torch::manual_seed(mix(c.seed, "init"));
  if (c.model == ModelKind::kHybridGNet) {
    auto cfg = c.landmark;
    cfg.input_size = c.input_size;
    return SegmentationModel::create_landmark(cfg, task_topology);
  }
  auto cfg = c.pixel;
  cfg.input_size = c.input_size;
  return SegmentationModel::create_pixel(c.model, cfg, task_topology);
}

MetricReport evaluate(SegmentationModel& model, const std::vector<CenterDataset>& test, const std::string& model_name,
                      const std::string& setting, const std::optional<RemovalTarget>& removed,
                      const std::string& experiment) {
  MetricReport report;
  const auto structs = model.structures();
  const auto layout = model.topology().layout();
  for (const auto& center : test) {
    if (center.records.empty()) continue;
    struct Acc {
      double dice = 0, mse = 0, hd = 0;
      int n = 0, n_hd = 0;
    };
    std::map<Structure, Acc> acc;
    for (const auto& r : center.records) {
      if (r.image.height != model.input_size() || r.image.width != model.input_size())
        throw DataError("record " + r.sample_id + " does not match the model input size");
      const auto masks = model.predict_masks(r.image);
      const auto landmarks = model.predict_landmarks(r.image);
      for (Structure s : structs) {
        if (!r.ground_truth.contains(s)) continue;
        auto& a = acc[s];
        const auto& gt_mask = r.eval_mask(s);
        a.dice += dice(masks.get(s), gt_mask);
        if (auto h = hausdorff(masks.get(s), gt_mask)) {
          a.hd += *h;
          ++a.n_hd;
        }
        if (landmarks) {
          Eigen::MatrixX2d gt = Eigen::MatrixX2d::Constant(layout->total_nodes(), 2, landmark_sentinel());
          const auto [b, e] = layout->range(s);
          gt.middleRows(b, e - b) = r.eval_rows(s);
          a.mse += landmark_mse(*landmarks, LandmarkSet(layout, gt), s, r.image.height, r.image.width);
        }
        ++a.n;
      }
    }
    for (Structure s : structs) {
      auto it = acc.find(s);
      if (it == acc.end()) continue;
      const auto& a = it->second;
      MetricRow row{model_name, setting, center.center_id, std::string(to_string(s))};
      row.dice = a.dice / a.n;
      if (a.n_hd > 0) row.hd = a.hd / a.n_hd;
      if (model.kind() == ModelKind::kHybridGNet) row.mse = a.mse / a.n;
      row.experiment = experiment;
      row.removed = removed && removed->center_id == center.center_id && removed->structure == s;
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

namespace {

constexpr int kOverlayScale = 4;

std::array<std::uint8_t, 3> structure_color(Structure s) {
  switch (s) {
    case Structure::kLungs: return {235, 64, 52};
    case Structure::kHeart: return {52, 199, 89};
    case Structure::kClavicles: return {66, 133, 244};
  }
  return {255, 255, 255};
}

void draw_segment(RgbImage& img, double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> color) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int c = static_cast<int>(std::floor(x0 + t * (x1 - x0)));
    const int r = static_cast<int>(std::floor(y0 + t * (y1 - y0)));
    if (r >= 0 && r < img.height && c >= 0 && c < img.width) img.set(r, c, color);
  }
}

}  // namespace

std::vector<fs::path> emit_overlays(SegmentationModel& model, const std::vector<CenterDataset>& test,
                                    const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& center : test) {
    for (const auto& r : center.records) {
      const int h = r.image.height, w = r.image.width;
      RgbImage img(h * kOverlayScale, w * kOverlayScale);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const auto v = static_cast<std::uint8_t>(
              std::clamp(r.image.at(y / kOverlayScale, x / kOverlayScale), 0.f, 1.f) * 255.f + 0.5f);
          img.set(y, x, {v, v, v});
        }
      if (auto lm = model.predict_landmarks(r.image)) {
        for (Structure s : model.structures())
          for (const auto& poly : model.topology().polylines(s))
            for (std::size_t i = 0; i < poly.size(); ++i) {
              const auto a = lm->coords.row(poly[i]), b = lm->coords.row(poly[(i + 1) % poly.size()]);
              draw_segment(img, a(0) * img.width, a(1) * img.height, b(0) * img.width, b(1) * img.height,
                           structure_color(s));
            }
      } else {
        const auto masks = model.predict_masks(r.image);
        for (Structure s : model.structures()) {
          const auto& m = masks.get(s);
          const auto edge = boundary_of(m);
          for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
              const int my = y / kOverlayScale, mx = x / kOverlayScale;
              if (edge.at(my, mx))
                img.set(y, x, structure_color(s));
              else if (m.at(my, mx))
                img.blend(y, x, structure_color(s), 0.25f);
            }
        }
      }
      auto path = out_dir / (center.center_id + "_" + r.sample_id + ".png");
      write_png_rgb(path, img);
      written.push_back(std::move(path));
    }
  }
  return written;
}

RunArtifact run_experiment(const ExperimentConfig& config, const ProgressCallback& progress) {
  config.validate();
  RunArtifact art;
  art.output_dir = config.output_dir;
  fs::create_directories(art.output_dir);
  art.snapshot = art.output_dir / "config.toml";
  const auto snapshot = config_snapshot(config);
  std::ofstream(art.snapshot) << snapshot;

  auto data = prepare_data(config);
  auto train_sets = filter_for_setting(data.train, config.setting);
  auto model = build_model(config, data.topology);
  if (progress)
    progress("training " + to_string(config.model) + " (" + to_string(config.setting) +
             (config.removal ? ", " + removal_name(*config.removal) : "") + ") on " +
             std::to_string(train_sets.size()) + " centers");
  art.training = train(model, train_sets, config.optimizer, config.seed, [&](int epoch, double tl, double vl) {
    if (progress && (epoch + 1) % 10 == 0) {
      std::ostringstream os;
      os << "epoch " << epoch + 1 << "/" << config.optimizer.epochs << " train " << tl << " val " << vl;
      progress(os.str());
    }
  });

  art.log = art.output_dir / "train_log.csv";
  {
    std::ofstream os(art.log);
    art.training.write_log_csv(os);
  }
  art.checkpoint = art.output_dir / "model.ckpt";
  save_checkpoint(art.checkpoint, model,
                  {{"config", snapshot}, {"best_epoch", art.training.best_epoch}, {"steps", art.training.steps}});

  art.report = evaluate(model, data.test, to_string(config.model), to_string(config.setting), data.removed,
                        config.removal ? removal_name(*config.removal) : "");
  art.metrics = art.output_dir / "metrics.csv";
  {
    std::ofstream os(art.metrics);
    if (config.removal)
      art.report.write_combined_csv(os);
    else
      art.report.write_csv(os);
  }
  if (config.overlays) art.overlays = emit_overlays(model, data.test, art.output_dir / "overlays");
  return art;
}

RemovalSuiteResult run_removal_suite(const ExperimentConfig& base, const ProgressCallback& progress) {
  if (is_strict(base.setting) || base.setting == TrainSetting::kL)
    throw ConfigError("removal-suite requires a Full setting (LH_full or LHC_full)");
  RemovalSuiteResult out;
  for (int e = 1; e <= 4; ++e) {
    auto cfg = base;
    cfg.removal = e;
    cfg.output_dir = base.output_dir / ("exp" + std::to_string(e));
    out.runs.push_back(run_experiment(cfg, progress));
    for (const auto& r : out.runs.back().report.rows) out.combined.rows.push_back(r);
  }
  fs::create_directories(base.output_dir);
  out.combined_csv = base.output_dir / "removal_combined.csv";
  std::ofstream os(out.combined_csv);
  out.combined.write_combined_csv(os);
  return out;
}

}  // namespace heteroseg
