#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "heteroseg/experiment.hpp"

#undef CHECK
#include <doctest.h>

using namespace heteroseg;
namespace fs = std::filesystem;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_experiment_config(is, "/tmp");
}

ExperimentConfig tiny(ModelKind kind, const std::string& dir) {
  ExperimentConfig c;
  c.model = kind;
  c.seed = 5;
  c.synthetic_samples = 10;
  c.input_size = 32;
  c.optimizer.epochs = 2;
  c.optimizer.batch_size = 4;
  c.optimizer.lr = 1e-3;
  c.landmark.encoder_channels = {4, 8, 8};
  c.landmark.latent_dim = 8;
  c.pixel.channels = {4, 8, 8};
  c.output_dir = fs::temp_directory_path() / dir;
  return c;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(HETEROSEG_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("config defaults and overrides") {
  auto d = parse("");
  CHECK(d.model == ModelKind::kHybridGNet);
  CHECK(d.setting == TrainSetting::kLHCFull);
  CHECK_FALSE(d.removal.has_value());
  CHECK(d.optimizer.lr == 1e-4);
  CHECK(d.optimizer.epochs == 300);
  CHECK(d.optimizer.w_kl == 1e-5);
  CHECK(d.optimizer.select_best_val);

  auto c = parse(R"(
[experiment]
model = "unet_ht"
setting = "LH_full"
removal = "Exp2"
seed = 9
output_dir = "runs/x"
[data]
split_fraction = 0.75
[optimizer]
epochs = 12
model_selection = "last"
[loss]
w_kl = 0.5
[landmark_model]
encoder_channels = [4, 8]
)");
  CHECK(c.model == ModelKind::kUNetHT);
  CHECK(c.setting == TrainSetting::kLHFull);
  CHECK(c.removal == 2);
  CHECK(c.seed == 9);
  CHECK(c.output_dir == fs::path("/tmp/runs/x"));
  CHECK(c.split_fraction == 0.75);
  CHECK(c.optimizer.epochs == 12);
  CHECK_FALSE(c.optimizer.select_best_val);
  CHECK(c.optimizer.w_kl == 0.5);
  CHECK(c.landmark.encoder_channels == std::vector<int64_t>{4, 8});
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse("[experiment]\ncolour = \"red\"\n"), ConfigError);
  CHECK_THROWS_AS(parse("[optimizer]\nepochs = ten\n"), ConfigError);
  CHECK_THROWS_AS(parse("[experiment]\nmodel = \"resnet\"\n"), ConfigError);
  CHECK_THROWS_AS(parse("[experiment]\nsetting = \"LHC_strict\"\nremoval = \"Exp1\"\n"), ConfigError);
  CHECK_THROWS_AS(parse("[experiment]\nsetting = \"L\"\nremoval = \"Exp3\"\n"), ConfigError);
  CHECK_THROWS_AS(parse("[experiment]\nremoval = \"Exp5\"\n"), ConfigError);
  CHECK_THROWS_AS(parse("[data]\nsplit_fraction = 1.0\n"), ConfigError);
  CHECK_THROWS_AS(parse("[data]\ninput_size = 48\n"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.toml"), ConfigError);
}

TEST_CASE("config snapshot reproduces the config") {
  auto c = parse("[experiment]\nmodel = \"unet\"\nseed = 3\n[optimizer]\nlr = 0.003\n");
  const auto snap = config_snapshot(c);
  CHECK(snap.find("lr = 0.003\n") != std::string::npos);
  CHECK(snap.find("w_kl = 1e-05\n") != std::string::npos);
  CHECK(snap.find("model_selection = \"best_val\"") != std::string::npos);
  auto again = parse(snap);
  CHECK(config_snapshot(again) == snap);
}

TEST_CASE("removal targets") {
  auto centers = generate_synthetic_centers(default_synthetic_spec(3, 1), default_synthetic_topology());
  auto t1 = removal_target(centers, 1);
  CHECK(t1.center_id == "SYNTH_LHC");
  CHECK(t1.structure == Structure::kLungs);
  auto t2 = removal_target(centers, 2);
  CHECK(t2.center_id == "SYNTH_LHC");
  CHECK(t2.structure == Structure::kHeart);
  auto t4 = removal_target(centers, 4);
  CHECK(t4.center_id == "SYNTH_LH");
  CHECK(t4.structure == Structure::kHeart);
  std::vector<CenterDataset> one_multi{centers[0], centers[2]};
  CHECK_THROWS_AS(removal_target(one_multi, 3), DataError);
}

TEST_CASE("prepare_data applies removal to training pools only") {
  auto c = tiny(ModelKind::kUNet, "heteroseg_prep");
  c.removal = 2;
  auto data = prepare_data(c);
  REQUIRE(data.removed.has_value());
  CHECK(data.train[2].center_id == "SYNTH_LHC");
  CHECK_FALSE(data.train[2].declared.contains(Structure::kHeart));
  CHECK_FALSE(data.train[2].records[0].availability.contains(Structure::kHeart));
  CHECK(data.train[2].records[0].ground_truth.contains(Structure::kHeart));
  CHECK(data.test[2].records[0].ground_truth.contains(Structure::kHeart));
  CHECK(data.train[0].records.size() == 8);
  CHECK(data.test[0].records.size() == 2);
}

TEST_CASE("evaluate emits rows only where ground truth exists") {
  auto c = tiny(ModelKind::kUNet, "heteroseg_eval");
  auto data = prepare_data(c);
  for (auto& r : data.test[0].records) r.ground_truth = {Structure::kLungs};
  auto model = build_model(c, data.topology);
  auto report = evaluate(model, data.test, "unet", "LHC_full");
  CHECK(report.rows.size() == 1 + 3 + 3);
  CHECK(report.find("SYNTH_L", "HEART") == nullptr);
  for (const auto& r : report.rows) {
    CHECK_FALSE(r.mse.has_value());
    CHECK(*r.dice >= 0.0);
    CHECK(*r.dice <= 1.0);
  }
  auto lc = tiny(ModelKind::kHybridGNet, "heteroseg_eval_lm");
  auto lm = build_model(lc, data.topology);
  auto lm_report = evaluate(lm, data.test, "hybridgnet", "LHC_full");
  for (const auto& r : lm_report.rows) CHECK(r.mse.has_value());
}

TEST_CASE("lung-only setting trains and reports lungs") {
  auto c = tiny(ModelKind::kHybridGNet, "heteroseg_lungs");
  c.setting = TrainSetting::kL;
  c.overlays = false;
  auto art = run_experiment(c);
  CHECK(art.report.rows.size() == 3);
  for (const auto& r : art.report.rows) CHECK(r.structure == "LUNGS");
}

TEST_CASE("run_experiment artifacts and determinism") {
  for (auto kind : {ModelKind::kHybridGNet, ModelKind::kUNet}) {
    auto c = tiny(kind, "heteroseg_run_" + to_string(kind));
    auto a = run_experiment(c);
    CHECK(fs::exists(a.checkpoint));
    CHECK(fs::exists(a.log));
    CHECK(fs::exists(a.snapshot));
    CHECK(a.overlays.size() == 6);
    std::ifstream metrics(a.metrics);
    std::string header;
    std::getline(metrics, header);
    CHECK(header == "model,setting,center,structure,mse,dice,hd");
    auto b = run_experiment(load_experiment_config(a.snapshot));
    std::ostringstream sa, sb;
    a.report.write_csv(sa);
    b.report.write_csv(sb);
    CHECK(sa.str() == sb.str());
    fs::remove_all(c.output_dir);
  }
}

TEST_CASE("removal suite flags exactly one cell per experiment") {
  auto c = tiny(ModelKind::kUNetHT, "heteroseg_suite");
  c.overlays = false;
  auto res = run_removal_suite(c);
  REQUIRE(res.runs.size() == 4);
  CHECK(fs::exists(res.combined_csv));
  const std::vector<std::pair<std::string, std::string>> expected{
      {"SYNTH_LHC", "LUNGS"}, {"SYNTH_LHC", "HEART"}, {"SYNTH_LH", "LUNGS"}, {"SYNTH_LH", "HEART"}};
  for (int e = 0; e < 4; ++e) {
    int flagged = 0;
    for (const auto& r : res.combined.rows)
      if (r.experiment == removal_name(e + 1) && r.removed) {
        ++flagged;
        CHECK(r.center == expected[e].first);
        CHECK(r.structure == expected[e].second);
      }
    CHECK(flagged == 1);
  }
  std::ifstream is(res.combined_csv);
  auto back = MetricReport::read_csv(is);
  CHECK(back.rows.size() == res.combined.rows.size());
  auto strict = c;
  strict.setting = TrainSetting::kLHCStrict;
  CHECK_THROWS_AS(run_removal_suite(strict), ConfigError);
  fs::remove_all(c.output_dir);
}

TEST_CASE("command line exit codes") {
  const auto dir = fs::temp_directory_path() / "heteroseg_cli";
  fs::create_directories(dir);
  {
    std::ofstream(dir / "bad.toml") << "[experiment]\nmodel = \"resnet\"\n";
    std::ofstream(dir / "missing.toml") << "[data]\nmanifest = \"/nonexistent/manifest.json\"\n";
    std::ofstream(dir / "ok.toml") << "[experiment]\nmodel = \"unet_ht\"\nseed = 1\noutput_dir = \"run\"\n"
                                   << "[data]\nsynthetic_samples = 10\ninput_size = 32\n"
                                   << "[optimizer]\nepochs = 1\nbatch_size = 4\n"
                                   << "[pixel_model]\nchannels = [4, 8]\n[eval]\noverlays = false\n";
  }
  CHECK(run_cli("--bogus") == 2);
  CHECK(run_cli("train --config " + (dir / "bad.toml").string()) == 2);
  CHECK(run_cli("train --config " + (dir / "missing.toml").string()) == 3);
  CHECK(run_cli("data validate --manifest /nonexistent/manifest.json") == 3);
  CHECK(run_cli("train --config " + (dir / "ok.toml").string()) == 0);
  CHECK(fs::exists(dir / "run" / "metrics.csv"));
  CHECK(run_cli("report --format markdown " + (dir / "run" / "metrics.csv").string()) == 0);
  CHECK(run_cli("eval --checkpoint " + (dir / "run" / "model.ckpt").string() + " --out " + (dir / "ev").string()) ==
        0);
  CHECK(fs::exists(dir / "ev" / "metrics.csv"));
  CHECK(run_cli("inspect --checkpoint " + (dir / "run" / "model.ckpt").string() + " --rescale-area 0.2 --out " +
                (dir / "insp").string()) == 0);
  for (const auto* f : {"latents.csv", "embedding.csv", "embedding.svg", "score.txt"})
    CHECK(fs::exists(dir / "insp" / f));
  CHECK(run_cli("data synth --samples 3 --size 32 --out " + (dir / "synth").string()) == 0);
  CHECK(run_cli("data validate --input-size 32 --manifest " + (dir / "synth" / "manifest.json").string()) == 0);
  fs::remove_all(dir);
}
