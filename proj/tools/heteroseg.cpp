#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "heteroseg/experiment.hpp"
#include "heteroseg/latent_inspect.hpp"

namespace fs = std::filesystem;
using namespace heteroseg;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4 };

void log_line(const std::string& msg) { std::cerr << "[heteroseg] " << msg << std::endl; }

// The data and test split a checkpoint was trained against, recovered from
// the config snapshot stored in it.
ExperimentConfig snapshot_config(const nlohmann::json& metadata) {
  if (!metadata.contains("config")) throw ConfigError("checkpoint carries no config snapshot; pass --config");
  std::istringstream is(metadata.at("config").get<std::string>());
  return parse_experiment_config(is, fs::current_path());
}

std::vector<CenterDataset> all_as_test(std::vector<CenterDataset> centers) {
  for (auto& c : centers)
    for (auto& r : c.records) r.split = Split::kTest;
  return centers;
}

void print_summary(const std::vector<CenterDataset>& centers, const ContourTopology& topo) {
  std::cout << "layout:";
  for (const auto& b : topo.layout()->blocks()) std::cout << ' ' << to_string(b.structure) << '=' << b.node_count;
  std::cout << '\n';
  for (const auto& c : centers)
    std::cout << c.center_id << ": " << c.records.size() << " records, labels {" << c.declared.short_string()
              << "}\n";
}

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  CLI::App app{"Segmentation under heterogeneous labels in multi-center data"};
  app.require_subcommand(1);

  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "Train and evaluate one experiment");
  train_cmd->add_option("--config", config_path, "Experiment config (TOML)")->required();
  std::string out_override;
  train_cmd->add_option("--out", out_override, "Override experiment.output_dir");

  auto* suite_cmd = app.add_subcommand("removal-suite", "Run the four label-removal experiments");
  suite_cmd->add_option("--config", config_path, "Base experiment config (TOML)")->required();
  suite_cmd->add_option("--out", out_override, "Override experiment.output_dir");

  std::string ckpt, eval_config, out_dir, manifest;
  bool eval_overlays = false;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", ckpt)->required();
  eval_cmd->add_option("--config", eval_config, "Config defining data and split (default: checkpoint snapshot)");
  eval_cmd->add_option("--manifest", manifest, "Evaluate on every record of this manifest instead");
  eval_cmd->add_option("--out", out_dir)->required();
  eval_cmd->add_flag("--overlays", eval_overlays, "Also write overlay images");

  double rescale_area = 0.0;
  std::string reducer;
  auto* inspect_cmd = app.add_subcommand("inspect", "Latent-space embedding and center separability");
  inspect_cmd->add_option("--checkpoint", ckpt)->required();
  inspect_cmd->add_option("--manifest", manifest, "Use every record of this manifest (default: snapshot test split)");
  inspect_cmd->add_option("--out", out_dir)->required();
  inspect_cmd->add_option("--rescale-area", rescale_area, "Also score latents after lung-box rescaling to this area");
  inspect_cmd->add_option("--reducer", reducer, "External reducer command with {in} and {out} placeholders");

  auto* data_cmd = app.add_subcommand("data", "Dataset utilities");
  data_cmd->require_subcommand(1);
  std::string spec_path;
  int samples = 240, size = 64;
  std::uint64_t seed = 1;
  auto* synth_cmd = data_cmd->add_subcommand("synth", "Write a synthetic multi-center dataset as a manifest");
  synth_cmd->add_option("--out", out_dir)->required();
  synth_cmd->add_option("--spec", spec_path, "Synthetic spec JSON (default: three built-in centers)");
  synth_cmd->add_option("--samples", samples, "Samples per center for the built-in spec");
  synth_cmd->add_option("--seed", seed, "Seed for the built-in spec");
  synth_cmd->add_option("--size", size, "Image size for the built-in spec");
  auto* validate_cmd = data_cmd->add_subcommand("validate", "Load a manifest and report its contents");
  validate_cmd->add_option("--manifest", manifest)->required();
  validate_cmd->add_option("--input-size", size, "Resize images to this size");

  std::vector<std::string> inputs;
  std::string format = "csv", report_out;
  auto* report_cmd = app.add_subcommand("report", "Render metric CSVs as CSV or markdown tables");
  report_cmd->add_option("inputs", inputs, "Metric CSV files")->required();
  report_cmd->add_option("--format", format)->check(CLI::IsMember({"csv", "markdown"}));
  report_cmd->add_option("--out", report_out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd || *suite_cmd) {
      auto cfg = load_experiment_config(config_path);
      if (!out_override.empty()) cfg.output_dir = fs::absolute(out_override);
      if (*train_cmd) {
        auto art = run_experiment(cfg, log_line);
        art.report.write_csv(std::cout);
        log_line("wrote " + art.output_dir.string());
      } else {
        auto res = run_removal_suite(cfg, log_line);
        res.combined.write_combined_csv(std::cout);
        log_line("wrote " + res.combined_csv.string());
      }
    } else if (*eval_cmd) {
      auto loaded = load_checkpoint(ckpt);
      std::vector<CenterDataset> test;
      std::string setting = "-";
      if (!manifest.empty()) {
        test = all_as_test(load_manifest(manifest, loaded.model.input_size()).centers);
      } else {
        auto cfg = eval_config.empty() ? snapshot_config(loaded.metadata) : load_experiment_config(eval_config);
        test = prepare_data(cfg).test;
        setting = to_string(cfg.setting);
      }
      auto report = evaluate(loaded.model, test, to_string(loaded.model.kind()), setting);
      fs::create_directories(out_dir);
      std::ofstream(fs::path(out_dir) / "metrics.csv") << [&] {
        std::ostringstream os;
        report.write_csv(os);
        return os.str();
      }();
      if (eval_overlays) emit_overlays(loaded.model, test, fs::path(out_dir) / "overlays");
      report.write_csv(std::cout);
    } else if (*inspect_cmd) {
      auto loaded = load_checkpoint(ckpt);
      std::vector<CenterDataset> test;
      if (!manifest.empty()) {
        test = all_as_test(load_manifest(manifest, loaded.model.input_size()).centers);
      } else {
        test = prepare_data(snapshot_config(loaded.metadata)).test;
      }
      const fs::path out(out_dir);
      fs::create_directories(out);
      auto latents = collect_latents(loaded.model, test);
      std::ofstream(out / "latents.csv") << [&] {
        std::ostringstream os;
        write_latents_csv(os, latents);
        return os.str();
      }();
      ExternalReducer ext{reducer, out / "reducer"};
      auto embedding =
          embed_2d(latents, reducer.empty() ? EmbedMethod::kPCA : EmbedMethod::kExternal, reducer.empty() ? nullptr : &ext);
      {
        std::ofstream os(out / "embedding.csv");
        write_embedding_csv(os, latents, embedding);
        std::ofstream svg(out / "embedding.svg");
        write_scatter_svg(svg, latents, embedding, to_string(loaded.model.kind()) + " latents by center");
      }
      std::ostringstream score;
      score << "silhouette " << cluster_score(latents) << '\n';
      if (rescale_area > 0) {
        auto rescaled = rescaled_latents(loaded.model, test, rescale_area);
        score << "silhouette_rescaled " << cluster_score(rescaled) << '\n';
        auto e2 = embed_2d(rescaled, reducer.empty() ? EmbedMethod::kPCA : EmbedMethod::kExternal,
                           reducer.empty() ? nullptr : &ext);
        std::ofstream svg(out / "embedding_rescaled.svg");
        write_scatter_svg(svg, rescaled, e2, to_string(loaded.model.kind()) + " latents after rescaling");
      }
      std::ofstream(out / "score.txt") << score.str();
      std::cout << score.str();
    } else if (*synth_cmd) {
      SyntheticSpec spec;
      if (!spec_path.empty()) {
        std::ifstream is(spec_path);
        if (!is) throw DataError("missing synthetic spec " + spec_path);
        spec = synthetic_spec_from_json(nlohmann::json::parse(is));
      } else {
        spec = default_synthetic_spec(samples, seed);
        spec.image_size = size;
      }
      const auto topo = default_synthetic_topology();
      write_manifest(out_dir, topo, generate_synthetic_centers(spec, topo));
      log_line("wrote " + (fs::path(out_dir) / "manifest.json").string());
    } else if (*validate_cmd) {
      auto data = load_manifest(manifest, size);
      print_summary(data.centers, data.topology);
    } else if (*report_cmd) {
      MetricReport merged;
      for (const auto& in : inputs) {
        std::ifstream is(in);
        if (!is) throw DataError("missing report " + in);
        try {
          auto part = MetricReport::read_csv(is);
          merged.rows.insert(merged.rows.end(), part.rows.begin(), part.rows.end());
        } catch (const std::invalid_argument& e) {
          throw DataError(in + ": " + e.what());
        }
      }
      std::ofstream file;
      if (!report_out.empty()) file.open(report_out);
      std::ostream& os = report_out.empty() ? std::cout : file;
      const bool combined = std::any_of(merged.rows.begin(), merged.rows.end(),
                                        [](const MetricRow& r) { return !r.experiment.empty(); });
      if (format == "markdown")
        merged.write_markdown(os);
      else if (combined)
        merged.write_combined_csv(os);
      else
        merged.write_csv(os);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kOk;
}
